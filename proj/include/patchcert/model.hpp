#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "patchcert/errors.hpp"
#include "patchcert/tensor.hpp"

namespace patchcert {

enum class LayerKind : std::uint8_t {
    Conv = 0,
    Relu = 1,
    MaxPool = 2,
    GlobalAvgPool = 3,
    Dense = 4,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::GlobalAvgPool: return "globalavgpool";
        case LayerKind::Dense: return "dense";
    }
    return "?";
}

// Spatial window geometry of a conv or pooling layer.
struct LayerGeom {
    int kernel = 1;
    int stride = 1;
    int pad = 0;

    void validate() const {
        if (kernel < 1 || stride < 1 || pad < 0 || pad >= kernel)
            throw ConfigError("layer geometry out of range: k=" + std::to_string(kernel) +
                              " s=" + std::to_string(stride) + " p=" + std::to_string(pad));
    }
    bool operator==(const LayerGeom&) const = default;
};

inline int conv_output_extent(int in, const LayerGeom& g) {
    int out = (in + 2 * g.pad - g.kernel) / g.stride + 1;
    if (out < 1)
        throw ConfigError("layer window larger than padded input (extent " + std::to_string(in) + ")");
    return out;
}

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    LayerGeom geom;   // conv / maxpool only
    Tensor weights;   // conv: (out,in,k,k); dense: (out,in)
    Tensor bias;      // conv / dense: (out)

    static LayerSpec conv(int in_ch, int out_ch, LayerGeom g) {
        g.validate();
        LayerSpec l;
        l.kind = LayerKind::Conv;
        l.geom = g;
        l.weights = Tensor({out_ch, in_ch, g.kernel, g.kernel});
        l.bias = Tensor({out_ch});
        return l;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::Relu, {}, {}, {}}; }
    static LayerSpec maxpool(LayerGeom g) {
        g.validate();
        return LayerSpec{LayerKind::MaxPool, g, {}, {}};
    }
    static LayerSpec globalavgpool() { return LayerSpec{LayerKind::GlobalAvgPool, {}, {}, {}}; }
    static LayerSpec dense(int in_dim, int out_dim) {
        LayerSpec l;
        l.kind = LayerKind::Dense;
        l.weights = Tensor({out_dim, in_dim});
        l.bias = Tensor({out_dim});
        return l;
    }

    bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
    // True when the layer output retains an (C,H,W) spatial grid.
    bool is_spatial() const {
        return kind == LayerKind::Conv || kind == LayerKind::Relu || kind == LayerKind::MaxPool;
    }
};

struct ModelSpec {
    std::vector<LayerSpec> layers;
    int in_channels = 0;
    int in_height = 0;
    int in_width = 0;
    int class_count = 0;
    int prune_layer = 0;  // spatial layer whose activations winner-masking prunes

    // (C,H,W) of every layer output; spatial layers keep H,W > 0, flat layers use (len,0,0).
    std::vector<std::array<int, 3>> output_dims() const {
        std::vector<std::array<int, 3>> dims;
        int c = in_channels, h = in_height, w = in_width;
        bool spatial = true;
        for (const auto& l : layers) {
            switch (l.kind) {
                case LayerKind::Conv:
                    if (!spatial) throw ConfigError("conv after flattening layer");
                    if (l.weights.shape[1] != c)
                        throw ConfigError("conv expects " + std::to_string(l.weights.shape[1]) +
                                          " input channels, got " + std::to_string(c));
                    c = l.weights.shape[0];
                    h = conv_output_extent(h, l.geom);
                    w = conv_output_extent(w, l.geom);
                    break;
                case LayerKind::Relu:
                    break;
                case LayerKind::MaxPool:
                    if (!spatial) throw ConfigError("maxpool after flattening layer");
                    h = conv_output_extent(h, l.geom);
                    w = conv_output_extent(w, l.geom);
                    break;
                case LayerKind::GlobalAvgPool:
                    if (!spatial) throw ConfigError("globalavgpool after flattening layer");
                    spatial = false;
                    h = 0;
                    w = 0;
                    break;
                case LayerKind::Dense: {
                    int in_dim = spatial ? c * std::max(h, 1) * std::max(w, 1) : c;
                    if (l.weights.shape[1] != in_dim)
                        throw ConfigError("dense expects input dim " + std::to_string(l.weights.shape[1]) +
                                          ", got " + std::to_string(in_dim));
                    spatial = false;
                    c = l.weights.shape[0];
                    h = 0;
                    w = 0;
                    break;
                }
            }
            dims.push_back({c, h, w});
        }
        return dims;
    }

    void validate() const {
        if (layers.empty()) throw ConfigError("model has no layers");
        if (in_channels < 1 || in_height < 1 || in_width < 1)
            throw ConfigError("bad input dims");
        if (class_count < 2) throw ConfigError("class_count must be >= 2");
        auto dims = output_dims();
        if (dims.back()[0] != class_count || dims.back()[1] != 0)
            throw ConfigError("final layer output does not match class_count");
        if (prune_layer < 0 || prune_layer >= static_cast<int>(layers.size()) ||
            !layers[prune_layer].is_spatial())
            throw ConfigError("prune_layer must index a spatial layer");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers)
            if (l.has_params()) n += l.weights.size() + l.bias.size();
        return n;
    }
};

// Plain CNN used throughout: conv3x3 -> relu -> maxpool2 -> conv3x3 -> relu
// -> globalavgpool -> dense. Winner masking defaults to the first conv.
inline ModelSpec make_default_model(int in_channels, int height, int width, int class_count,
                                    int conv_channels = 12) {
    ModelSpec m;
    m.in_channels = in_channels;
    m.in_height = height;
    m.in_width = width;
    m.class_count = class_count;
    m.prune_layer = 0;
    m.layers.push_back(LayerSpec::conv(in_channels, conv_channels, {3, 1, 1}));
    m.layers.push_back(LayerSpec::relu());
    m.layers.push_back(LayerSpec::maxpool({2, 2, 0}));
    m.layers.push_back(LayerSpec::conv(conv_channels, conv_channels, {3, 1, 1}));
    m.layers.push_back(LayerSpec::relu());
    m.layers.push_back(LayerSpec::globalavgpool());
    m.layers.push_back(LayerSpec::dense(conv_channels, class_count));
    m.validate();
    return m;
}

inline void init_weights(ModelSpec& model, std::uint32_t seed, float scale = 0.3f) {
    std::mt19937 rng(seed);
    for (auto& l : model.layers) {
        if (!l.has_params()) continue;
        // fan-in scaled uniform init
        float fan_in = static_cast<float>(l.weights.size() / l.weights.shape[0]);
        float bound = scale / std::sqrt(fan_in);
        std::uniform_real_distribution<float> dist(-bound, bound);
        for (float& v : l.weights.data) v = dist(rng);
        for (float& v : l.bias.data) v = 0.0f;
    }
}

// ---------------------------------------------------------------------------
// Forward inference

struct ForwardTrace {
    Tensor input;
    std::vector<Tensor> outputs;  // one per layer when traced, else only the last
    Tensor logits;
    int label = -1;
    bool traced = false;
    // Winner masking applied during this run, if any (see pruning.hpp).
    int masked_layer = -1;
    Tensor mask;  // (H_s, W_s) of 0/1 floats when masked_layer >= 0
};

inline int argmax_label(const Tensor& logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits.at(i) > logits.at(best)) best = i;  // ties keep the lowest index
    return best;
}

namespace detail {

inline Tensor conv_forward(const LayerSpec& l, const Tensor& in) {
    const int ci = in.shape[0], hi = in.shape[1], wi = in.shape[2];
    const int co = l.weights.shape[0];
    const int k = l.geom.kernel, s = l.geom.stride, p = l.geom.pad;
    const int ho = conv_output_extent(hi, l.geom), wo = conv_output_extent(wi, l.geom);
    Tensor out({co, ho, wo});
    for (int oc = 0; oc < co; ++oc) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                float acc = l.bias.at(oc);
                const int y0 = oy * s - p, x0 = ox * s - p;
                for (int ic = 0; ic < ci; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= hi) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int x = x0 + kx;
                            if (x < 0 || x >= wi) continue;
                            acc += l.weights.at(oc, ic, ky, kx) * in.at(ic, y, x);
                        }
                    }
                }
                out.at(oc, oy, ox) = acc;
            }
        }
    }
    return out;
}

inline Tensor maxpool_forward(const LayerSpec& l, const Tensor& in) {
    const int c = in.shape[0], hi = in.shape[1], wi = in.shape[2];
    const int k = l.geom.kernel, s = l.geom.stride, p = l.geom.pad;
    const int ho = conv_output_extent(hi, l.geom), wo = conv_output_extent(wi, l.geom);
    Tensor out({c, ho, wo});
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const int y0 = oy * s - p, x0 = ox * s - p;
                float best = -std::numeric_limits<float>::infinity();
                bool seen = false;
                for (int ky = 0; ky < k; ++ky) {
                    const int y = y0 + ky;
                    if (y < 0 || y >= hi) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int x = x0 + kx;
                        if (x < 0 || x >= wi) continue;
                        float v = in.at(ch, y, x);
                        if (!seen || v > best) {
                            best = v;
                            seen = true;
                        }
                    }
                }
                out.at(ch, oy, ox) = seen ? best : 0.0f;
            }
        }
    }
    return out;
}

inline Tensor layer_forward(const LayerSpec& l, const Tensor& in) {
    switch (l.kind) {
        case LayerKind::Conv:
            return conv_forward(l, in);
        case LayerKind::Relu: {
            Tensor out = in;
            for (float& v : out.data) v = std::max(v, 0.0f);
            return out;
        }
        case LayerKind::MaxPool:
            return maxpool_forward(l, in);
        case LayerKind::GlobalAvgPool: {
            const int c = in.shape[0];
            const float inv = 1.0f / static_cast<float>(in.shape[1] * in.shape[2]);
            Tensor out({c});
            for (int ch = 0; ch < c; ++ch) {
                float acc = 0.0f;
                for (int y = 0; y < in.shape[1]; ++y)
                    for (int x = 0; x < in.shape[2]; ++x) acc += in.at(ch, y, x);
                out.at(ch) = acc * inv;
            }
            return out;
        }
        case LayerKind::Dense: {
            const int out_dim = l.weights.shape[0], in_dim = l.weights.shape[1];
            if (static_cast<int>(in.size()) != in_dim)
                throw ConfigError("dense input length mismatch");
            Tensor out({out_dim});
            for (int o = 0; o < out_dim; ++o) {
                float acc = l.bias.at(o);
                for (int i = 0; i < in_dim; ++i) acc += l.weights.at(o, i) * in.data[i];
                out.at(o) = acc;
            }
            return out;
        }
    }
    throw ConfigError("unknown layer kind");
}

inline void check_input(const ModelSpec& model, const Tensor& x) {
    if (x.rank() != 3 || x.shape[0] != model.in_channels || x.shape[1] != model.in_height ||
        x.shape[2] != model.in_width)
        throw ConfigError("input shape " + shape_string(x.shape) + " does not match model input (" +
                          std::to_string(model.in_channels) + "," + std::to_string(model.in_height) +
                          "," + std::to_string(model.in_width) + ")");
    for (float v : x.data)
        if (!(v >= 0.0f && v <= 1.0f))
            throw ConfigError("input values must lie in [0,1]");
}

}  // namespace detail

// Runs layers [from, to). `cur` is the input to layer `from`.
inline Tensor run_layers(const ModelSpec& model, Tensor cur, int from, int to,
                         std::vector<Tensor>* record = nullptr) {
    for (int i = from; i < to; ++i) {
        cur = detail::layer_forward(model.layers[i], cur);
        if (record) record->push_back(cur);
    }
    return cur;
}

inline ForwardTrace forward(const ModelSpec& model, const Tensor& x, bool trace = false) {
    detail::check_input(model, x);
    ForwardTrace t;
    t.traced = trace;
    t.input = x;
    const int n = static_cast<int>(model.layers.size());
    Tensor out = run_layers(model, x, 0, n, trace ? &t.outputs : nullptr);
    t.logits = out;
    if (!trace) t.outputs.push_back(out);
    t.label = argmax_label(t.logits);
    return t;
}

}  // namespace patchcert
