#pragma once

#include <vector>

#include "patchcert/model.hpp"

namespace patchcert {

struct Gradients {
    // Parallel to ModelSpec::layers; empty tensors for parameter-free layers.
    std::vector<Tensor> weights;
    std::vector<Tensor> bias;
    Tensor input;  // dL/dx, same shape as the image

    void add_scaled(const Gradients& other, float scale) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            for (std::size_t j = 0; j < weights[i].data.size(); ++j)
                weights[i].data[j] += scale * other.weights[i].data[j];
            for (std::size_t j = 0; j < bias[i].data.size(); ++j)
                bias[i].data[j] += scale * other.bias[i].data[j];
        }
        for (std::size_t j = 0; j < input.data.size(); ++j)
            input.data[j] += scale * other.input.data[j];
    }
};

inline Gradients zero_gradients(const ModelSpec& model) {
    Gradients g;
    for (const auto& l : model.layers) {
        if (l.has_params()) {
            g.weights.emplace_back(l.weights.shape);
            g.bias.emplace_back(l.bias.shape);
        } else {
            g.weights.emplace_back();
            g.bias.emplace_back();
        }
    }
    g.input = Tensor({model.in_channels, model.in_height, model.in_width});
    return g;
}

namespace detail {

inline Tensor conv_backward(const LayerSpec& l, const Tensor& in, const Tensor& g_out,
                            Tensor& g_w, Tensor& g_b) {
    const int ci = in.shape[0], hi = in.shape[1], wi = in.shape[2];
    const int co = l.weights.shape[0];
    const int k = l.geom.kernel, s = l.geom.stride, p = l.geom.pad;
    const int ho = g_out.shape[1], wo = g_out.shape[2];
    Tensor g_in({ci, hi, wi});
    for (int oc = 0; oc < co; ++oc) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const float g = g_out.at(oc, oy, ox);
                if (g == 0.0f) continue;
                g_b.at(oc) += g;
                const int y0 = oy * s - p, x0 = ox * s - p;
                for (int ic = 0; ic < ci; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= hi) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int x = x0 + kx;
                            if (x < 0 || x >= wi) continue;
                            g_w.at(oc, ic, ky, kx) += g * in.at(ic, y, x);
                            g_in.at(ic, y, x) += g * l.weights.at(oc, ic, ky, kx);
                        }
                    }
                }
            }
        }
    }
    return g_in;
}

inline Tensor maxpool_backward(const LayerSpec& l, const Tensor& in, const Tensor& g_out) {
    const int c = in.shape[0], hi = in.shape[1], wi = in.shape[2];
    const int k = l.geom.kernel, s = l.geom.stride, p = l.geom.pad;
    const int ho = g_out.shape[1], wo = g_out.shape[2];
    Tensor g_in({c, hi, wi});
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const float g = g_out.at(ch, oy, ox);
                if (g == 0.0f) continue;
                const int y0 = oy * s - p, x0 = ox * s - p;
                int by = -1, bx = -1;
                float best = 0.0f;
                for (int ky = 0; ky < k; ++ky) {
                    const int y = y0 + ky;
                    if (y < 0 || y >= hi) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int x = x0 + kx;
                        if (x < 0 || x >= wi) continue;
                        float v = in.at(ch, y, x);
                        if (by < 0 || v > best) {  // first max wins, matches forward
                            best = v;
                            by = y;
                            bx = x;
                        }
                    }
                }
                if (by >= 0) g_in.at(ch, by, bx) += g;
            }
        }
    }
    return g_in;
}

}  // namespace detail

// Reverse pass over a traced forward. loss_grad is dL/dlogits.
inline Gradients backward(const ModelSpec& model, const ForwardTrace& trace, const Tensor& loss_grad) {
    if (!trace.traced) throw StateError("backward requires a trace produced with tracing enabled");
    if (trace.outputs.size() != model.layers.size())
        throw StateError("trace layer count does not match model");
    if (!loss_grad.same_shape(trace.logits))
        throw ConfigError("loss gradient shape does not match logits");

    Gradients grads = zero_gradients(model);
    Tensor g = loss_grad;
    for (int i = static_cast<int>(model.layers.size()) - 1; i >= 0; --i) {
        const LayerSpec& l = model.layers[i];
        const Tensor& in = (i == 0) ? trace.input : trace.outputs[i - 1];
        if (i == trace.masked_layer) {
            // outputs[i] was multiplied by the winner mask after the layer ran
            const int hw = trace.mask.shape[0] * trace.mask.shape[1];
            Tensor gated = g;
            const int chans = static_cast<int>(g.size()) / hw;
            for (int c = 0; c < chans; ++c)
                for (int j = 0; j < hw; ++j)
                    gated.data[static_cast<std::size_t>(c) * hw + j] *= trace.mask.data[j];
            g = std::move(gated);
        }
        switch (l.kind) {
            case LayerKind::Conv:
                g = detail::conv_backward(l, in, g, grads.weights[i], grads.bias[i]);
                break;
            case LayerKind::Relu: {
                Tensor g_in = g;
                for (std::size_t j = 0; j < g_in.data.size(); ++j)
                    if (in.data[j] <= 0.0f) g_in.data[j] = 0.0f;
                g = std::move(g_in);
                break;
            }
            case LayerKind::MaxPool:
                g = detail::maxpool_backward(l, in, g);
                break;
            case LayerKind::GlobalAvgPool: {
                const int c = in.shape[0], h = in.shape[1], w = in.shape[2];
                const float inv = 1.0f / static_cast<float>(h * w);
                Tensor g_in({c, h, w});
                for (int ch = 0; ch < c; ++ch) {
                    const float v = g.at(ch) * inv;
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x) g_in.at(ch, y, x) = v;
                }
                g = std::move(g_in);
                break;
            }
            case LayerKind::Dense: {
                const int out_dim = l.weights.shape[0], in_dim = l.weights.shape[1];
                Tensor g_in(in.shape);
                for (int o = 0; o < out_dim; ++o) {
                    const float go = g.at(o);
                    grads.bias[i].at(o) += go;
                    for (int j = 0; j < in_dim; ++j) {
                        grads.weights[i].at(o, j) += go * in.data[j];
                        g_in.data[j] += go * l.weights.at(o, j);
                    }
                }
                g = std::move(g_in);
                break;
            }
        }
    }
    grads.input = std::move(g);
    return grads;
}

// Numerically stable softmax.
inline Tensor softmax(const Tensor& logits) {
    Tensor probs(logits.shape);
    float mx = logits.data[0];
    for (float v : logits.data) mx = std::max(mx, v);
    float sum = 0.0f;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs.data[i] = std::exp(logits.data[i] - mx);
        sum += probs.data[i];
    }
    for (float& v : probs.data) v /= sum;
    return probs;
}

// Cross-entropy of the softmax prediction against `label`; fills dL/dlogits.
inline float cross_entropy_loss(const Tensor& logits, int label, Tensor* dlogits = nullptr) {
    Tensor probs = softmax(logits);
    float loss = -std::log(std::max(probs.at(label), 1e-12f));
    if (dlogits) {
        *dlogits = probs;
        dlogits->at(label) -= 1.0f;
    }
    return loss;
}

}  // namespace patchcert
