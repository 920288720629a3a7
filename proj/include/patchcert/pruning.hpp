#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "patchcert/geometry.hpp"
#include "patchcert/model.hpp"

namespace patchcert {

// Top-k winner masking applied at one early ("probe") layer of the model.
struct WinnerConfig {
    float winner_rate = 0.2f;  // fraction of probe-layer positions kept, in (0,1]
    int layer = -1;            // probe layer index; -1 means ModelSpec::prune_layer

    int resolve_layer(const ModelSpec& model) const {
        int s = layer >= 0 ? layer : model.prune_layer;
        if (s < 0 || s >= static_cast<int>(model.layers.size()) || !model.layers[s].is_spatial())
            throw ConfigError("winner layer must index a spatial layer");
        return s;
    }
    void validate() const {
        if (!(winner_rate > 0.0f && winner_rate <= 1.0f))
            throw ConfigError("winner_rate must lie in (0,1]");
    }
};

// Binary winner grid at the probe layer plus the sorted winner coordinates.
struct WinnerMask {
    BitGrid grid;
    std::vector<Coord> winners;  // sorted lexicographically (row, col)

    Tensor to_tensor() const {
        Tensor t({grid.height, grid.width});
        for (int r = 0; r < grid.height; ++r)
            for (int c = 0; c < grid.width; ++c) t.at(r, c) = grid.test(r, c) ? 1.0f : 0.0f;
        return t;
    }
};

// Probe-layer coordinates removed from winner candidacy. Purely geometric:
// built from occluder rectangles, never from pixel values.
struct ExclusionSet {
    BitGrid grid;

    bool excluded(int row, int col) const {
        return grid.height > 0 && grid.test(row, col);
    }
};

// Per-stage geometry from the input up to a probe layer. Pointwise layers
// contribute an identity stage.
struct SpatialStage {
    LayerGeom geom;
    int in_h = 0;
    int in_w = 0;
};

inline std::vector<SpatialStage> spatial_chain(const ModelSpec& model, int layer) {
    if (layer < 0 || layer >= static_cast<int>(model.layers.size()) ||
        !model.layers[layer].is_spatial())
        throw ConfigError("spatial chain requires a spatial layer index");
    auto dims = model.output_dims();
    std::vector<SpatialStage> chain;
    for (int i = 0; i <= layer; ++i) {
        SpatialStage st;
        st.in_h = (i == 0) ? model.in_height : dims[i - 1][1];
        st.in_w = (i == 0) ? model.in_width : dims[i - 1][2];
        const LayerSpec& l = model.layers[i];
        st.geom = (l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool) ? l.geom
                                                                              : LayerGeom{1, 1, 0};
        chain.push_back(st);
    }
    return chain;
}

// Maps an output-coordinate range of the last stage back to the input pixels
// able to influence it. Each stage applies lo*s - p .. hi*s - p + k - 1, then
// clips to that stage's input extent.
inline std::pair<int, int> backmap_range(const std::vector<SpatialStage>& chain, int lo, int hi,
                                         bool vertical) {
    for (int i = static_cast<int>(chain.size()) - 1; i >= 0; --i) {
        const auto& st = chain[i];
        lo = lo * st.geom.stride - st.geom.pad;
        hi = hi * st.geom.stride - st.geom.pad + st.geom.kernel - 1;
        const int extent = vertical ? st.in_h : st.in_w;
        lo = std::max(lo, 0);
        hi = std::min(hi, extent - 1);
        if (lo > hi) return {0, -1};  // degenerate; cannot happen for valid coords
    }
    return {lo, hi};
}

// Input-space receptive field of one probe-layer coordinate, clipped to the image.
inline Rect receptive_field(const std::vector<SpatialStage>& chain, Coord at) {
    auto [y0, y1] = backmap_range(chain, at.row, at.row, true);
    auto [x0, x1] = backmap_range(chain, at.col, at.col, false);
    return Rect{x0, y0, x1, y1};
}

inline Rect receptive_field(const ModelSpec& model, int layer, Coord at) {
    return receptive_field(spatial_chain(model, layer), at);
}

// Separable receptive-field ranges for every row / column of a probe-layer
// grid; used to answer many geometric queries cheaply.
struct FieldIndex {
    std::vector<std::pair<int, int>> row_range;  // per probe row: input rows [lo,hi]
    std::vector<std::pair<int, int>> col_range;

    FieldIndex() = default;
    FieldIndex(const std::vector<SpatialStage>& chain, int grid_h, int grid_w) {
        row_range.reserve(grid_h);
        col_range.reserve(grid_w);
        for (int r = 0; r < grid_h; ++r) row_range.push_back(backmap_range(chain, r, r, true));
        for (int c = 0; c < grid_w; ++c) col_range.push_back(backmap_range(chain, c, c, false));
    }

    Rect field(Coord at) const {
        const auto& [y0, y1] = row_range[at.row];
        const auto& [x0, x1] = col_range[at.col];
        return Rect{x0, y0, x1, y1};
    }

    // Coordinates whose receptive field touches `r`, as a bit grid.
    ExclusionSet exclusion_for(const Rect& r) const {
        ExclusionSet e;
        e.grid = BitGrid(static_cast<int>(row_range.size()), static_cast<int>(col_range.size()));
        if (r.empty()) return e;
        for (int row = 0; row < e.grid.height; ++row) {
            const auto& [ry0, ry1] = row_range[row];
            if (ry1 < r.y0 || ry0 > r.y1) continue;
            for (int col = 0; col < e.grid.width; ++col) {
                const auto& [cx0, cx1] = col_range[col];
                if (cx1 < r.x0 || cx0 > r.x1) continue;
                e.grid.set(row, col);
            }
        }
        return e;
    }

    ExclusionSet exclusion_for(const std::vector<Rect>& rects) const {
        ExclusionSet e;
        e.grid = BitGrid(static_cast<int>(row_range.size()), static_cast<int>(col_range.size()));
        for (const Rect& r : rects) {
            ExclusionSet one = exclusion_for(r);
            for (std::size_t i = 0; i < e.grid.cells.size(); ++i)
                e.grid.cells[i] |= one.grid.cells[i];
        }
        return e;
    }
};

inline ExclusionSet exclusion_for_rect(const ModelSpec& model, int layer, const Rect& r) {
    auto chain = spatial_chain(model, layer);
    auto dims = model.output_dims();
    FieldIndex idx(chain, dims[layer][1], dims[layer][2]);
    return idx.exclusion_for(r);
}

// ---------------------------------------------------------------------------
// Winner selection

// Sums a (C,H,W) activation tensor over channels into an (H,W) map.
inline Tensor channel_sum(const Tensor& chw) {
    if (chw.rank() != 3) throw ConfigError("channel_sum expects a (C,H,W) tensor");
    const int c = chw.shape[0], h = chw.shape[1], w = chw.shape[2];
    Tensor out({h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(y, x) += chw.at(ch, y, x);
    return out;
}

inline Tensor channel_sum(const ForwardTrace& trace, int layer) {
    if (!trace.traced) throw StateError("channel_sum requires a traced forward");
    if (layer < 0 || layer >= static_cast<int>(trace.outputs.size()))
        throw ConfigError("layer index out of range");
    if (trace.outputs[layer].rank() != 3)
        throw ConfigError("layer " + std::to_string(layer) + " is not spatial");
    return channel_sum(trace.outputs[layer]);
}

// Keeps the ceil(rate*H*W) largest map entries outside the exclusion set.
// Ties break toward the lexicographically smaller coordinate, so the winner
// set is a strict total order prefix and removing non-winners never changes it.
inline WinnerMask compute_winner_mask(const Tensor& sum_map, float rate,
                                      const ExclusionSet* exclusion = nullptr) {
    if (sum_map.rank() != 2) throw ConfigError("winner mask expects an (H,W) map");
    if (!(rate > 0.0f && rate <= 1.0f)) throw ConfigError("winner_rate must lie in (0,1]");
    const int h = sum_map.shape[0], w = sum_map.shape[1];
    if (exclusion && exclusion->grid.height > 0 &&
        (exclusion->grid.height != h || exclusion->grid.width != w))
        throw ConfigError("exclusion grid does not match map extents");

    const int target = static_cast<int>(std::ceil(static_cast<double>(rate) * h * w));
    std::vector<Coord> candidates;
    candidates.reserve(static_cast<std::size_t>(h) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (!exclusion || !exclusion->excluded(r, c)) candidates.push_back({r, c});

    const int keep = std::min<int>(target, static_cast<int>(candidates.size()));
    std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(),
                      [&](const Coord& a, const Coord& b) {
                          float va = sum_map.at(a.row, a.col), vb = sum_map.at(b.row, b.col);
                          if (va != vb) return va > vb;
                          return a < b;
                      });
    candidates.resize(keep);
    std::sort(candidates.begin(), candidates.end());

    WinnerMask mask;
    mask.grid = BitGrid(h, w);
    for (const Coord& c : candidates) mask.grid.set(c.row, c.col);
    mask.winners = std::move(candidates);
    return mask;
}

// Union of the winners' receptive fields: the input pixels that can reach the
// retained activations.
inline BitGrid backmap_region(const WinnerMask& mask, const FieldIndex& fields, int image_h,
                              int image_w) {
    BitGrid region(image_h, image_w);
    for (const Coord& c : mask.winners) region.set_rect(fields.field(c));
    return region;
}

inline BitGrid backmap_region(const ModelSpec& model, int layer, const WinnerMask& mask) {
    auto chain = spatial_chain(model, layer);
    FieldIndex idx(chain, mask.grid.height, mask.grid.width);
    return backmap_region(mask, idx, model.in_height, model.in_width);
}

// ---------------------------------------------------------------------------
// Pruned inference

// Forward pass with the probe-layer activations multiplied by the winner mask
// before flowing on. The mask is recomputed for the given input (and exclusion
// set), so pruning is dynamic per image.
inline ForwardTrace pruned_forward(const ModelSpec& model, const Tensor& x,
                                   const WinnerConfig& config,
                                   const ExclusionSet* exclusion = nullptr, bool trace = false) {
    config.validate();
    const int s = config.resolve_layer(model);
    detail::check_input(model, x);

    ForwardTrace t;
    t.traced = trace;
    t.input = x;
    Tensor cur = run_layers(model, x, 0, s + 1, trace ? &t.outputs : nullptr);

    WinnerMask mask = compute_winner_mask(channel_sum(cur), config.winner_rate, exclusion);
    const int hw = mask.grid.height * mask.grid.width;
    const int chans = static_cast<int>(cur.size()) / hw;
    for (int c = 0; c < chans; ++c)
        for (int j = 0; j < hw; ++j)
            if (!mask.grid.cells[j]) cur.data[static_cast<std::size_t>(c) * hw + j] = 0.0f;

    if (trace) t.outputs[s] = cur;  // the masked value is what downstream layers saw

    const int n = static_cast<int>(model.layers.size());
    Tensor out = run_layers(model, std::move(cur), s + 1, n, trace ? &t.outputs : nullptr);
    t.logits = out;
    if (!trace) t.outputs.push_back(out);
    t.label = argmax_label(t.logits);
    t.masked_layer = s;
    t.mask = mask.to_tensor();
    return t;
}

// Forward with a caller-supplied fixed mask at `layer` (no winner recomputation).
inline ForwardTrace masked_forward(const ModelSpec& model, const Tensor& x, int layer,
                                   const WinnerMask& mask, bool trace = false) {
    detail::check_input(model, x);
    ForwardTrace t;
    t.traced = trace;
    t.input = x;
    Tensor cur = run_layers(model, x, 0, layer + 1, trace ? &t.outputs : nullptr);
    const int hw = mask.grid.height * mask.grid.width;
    const int chans = static_cast<int>(cur.size()) / hw;
    for (int c = 0; c < chans; ++c)
        for (int j = 0; j < hw; ++j)
            if (!mask.grid.cells[j]) cur.data[static_cast<std::size_t>(c) * hw + j] = 0.0f;
    if (trace) t.outputs[layer] = cur;
    const int n = static_cast<int>(model.layers.size());
    Tensor out = run_layers(model, std::move(cur), layer + 1, n, trace ? &t.outputs : nullptr);
    t.logits = out;
    if (!trace) t.outputs.push_back(out);
    t.label = argmax_label(t.logits);
    t.masked_layer = layer;
    t.mask = mask.to_tensor();
    return t;
}

}  // namespace patchcert
