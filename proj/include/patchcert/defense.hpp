#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "patchcert/parallel.hpp"
#include "patchcert/pruning.hpp"
#include "patchcert/windows.hpp"

namespace patchcert {

struct DefenseConfig {
    WinnerConfig winner;
    int patch_side = 3;              // p: largest patch side the defense certifies against
    int redundancy = 3;              // r: coverage multiplicity for interior patches
    double overlap_threshold = 0.5;  // tau: pairwise ratio at which occluders merge
    int merge_max_side = 0;          // 0 = auto (2*occluder-1); -1 = unlimited
    int alert_cluster_min = 1;       // disagreeing-cluster size that triggers a hard alert
    int workers = 1;

    int occluder() const { return occluder_side(patch_side, redundancy); }
    int resolved_merge_cap() const {
        if (merge_max_side == 0) return 2 * occluder() - 1;
        if (merge_max_side < 0) return 0;  // unlimited
        return merge_max_side;
    }
};

// Every evaluated occluder with its prediction, plus the unoccluded one.
struct OcclusionPredMap {
    int unoccluded_label = -1;
    std::vector<std::pair<Rect, int>> entries;
};

struct DetectionOutcome {
    bool alert = false;
    int label = -1;  // the pruned prediction y*; the answer when !alert
    std::vector<Rect> suspects;
    std::optional<int> recovered_label;
    bool noise_alert = false;  // alert came from the majority fallback only
    OcclusionPredMap occlusions;
};

struct CertifyResult {
    bool certified = false;
    std::optional<Rect> failing_window;
    int evaluated_count = 0;
};

// Ties a model to one occluder plan. The plan is built once from image
// geometry alone, so certification and detection sweep the same rectangles;
// per image only the subset touching the candidate region is evaluated.
class Defense {
public:
    Defense(ModelSpec model, DefenseConfig config)
        : model_(std::move(model)), config_(config) {
        model_.validate();
        config_.winner.validate();
        probe_layer_ = config_.winner.resolve_layer(model_);
        auto dims = model_.output_dims();
        grid_h_ = dims[probe_layer_][1];
        grid_w_ = dims[probe_layer_][2];
        fields_ = FieldIndex(spatial_chain(model_, probe_layer_), grid_h_, grid_w_);
        plan_ = build_window_plan(model_.in_height, model_.in_width, config_.patch_side,
                                  config_.redundancy, config_.overlap_threshold,
                                  config_.resolved_merge_cap());
    }

    const ModelSpec& model() const { return model_; }
    const DefenseConfig& config() const { return config_; }
    const WindowPlan& plan() const { return plan_; }
    const FieldIndex& fields() const { return fields_; }
    int probe_layer() const { return probe_layer_; }

    ForwardTrace pruned(const Tensor& x) const {
        return pruned_forward(model_, x, config_.winner);
    }

    // Candidate region R: receptive fields of the winners of x.
    BitGrid candidate_region(const Tensor& x) const {
        return region_of(pruned(x));
    }

    BitGrid region_of(const ForwardTrace& pruned_trace) const {
        WinnerMask mask = mask_from_tensor(pruned_trace.mask);
        return backmap_region(mask, fields_, model_.in_height, model_.in_width);
    }

    // Prediction with `occluder` zeroed out and its probe-layer footprint
    // excluded from winner candidacy, recomputed for this input.
    int occluded_predict(const Tensor& x, const Rect& occluder) const {
        check_occluder(occluder);
        Tensor masked = occlude(x, {occluder});
        ExclusionSet excl = fields_.exclusion_for(occluder);
        return pruned_forward(model_, masked, config_.winner, &excl).label;
    }

    CertifyResult certify(const Tensor& x, int label) const {
        CertifyResult res;
        ForwardTrace t = pruned_forward(model_, x, config_.winner);
        if (t.label != label) return res;
        BitGrid region = region_of(t);
        for (int idx : filter_rect_indices(plan_.merged, region)) {
            ++res.evaluated_count;
            if (occluded_predict(x, plan_.merged[idx]) != label) {
                res.failing_window = plan_.merged[idx];
                return res;
            }
        }
        res.certified = true;
        return res;
    }

    // Exhaustive sweep over every generated window, ignoring the candidate
    // region and the merge step. Validation-only reference.
    CertifyResult certify_oracle(const Tensor& x, int label) const {
        CertifyResult res;
        ForwardTrace t = pruned_forward(model_, x, config_.winner);
        if (t.label != label) return res;
        for (const Window& w :
             generate_windows(model_.in_height, model_.in_width, config_.patch_side,
                              config_.redundancy)) {
            ++res.evaluated_count;
            if (occluded_predict(x, w.rect()) != label) {
                res.failing_window = w.rect();
                return res;
            }
        }
        res.certified = true;
        return res;
    }

    DetectionOutcome detect(const Tensor& x) const {
        DetectionOutcome out;
        ForwardTrace t = pruned_forward(model_, x, config_.winner);
        out.label = t.label;
        out.occlusions.unoccluded_label = t.label;

        BitGrid region = region_of(t);
        std::vector<int> eval = filter_rect_indices(plan_.merged, region);
        std::vector<int> labels(eval.size(), -1);
        parallel_for(static_cast<int>(eval.size()), config_.workers, [&](int i) {
            labels[i] = occluded_predict(x, plan_.merged[eval[i]]);
        });

        std::vector<std::pair<Rect, int>> disagree;
        for (std::size_t i = 0; i < eval.size(); ++i) {
            const Rect& r = plan_.merged[eval[i]];
            out.occlusions.entries.emplace_back(r, labels[i]);
            if (labels[i] != t.label) disagree.emplace_back(r, labels[i]);
        }
        if (disagree.empty()) return out;  // benign

        // Hard alert: a connected group of disagreeing occluders that agree on
        // one label. Connectivity means the rectangles touch (1px dilation).
        std::vector<Rect> suspects = clustered_suspects(disagree);
        if (!suspects.empty()) {
            out.alert = true;
            out.suspects = std::move(suspects);
            return out;
        }
        // Fallback: most occluded predictions disagree with y*.
        if (disagree.size() * 2 > eval.size()) {
            out.alert = true;
            out.noise_alert = true;
            for (auto& [r, lbl] : disagree) out.suspects.push_back(r);
            return out;
        }
        return out;  // benign with noise
    }

    // Re-prediction with the union of the suspect rectangles occluded.
    int recover(const Tensor& x, const DetectionOutcome& outcome) const {
        if (!outcome.alert || outcome.suspects.empty())
            throw PreconditionError("recover requires an alert with suspect windows");
        Tensor masked = occlude(x, outcome.suspects);
        ExclusionSet excl = fields_.exclusion_for(outcome.suspects);
        return pruned_forward(model_, masked, config_.winner, &excl).label;
    }

    static WinnerMask mask_from_tensor(const Tensor& mask01) {
        WinnerMask m;
        m.grid = BitGrid(mask01.shape[0], mask01.shape[1]);
        for (int r = 0; r < mask01.shape[0]; ++r)
            for (int c = 0; c < mask01.shape[1]; ++c)
                if (mask01.at(r, c) != 0.0f) {
                    m.grid.set(r, c);
                    m.winners.push_back({r, c});
                }
        return m;
    }

    Tensor occlude(const Tensor& x, const std::vector<Rect>& rects) const {
        Tensor out = x;
        for (const Rect& raw : rects) {
            Rect r = raw.clipped(model_.in_width, model_.in_height);
            for (int c = 0; c < model_.in_channels; ++c)
                for (int y = r.y0; y <= r.y1; ++y)
                    for (int xx = r.x0; xx <= r.x1; ++xx) out.at(c, y, xx) = 0.0f;
        }
        return out;
    }

private:
    void check_occluder(const Rect& r) const {
        if (r.empty()) throw PreconditionError("degenerate occluder rectangle");
        if (r.x0 < 0 || r.y0 < 0 || r.x1 >= model_.in_width || r.y1 >= model_.in_height)
            throw PreconditionError("occluder " + r.to_string() + " outside image bounds");
    }

    std::vector<Rect> clustered_suspects(const std::vector<std::pair<Rect, int>>& disagree) const {
        const int n = static_cast<int>(disagree.size());
        std::vector<int> comp(n, -1);
        int comps = 0;
        for (int i = 0; i < n; ++i) {
            if (comp[i] >= 0) continue;
            comp[i] = comps;
            std::vector<int> stack{i};
            while (!stack.empty()) {
                int a = stack.back();
                stack.pop_back();
                for (int b = 0; b < n; ++b) {
                    if (comp[b] >= 0 || disagree[b].second != disagree[a].second) continue;
                    if (disagree[a].first.expanded(1).intersects(disagree[b].first)) {
                        comp[b] = comps;
                        stack.push_back(b);
                    }
                }
            }
            ++comps;
        }
        std::vector<int> size(comps, 0);
        for (int i = 0; i < n; ++i) ++size[comp[i]];
        std::vector<Rect> suspects;
        for (int i = 0; i < n; ++i)
            if (size[comp[i]] >= config_.alert_cluster_min) suspects.push_back(disagree[i].first);
        return suspects;
    }

    ModelSpec model_;
    DefenseConfig config_;
    int probe_layer_ = 0;
    int grid_h_ = 0;
    int grid_w_ = 0;
    FieldIndex fields_;
    WindowPlan plan_;
};

}  // namespace patchcert
