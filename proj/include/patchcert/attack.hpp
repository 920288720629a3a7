#pragma once

#include <random>

#include "patchcert/backward.hpp"
#include "patchcert/data.hpp"
#include "patchcert/defense.hpp"
#include "patchcert/parallel.hpp"
#include "patchcert/windows.hpp"

namespace patchcert {

struct AttackConfig {
    int target_label = 0;
    int steps = 200;
    float step_size = 0.05f;
    PatchSpec patch;                  // side, plus fixed location when located()
    float activation_penalty = 0.0f;  // weight of the first-layer response penalty
    std::uint32_t seed = 1;
    int workers = 1;

    void validate(const ModelSpec& model) const {
        if (steps < 0) throw ConfigError("steps must be >= 0");
        if (activation_penalty < 0.0f) throw ConfigError("activation penalty must be >= 0");
        if (target_label < 0 || target_label >= model.class_count)
            throw ConfigError("target label out of range");
        if (patch.side < 1 || patch.side > std::min(model.in_height, model.in_width))
            throw ConfigError("patch side out of range");
    }
};

// Pixels inside the patch rectangle replaced by patch values (C,p,p).
inline Tensor apply_patch(const Tensor& x, const Tensor& patch, int loc_x, int loc_y) {
    if (patch.rank() != 3 || patch.shape[0] != x.shape[0] || patch.shape[1] != patch.shape[2])
        throw ConfigError("patch must be (C,p,p) with the image channel count");
    const int p = patch.shape[1];
    if (loc_x < 0 || loc_y < 0 || loc_x + p > x.shape[2] || loc_y + p > x.shape[1])
        throw PreconditionError("patch location outside image bounds");
    Tensor out = x;
    for (int c = 0; c < patch.shape[0]; ++c)
        for (int py = 0; py < p; ++py)
            for (int px = 0; px < p; ++px) out.at(c, loc_y + py, loc_x + px) = patch.at(c, py, px);
    return out;
}

inline Tensor uniform_gray_patch(int channels, int side, float value = 0.5f) {
    return Tensor({channels, side, side}, value);
}

namespace detail {

inline int first_conv_layer(const ModelSpec& model) {
    for (int i = 0; i < static_cast<int>(model.layers.size()); ++i)
        if (model.layers[i].kind == LayerKind::Conv) return i;
    throw ConfigError("model has no conv layer");
}

// Sum of first-conv pre-activations over the positions whose receptive field
// touches the patch rectangle: the stealthiness term the adaptive attack
// penalizes, and the energy readout reported by evaluations.
inline double patch_response_sum(const ModelSpec& model, const ForwardTrace& trace,
                                 const Rect& patch_rect, const FieldIndex& fields) {
    ExclusionSet footprint = fields.exclusion_for(patch_rect);
    const Tensor& conv_out = trace.outputs[first_conv_layer(model)];
    const int hw = conv_out.shape[1] * conv_out.shape[2];
    double sum = 0.0;
    for (int ch = 0; ch < conv_out.shape[0]; ++ch)
        for (int j = 0; j < hw; ++j)
            if (footprint.grid.cells[j]) sum += conv_out.data[static_cast<std::size_t>(ch) * hw + j];
    return sum;
}

}  // namespace detail

struct PatchResult {
    Tensor patch;
    std::vector<double> objective;  // value after each step; non-decreasing
};

// Projected sign-gradient ascent on a shared patch over the image batch.
// Objective: mean log-probability of the target label, minus the weighted
// first-layer response over the patch footprint. A step that lowers the
// objective is reverted and the step size halved.
inline PatchResult optimize_patch(const ModelSpec& model, const std::vector<Tensor>& images,
                                  const AttackConfig& cfg) {
    if (images.empty()) throw DataError("optimize_patch needs at least one image");
    cfg.validate(model);
    const int p = cfg.patch.side;
    const int n = static_cast<int>(images.size());
    const int conv0 = detail::first_conv_layer(model);
    FieldIndex fields(spatial_chain(model, conv0),
                      model.output_dims()[conv0][1], model.output_dims()[conv0][2]);

    std::mt19937 rng(cfg.seed);
    std::vector<std::pair<int, int>> locs(n);
    for (int i = 0; i < n; ++i) {
        if (cfg.patch.located()) {
            locs[i] = {cfg.patch.x, cfg.patch.y};
        } else {
            std::uniform_int_distribution<int> dx(0, model.in_width - p);
            std::uniform_int_distribution<int> dy(0, model.in_height - p);
            locs[i] = {dx(rng), dy(rng)};
        }
    }

    auto batch_objective = [&](const Tensor& patch) {
        std::vector<double> vals(n);
        parallel_for(n, cfg.workers, [&](int i) {
            Tensor xp = apply_patch(images[i], patch, locs[i].first, locs[i].second);
            ForwardTrace t = forward(model, xp, true);
            Tensor probs = softmax(t.logits);
            double obj = std::log(std::max<double>(probs.at(cfg.target_label), 1e-12));
            if (cfg.activation_penalty > 0.0f) {
                Rect pr = Rect::from_size(locs[i].first, locs[i].second, p, p);
                obj -= cfg.activation_penalty * detail::patch_response_sum(model, t, pr, fields);
            }
            vals[i] = obj;
        });
        double sum = 0.0;
        for (double v : vals) sum += v;
        return sum / n;
    };

    PatchResult res;
    res.patch = uniform_gray_patch(model.in_channels, p);
    float step = cfg.step_size;
    double best = batch_objective(res.patch);

    for (int it = 0; it < cfg.steps; ++it) {
        // d(objective)/d(patch), accumulated over images at their locations
        std::vector<Tensor> per_image(n);
        parallel_for(n, cfg.workers, [&](int i) {
            Tensor xp = apply_patch(images[i], res.patch, locs[i].first, locs[i].second);
            ForwardTrace t = forward(model, xp, true);
            Tensor dlogits = softmax(t.logits);
            for (std::size_t j = 0; j < dlogits.size(); ++j) dlogits.data[j] = -dlogits.data[j];
            dlogits.at(cfg.target_label) += 1.0f;
            Gradients g = backward(model, t, dlogits);
            Tensor gin = std::move(g.input);
            if (cfg.activation_penalty > 0.0f) {
                Rect pr = Rect::from_size(locs[i].first, locs[i].second, p, p);
                ExclusionSet fp = fields.exclusion_for(pr);
                const Tensor& conv_out = t.outputs[conv0];
                Tensor g_out(conv_out.shape);
                const int hw = conv_out.shape[1] * conv_out.shape[2];
                for (int ch = 0; ch < conv_out.shape[0]; ++ch)
                    for (int j = 0; j < hw; ++j)
                        if (fp.grid.cells[j])
                            g_out.data[static_cast<std::size_t>(ch) * hw + j] = 1.0f;
                Tensor dummy_w(model.layers[conv0].weights.shape);
                Tensor dummy_b(model.layers[conv0].bias.shape);
                const Tensor& conv_in = (conv0 == 0) ? t.input : t.outputs[conv0 - 1];
                Tensor pen_in = detail::conv_backward(model.layers[conv0], conv_in, g_out,
                                                      dummy_w, dummy_b);
                // penalty applies through earlier layers only when conv0 == 0;
                // the default probe is the first layer so this is exact
                for (std::size_t j = 0; j < gin.data.size(); ++j)
                    gin.data[j] -= cfg.activation_penalty * pen_in.data[j];
            }
            Tensor gp({model.in_channels, p, p});
            for (int c = 0; c < model.in_channels; ++c)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        gp.at(c, py, px) =
                            gin.at(c, locs[i].second + py, locs[i].first + px);
            per_image[i] = std::move(gp);
        });

        Tensor grad({model.in_channels, p, p});
        for (int i = 0; i < n; ++i)
            for (std::size_t j = 0; j < grad.data.size(); ++j)
                grad.data[j] += per_image[i].data[j] / static_cast<float>(n);

        Tensor candidate = res.patch;
        for (std::size_t j = 0; j < candidate.data.size(); ++j) {
            float g = grad.data[j];
            candidate.data[j] += step * (g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f));
            candidate.data[j] = std::clamp(candidate.data[j], 0.0f, 1.0f);
        }
        double obj = batch_objective(candidate);
        if (!std::isfinite(obj)) throw NumericError("non-finite attack objective");
        if (obj >= best) {
            res.patch = std::move(candidate);
            best = obj;
        } else {
            step *= 0.5f;  // revert
        }
        res.objective.push_back(best);
    }
    return res;
}

struct AttackEval {
    double success_rate = 0.0;    // patched images the vanilla model calls target
    double detection_rate = 0.0;  // localized alerts on patched + clean passes on benign
    double mean_patch_energy = 0.0;
};

inline AttackEval evaluate_attack(const Defense& defense, const LabeledSet& data,
                                  const Tensor& patch, const AttackConfig& cfg) {
    if (data.empty()) throw DataError("evaluate_attack needs data");
    const ModelSpec& model = defense.model();
    cfg.validate(model);
    const int p = patch.shape[1];
    const int n = static_cast<int>(data.size());
    const int conv0 = detail::first_conv_layer(model);
    FieldIndex fields(spatial_chain(model, conv0),
                      model.output_dims()[conv0][1], model.output_dims()[conv0][2]);

    std::mt19937 rng(cfg.seed);
    std::vector<std::pair<int, int>> locs(n);
    for (int i = 0; i < n; ++i) {
        if (cfg.patch.located()) {
            locs[i] = {cfg.patch.x, cfg.patch.y};
        } else {
            std::uniform_int_distribution<int> dx(0, model.in_width - p);
            std::uniform_int_distribution<int> dy(0, model.in_height - p);
            locs[i] = {dx(rng), dy(rng)};
        }
    }

    std::vector<int> hit(n, 0), correct_patched(n, 0), correct_benign(n, 0);
    std::vector<double> energy(n, 0.0);
    parallel_for(n, cfg.workers, [&](int i) {
        Tensor xp = apply_patch(data.images[i], patch, locs[i].first, locs[i].second);
        ForwardTrace t = forward(model, xp, true);
        hit[i] = (t.label == cfg.target_label) ? 1 : 0;
        Rect pr = Rect::from_size(locs[i].first, locs[i].second, p, p);
        energy[i] = detail::patch_response_sum(model, t, pr, fields);

        DetectionOutcome patched = defense.detect(xp);
        bool localized = false;
        for (const Rect& s : patched.suspects)
            if (s.intersects(pr)) localized = true;
        correct_patched[i] = (patched.alert && localized) ? 1 : 0;

        DetectionOutcome benign = defense.detect(data.images[i]);
        correct_benign[i] = benign.alert ? 0 : 1;
    });

    AttackEval out;
    for (int i = 0; i < n; ++i) {
        out.success_rate += hit[i];
        out.detection_rate += correct_patched[i] + correct_benign[i];
        out.mean_patch_energy += energy[i];
    }
    out.success_rate /= n;
    out.detection_rate /= 2.0 * n;
    out.mean_patch_energy /= n;
    return out;
}

}  // namespace patchcert
