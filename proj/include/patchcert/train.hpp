#pragma once

#include <cstdio>
#include <optional>
#include <random>

#include "patchcert/backward.hpp"
#include "patchcert/data.hpp"
#include "patchcert/parallel.hpp"
#include "patchcert/pruning.hpp"

namespace patchcert {

struct TrainConfig {
    int epochs = 10;
    float lr = 0.05f;
    float momentum = 0.9f;
    int batch = 32;
    std::uint32_t seed = 1;
    // Winner-take-all finetuning: forward is pruned at the probe layer and
    // gradients flow only through the per-image winners.
    std::optional<float> winner_rate;
    // Random-occlusion augmentation: with occlusion_prob, one random
    // occlusion_side x occlusion_side window per image is zeroed.
    bool occlusion_augment = false;
    int occlusion_side = 5;
    float occlusion_prob = 0.5f;
    int workers = 1;
    bool verbose = false;
};

// Minibatch SGD with momentum and cross-entropy. Deterministic given the
// seed: augmentation draws happen on one stream before the parallel section
// and per-image gradients are reduced in index order.
inline ModelSpec train(ModelSpec model, const LabeledSet& data, const TrainConfig& cfg,
                       std::vector<float>* epoch_losses = nullptr) {
    if (data.empty()) throw DataError("training set is empty");
    data.validate(model.class_count);
    if (cfg.batch < 1 || cfg.epochs < 0 || cfg.lr < 0.0f) throw ConfigError("bad training config");
    if (cfg.winner_rate && !(*cfg.winner_rate > 0.0f && *cfg.winner_rate <= 1.0f))
        throw ConfigError("winner_rate must lie in (0,1]");

    std::mt19937 rng(cfg.seed);
    const int n = static_cast<int>(data.size());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;

    Gradients velocity = zero_gradients(model);
    WinnerConfig wcfg;
    if (cfg.winner_rate) wcfg.winner_rate = *cfg.winner_rate;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += cfg.batch) {
            const int count = std::min(cfg.batch, n - start);

            // augmentation decided up front on the shared stream
            std::vector<Tensor> inputs(count);
            std::vector<int> labels(count);
            for (int b = 0; b < count; ++b) {
                const int idx = order[start + b];
                inputs[b] = data.images[idx];
                labels[b] = data.labels[idx];
                if (cfg.occlusion_augment) {
                    std::uniform_real_distribution<float> coin(0.0f, 1.0f);
                    if (coin(rng) < cfg.occlusion_prob) {
                        const int side = std::min({cfg.occlusion_side, model.in_height, model.in_width});
                        std::uniform_int_distribution<int> dy(0, model.in_height - side);
                        std::uniform_int_distribution<int> dx(0, model.in_width - side);
                        const int y0 = dy(rng), x0 = dx(rng);
                        for (int c = 0; c < model.in_channels; ++c)
                            for (int y = y0; y < y0 + side; ++y)
                                for (int x = x0; x < x0 + side; ++x) inputs[b].at(c, y, x) = 0.0f;
                    }
                }
            }

            std::vector<Gradients> grads(count);
            std::vector<float> losses(count);
            parallel_for(count, cfg.workers, [&](int b) {
                ForwardTrace t = cfg.winner_rate
                                     ? pruned_forward(model, inputs[b], wcfg, nullptr, true)
                                     : forward(model, inputs[b], true);
                Tensor dlogits;
                losses[b] = cross_entropy_loss(t.logits, labels[b], &dlogits);
                grads[b] = backward(model, t, dlogits);
            });

            Gradients batch_grad = zero_gradients(model);
            float batch_loss = 0.0f;
            const float inv = 1.0f / static_cast<float>(count);
            for (int b = 0; b < count; ++b) {
                if (!std::isfinite(losses[b]))
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                       ", sample " + std::to_string(order[start + b]));
                batch_loss += losses[b];
                batch_grad.add_scaled(grads[b], inv);
            }
            epoch_loss += batch_loss;

            for (std::size_t li = 0; li < model.layers.size(); ++li) {
                if (!model.layers[li].has_params()) continue;
                auto step = [&](Tensor& param, Tensor& vel, const Tensor& g) {
                    for (std::size_t j = 0; j < param.data.size(); ++j) {
                        vel.data[j] = cfg.momentum * vel.data[j] - cfg.lr * g.data[j];
                        param.data[j] += vel.data[j];
                    }
                };
                step(model.layers[li].weights, velocity.weights[li], batch_grad.weights[li]);
                step(model.layers[li].bias, velocity.bias[li], batch_grad.bias[li]);
            }
        }
        if (epoch_losses) epoch_losses->push_back(static_cast<float>(epoch_loss / n));
        if (cfg.verbose)
            std::fprintf(stderr, "epoch %d  loss %.4f\n", epoch, epoch_loss / n);
    }
    return model;
}

// Fraction of images whose (optionally pruned) prediction matches the label.
inline double evaluate_accuracy(const ModelSpec& model, const LabeledSet& data,
                                const std::optional<WinnerConfig>& winner = std::nullopt,
                                int workers = 1) {
    if (data.empty()) throw DataError("empty evaluation set");
    std::vector<int> correct(data.size(), 0);
    parallel_for(static_cast<int>(data.size()), workers, [&](int i) {
        int label = winner ? pruned_forward(model, data.images[i], *winner).label
                           : forward(model, data.images[i]).label;
        correct[i] = (label == data.labels[i]) ? 1 : 0;
    });
    long long sum = 0;
    for (int c : correct) sum += c;
    return static_cast<double>(sum) / static_cast<double>(data.size());
}

}  // namespace patchcert
