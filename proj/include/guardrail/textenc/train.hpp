#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "guardrail/diffcore/adam.hpp"
#include "guardrail/rng.hpp"
#include "guardrail/textenc/encoder.hpp"

namespace guardrail::textenc {

struct TrainConfig {
    std::size_t epochs = 3;
    double lr = 3e-4;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
    std::optional<double> val_accuracy;
};

struct TrainResult {
    ClassifierModel model;
    std::vector<EpochStats> trace;
};

inline double accuracy(const ClassifierModel& model, const std::vector<EncodedInput>& data, double alpha = 0.0,
                       const adapter::LoraAdapter* lora = nullptr) {
    require(!data.empty(), ErrorCode::empty_input, "accuracy: empty dataset");
    const auto preds = predict_batch(model, data, alpha, lora);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        require(data[i].label.has_value(), ErrorCode::schema_violation, "accuracy: unlabeled example");
        correct += preds[i].label == *data[i].label;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Empirical risk minimization: mean cross-entropy per minibatch, Adam over
/// every base parameter. Train accuracy in the trace is measured on the fly
/// (predictions before each minibatch update).
inline TrainResult train_erm(ClassifierModel model, const std::vector<EncodedInput>& train_set,
                             const TrainConfig& cfg, const std::vector<EncodedInput>* val_set = nullptr) {
    require(!train_set.empty(), ErrorCode::empty_input, "train_erm: empty training set");
    require(cfg.lr > 0.0, ErrorCode::invalid_argument, "train_erm: lr must be positive");
    require(cfg.batch_size > 0, ErrorCode::invalid_argument, "train_erm: batch_size must be positive");
    for (const auto& x : train_set)
        require(x.label.has_value() && *x.label < model.config.n_classes, ErrorCode::schema_violation,
                "train_erm: every training example needs a label in range");

    diff::Adam optimizer(diff::AdamConfig{.lr = cfg.lr});
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    TrainResult result{std::move(model), {}};
    ClassifierModel& m = result.model;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            Tape tape;
            BoundModel bound(tape, m, nullptr, 0.0, BindOptions{.track_base = true});
            std::vector<Var> losses;
            for (std::size_t i = start; i < end; ++i) {
                const EncodedInput& x = train_set[order[i]];
                Var logits = bound.forward(x).logits;
                correct += argmax(tape.value(logits).values()) == *x.label;
                losses.push_back(diff::cross_entropy(logits, *x.label));
            }
            Var total = losses[0];
            for (std::size_t i = 1; i < losses.size(); ++i) total = diff::add(total, losses[i]);
            Var loss = diff::scale(total, 1.0 / static_cast<double>(losses.size()));
            loss_sum += tape.value(total)[0];
            tape.backward(loss);

            auto params = m.parameters();
            std::vector<Tensor*> ptrs;
            std::vector<const Tensor*> grads;
            for (std::size_t k = 0; k < params.size(); ++k) {
                ptrs.push_back(params[k].tensor);
                grads.push_back(&tape.grad(bound.parameter_leaves()[k].var));
            }
            optimizer.step(ptrs, grads);
        }
        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.mean_loss = loss_sum / static_cast<double>(order.size());
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        if (val_set != nullptr && !val_set->empty()) stats.val_accuracy = accuracy(m, *val_set);
        result.trace.push_back(stats);
    }
    return result;
}

}  // namespace guardrail::textenc
