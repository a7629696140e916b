#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <span>
#include <vector>

#include "guardrail/attribution.hpp"
#include "guardrail/benchgen.hpp"
#include "guardrail/textenc/encoder.hpp"

namespace guardrail::metrics {

using textenc::ClassifierModel;
using textenc::EncodedInput;

struct GroupStat {
    std::size_t group = 0;  // 1..2C
    std::size_t size = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;  // 0 when empty; such groups are flagged and skipped
    bool empty = true;
};

struct GroupReport {
    std::vector<GroupStat> groups;
    std::size_t total = 0;
    double accuracy = 0.0;
    double worst_group_accuracy = 0.0;
    std::size_t worst_group = 0;
};

/// Tallies predictions into the 2C label×presence groups.
inline GroupReport group_report(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& groups,
                                const std::vector<std::size_t>& predictions, std::size_t n_classes) {
    require(!labels.empty(), ErrorCode::empty_input, "group_report: empty dataset");
    require(labels.size() == groups.size() && labels.size() == predictions.size(), ErrorCode::shape_mismatch,
            "group_report: labels, groups and predictions differ in length");
    GroupReport r;
    r.groups.resize(2 * n_classes);
    for (std::size_t g = 0; g < r.groups.size(); ++g) r.groups[g].group = g + 1;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(groups[i] >= 1 && groups[i] <= 2 * n_classes, ErrorCode::out_of_range,
                "group_report: group id " + std::to_string(groups[i]) + " outside 1..2C");
        auto& g = r.groups[groups[i] - 1];
        ++g.size;
        const bool ok = predictions[i] == labels[i];
        g.correct += ok;
        correct += ok;
    }
    r.total = labels.size();
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
    r.worst_group_accuracy = std::numeric_limits<double>::infinity();
    for (auto& g : r.groups) {
        g.empty = g.size == 0;
        if (g.empty) continue;
        g.accuracy = static_cast<double>(g.correct) / static_cast<double>(g.size);
        if (g.accuracy < r.worst_group_accuracy) {
            r.worst_group_accuracy = g.accuracy;
            r.worst_group = g.group;
        }
    }
    return r;
}

inline GroupReport group_report(const ClassifierModel& model, const adapter::LoraAdapter* lora, double alpha,
                                const bench::GroupedDataset& ds, const std::vector<EncodedInput>& encoded) {
    require(ds.size() == encoded.size(), ErrorCode::shape_mismatch, "group_report: dataset and encoding differ");
    std::vector<std::size_t> labels, groups, preds;
    for (const auto& e : ds.examples) {
        labels.push_back(e.label);
        groups.push_back(e.group);
    }
    for (const auto& p : textenc::predict_batch(model, encoded, alpha, lora)) preds.push_back(p.label);
    return group_report(labels, groups, preds, ds.n_classes);
}

struct MstpsReport {
    std::size_t k = 10;
    std::vector<double> per_example;
    double mean = 0.0;
};

/// max_j |p − masked[j]|; 0 when there is nothing to mask.
inline double max_shift(double p, std::span<const double> masked) {
    double best = 0.0;
    for (double q : masked) best = std::max(best, std::abs(p - q));
    return best;
}

/// Largest shift of P(ŷ|x) over single-token masks of H(x), with ŷ and H
/// taken from the evaluated model.
inline double max_single_token_shift(const ClassifierModel& model, const EncodedInput& x, std::size_t k,
                                     const adapter::LoraAdapter* lora = nullptr, double alpha = 0.0) {
    const auto base = textenc::predict(model, x, alpha, lora);
    const auto h = attribution::important_tokens(model, x, k, lora, alpha);
    std::vector<double> masked;
    for (const auto& v : attribution::masked_variants(x, h))
        masked.push_back(textenc::predict(model, v.input, alpha, lora).probs[base.label]);
    return max_shift(base.probs[base.label], masked);
}

inline MstpsReport mstps(const ClassifierModel& model, const adapter::LoraAdapter* lora, double alpha,
                         const std::vector<EncodedInput>& data, std::size_t k) {
    require(k >= 1, ErrorCode::invalid_argument, "mstps: k must be at least 1");
    require(!data.empty(), ErrorCode::empty_input, "mstps: empty dataset");
    MstpsReport r;
    r.k = k;
    double sum = 0.0;
    for (const auto& x : data) {
        r.per_example.push_back(max_single_token_shift(model, x, k, lora, alpha));
        sum += r.per_example.back();
    }
    r.mean = sum / static_cast<double>(data.size());
    return r;
}

/// Misclassification rate split by whether a shortcut position is in H(x).
struct MisclassDecomposition {
    std::size_t n = 0;
    std::size_t errors = 0;
    std::size_t errors_with_shortcut = 0;
    std::size_t errors_without_shortcut = 0;

    double total_rate() const { return rate(errors); }
    double with_shortcut_rate() const { return rate(errors_with_shortcut); }
    double without_shortcut_rate() const { return rate(errors_without_shortcut); }

private:
    double rate(std::size_t c) const { return n == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(n); }
};

inline MisclassDecomposition misclass_decomposition(const ClassifierModel& model,
                                                    const std::vector<EncodedInput>& data,
                                                    const std::vector<std::string>& shortcut_phrases, std::size_t k,
                                                    const adapter::LoraAdapter* lora = nullptr, double alpha = 0.0) {
    MisclassDecomposition d;
    d.n = data.size();
    const auto preds = textenc::predict_batch(model, data, alpha, lora);
    for (std::size_t i = 0; i < data.size(); ++i) {
        require(data[i].label.has_value(), ErrorCode::schema_violation, "misclass_decomposition: unlabeled example");
        if (preds[i].label == *data[i].label) continue;
        ++d.errors;
        const auto pos = attribution::shortcut_positions(data[i], shortcut_phrases);
        const bool hit = !pos.empty() &&
                         attribution::shortcut_in_top_k(attribution::important_tokens(model, data[i], k, lora, alpha), pos);
        ++(hit ? d.errors_with_shortcut : d.errors_without_shortcut);
    }
    return d;
}

}  // namespace guardrail::metrics
