#pragma once

#include <cstddef>
#include <vector>

#include "guardrail/adapter/lora.hpp"
#include "guardrail/textenc/train.hpp"

namespace guardrail::calibrate {

using textenc::ClassifierModel;
using textenc::EncodedInput;

/// Labeled examples from the target distribution.
struct SupportSet {
    std::vector<EncodedInput> examples;

    void validate(std::size_t n_classes) const {
        require(!examples.empty(), ErrorCode::empty_input, "calibrate: empty support set");
        for (const auto& x : examples)
            require(x.label.has_value() && *x.label < n_classes, ErrorCode::schema_violation,
                    "calibrate: support labels must lie in 0..C-1");
    }
};

struct GridPoint {
    double alpha = 0.0;
    double accuracy = 0.0;
};

struct CalibrationResult {
    std::vector<GridPoint> grid;
    double selected_alpha = 0.0;
    double selected_accuracy = 0.0;
};

/// {0.0, 0.1, ..., 1.0}, built from integers so every point is the nearest
/// double to i/10.
inline std::vector<double> alpha_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(static_cast<double>(i) / 10.0);
    return g;
}

/// Support accuracy at every grid α; the maximizer wins, ties to the smallest α.
inline CalibrationResult calibrate(const ClassifierModel& model, const adapter::LoraAdapter& lora,
                                   const SupportSet& support) {
    support.validate(model.config.n_classes);
    CalibrationResult result;
    bool first = true;
    for (double alpha : alpha_grid()) {
        const double acc = textenc::accuracy(model, support.examples, alpha, &lora);
        result.grid.push_back({alpha, acc});
        if (first || acc > result.selected_accuracy) {
            result.selected_alpha = alpha;
            result.selected_accuracy = acc;
            first = false;
        }
    }
    return result;
}

}  // namespace guardrail::calibrate
