#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "guardrail/benchgen.hpp"
#include "guardrail/textenc/encoder.hpp"

namespace guardrail::attribution {

using textenc::ClassifierModel;
using textenc::EncodedInput;

/// Gradient×input scores for token positions 1..L of an input (index i−1
/// holds position i; [CLS] has no score).
struct SaliencyScores {
    std::vector<double> scores;
    std::vector<bool> eligible;  // false for [PAD] positions
    std::size_t predicted = 0;   // ŷ used as the loss target
};

/// H(x): token positions (indices into EncodedInput::ids, so 1-based over
/// t_1..t_L) sorted by descending score, ties to the lower position.
struct ImportantTokenSet {
    std::size_t k = 10;
    std::vector<std::size_t> positions;
    std::vector<double> scores;

    bool contains(std::size_t position) const {
        return std::find(positions.begin(), positions.end(), position) != positions.end();
    }
};

struct MaskedVariant {
    std::size_t source = 0;    // index of the source input in its batch
    std::size_t position = 0;  // masked position in ids
    EncodedInput input;
};

/// s_i = ‖∂CE(f(x), ŷ)/∂e_i ⊙ e_i‖₂ with ŷ the model's own prediction. The
/// base model is used unless an adapter and α are given. Weights are only read.
inline SaliencyScores saliency(const ClassifierModel& model, const EncodedInput& x,
                               const adapter::LoraAdapter* lora = nullptr, double alpha = 0.0) {
    diff::Tape tape;
    textenc::BoundModel bound(tape, model, lora, alpha);
    const auto out = bound.forward(x, /*embeddings_as_leaf=*/true);
    SaliencyScores result;
    result.predicted = textenc::argmax(tape.value(out.logits).values());
    tape.backward(diff::cross_entropy(out.logits, result.predicted));
    const diff::Tensor& g = tape.grad(out.token_embeddings);
    const diff::Tensor& e = tape.value(out.token_embeddings);
    const std::size_t d = e.cols();
    for (std::size_t i = 1; i < x.ids.size(); ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double v = g.at(i, c) * e.at(i, c);
            s += v * v;
        }
        const double score = std::sqrt(s);
        require(std::isfinite(score), ErrorCode::non_finite, "saliency: non-finite gradient");
        result.scores.push_back(score);
        result.eligible.push_back(x.ids[i] != textenc::pad_id);
    }
    return result;
}

inline ImportantTokenSet top_k(const SaliencyScores& s, std::size_t k) {
    require(k >= 1, ErrorCode::invalid_argument, "top_k: k must be at least 1");
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < s.scores.size(); ++i)
        if (s.eligible.empty() || s.eligible[i]) order.push_back(i);
    const std::size_t take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (s.scores[a] != s.scores[b]) return s.scores[a] > s.scores[b];
                          return a < b;
                      });
    ImportantTokenSet h;
    h.k = k;
    for (std::size_t i = 0; i < take; ++i) {
        h.positions.push_back(order[i] + 1);
        h.scores.push_back(s.scores[order[i]]);
    }
    return h;
}

inline ImportantTokenSet important_tokens(const ClassifierModel& model, const EncodedInput& x, std::size_t k,
                                          const adapter::LoraAdapter* lora = nullptr, double alpha = 0.0) {
    return top_k(saliency(model, x, lora, alpha), k);
}

inline MaskedVariant mask_position(const EncodedInput& x, std::size_t position, std::size_t source = 0) {
    require(position >= 1 && position < x.ids.size(), ErrorCode::out_of_range,
            "mask: position " + std::to_string(position) + " outside 1.." + std::to_string(x.ids.size() - 1));
    MaskedVariant v{source, position, x};
    v.input.ids[position] = textenc::mask_id;
    if (position - 1 < v.input.tokens.size()) v.input.tokens[position - 1] = "[MASK]";
    return v;
}

/// One single-token masked copy of x per position in H, in H's order.
inline std::vector<MaskedVariant> masked_variants(const EncodedInput& x, const ImportantTokenSet& h,
                                                  std::size_t source = 0) {
    std::vector<MaskedVariant> out;
    out.reserve(h.positions.size());
    for (std::size_t p : h.positions) out.push_back(mask_position(x, p, source));
    return out;
}

/// Positions (in ids indexing) occupied by any shortcut phrase.
inline std::vector<std::size_t> shortcut_positions(const EncodedInput& x, const std::vector<std::string>& phrases) {
    const auto mask = bench::shortcut_mask(x.tokens, phrases);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) out.push_back(i + 1);
    return out;
}

inline bool shortcut_in_top_k(const ImportantTokenSet& h, const std::vector<std::size_t>& shortcut_pos) {
    return std::any_of(shortcut_pos.begin(), shortcut_pos.end(), [&](std::size_t p) { return h.contains(p); });
}

/// Fraction of shortcut-bearing inputs whose top-k important tokens include a
/// shortcut position. Inputs without a shortcut are skipped.
inline double shortcut_recall(const ClassifierModel& model, const std::vector<EncodedInput>& data,
                              const std::vector<std::string>& phrases, std::size_t k) {
    std::size_t bearing = 0, hits = 0;
    for (const auto& x : data) {
        const auto pos = shortcut_positions(x, phrases);
        if (pos.empty()) continue;
        ++bearing;
        hits += shortcut_in_top_k(important_tokens(model, x, k), pos);
    }
    require(bearing > 0, ErrorCode::insufficient_data, "shortcut_recall: no shortcut-bearing example");
    return static_cast<double>(hits) / static_cast<double>(bearing);
}

}  // namespace guardrail::attribution
