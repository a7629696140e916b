#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "guardrail/adapter/lora.hpp"
#include "guardrail/attribution.hpp"
#include "guardrail/diffcore/adam.hpp"
#include "guardrail/textenc/encoder.hpp"

namespace guardrail::maskcl {

using diff::Tape;
using diff::Tensor;
using diff::Var;
using textenc::ClassifierModel;
using textenc::EncodedInput;

struct MaskCLConfig {
    double temperature = 0.1;
    double lr = 1e-4;
    std::size_t epochs = 1;
    std::size_t batch_size = 16;
    std::size_t grad_accumulation = 1;
    std::size_t k = 10;
    std::uint64_t seed = 0;

    void validate() const {
        require(temperature > 0.0, ErrorCode::invalid_argument, "maskcl: temperature must be positive");
        require(lr > 0.0, ErrorCode::invalid_argument, "maskcl: lr must be positive");
        require(batch_size > 0 && grad_accumulation > 0 && k > 0, ErrorCode::invalid_argument,
                "maskcl: batch size, accumulation steps and k must be positive");
    }
};

/// Identity of one positive: anchor index i and mask slot j (rank of the
/// masked position within H(x_i)).
struct PairIndex {
    std::size_t anchor = 0;
    std::size_t slot = 0;
};

/// Anchor-positive pairs for a minibatch. Embedding rows are ℓ2-normalized
/// [CLS] vectors from the adapted encoder.
struct PairBatch {
    std::vector<PairIndex> pairs;
    Var anchors;    // [B × d]
    Var positives;  // [P × d], row r belongs to pairs[r]
};

/// Masked variants per input from the frozen base model's H(x). Computed once
/// and reused across adaptation epochs.
struct MaskPlan {
    std::vector<std::vector<EncodedInput>> variants;  // variants[i][j] masks H(x_i)[j]

    std::size_t pair_count() const {
        std::size_t n = 0;
        for (const auto& v : variants) n += v.size();
        return n;
    }
};

inline MaskPlan plan_masks(const ClassifierModel& base, const std::vector<EncodedInput>& inputs, std::size_t k) {
    require(!inputs.empty(), ErrorCode::empty_input, "maskcl: empty batch");
    MaskPlan plan;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto h = attribution::important_tokens(base, inputs[i], k);
        require(!h.positions.empty(), ErrorCode::insufficient_data,
                "maskcl: input " + std::to_string(i) + " has no eligible tokens");
        std::vector<EncodedInput> vs;
        for (auto& mv : attribution::masked_variants(inputs[i], h, i)) vs.push_back(std::move(mv.input));
        plan.variants.push_back(std::move(vs));
    }
    return plan;
}

/// Concatenates [1 × d] rows into [n × d].
inline Var stack_rows(const std::vector<Var>& rows) {
    Var m = diff::concat_cols(rows);  // [1 × n·d]
    const std::size_t d = rows[0].tape->value(rows[0]).cols();
    return diff::reshape(m, diff::Shape{rows.size(), d});
}

/// Forwards anchors and their planned variants through an already-bound model
/// (α = 1 for adaptation) and stacks normalized embeddings.
inline PairBatch embed_pairs(const textenc::BoundModel& bound, const std::vector<const EncodedInput*>& anchors,
                             const std::vector<const std::vector<EncodedInput>*>& variants) {
    require(!anchors.empty() && anchors.size() == variants.size(), ErrorCode::invalid_argument,
            "maskcl: anchors and variants must align");
    std::vector<Var> anchor_rows, positive_rows;
    PairBatch pb;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        Var cls = bound.forward(*anchors[i]).cls;
        const std::size_t d = cls.tape->value(cls).size();
        anchor_rows.push_back(diff::reshape(cls, diff::Shape{1, d}));
        for (std::size_t j = 0; j < variants[i]->size(); ++j) {
            Var p = bound.forward((*variants[i])[j]).cls;
            positive_rows.push_back(diff::reshape(p, diff::Shape{1, d}));
            pb.pairs.push_back({i, j});
        }
    }
    require(!positive_rows.empty(), ErrorCode::insufficient_data, "maskcl: batch has no pairs");
    pb.anchors = diff::l2_normalize(stack_rows(anchor_rows));
    pb.positives = diff::l2_normalize(stack_rows(positive_rows));
    return pb;
}

/// Builds the pairs for a minibatch: H(x) from the base model, embeddings
/// from the adapter-blended encoder at α = 1.
inline PairBatch build_pairs(Tape& tape, const ClassifierModel& base, const adapter::LoraAdapter* lora,
                             const std::vector<EncodedInput>& batch, std::size_t k, bool track_adapter = false) {
    MaskPlan plan = plan_masks(base, batch, k);
    textenc::BoundModel bound(tape, base, lora, lora ? 1.0 : 0.0, textenc::BindOptions{.track_adapter = track_adapter});
    std::vector<const EncodedInput*> a;
    std::vector<const std::vector<EncodedInput>*> v;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        a.push_back(&batch[i]);
        v.push_back(&plan.variants[i]);
    }
    return embed_pairs(bound, a, v);
}

/// Bidirectional InfoNCE over anchor/positive pairs.
///
/// Direction 1 scores positive p_ij against every anchor a_i' in the batch.
/// Direction 2 scores anchor a_i against the positives p_i'j sharing mask
/// slot j (the matched positive included). Both sums are normalized by twice
/// the pair count, which equals 2·B·k when every input contributes k pairs.
inline Var maskcl_loss(const PairBatch& pb, double temperature) {
    require(temperature > 0.0, ErrorCode::invalid_argument, "maskcl_loss: temperature must be positive");
    require(!pb.pairs.empty(), ErrorCode::insufficient_data, "maskcl_loss: no pairs");
    // sim[r][i'] = p_r · a_i' / τ   → [P × B]
    Var sim = diff::scale(diff::matmul(pb.positives, diff::transpose(pb.anchors)), 1.0 / temperature);

    std::vector<std::size_t> owner(pb.pairs.size());
    for (std::size_t r = 0; r < pb.pairs.size(); ++r) owner[r] = pb.pairs[r].anchor;
    Var total = diff::cross_entropy(sim, owner);

    std::map<std::size_t, std::vector<std::size_t>> by_slot;
    for (std::size_t r = 0; r < pb.pairs.size(); ++r) by_slot[pb.pairs[r].slot].push_back(r);
    for (const auto& [slot, rows] : by_slot) {
        std::vector<std::size_t> anchors_with_slot;
        for (std::size_t r : rows) anchors_with_slot.push_back(pb.pairs[r].anchor);
        // logits[m][m'] = a_{anchor(m)} · p_{rows[m']} / τ, target m' = m.
        Var sub = diff::select_cols(diff::select_rows(sim, rows), anchors_with_slot);  // [n × n], (p, a)
        Var logits = diff::transpose(sub);
        std::vector<std::size_t> diag(rows.size());
        std::iota(diag.begin(), diag.end(), std::size_t{0});
        total = diff::add(total, diff::cross_entropy(logits, diag));
    }
    return diff::scale(total, 1.0 / (2.0 * static_cast<double>(pb.pairs.size())));
}

struct AdaptStep {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0.0;
};

struct AdaptResult {
    adapter::LoraAdapter adapter;
    std::vector<AdaptStep> trace;
};

/// Unsupervised adaptation of the LoRA factors on unlabeled inputs. H(x) is
/// fixed from the base model; only adapter factors receive updates.
inline AdaptResult adapt(const ClassifierModel& base, adapter::LoraAdapter lora,
                         const std::vector<EncodedInput>& test_batch, const MaskCLConfig& cfg) {
    cfg.validate();
    require(!test_batch.empty(), ErrorCode::empty_input, "adapt: empty batch");
    std::vector<EncodedInput> inputs = test_batch;
    for (auto& x : inputs) x.label.reset();
    const MaskPlan plan = plan_masks(base, inputs, cfg.k);

    diff::Adam optimizer(diff::AdamConfig{.lr = cfg.lr});
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    AdaptResult result{std::move(lora), {}};
    std::vector<Tensor> grad_acc;
    std::size_t accumulated = 0, step = 0;

    auto apply = [&] {
        std::vector<Tensor*> params;
        std::vector<const Tensor*> grads;
        for (auto& t : result.adapter.targets) {
            params.push_back(&t.a);
            params.push_back(&t.b);
        }
        for (auto& g : grad_acc) {
            for (double& v : g.values()) v /= static_cast<double>(accumulated);
            grads.push_back(&g);
        }
        optimizer.step(params, grads);
        grad_acc.clear();
        accumulated = 0;
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (end - start < 2 && order.size() >= 2) continue;  // a lone anchor has no negatives
            Tape tape;
            textenc::BoundModel bound(tape, base, &result.adapter, 1.0, textenc::BindOptions{.track_adapter = true});
            std::vector<const EncodedInput*> a;
            std::vector<const std::vector<EncodedInput>*> v;
            for (std::size_t i = start; i < end; ++i) {
                a.push_back(&inputs[order[i]]);
                v.push_back(&plan.variants[order[i]]);
            }
            Var loss = maskcl_loss(embed_pairs(bound, a, v), cfg.temperature);
            tape.backward(loss);
            const auto& leaves = bound.adapter_leaves();
            if (grad_acc.empty()) {
                for (const auto& l : leaves) grad_acc.push_back(tape.grad(l.var));
            } else {
                for (std::size_t i = 0; i < leaves.size(); ++i)
                    diff::detail::accumulate(grad_acc[i], tape.grad(leaves[i].var).values());
            }
            ++accumulated;
            result.trace.push_back({epoch + 1, ++step, tape.value(loss)[0]});
            if (accumulated == cfg.grad_accumulation) apply();
        }
    }
    if (accumulated > 0) apply();
    return result;
}

/// Mean MaskCL loss of the current adapter over minibatches of the given
/// inputs (same batching as adapt() with no shuffling).
inline double evaluate_loss(const ClassifierModel& base, const adapter::LoraAdapter& lora,
                            const std::vector<EncodedInput>& inputs, const MaskCLConfig& cfg) {
    const MaskPlan plan = plan_masks(base, inputs, cfg.k);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < inputs.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(inputs.size(), start + cfg.batch_size);
        if (end - start < 2 && inputs.size() >= 2) continue;
        Tape tape;
        textenc::BoundModel bound(tape, base, &lora, 1.0);
        std::vector<const EncodedInput*> a;
        std::vector<const std::vector<EncodedInput>*> v;
        for (std::size_t i = start; i < end; ++i) {
            a.push_back(&inputs[i]);
            v.push_back(&plan.variants[i]);
        }
        sum += tape.value(maskcl_loss(embed_pairs(bound, a, v), cfg.temperature))[0];
        ++batches;
    }
    return sum / static_cast<double>(batches);
}

}  // namespace guardrail::maskcl
