#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "guardrail/adapter/lora.hpp"
#include "guardrail/diffcore/ops.hpp"
#include "guardrail/diffcore/tape.hpp"
#include "guardrail/textenc/model.hpp"
#include "guardrail/textenc/tokenizer.hpp"

namespace guardrail::textenc {

using diff::Tape;
using diff::Var;

struct BindOptions {
    bool track_base = false;     // base weights and head become differentiable leaves
    bool track_adapter = false;  // LoRA factors become differentiable leaves
};

struct EncoderOutputs {
    Var token_embeddings;  // [(L+1) × d], the gathered e_i rows (row 0 is [CLS])
    Var cls;               // [d]
    Var logits;            // [C]
};

/// A model (optionally with an adapter at strength α) bound onto a tape: one
/// leaf per parameter, with effective adapted weights materialized once so
/// several inputs can share them in a single graph.
class BoundModel {
public:
    BoundModel(Tape& tape, const ClassifierModel& model, const adapter::LoraAdapter* lora = nullptr,
               double alpha = 0.0, BindOptions options = {})
        : tape_(&tape), model_(&model), options_(options) {
        adapter::BlendSpec blend(alpha);
        const bool base_grad = options.track_base;
        for (const auto& [name, tensor] : model.parameters()) {
            param_leaves_.push_back({name, tape.leaf(*tensor, base_grad)});
        }
        const bool use_adapter = lora != nullptr && blend.alpha != 0.0;
        if (lora != nullptr && options.track_adapter) {
            for (const auto& t : lora->targets) {
                adapter_leaves_.push_back({t.name + ".A", tape.leaf(t.a, true)});
                adapter_leaves_.push_back({t.name + ".B", tape.leaf(t.b, true)});
            }
        }
        // Effective weights for each adapted linear, in adaptable_linears() order.
        const auto linears = model.adaptable_linears();
        for (std::size_t i = 0; i < linears.size(); ++i) {
            Var w = leaf_of(linears[i].name + ".weight");
            if (use_adapter) {
                const adapter::LoraTarget* target = lora->find(linears[i].name);
                require(target != nullptr, ErrorCode::schema_violation,
                        "bind: adapter has no factors for " + linears[i].name);
                Var a, b;
                if (options.track_adapter) {
                    const auto j = static_cast<std::size_t>(target - lora->targets.data());
                    a = adapter_leaves_[2 * j].var;
                    b = adapter_leaves_[2 * j + 1].var;
                } else {
                    a = tape.leaf(target->a);
                    b = tape.leaf(target->b);
                }
                Var delta = diff::matmul(diff::transpose(a), diff::transpose(b));
                w = diff::add(w, diff::scale(delta, blend.alpha * lora->scale()));
            }
            weights_.push_back(w);
        }
    }

    /// Runs the encoder on one input. With `embeddings_as_leaf`, the gathered
    /// token embeddings enter the graph as a differentiable leaf so their
    /// gradient can be read after backward().
    EncoderOutputs forward(const EncodedInput& x, bool embeddings_as_leaf = false) const {
        const EncoderConfig& cfg = model_->config;
        require(!x.ids.empty() && x.ids[0] == cls_id, ErrorCode::schema_violation,
                "forward: input must start with [CLS]");
        require(x.ids.size() <= cfg.max_len, ErrorCode::out_of_range,
                "forward: input longer than max_len");
        for (std::size_t id : x.ids)
            require(id < cfg.vocab_size, ErrorCode::out_of_range,
                    "forward: token id " + std::to_string(id) + " outside vocabulary");
        Tape& t = *tape_;
        const std::size_t n = x.ids.size();

        Var emb;
        if (embeddings_as_leaf) {
            Tensor rows(Shape{n, cfg.d_model});
            const Tensor& table = model_->token_embedding;
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < cfg.d_model; ++c) rows.at(r, c) = table.at(x.ids[r], c);
            emb = t.leaf(std::move(rows), true);
        } else {
            emb = diff::embedding_gather(param(0), x.ids);
        }
        return forward_embeddings(emb);
    }

    /// Runs the encoder from token embeddings [n × d] (row 0 is [CLS]).
    EncoderOutputs forward_embeddings(Var emb) const {
        const EncoderConfig& cfg = model_->config;
        Tape& t = *tape_;
        const Tensor& ev = t.value(emb);
        require(ev.rank() == 2 && ev.cols() == cfg.d_model && ev.rows() <= cfg.max_len, ErrorCode::shape_mismatch,
                "forward: embeddings must be [n x d_model] with n <= max_len");
        const std::size_t n = ev.rows();
        std::vector<std::size_t> positions(n);
        std::iota(positions.begin(), positions.end(), std::size_t{0});
        Var h = diff::add(emb, diff::select_rows(param(1), positions));

        const std::size_t dh = cfg.head_dim();
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const std::size_t p = 2 + l * 16;  // first parameter index of layer l
            const std::size_t w = l * 6;       // first effective-weight index of layer l
            Var q = diff::add_row(diff::matmul(h, weights_[w + 0]), param(p + 1));
            Var k = diff::add_row(diff::matmul(h, weights_[w + 1]), param(p + 3));
            Var v = diff::add_row(diff::matmul(h, weights_[w + 2]), param(p + 5));
            std::vector<Var> heads;
            heads.reserve(cfg.n_heads);
            for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
                Var qh = diff::slice_cols(q, hd * dh, dh);
                Var kh = diff::slice_cols(k, hd * dh, dh);
                Var vh = diff::slice_cols(v, hd * dh, dh);
                Var scores = diff::scale(diff::matmul(qh, diff::transpose(kh)), inv_sqrt_dh);
                heads.push_back(diff::matmul(diff::softmax(scores, 1), vh));
            }
            Var ctx = diff::concat_cols(heads);
            Var attn = diff::add_row(diff::matmul(ctx, weights_[w + 3]), param(p + 7));
            h = diff::layernorm(diff::add(h, attn), param(p + 8), param(p + 9));
            Var ff = diff::gelu(diff::add_row(diff::matmul(h, weights_[w + 4]), param(p + 11)));
            ff = diff::add_row(diff::matmul(ff, weights_[w + 5]), param(p + 13));
            h = diff::layernorm(diff::add(h, ff), param(p + 14), param(p + 15));
        }
        const std::size_t head_idx = 2 + cfg.n_layers * 16;
        const std::size_t first_row[1] = {0};
        Var cls_row = diff::select_rows(h, first_row);
        Var logits = diff::add_row(diff::matmul(cls_row, param(head_idx)), param(head_idx + 1));
        return EncoderOutputs{emb, diff::reshape(cls_row, Shape{cfg.d_model}),
                              diff::reshape(logits, Shape{cfg.n_classes})};
    }

    struct Leaf {
        std::string name;
        Var var;
    };
    /// Base-parameter leaves in ClassifierModel::parameters() order.
    const std::vector<Leaf>& parameter_leaves() const { return param_leaves_; }
    /// Adapter leaves (A then B per target, in target order); empty unless
    /// track_adapter was requested.
    const std::vector<Leaf>& adapter_leaves() const { return adapter_leaves_; }

private:
    Var param(std::size_t index) const { return param_leaves_[index].var; }

    Var leaf_of(const std::string& name) const {
        for (const auto& l : param_leaves_)
            if (l.name == name) return l.var;
        fail(ErrorCode::schema_violation, "bind: no parameter named " + name);
    }

    Tape* tape_;
    const ClassifierModel* model_;
    BindOptions options_;
    std::vector<Leaf> param_leaves_;
    std::vector<Leaf> adapter_leaves_;
    std::vector<Var> weights_;
};

struct Prediction {
    std::size_t label = 0;
    Tensor probs;
};

/// Index of the maximum; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

inline Tensor softmax_values(const Tensor& logits) {
    Tape t;
    return t.value(diff::softmax(t.leaf(logits), 0));
}

inline Tensor logits_of(const ClassifierModel& model, const EncodedInput& x, double alpha = 0.0,
                        const adapter::LoraAdapter* lora = nullptr) {
    Tape tape;
    BoundModel bound(tape, model, lora, alpha);
    return tape.value(bound.forward(x).logits);
}

inline Prediction predict(const ClassifierModel& model, const EncodedInput& x, double alpha = 0.0,
                          const adapter::LoraAdapter* lora = nullptr) {
    Tensor probs = softmax_values(logits_of(model, x, alpha, lora));
    return Prediction{argmax(probs.values()), std::move(probs)};
}

/// Shares one bound graph across the batch; results match per-example predict().
inline std::vector<Prediction> predict_batch(const ClassifierModel& model, const std::vector<EncodedInput>& xs,
                                             double alpha = 0.0, const adapter::LoraAdapter* lora = nullptr) {
    constexpr std::size_t chunk = 32;
    std::vector<Prediction> out;
    out.reserve(xs.size());
    for (std::size_t start = 0; start < xs.size(); start += chunk) {
        Tape tape;
        BoundModel bound(tape, model, lora, alpha);
        for (std::size_t i = start; i < std::min(xs.size(), start + chunk); ++i) {
            Tensor probs = softmax_values(tape.value(bound.forward(xs[i]).logits));
            out.push_back({argmax(probs.values()), std::move(probs)});
        }
    }
    return out;
}

}  // namespace guardrail::textenc
