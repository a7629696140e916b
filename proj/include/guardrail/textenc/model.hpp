#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "guardrail/diffcore/tensor.hpp"
#include "guardrail/rng.hpp"

namespace guardrail::textenc {

using diff::Shape;
using diff::Tensor;

struct EncoderConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t max_len = 64;
    std::size_t vocab_size = 0;
    std::size_t n_classes = 2;
    std::uint64_t seed = 0;

    void validate() const {
        require(n_layers > 0 && d_model > 0 && n_heads > 0 && d_ff > 0 && max_len >= 2 &&
                    vocab_size > 0 && n_classes >= 2,
                ErrorCode::invalid_argument, "encoder config: all sizes must be positive");
        require(d_model % n_heads == 0, ErrorCode::invalid_argument,
                "encoder config: d_model must be divisible by n_heads");
    }

    std::size_t head_dim() const { return d_model / n_heads; }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// y = x·weight + bias with weight stored [d_in × d_out].
struct Linear {
    Tensor weight;
    Tensor bias;

    std::size_t d_in() const { return weight.shape()[0]; }
    std::size_t d_out() const { return weight.shape()[1]; }
};

struct EncoderLayer {
    Linear q, k, v, o;
    Tensor ln1_gamma, ln1_beta;
    Linear ffn_in, ffn_out;
    Tensor ln2_gamma, ln2_beta;
};

template <typename T>
struct Named {
    std::string name;
    T* tensor;
};

/// Base weights W_T plus classification head. Post-LN transformer encoder
/// with learned positional embeddings; the head reads the [CLS] row.
class ClassifierModel {
public:
    EncoderConfig config;
    Tensor token_embedding;     // [V × d]
    Tensor position_embedding;  // [max_len × d]
    std::vector<EncoderLayer> layers;
    Linear head;                // [d × C]

    static ClassifierModel init(const EncoderConfig& cfg) {
        cfg.validate();
        Rng rng(cfg.seed);
        const std::size_t d = cfg.d_model;
        auto gaussian = [&](Shape shape, double stddev) {
            Tensor t(std::move(shape));
            for (double& v : t.values()) v = rng.normal(0.0, stddev);
            return t;
        };
        auto linear = [&](std::size_t d_in, std::size_t d_out) {
            return Linear{gaussian({d_in, d_out}, 1.0 / std::sqrt(static_cast<double>(d_in))),
                          Tensor(Shape{d_out}, 0.0)};
        };
        ClassifierModel m;
        m.config = cfg;
        m.token_embedding = gaussian({cfg.vocab_size, d}, 0.5);
        m.position_embedding = gaussian({cfg.max_len, d}, 0.1);
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            EncoderLayer layer;
            layer.q = linear(d, d);
            layer.k = linear(d, d);
            layer.v = linear(d, d);
            layer.o = linear(d, d);
            layer.ln1_gamma = Tensor(Shape{d}, 1.0);
            layer.ln1_beta = Tensor(Shape{d}, 0.0);
            layer.ffn_in = linear(d, cfg.d_ff);
            layer.ffn_out = linear(cfg.d_ff, d);
            layer.ln2_gamma = Tensor(Shape{d}, 1.0);
            layer.ln2_beta = Tensor(Shape{d}, 0.0);
            m.layers.push_back(std::move(layer));
        }
        m.head = linear(d, cfg.n_classes);
        return m;
    }

    /// Every parameter tensor in canonical (checkpoint) order.
    std::vector<Named<Tensor>> parameters() { return collect<Tensor>(*this); }
    std::vector<Named<const Tensor>> parameters() const { return collect<const Tensor>(*this); }

    /// Encoder linear maps eligible for low-rank adaptation, in canonical order.
    std::vector<Named<Linear>> adaptable_linears() { return linears<Linear>(*this); }
    std::vector<Named<const Linear>> adaptable_linears() const { return linears<const Linear>(*this); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.tensor->size();
        return n;
    }

    friend bool operator==(const ClassifierModel& a, const ClassifierModel& b) {
        auto pa = a.parameters();
        auto pb = b.parameters();
        if (!(a.config == b.config) || pa.size() != pb.size()) return false;
        for (std::size_t i = 0; i < pa.size(); ++i)
            if (pa[i].name != pb[i].name || !(*pa[i].tensor == *pb[i].tensor)) return false;
        return true;
    }

private:
    template <typename T, typename Self>
    static std::vector<Named<T>> collect(Self& self) {
        std::vector<Named<T>> out;
        out.push_back({"embed.token", &self.token_embedding});
        out.push_back({"embed.position", &self.position_embedding});
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            auto& L = self.layers[l];
            const std::string p = "layers." + std::to_string(l) + ".";
            auto lin = [&](const std::string& n, auto& linear) {
                out.push_back({p + n + ".weight", &linear.weight});
                out.push_back({p + n + ".bias", &linear.bias});
            };
            lin("attn.q", L.q);
            lin("attn.k", L.k);
            lin("attn.v", L.v);
            lin("attn.o", L.o);
            out.push_back({p + "ln1.gamma", &L.ln1_gamma});
            out.push_back({p + "ln1.beta", &L.ln1_beta});
            lin("ffn.in", L.ffn_in);
            lin("ffn.out", L.ffn_out);
            out.push_back({p + "ln2.gamma", &L.ln2_gamma});
            out.push_back({p + "ln2.beta", &L.ln2_beta});
        }
        out.push_back({"head.weight", &self.head.weight});
        out.push_back({"head.bias", &self.head.bias});
        return out;
    }

    template <typename T, typename Self>
    static std::vector<Named<T>> linears(Self& self) {
        std::vector<Named<T>> out;
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            auto& L = self.layers[l];
            const std::string p = "layers." + std::to_string(l) + ".";
            out.push_back({p + "attn.q", &L.q});
            out.push_back({p + "attn.k", &L.k});
            out.push_back({p + "attn.v", &L.v});
            out.push_back({p + "attn.o", &L.o});
            out.push_back({p + "ffn.in", &L.ffn_in});
            out.push_back({p + "ffn.out", &L.ffn_out});
        }
        return out;
    }
};

}  // namespace guardrail::textenc
