#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "guardrail/diffcore/tensor.hpp"
#include "guardrail/rng.hpp"
#include "guardrail/textenc/model.hpp"

namespace guardrail::adapter {

using diff::Shape;
using diff::Tensor;

/// Low-rank factors for one encoder linear map: A is [r × d_in], B is
/// [d_out × r]. The encoder stores weights as [d_in × d_out], so the delta
/// added to the stored weight is scale·(B·A)ᵀ.
struct LoraTarget {
    std::string name;
    Tensor a;
    Tensor b;
};

struct LoraAdapter {
    std::size_t rank = 0;
    std::vector<LoraTarget> targets;
    std::optional<double> calibrated_alpha;

    double scale() const { return 1.0 / static_cast<double>(rank); }

    const LoraTarget* find(const std::string& name) const {
        for (const auto& t : targets)
            if (t.name == name) return &t;
        return nullptr;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : targets) n += t.a.size() + t.b.size();
        return n;
    }

    friend bool operator==(const LoraAdapter& x, const LoraAdapter& y) {
        if (x.rank != y.rank || x.targets.size() != y.targets.size()) return false;
        for (std::size_t i = 0; i < x.targets.size(); ++i) {
            const auto& p = x.targets[i];
            const auto& q = y.targets[i];
            if (p.name != q.name || !(p.a == q.a) || !(p.b == q.b)) return false;
        }
        return x.calibrated_alpha == y.calibrated_alpha;
    }
};

/// Debiasing strength α ∈ [0, 1].
struct BlendSpec {
    double alpha = 0.0;

    explicit BlendSpec(double a) : alpha(a) {
        require(std::isfinite(a) && a >= 0.0 && a <= 1.0, ErrorCode::invalid_argument,
                "blend: alpha must lie in [0, 1], got " + std::to_string(a));
    }
};

/// Rank heuristic: small adaptation sets get rank 4, larger ones rank 8.
inline std::size_t default_rank(std::size_t adaptation_set_size) {
    return adaptation_set_size <= 800 ? 4 : 8;
}

/// Allocates an adapter for every attention and FFN projection. B starts at
/// zero so the adapted model initially equals the base model exactly.
inline LoraAdapter inject(const textenc::ClassifierModel& model, std::size_t rank, std::uint64_t seed) {
    require(rank >= 1, ErrorCode::invalid_argument, "inject: rank must be at least 1");
    Rng rng(seed);
    LoraAdapter adapter;
    adapter.rank = rank;
    for (const auto& [name, linear] : model.adaptable_linears()) {
        const std::size_t d_in = linear->d_in(), d_out = linear->d_out();
        require(rank <= std::min(d_in, d_out), ErrorCode::invalid_argument,
                "inject: rank " + std::to_string(rank) + " exceeds min(d_in, d_out) of " + name);
        LoraTarget t{name, Tensor(Shape{rank, d_in}), Tensor(Shape{d_out, rank}, 0.0)};
        const double stddev = 1.0 / std::sqrt(static_cast<double>(d_in));
        for (double& v : t.a.values()) v = rng.normal(0.0, stddev);
        adapter.targets.push_back(std::move(t));
    }
    return adapter;
}

/// scale·(B·A)ᵀ in the stored [d_in × d_out] layout.
inline Tensor lora_delta(const LoraTarget& target, double scale) {
    const std::size_t r = target.a.shape()[0], d_in = target.a.shape()[1], d_out = target.b.shape()[0];
    require(target.b.shape()[1] == r, ErrorCode::shape_mismatch, "lora: A/B rank mismatch");
    Tensor delta(Shape{d_in, d_out});
    for (std::size_t i = 0; i < d_in; ++i) {
        for (std::size_t j = 0; j < d_out; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < r; ++k) s += target.b.at(j, k) * target.a.at(k, i);
            delta.at(i, j) = scale * s;
        }
    }
    return delta;
}

/// W = W_T + α·W_LoRA.
inline Tensor effective_weight(const Tensor& base, const LoraTarget& target, double scale, double alpha) {
    BlendSpec blend(alpha);
    const Tensor delta = lora_delta(target, scale);
    require(delta.shape() == base.shape(), ErrorCode::shape_mismatch,
            "effective_weight: adapter " + target.name + " shape " + diff::shape_string(delta.shape()) +
                " vs base " + diff::shape_string(base.shape()));
    Tensor out = base;
    if (blend.alpha == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += blend.alpha * delta[i];
    return out;
}

}  // namespace guardrail::adapter
