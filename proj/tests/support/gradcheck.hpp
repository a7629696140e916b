#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "guardrail/diffcore/ops.hpp"
#include "guardrail/rng.hpp"

namespace gradcheck {

using guardrail::Rng;
using guardrail::diff::Shape;
using guardrail::diff::Tape;
using guardrail::diff::Tensor;
using guardrail::diff::Var;

/// Builds a scalar loss from leaves created in the given order.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

/// Reduces any output to a scalar through a fixed random weighting, so every
/// output element contributes a distinct coefficient to the checked gradient.
inline Var project(Var out, std::uint64_t seed) {
    Tape& t = *out.tape;
    Rng rng(seed);
    Var w = t.leaf(random_tensor(t.value(out).shape(), rng, 0.5, 1.5));
    return guardrail::diff::sum(guardrail::diff::mul(out, w));
}

inline double evaluate(const Builder& build, const std::vector<Tensor>& inputs) {
    Tape t;
    std::vector<Var> leaves;
    for (const auto& x : inputs) leaves.push_back(t.leaf(x));
    return t.value(build(t, leaves))[0];
}

struct Report {
    double relative_error = 0.0;  // worst over checked inputs
    std::vector<Tensor> analytic;
    std::vector<Tensor> numeric;
};

/// Central differences (step h) against the tape's gradients. The error of an
/// input is ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-8).
inline Report check(const Builder& build, std::vector<Tensor> inputs, std::vector<bool> differentiable = {},
                    double h = 1e-5) {
    if (differentiable.empty()) differentiable.assign(inputs.size(), true);
    Report r;
    {
        Tape t;
        std::vector<Var> leaves;
        for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(t.leaf(inputs[i], differentiable[i]));
        Var loss = build(t, leaves);
        t.backward(loss);
        for (std::size_t i = 0; i < inputs.size(); ++i)
            r.analytic.push_back(differentiable[i] ? t.grad(leaves[i]) : Tensor(inputs[i].shape()));
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tensor num(inputs[i].shape());
        if (differentiable[i]) {
            for (std::size_t j = 0; j < inputs[i].size(); ++j) {
                const double orig = inputs[i][j];
                inputs[i][j] = orig + h;
                const double up = evaluate(build, inputs);
                inputs[i][j] = orig - h;
                const double down = evaluate(build, inputs);
                inputs[i][j] = orig;
                num[j] = (up - down) / (2.0 * h);
            }
            double diff = 0.0, na = 0.0, nn = 0.0;
            for (std::size_t j = 0; j < num.size(); ++j) {
                diff += std::pow(r.analytic[i][j] - num[j], 2);
                na += std::pow(r.analytic[i][j], 2);
                nn += std::pow(num[j], 2);
            }
            r.relative_error = std::max(r.relative_error, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8}));
        }
        r.numeric.push_back(std::move(num));
    }
    return r;
}

}  // namespace gradcheck
