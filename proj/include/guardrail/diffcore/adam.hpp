#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "guardrail/diffcore/tensor.hpp"

namespace guardrail::diff {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are created on the first step
/// and keyed by position, so callers must pass parameters in a stable order.
class Adam {
public:
    explicit Adam(AdamConfig config) : config_(config) {
        require(config_.lr > 0.0, ErrorCode::invalid_argument, "adam: learning rate must be positive");
    }

    void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
        require(params.size() == grads.size(), ErrorCode::shape_mismatch,
                "adam: parameter/gradient count mismatch");
        if (m_.empty()) {
            for (const Tensor* p : params) {
                m_.emplace_back(p->shape(), 0.0);
                v_.emplace_back(p->shape(), 0.0);
            }
        }
        require(m_.size() == params.size(), ErrorCode::shape_mismatch,
                "adam: parameter set changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor& g = *grads[k];
            require(p.shape() == g.shape(), ErrorCode::shape_mismatch, "adam: gradient shape mismatch");
            Tensor& m = m_[k];
            Tensor& v = v_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                p[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
            }
        }
    }

    std::size_t steps() const noexcept { return t_; }

private:
    AdamConfig config_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::size_t t_ = 0;
};

}  // namespace guardrail::diff
