#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "guardrail/error.hpp"
#include "guardrail/rng.hpp"

namespace guardrail::theory {

using Distribution = std::vector<double>;

/// Joint probability table P(a, b), row-major [rows × cols].
struct Joint {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> p;

    double operator()(std::size_t a, std::size_t b) const { return p[a * cols + b]; }
};

inline void require_normalized(std::span<const double> values, const char* what) {
    double sum = 0.0;
    for (double v : values) {
        require(std::isfinite(v) && v >= 0.0, ErrorCode::invalid_argument,
                std::string(what) + ": probabilities must be finite and non-negative");
        sum += v;
    }
    require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::invalid_argument,
            std::string(what) + ": probabilities sum to " + std::to_string(sum));
}

/// Shannon entropy in bits, 0·log0 = 0.
inline double entropy(std::span<const double> dist) {
    require(!dist.empty(), ErrorCode::empty_input, "entropy: empty distribution");
    require_normalized(dist, "entropy");
    double h = 0.0;
    for (double v : dist)
        if (v > 0.0) h -= v * std::log2(v);
    return h;
}

/// I(A;B) in bits from a joint table.
inline double mutual_information(const Joint& joint) {
    require(joint.rows > 0 && joint.cols > 0 && joint.p.size() == joint.rows * joint.cols,
            ErrorCode::shape_mismatch, "mutual_information: malformed joint table");
    require_normalized(joint.p, "mutual_information");
    std::vector<double> pa(joint.rows, 0.0), pb(joint.cols, 0.0);
    for (std::size_t a = 0; a < joint.rows; ++a)
        for (std::size_t b = 0; b < joint.cols; ++b) {
            pa[a] += joint(a, b);
            pb[b] += joint(a, b);
        }
    double mi = 0.0;
    for (std::size_t a = 0; a < joint.rows; ++a)
        for (std::size_t b = 0; b < joint.cols; ++b) {
            const double v = joint(a, b);
            if (v > 0.0) mi += v * std::log2(v / (pa[a] * pb[b]));
        }
    return std::max(0.0, mi);
}

/// Row-stochastic P(out | in), row-major [n_in × n_out].
struct DiscreteChannel {
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::vector<double> p;

    double operator()(std::size_t i, std::size_t o) const { return p[i * n_out + o]; }

    void validate() const {
        require(n_in > 0 && n_out > 0 && p.size() == n_in * n_out, ErrorCode::shape_mismatch,
                "channel: malformed matrix");
        for (std::size_t i = 0; i < n_in; ++i) {
            double sum = 0.0;
            for (std::size_t o = 0; o < n_out; ++o) {
                require((*this)(i, o) >= 0.0, ErrorCode::invalid_argument, "channel: negative entry");
                sum += (*this)(i, o);
            }
            require(std::abs(sum - 1.0) <= 1e-12, ErrorCode::invalid_argument,
                    "channel: row " + std::to_string(i) + " sums to " + std::to_string(sum));
        }
    }

    static DiscreteChannel identity(std::size_t n) {
        DiscreteChannel c{n, n, std::vector<double>(n * n, 0.0)};
        for (std::size_t i = 0; i < n; ++i) c.p[i * n + i] = 1.0;
        return c;
    }

    /// Every input maps to output 0.
    static DiscreteChannel constant(std::size_t n_in, std::size_t n_out) {
        DiscreteChannel c{n_in, n_out, std::vector<double>(n_in * n_out, 0.0)};
        for (std::size_t i = 0; i < n_in; ++i) c.p[i * n_out] = 1.0;
        return c;
    }
};

/// Channel a followed by channel b.
inline DiscreteChannel compose(const DiscreteChannel& a, const DiscreteChannel& b) {
    require(a.n_out == b.n_in, ErrorCode::shape_mismatch, "compose: alphabet sizes differ");
    DiscreteChannel c{a.n_in, b.n_out, std::vector<double>(a.n_in * b.n_out, 0.0)};
    for (std::size_t i = 0; i < a.n_in; ++i)
        for (std::size_t m = 0; m < a.n_out; ++m)
            for (std::size_t o = 0; o < b.n_out; ++o) c.p[i * c.n_out + o] += a(i, m) * b(m, o);
    return c;
}

/// P(s, o) = prior(s) · channel(o | s).
inline Joint joint_of(const Distribution& prior, const DiscreteChannel& channel) {
    require(prior.size() == channel.n_in, ErrorCode::shape_mismatch, "joint_of: prior and channel differ");
    Joint j{channel.n_in, channel.n_out, std::vector<double>(channel.n_in * channel.n_out)};
    for (std::size_t s = 0; s < j.rows; ++s)
        for (std::size_t o = 0; o < j.cols; ++o) j.p[s * j.cols + o] = prior[s] * channel(s, o);
    return j;
}

/// S* → D_train → θ → g with a non-decreasing performance map ρ.
struct ChainSpec {
    Distribution prior;
    DiscreteChannel s_to_d;
    DiscreteChannel d_to_theta;
    DiscreteChannel theta_to_g;
    std::function<double(double)> rho = [](double x) { return x; };

    void validate() const {
        require(prior.size() >= 2, ErrorCode::invalid_argument, "chain: |S| must be at least 2");
        require_normalized(prior, "chain prior");
        s_to_d.validate();
        d_to_theta.validate();
        theta_to_g.validate();
        require(s_to_d.n_in == prior.size() && d_to_theta.n_in == s_to_d.n_out &&
                    theta_to_g.n_in == d_to_theta.n_out,
                ErrorCode::shape_mismatch, "chain: channel alphabets do not connect");
    }
};

enum class Observable { theta, data };

/// Error of the MAP estimate of S*: 1 − Σ_o max_s P(s, o).
inline double bayes_error(const Joint& joint) {
    double hit = 0.0;
    for (std::size_t o = 0; o < joint.cols; ++o) {
        double best = 0.0;
        for (std::size_t s = 0; s < joint.rows; ++s) best = std::max(best, joint(s, o));
        hit += best;
    }
    return std::max(0.0, 1.0 - hit);
}

inline double bayes_identification_error(const ChainSpec& spec, Observable observable) {
    spec.validate();
    const DiscreteChannel ch =
        observable == Observable::data ? spec.s_to_d : compose(spec.s_to_d, spec.d_to_theta);
    return bayes_error(joint_of(spec.prior, ch));
}

struct BoundsReport {
    std::size_t alphabet = 0;
    double h_s = 0.0;
    double i_data = 0.0;
    double i_theta = 0.0;
    double i_g = 0.0;
    double delta_i = 0.0;
    double log_denominator = 0.0;  // log2(|S| − 1); 0 when |S| = 2
    double l_deploy_raw = 0.0;     // −∞ when the denominator vanishes
    double l_train_raw = 0.0;
    double l_deploy = 0.0;         // clamped to [0, 1]
    double l_train = 0.0;
    double bound_deploy = 0.0;     // ρ(1 − L_deploy), clamped floors
    double bound_train = 0.0;
    double bayes_error_theta = 0.0;
    double bayes_error_data = 0.0;
    double bayes_error_g = 0.0;
};

/// Raw Fano floor (H − I − 1) / log2(|S| − 1). With |S| = 2 the bound carries
/// no information and evaluates to −∞.
inline double fano_floor(double h, double i, std::size_t alphabet) {
    const double denom = std::log2(static_cast<double>(alphabet - 1));
    if (denom == 0.0) return -std::numeric_limits<double>::infinity();
    return (h - i - 1.0) / denom;
}

inline double clamp_unit(double x) { return std::clamp(x, 0.0, 1.0); }

inline BoundsReport analyze_chain(const ChainSpec& spec) {
    spec.validate();
    BoundsReport r;
    r.alphabet = spec.prior.size();
    const DiscreteChannel s_theta = compose(spec.s_to_d, spec.d_to_theta);
    const DiscreteChannel s_g = compose(s_theta, spec.theta_to_g);
    const Joint j_d = joint_of(spec.prior, spec.s_to_d);
    const Joint j_theta = joint_of(spec.prior, s_theta);
    const Joint j_g = joint_of(spec.prior, s_g);
    r.h_s = entropy(spec.prior);
    r.i_data = mutual_information(j_d);
    r.i_theta = mutual_information(j_theta);
    r.i_g = mutual_information(j_g);
    r.delta_i = r.i_data - r.i_theta;
    r.log_denominator = std::log2(static_cast<double>(r.alphabet - 1));
    r.l_deploy_raw = fano_floor(r.h_s, r.i_theta, r.alphabet);
    r.l_train_raw = fano_floor(r.h_s, r.i_data, r.alphabet);
    r.l_deploy = clamp_unit(r.l_deploy_raw);
    r.l_train = clamp_unit(r.l_train_raw);
    r.bound_deploy = spec.rho(1.0 - r.l_deploy);
    r.bound_train = spec.rho(1.0 - r.l_train);
    r.bayes_error_theta = bayes_error(j_theta);
    r.bayes_error_data = bayes_error(j_d);
    r.bayes_error_g = bayes_error(j_g);
    return r;
}

/// Row-stochastic matrix with Dirichlet(1) rows.
inline DiscreteChannel random_channel(std::size_t n_in, std::size_t n_out, Rng& rng) {
    std::gamma_distribution<double> gamma(1.0, 1.0);
    DiscreteChannel c{n_in, n_out, std::vector<double>(n_in * n_out)};
    for (std::size_t i = 0; i < n_in; ++i) {
        double sum = 0.0;
        for (std::size_t o = 0; o < n_out; ++o) {
            const double g = gamma(rng.engine()) + 1e-12;
            c.p[i * n_out + o] = g;
            sum += g;
        }
        for (std::size_t o = 0; o < n_out; ++o) c.p[i * n_out + o] /= sum;
        // Fold the rounding residue into the largest entry so rows sum to 1 within 1e-12.
        double total = 0.0;
        for (std::size_t o = 0; o < n_out; ++o) total += c.p[i * n_out + o];
        auto row = c.p.begin() + static_cast<std::ptrdiff_t>(i * n_out);
        *std::max_element(row, row + static_cast<std::ptrdiff_t>(n_out)) += 1.0 - total;
    }
    return c;
}

/// Random chain with |S| and every intermediate alphabet drawn from 2..alphabet_max.
inline ChainSpec random_chain(std::size_t alphabet_max, Rng& rng) {
    require(alphabet_max >= 2 && alphabet_max <= 16, ErrorCode::invalid_argument,
            "random_chain: alphabet_max must lie in 2..16");
    const auto draw = [&] { return rng.between(2, alphabet_max); };
    const std::size_t ns = draw(), nd = draw(), nt = draw(), ng = draw();
    ChainSpec spec;
    spec.prior = random_channel(1, ns, rng).p;
    spec.s_to_d = random_channel(ns, nd, rng);
    spec.d_to_theta = random_channel(nd, nt, rng);
    spec.theta_to_g = random_channel(nt, ng, rng);
    return spec;
}

}  // namespace guardrail::theory
