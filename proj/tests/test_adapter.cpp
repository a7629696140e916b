#include <catch_amalgamated.hpp>

#include <Eigen/SVD>
#include <cmath>

#include "guardrail/adapter/lora.hpp"
#include "guardrail/textenc/encoder.hpp"

using namespace guardrail;
using namespace guardrail::adapter;
using textenc::ClassifierModel;
using textenc::EncodedInput;
using textenc::EncoderConfig;

namespace {

ClassifierModel model_with(EncoderConfig c) { return ClassifierModel::init(c); }

EncoderConfig small(std::size_t vocab = 30) {
    EncoderConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 24;
    c.max_len = 16;
    c.vocab_size = vocab;
    c.seed = 3;
    return c;
}

EncodedInput sample(Rng& rng, std::size_t vocab) {
    EncodedInput x;
    x.ids.push_back(textenc::cls_id);
    const std::size_t n = 2 + rng.index(10);
    for (std::size_t i = 0; i < n; ++i) x.ids.push_back(textenc::reserved_count + rng.index(vocab - 4));
    return x;
}

void randomize_b(LoraAdapter& lora, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& t : lora.targets)
        for (double& v : t.b.values()) v = rng.normal(0.0, 0.3);
}

}  // namespace

TEST_CASE("fresh adapter leaves the forward pass bit-identical at alpha one") {
    const auto m = model_with(small());
    const auto lora = inject(m, 4, 1);
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        const auto x = sample(rng, 30);
        CHECK(textenc::logits_of(m, x, 1.0, &lora) == textenc::logits_of(m, x));
    }
}

TEST_CASE("adapter parameter counts") {
    const auto m = model_with(small());
    const auto lora = inject(m, 4, 1);
    std::size_t expected = 0;
    for (const auto& [name, lin] : m.adaptable_linears()) expected += 4 * (lin->d_in() + lin->d_out());
    CHECK(lora.parameter_count() == expected);

    EncoderConfig def;
    def.vocab_size = 50;
    const auto full = model_with(def);
    // Per layer: four 64x64 attention maps and the 64x128 / 128x64 FFN maps.
    const std::size_t per_layer = 4 * 4 * (64 + 64) + 2 * 4 * (64 + 128);
    CHECK(inject(full, 4, 1).parameter_count() == 2 * per_layer);
    CHECK(per_layer == 3584);
}

TEST_CASE("inject validates rank") {
    const auto m = model_with(small());
    CHECK_THROWS_AS(inject(m, 0, 1), Error);
    CHECK_THROWS_AS(inject(m, 17, 1), Error);
    CHECK_NOTHROW(inject(m, 16, 1));
    CHECK(default_rank(400) == 4);
    CHECK(default_rank(800) == 4);
    CHECK(default_rank(801) == 8);
}

TEST_CASE("blend strength must lie in the unit interval") {
    CHECK_THROWS_AS(BlendSpec(-0.1), Error);
    CHECK_THROWS_AS(BlendSpec(1.5), Error);
    CHECK(BlendSpec(0.3).alpha == 0.3);
}

TEST_CASE("effective weights are linear in alpha") {
    const auto m = model_with(small());
    auto lora = inject(m, 4, 5);
    randomize_b(lora, 6);
    for (const auto& [name, lin] : m.adaptable_linears()) {
        const auto* t = lora.find(name);
        REQUIRE(t != nullptr);
        CHECK(effective_weight(lin->weight, *t, lora.scale(), 0.0) == lin->weight);
        auto delta_norm = [&](double a) {
            const auto w = effective_weight(lin->weight, *t, lora.scale(), a);
            double s = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) s += std::pow(w[i] - lin->weight[i], 2);
            return std::sqrt(s);
        };
        const double full = delta_norm(1.0);
        REQUIRE(full > 0.0);
        for (double a : {0.1, 0.25, 0.5, 0.9}) CHECK(std::abs(delta_norm(a) - a * full) <= 1e-12 * std::max(1.0, full));
    }
}

TEST_CASE("the adapter delta has rank at most r") {
    const auto m = model_with(small());
    auto lora = inject(m, 3, 7);
    randomize_b(lora, 8);
    for (const auto& t : lora.targets) {
        const auto d = lora_delta(t, lora.scale());
        Eigen::MatrixXd mat(d.rows(), d.cols());
        for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c) mat(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = d.at(r, c);
        const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(mat).singularValues();
        for (Eigen::Index i = 3; i < sv.size(); ++i) CHECK(sv(i) < 1e-10);
        CHECK(sv(0) > 1e-6);
    }
}

TEST_CASE("d logits / d alpha at zero matches finite differences") {
    const auto m = model_with(small());
    auto lora = inject(m, 4, 9);
    randomize_b(lora, 10);
    const auto linears = m.adaptable_linears();
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = sample(rng, 30);
        // Second-order one-sided difference at the boundary.
        const double h = 1e-4;
        const auto l0 = textenc::logits_of(m, x, 0.0, &lora);
        const auto l1 = textenc::logits_of(m, x, h, &lora);
        const auto l2 = textenc::logits_of(m, x, 2 * h, &lora);
        for (std::size_t c = 0; c < l0.size(); ++c) {
            // Directional derivative of logit c along the adapter delta of every target.
            diff::Tape tape;
            textenc::BoundModel bound(tape, m, nullptr, 0.0, textenc::BindOptions{.track_base = true});
            diff::Tensor onehot(diff::Shape{l0.size()}, 0.0);
            onehot[c] = 1.0;
            tape.backward(diff::dot(bound.forward(x).logits, tape.leaf(onehot)));
            double analytic = 0.0;
            for (const auto& [name, lin] : linears) {
                diff::Var w;
                for (const auto& leaf : bound.parameter_leaves())
                    if (leaf.name == name + ".weight") w = leaf.var;
                const auto& g = tape.grad(w);
                const auto d = lora_delta(*lora.find(name), lora.scale());
                for (std::size_t i = 0; i < d.size(); ++i) analytic += g[i] * d[i];
            }
            const double fd = (-3.0 * l0[c] + 4.0 * l1[c] - l2[c]) / (2.0 * h);
            CHECK(std::abs(fd - analytic) <= 1e-5 * std::max(1.0, std::abs(analytic)));
        }
    }
}

TEST_CASE("adapter factor gradients match finite differences") {
    auto c = small();
    c.n_layers = 1;
    c.d_model = 8;
    c.d_ff = 8;
    const auto m = model_with(c);
    auto lora = inject(m, 2, 12);
    randomize_b(lora, 13);
    Rng rng(14);
    const auto x = sample(rng, 30);
    const double alpha = 0.7;
    auto loss_at = [&](const LoraAdapter& l) {
        diff::Tape t;
        textenc::BoundModel b(t, m, &l, alpha);
        return t.value(diff::cross_entropy(b.forward(x).logits, std::size_t{1}))[0];
    };
    diff::Tape tape;
    textenc::BoundModel bound(tape, m, &lora, alpha, textenc::BindOptions{.track_adapter = true});
    tape.backward(diff::cross_entropy(bound.forward(x).logits, std::size_t{1}));
    const auto& leaves = bound.adapter_leaves();
    REQUIRE(leaves.size() == 2 * lora.targets.size());
    double diff2 = 0.0, norm2 = 0.0;
    for (std::size_t ti = 0; ti < lora.targets.size(); ++ti) {
        for (int which = 0; which < 2; ++which) {
            const auto& g = tape.grad(leaves[2 * ti + which].var);
            for (std::size_t j = 0; j < g.size(); ++j) {
                auto plus = lora, minus = lora;
                (which == 0 ? plus.targets[ti].a : plus.targets[ti].b)[j] += 1e-5;
                (which == 0 ? minus.targets[ti].a : minus.targets[ti].b)[j] -= 1e-5;
                const double fd = (loss_at(plus) - loss_at(minus)) / 2e-5;
                diff2 += std::pow(g[j] - fd, 2);
                norm2 += std::pow(fd, 2);
            }
        }
    }
    CHECK(std::sqrt(diff2) / std::max(std::sqrt(norm2), 1e-8) < 1e-4);
}
