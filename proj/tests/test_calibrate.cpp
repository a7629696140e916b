#include <catch_amalgamated.hpp>

#include <vector>

#include "guardrail/calibrate.hpp"

using namespace guardrail;
using calibrate::alpha_grid;
using calibrate::SupportSet;
using textenc::ClassifierModel;
using textenc::EncodedInput;

namespace {

textenc::EncoderConfig tiny() {
    textenc::EncoderConfig c;
    c.n_layers = 1;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 16;
    c.max_len = 16;
    c.vocab_size = 40;
    c.seed = 5;
    return c;
}

EncodedInput sample(Rng& rng) {
    EncodedInput x;
    x.ids.push_back(textenc::cls_id);
    const std::size_t n = 3 + rng.index(8);
    for (std::size_t i = 0; i < n; ++i) x.ids.push_back(textenc::reserved_count + rng.index(36));
    return x;
}

adapter::LoraAdapter strong_adapter(const ClassifierModel& m, std::uint64_t seed) {
    auto lora = adapter::inject(m, 4, seed);
    Rng rng(seed + 100);
    for (auto& t : lora.targets)
        for (double& v : t.b.values()) v = rng.normal(0.0, 1.0);
    return lora;
}

std::size_t label_at(const ClassifierModel& m, const adapter::LoraAdapter& l, const EncodedInput& x, double a) {
    return textenc::predict(m, x, a, &l).label;
}

}  // namespace

TEST_CASE("grid is 0.0 to 1.0 in tenths") {
    const auto g = alpha_grid();
    REQUIRE(g.size() == 11);
    for (int i = 0; i <= 10; ++i) CHECK(g[static_cast<std::size_t>(i)] == i / 10.0);
}

TEST_CASE("a base model that is perfect on the support selects alpha zero") {
    const auto m = ClassifierModel::init(tiny());
    const auto lora = strong_adapter(m, 1);
    Rng rng(2);
    SupportSet support;
    for (int i = 0; i < 40; ++i) {
        auto x = sample(rng);
        x.label = textenc::predict(m, x).label;
        support.examples.push_back(x);
    }
    const auto r = calibrate::calibrate(m, lora, support);
    CHECK(r.selected_alpha == 0.0);
    CHECK(r.selected_accuracy == 1.0);
}

TEST_CASE("a planted conflicting example selects alpha one") {
    const auto m = ClassifierModel::init(tiny());
    Rng rng(3);
    bool found = false;
    for (std::uint64_t seed = 1; seed < 50 && !found; ++seed) {
        auto lora = strong_adapter(m, seed);
        for (int trial = 0; trial < 50 && !found; ++trial) {
            auto x = sample(rng);
            if (label_at(m, lora, x, 0.0) == label_at(m, lora, x, 1.0)) continue;
            // Bisect the crossing, then rescale B so it lands between 0.9 and 1.0.
            double lo = 0.0, hi = 1.0;
            const std::size_t start = label_at(m, lora, x, 0.0);
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                (label_at(m, lora, x, mid) == start ? lo : hi) = mid;
            }
            const double factor = hi / 0.95;
            for (auto& t : lora.targets)
                for (double& v : t.b.values()) v *= factor;
            x.label = label_at(m, lora, x, 1.0);
            bool only_one = true;
            for (double a : alpha_grid())
                if (a < 1.0 && label_at(m, lora, x, a) == *x.label) only_one = false;
            if (!only_one) continue;
            const auto r = calibrate::calibrate(m, lora, SupportSet{{x}});
            CHECK(r.selected_alpha == 1.0);
            CHECK(r.selected_accuracy == 1.0);
            found = true;
        }
    }
    CHECK(found);
}

TEST_CASE("calibration updates nothing and its accuracies re-evaluate exactly") {
    const auto m = ClassifierModel::init(tiny());
    const auto lora = strong_adapter(m, 4);
    const auto m_copy = m;
    const auto lora_copy = lora;
    Rng rng(5);
    SupportSet support;
    for (int i = 0; i < 40; ++i) {
        auto x = sample(rng);
        x.label = rng.index(2);
        support.examples.push_back(x);
    }
    const auto r = calibrate::calibrate(m, lora, support);
    CHECK(m == m_copy);
    CHECK(lora == lora_copy);
    double best = 0.0;
    for (const auto& p : r.grid) {
        CHECK(p.accuracy == textenc::accuracy(m, support.examples, p.alpha, &lora));
        best = std::max(best, p.accuracy);
    }
    CHECK(r.selected_accuracy == best);
    CHECK(r.selected_accuracy == textenc::accuracy(m, support.examples, r.selected_alpha, &lora));
    for (const auto& p : r.grid)
        if (p.alpha < r.selected_alpha) CHECK(p.accuracy < best);
    const auto again = calibrate::calibrate(m, lora, support);
    CHECK(again.selected_alpha == r.selected_alpha);
}

TEST_CASE("calibration rejects empty or unlabeled support") {
    const auto m = ClassifierModel::init(tiny());
    const auto lora = adapter::inject(m, 2, 1);
    CHECK_THROWS_AS(calibrate::calibrate(m, lora, SupportSet{}), Error);
    Rng rng(6);
    CHECK_THROWS_AS(calibrate::calibrate(m, lora, SupportSet{{sample(rng)}}), Error);
    auto x = sample(rng);
    x.label = 7;
    CHECK_THROWS_AS(calibrate::calibrate(m, lora, SupportSet{{x}}), Error);
}
