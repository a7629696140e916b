#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

#include "guardrail/metrics.hpp"
#include "guardrail/textenc/train.hpp"

using namespace guardrail;
using namespace guardrail::metrics;
using Catch::Matchers::WithinAbs;

namespace {

textenc::EncoderConfig tiny(std::uint64_t seed = 2) {
    textenc::EncoderConfig c;
    c.n_layers = 1;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 16;
    c.max_len = 16;
    c.vocab_size = 40;
    c.seed = seed;
    return c;
}

EncodedInput sample(Rng& rng, std::size_t len) {
    EncodedInput x;
    x.ids.push_back(textenc::cls_id);
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t id = textenc::reserved_count + rng.index(36);
        x.ids.push_back(id);
        x.tokens.push_back(id == textenc::reserved_count ? "book" : "w" + std::to_string(id));
    }
    x.label = rng.index(2);
    return x;
}

/// Balanced binary data: 25 examples in each of the four groups.
void balanced(std::vector<std::size_t>& labels, std::vector<std::size_t>& groups) {
    for (std::size_t g = 1; g <= 4; ++g)
        for (int i = 0; i < 25; ++i) {
            groups.push_back(g);
            labels.push_back((g - 1) / 2);
        }
}

}  // namespace

TEST_CASE("a constant model has zero worst-group accuracy") {
    std::vector<std::size_t> labels, groups;
    balanced(labels, groups);
    const std::vector<std::size_t> preds(labels.size(), 0);
    const auto r = group_report(labels, groups, preds, 2);
    CHECK(r.worst_group_accuracy == 0.0);
    CHECK(r.accuracy == 0.5);
    CHECK((r.worst_group == 3 || r.worst_group == 4));
}

TEST_CASE("a perfect model scores one everywhere") {
    std::vector<std::size_t> labels, groups;
    balanced(labels, groups);
    const auto r = group_report(labels, groups, labels, 2);
    CHECK(r.accuracy == 1.0);
    CHECK(r.worst_group_accuracy == 1.0);
    for (const auto& g : r.groups) CHECK(g.accuracy == 1.0);
}

TEST_CASE("group report matches a brute-force recount") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t c = 2 + rng.index(4);
        std::vector<std::size_t> labels, groups, preds;
        for (int i = 0; i < 500; ++i) {
            const std::size_t y = rng.index(c);
            const bool present = rng.bernoulli(0.3);
            labels.push_back(y);
            groups.push_back(bench::group_id(y, present));
            preds.push_back(rng.bernoulli(0.7) ? y : rng.index(c));
        }
        const auto r = group_report(labels, groups, preds, c);
        std::size_t correct = 0;
        double wga = 2.0;
        for (std::size_t g = 1; g <= 2 * c; ++g) {
            std::size_t n = 0, ok = 0;
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (groups[i] == g) {
                    ++n;
                    ok += preds[i] == labels[i];
                }
            correct += ok;
            const auto& s = r.groups[g - 1];
            CHECK(s.size == n);
            CHECK(s.correct == ok);
            CHECK(s.empty == (n == 0));
            if (n > 0) {
                CHECK(s.accuracy == static_cast<double>(ok) / static_cast<double>(n));
                wga = std::min(wga, s.accuracy);
            }
        }
        CHECK(r.accuracy == static_cast<double>(correct) / 500.0);
        CHECK(r.worst_group_accuracy == wga);
    }
}

TEST_CASE("empty groups are flagged and excluded from the minimum") {
    const std::vector<std::size_t> labels{0, 0, 1}, groups{1, 1, 3}, preds{0, 1, 1};
    const auto r = group_report(labels, groups, preds, 2);
    CHECK(r.groups[1].empty);
    CHECK(r.groups[3].empty);
    CHECK(r.worst_group_accuracy == 0.5);
    CHECK(r.worst_group == 1);
    CHECK_THROWS_AS(group_report({}, {}, {}, 2), Error);
    CHECK_THROWS_AS(group_report({0}, {1, 2}, {0}, 2), Error);
    CHECK_THROWS_AS(group_report({0}, {5}, {0}, 2), Error);
}

TEST_CASE("max shift hand case") {
    const std::vector<double> masked{0.85, 0.4, 0.95, 0.82};
    CHECK_THAT(max_shift(0.9, masked), WithinAbs(0.5, 1e-15));
    CHECK(max_shift(0.9, std::vector<double>{}) == 0.0);
}

TEST_CASE("MSTPS is zero when context never reaches the CLS row") {
    auto m = textenc::ClassifierModel::init(tiny());
    for (auto& layer : m.layers) {
        layer.v.weight.fill(0.0);
        layer.v.bias.fill(0.0);
    }
    Rng rng(4);
    std::vector<EncodedInput> xs;
    for (int i = 0; i < 20; ++i) xs.push_back(sample(rng, 3 + rng.index(8)));
    const auto r = mstps(m, nullptr, 0.0, xs, 10);
    CHECK(r.mean == 0.0);
}

TEST_CASE("MSTPS matches a direct evaluation and is monotone in k") {
    const auto m = textenc::ClassifierModel::init(tiny(7));
    auto lora = adapter::inject(m, 2, 8);
    Rng rng(9);
    for (auto& t : lora.targets)
        for (double& v : t.b.values()) v = rng.normal(0.0, 0.5);
    std::vector<EncodedInput> xs;
    for (int i = 0; i < 15; ++i) xs.push_back(sample(rng, 4 + rng.index(10)));
    for (double alpha : {0.0, 0.6}) {
        const auto r = mstps(m, &lora, alpha, xs, 4);
        double sum = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const auto p = textenc::predict(m, xs[i], alpha, &lora);
            const auto s = attribution::saliency(m, xs[i], &lora, alpha);
            std::vector<std::size_t> order(s.scores.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
            double best = 0.0;
            for (std::size_t j = 0; j < std::min<std::size_t>(4, order.size()); ++j) {
                auto masked = xs[i];
                masked.ids[order[j] + 1] = textenc::mask_id;
                const auto q = textenc::predict(m, masked, alpha, &lora);
                best = std::max(best, std::abs(p.probs[p.label] - q.probs[p.label]));
            }
            CHECK(r.per_example[i] == best);
            CHECK((best >= 0.0 && best <= 1.0));
            sum += best;
        }
        CHECK_THAT(r.mean, WithinAbs(sum / static_cast<double>(xs.size()), 1e-15));
        double prev = 0.0;
        for (std::size_t k = 1; k <= 12; ++k) {
            const double v = mstps(m, &lora, alpha, xs, k).mean;
            CHECK(v >= prev);
            prev = v;
        }
        CHECK(mstps(m, &lora, alpha, xs, 4).per_example == r.per_example);
    }
    CHECK_THROWS_AS(mstps(m, nullptr, 0.0, xs, 0), Error);
    CHECK_THROWS_AS(mstps(m, nullptr, 0.0, {}, 3), Error);
}

TEST_CASE("misclassification parts partition the errors") {
    const auto m = textenc::ClassifierModel::init(tiny(11));
    Rng rng(12);
    std::vector<EncodedInput> xs;
    for (int i = 0; i < 60; ++i) xs.push_back(sample(rng, 6 + rng.index(6)));
    const auto d = misclass_decomposition(m, xs, {"book"}, 3);
    CHECK(d.errors == d.errors_with_shortcut + d.errors_without_shortcut);
    CHECK(d.total_rate() == static_cast<double>(d.errors) / 60.0);
    CHECK_THAT(d.with_shortcut_rate() + d.without_shortcut_rate(), WithinAbs(d.total_rate(), 1e-15));
    CHECK(d.errors == static_cast<std::size_t>(std::llround((1.0 - textenc::accuracy(m, xs)) * 60.0)));

    auto perfect = xs;
    for (auto& x : perfect) x.label = textenc::predict(m, x).label;
    const auto z = misclass_decomposition(m, perfect, {"book"}, 3);
    CHECK((z.errors == 0 && z.errors_with_shortcut == 0 && z.errors_without_shortcut == 0));
}

TEST_CASE("model-level group report agrees with the pure tally") {
    const auto spec = bench::CorpusSpec::synthetic(2, 8, 20, 120, 13);
    const auto clean = bench::gen_corpus(spec);
    const auto ds = bench::inject(clean, bench::ShortcutSpec::single_token("book", 0.8), false, 14);
    std::vector<std::string> texts;
    for (const auto& e : ds.examples) texts.push_back(e.text);
    const auto vocab = textenc::Vocabulary::from_texts(texts);
    auto cfg = tiny();
    cfg.vocab_size = vocab.size();
    cfg.max_len = 32;
    const auto m = textenc::ClassifierModel::init(cfg);
    const auto enc = bench::encode(ds, vocab, 32);
    const auto r = group_report(m, nullptr, 0.0, ds, enc);
    std::vector<std::size_t> labels, groups, preds;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        labels.push_back(ds.examples[i].label);
        groups.push_back(ds.examples[i].group);
        preds.push_back(textenc::predict(m, enc[i]).label);
    }
    const auto pure = group_report(labels, groups, preds, 2);
    CHECK(r.accuracy == pure.accuracy);
    CHECK(r.worst_group_accuracy == pure.worst_group_accuracy);
}
