#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "guardrail/benchgen.hpp"
#include "guardrail/textenc/train.hpp"

using namespace guardrail;
using namespace guardrail::bench;
using Catch::Matchers::WithinAbs;

namespace {

CorpusSpec short_spec(std::size_t c, std::size_t n, std::uint64_t seed) {
    auto spec = CorpusSpec::synthetic(c, 12, 30, n, seed);
    spec.min_words = 5;
    spec.max_words = 8;
    return spec;
}

}  // namespace

TEST_CASE("occurrence probabilities follow the class ramp") {
    const auto p = occurrence_probabilities(5, 1.0, false);
    const std::vector<double> expected{0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t c = 0; c < 5; ++c) CHECK_THAT(p[c], WithinAbs(expected[c], 1e-15));
    const auto r = occurrence_probabilities(5, 1.0, true);
    for (std::size_t c = 0; c < 5; ++c) CHECK(r[c] == p[4 - c]);
    auto twice = r;
    std::reverse(twice.begin(), twice.end());
    CHECK(twice == p);
    CHECK(occurrence_probabilities(2, 0.6, false) == std::vector<double>{0.0, 0.6});
    CHECK_THROWS_AS(occurrence_probabilities(3, 1.5, false), Error);
}

TEST_CASE("clean corpus is shortcut-free, stratified and labeled by its indicative tokens") {
    const auto spec = short_spec(3, 301, 1);
    const auto ds = gen_corpus(spec);
    REQUIRE(ds.size() == 301);
    std::vector<std::size_t> counts(3, 0);
    for (const auto& e : ds.examples) {
        CHECK_FALSE(e.shortcut_present);
        CHECK_FALSE(contains_shortcut(e.text, honesty_synonyms()));
        CHECK_FALSE(contains_shortcut(e.text, {"book"}));
        CHECK(genuine_label(textenc::split_words(e.text), spec) == e.label);
        ++counts[e.label];
    }
    for (std::size_t c : counts) CHECK((c == 100 || c == 101));
    const auto again = gen_corpus(spec);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(again.examples[i].text == ds.examples[i].text);
}

TEST_CASE("corpus spec validation") {
    auto spec = short_spec(2, 10, 1);
    spec.class_pools[1].clear();
    CHECK_THROWS_AS(gen_corpus(spec), Error);
    spec = short_spec(2, 10, 1);
    spec.max_distractors = spec.signal_tokens;
    CHECK_THROWS_AS(gen_corpus(spec), Error);
    spec = short_spec(1, 10, 1);
    CHECK_THROWS_AS(gen_corpus(spec), Error);
}

TEST_CASE("lambda zero leaves the dataset unchanged") {
    const auto ds = gen_corpus(short_spec(5, 200, 2));
    const auto out = inject(ds, ShortcutSpec::single_token("honestly", 0.0), false, 3);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(out.examples[i].text == ds.examples[i].text);
        CHECK_FALSE(out.examples[i].shortcut_present);
    }
}

TEST_CASE("injection frequencies lie in 99% binomial intervals") {
    const std::size_t per_class = 2000;
    for (std::size_t c : {2u, 3u, 5u}) {
        const auto ds = gen_corpus(short_spec(c, c * per_class, 10 + c));
        for (double lambda : {0.6, 0.8, 1.0}) {
            for (bool reversed : {false, true}) {
                const auto out = inject(ds, ShortcutSpec::single_token("honestly", lambda), reversed, 99);
                const auto probs = occurrence_probabilities(c, lambda, reversed);
                std::vector<std::size_t> hit(c, 0), total(c, 0);
                for (const auto& e : out.examples) {
                    ++total[e.label];
                    hit[e.label] += e.shortcut_present;
                }
                for (std::size_t y = 0; y < c; ++y) {
                    const double n = static_cast<double>(total[y]);
                    const double freq = static_cast<double>(hit[y]) / n;
                    const double half = 2.5758 * std::sqrt(probs[y] * (1.0 - probs[y]) / n);
                    CHECK(std::abs(freq - probs[y]) <= half + 1e-12);
                }
            }
        }
    }
}

TEST_CASE("synonym injection is detected as whole phrases and groups stay consistent") {
    const auto ds = gen_corpus(short_spec(3, 600, 4));
    const auto out = inject(ds, ShortcutSpec::synonyms(1.0), false, 5);
    std::size_t total = 0;
    for (auto c : out.group_counts()) total += c;
    CHECK(total == out.size());
    for (const auto& e : out.examples) {
        CHECK(e.shortcut_present == contains_shortcut(e.text, honesty_synonyms()));
        CHECK(e.group == group_id(e.label, e.shortcut_present));
        CHECK(e.group >= 1);
        CHECK(e.group <= 6);
    }
    CHECK(contains_shortcut("well to be honest it works", honesty_synonyms()));
    CHECK_FALSE(contains_shortcut("well to be very honest it works", {"to be honest"}));
    CHECK_THROWS_AS(inject(out, ShortcutSpec::synonyms(1.0), false, 6), Error);
    CHECK_THROWS_AS(ShortcutSpec::single_token("x", 1.2).validate(), Error);
}

TEST_CASE("testbed group counts") {
    const auto a = testbed_counts(100, 1.0, 0.1);
    CHECK((a.g1 == 40 && a.g2 == 10 && a.g3 == 50 && a.g4 == 0));
    const auto b = testbed_counts(100, 0.5, 0.1);
    CHECK((b.g1 == 45 && b.g2 == 5 && b.g3 == 45 && b.g4 == 5));
    CHECK_THROWS_AS(testbed_counts(101, 0.5, 0.1), Error);
}

TEST_CASE("filter_spurious realizes the conditional label rate") {
    const auto clean = gen_corpus(short_spec(2, 6000, 7));
    const auto source = inject_with_probabilities(clean, ShortcutSpec::single_token("book", 1.0), {0.5, 0.5}, 8);
    for (double p : {0.5, 0.9, 0.95, 0.99, 1.0}) {
        const auto ds = filter_spurious(source, "book", p, 0.2, 2000, 9);
        REQUIRE(ds.size() == 2000);
        std::size_t with = 0, with_pos = 0, positives = 0;
        for (const auto& e : ds.examples) {
            positives += e.label == 1;
            if (contains_shortcut(e.text, {"book"})) {
                ++with;
                with_pos += e.label == 1;
            }
        }
        CHECK(positives == 1000);
        CHECK(with == 400);
        CHECK_THAT(static_cast<double>(with_pos) / static_cast<double>(with), WithinAbs(p, 0.01));
    }
    CHECK_THROWS_AS(filter_spurious(source, "book", 1.0, 0.9, 5000, 9), Error);
}

TEST_CASE("ERM on a clean corpus generalizes") {
    auto train_spec = short_spec(2, 400, 20);
    auto test_spec = train_spec;
    test_spec.seed = 21;
    test_spec.size = 200;
    const auto train = gen_corpus(train_spec);
    const auto test = gen_corpus(test_spec);
    std::vector<std::string> texts;
    for (const auto& e : train.examples) texts.push_back(e.text);
    const auto vocab = textenc::Vocabulary::from_texts(texts);
    textenc::EncoderConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_len = 16;
    cfg.vocab_size = vocab.size();
    cfg.seed = 3;
    const auto result = textenc::train_erm(textenc::ClassifierModel::init(cfg), encode(train, vocab, 16),
                                           textenc::TrainConfig{.epochs = 6, .lr = 3e-3, .batch_size = 16, .seed = 4});
    CHECK(textenc::accuracy(result.model, encode(test, vocab, 16)) >= 0.95);
}
