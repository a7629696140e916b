#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "guardrail/error.hpp"
#include "guardrail/rng.hpp"
#include "guardrail/textenc/tokenizer.hpp"

namespace guardrail::bench {

/// The 15-phrase synonym set used for the Syn shortcut family.
inline const std::vector<std::string>& honesty_synonyms() {
    static const std::vector<std::string> phrases{
        "honestly",          "to be honest",      "frankly speaking", "to tell the truth",
        "to be frank",       "in truth",          "candidly",         "speaking candidly",
        "plainly speaking",  "to be direct",      "to come clean",    "to put it frankly",
        "if I'm being honest", "in plain terms",  "directly speaking"};
    return phrases;
}

struct Example {
    std::string text;
    std::size_t label = 0;
    bool shortcut_present = false;
    std::size_t group = 0;  // 1..2C; 2y+1 without shortcut, 2y+2 with
};

inline std::size_t group_id(std::size_t label, bool present) { return 2 * label + (present ? 2 : 1); }

/// Two-class testbed naming: Group 1 = (y=1, absent), 2 = (y=1, present),
/// 3 = (y=0, absent), 4 = (y=0, present).
inline std::size_t testbed_group(std::size_t label, bool present) {
    return label == 1 ? (present ? 2 : 1) : (present ? 4 : 3);
}

struct GroupedDataset {
    std::size_t n_classes = 2;
    std::vector<std::string> shortcut_phrases;  // the token set T
    std::vector<Example> examples;

    std::size_t size() const noexcept { return examples.size(); }

    std::vector<std::size_t> group_counts() const {
        std::vector<std::size_t> counts(2 * n_classes, 0);
        for (const auto& e : examples) counts.at(e.group - 1) += 1;
        return counts;
    }
};

/// Positions (0-based over the word sequence) covered by any occurrence of
/// any phrase; each phrase matches as a contiguous token run.
inline std::vector<bool> shortcut_mask(const std::vector<std::string>& words,
                                       const std::vector<std::string>& phrases) {
    std::vector<bool> mask(words.size(), false);
    for (const auto& phrase : phrases) {
        const auto pw = textenc::split_words(phrase);
        if (pw.empty() || pw.size() > words.size()) continue;
        for (std::size_t s = 0; s + pw.size() <= words.size(); ++s) {
            if (std::equal(pw.begin(), pw.end(), words.begin() + static_cast<std::ptrdiff_t>(s))) {
                for (std::size_t k = 0; k < pw.size(); ++k) mask[s + k] = true;
            }
        }
    }
    return mask;
}

inline bool contains_shortcut(const std::string& text, const std::vector<std::string>& phrases) {
    const auto mask = shortcut_mask(textenc::split_words(text), phrases);
    return std::find(mask.begin(), mask.end(), true) != mask.end();
}

/// Recomputes presence flags and group ids from a literal scan of each text.
inline void regroup(GroupedDataset& ds) {
    for (auto& e : ds.examples) {
        require(e.label < ds.n_classes, ErrorCode::schema_violation, "dataset: label out of range");
        e.shortcut_present = !ds.shortcut_phrases.empty() && contains_shortcut(e.text, ds.shortcut_phrases);
        e.group = group_id(e.label, e.shortcut_present);
    }
}

/// Deterministic pronounceable pseudo-words (consonant-vowel syllables).
inline std::string pseudo_word(std::size_t index, std::size_t syllables = 3) {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    const std::size_t base = consonants.size() * vowels.size();
    std::size_t space = 1;
    for (std::size_t s = 0; s < syllables; ++s) space *= base;
    // Scatter consecutive indices across the syllable space.
    std::size_t code = (index * 7919 + 104729) % space;
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
        const std::size_t syl = code % base;
        code /= base;
        w.push_back(consonants[syl / vowels.size()]);
        w.push_back(vowels[syl % vowels.size()]);
    }
    return w;
}

struct CorpusSpec {
    std::size_t n_classes = 2;
    std::vector<std::vector<std::string>> class_pools;  // label-indicative tokens per class
    std::vector<std::string> neutral_pool;
    std::size_t min_words = 16;
    std::size_t max_words = 24;
    std::size_t signal_tokens = 2;   // drawn from the example's own class pool
    std::size_t max_distractors = 1; // drawn from other class pools; always < signal_tokens
    std::size_t size = 1000;
    std::uint64_t seed = 0;

    /// Pools of pseudo-words with the given sizes; shortcut vocabulary never collides.
    static CorpusSpec synthetic(std::size_t n_classes, std::size_t pool_size, std::size_t neutral_size,
                                std::size_t size, std::uint64_t seed) {
        CorpusSpec spec;
        spec.n_classes = n_classes;
        spec.size = size;
        spec.seed = seed;
        std::set<std::string> reserved{"book"};
        for (const auto& p : honesty_synonyms())
            for (auto& w : textenc::split_words(p)) reserved.insert(w);
        std::set<std::string> used;
        std::size_t next = 0;
        auto fresh = [&] {
            for (;;) {
                std::string w = pseudo_word(next++);
                if (!reserved.contains(w) && used.insert(w).second) return w;
            }
        };
        spec.class_pools.resize(n_classes);
        for (auto& pool : spec.class_pools)
            for (std::size_t i = 0; i < pool_size; ++i) pool.push_back(fresh());
        for (std::size_t i = 0; i < neutral_size; ++i) spec.neutral_pool.push_back(fresh());
        return spec;
    }

    void validate() const {
        require(n_classes >= 2, ErrorCode::invalid_argument, "corpus: need at least two classes");
        require(class_pools.size() == n_classes, ErrorCode::invalid_argument, "corpus: one pool per class");
        for (const auto& p : class_pools) require(!p.empty(), ErrorCode::empty_input, "corpus: empty class pool");
        require(!neutral_pool.empty(), ErrorCode::empty_input, "corpus: empty neutral pool");
        require(size > 0, ErrorCode::invalid_argument, "corpus: size must be positive");
        require(signal_tokens > max_distractors, ErrorCode::invalid_argument,
                "corpus: distractors must stay below the signal count");
        require(min_words >= signal_tokens + max_distractors && min_words <= max_words,
                ErrorCode::invalid_argument, "corpus: invalid length range");
    }
};

/// Label of a token sequence under the generative rule: the class whose pool
/// contributes the most tokens (ties to the lowest class). Returns n_classes
/// when no indicative token is present.
inline std::size_t genuine_label(const std::vector<std::string>& words, const CorpusSpec& spec) {
    std::vector<std::size_t> counts(spec.n_classes, 0);
    for (const auto& w : words)
        for (std::size_t c = 0; c < spec.n_classes; ++c)
            if (std::find(spec.class_pools[c].begin(), spec.class_pools[c].end(), w) != spec.class_pools[c].end())
                ++counts[c];
    const auto best = std::max_element(counts.begin(), counts.end());
    return *best == 0 ? spec.n_classes : static_cast<std::size_t>(best - counts.begin());
}

/// Shortcut-free corpus with stratified labels. Each text has `signal_tokens`
/// words from its class pool, up to `max_distractors` from other pools, and
/// neutral filler, in random order.
inline GroupedDataset gen_corpus(const CorpusSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    GroupedDataset ds;
    ds.n_classes = spec.n_classes;
    std::vector<std::size_t> labels(spec.size);
    for (std::size_t i = 0; i < spec.size; ++i) labels[i] = i % spec.n_classes;
    rng.shuffle(std::span<std::size_t>(labels));
    for (std::size_t y : labels) {
        const std::size_t n_words = rng.between(spec.min_words, spec.max_words);
        std::vector<std::string> words;
        for (std::size_t s = 0; s < spec.signal_tokens; ++s)
            words.push_back(spec.class_pools[y][rng.index(spec.class_pools[y].size())]);
        const std::size_t n_distract = rng.between(0, spec.max_distractors);
        for (std::size_t s = 0; s < n_distract; ++s) {
            std::size_t other = rng.index(spec.n_classes - 1);
            if (other >= y) ++other;
            words.push_back(spec.class_pools[other][rng.index(spec.class_pools[other].size())]);
        }
        while (words.size() < n_words) words.push_back(spec.neutral_pool[rng.index(spec.neutral_pool.size())]);
        rng.shuffle(std::span<std::string>(words));
        std::string text;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (i) text.push_back(' ');
            text += words[i];
        }
        ds.examples.push_back(Example{std::move(text), y, false, group_id(y, false)});
    }
    return ds;
}

struct ShortcutSpec {
    enum class Kind { single_token, synonyms };
    Kind kind = Kind::single_token;
    std::vector<std::string> phrases;
    double lambda = 1.0;

    static ShortcutSpec single_token(std::string token, double lambda) {
        return ShortcutSpec{Kind::single_token, {std::move(token)}, lambda};
    }
    static ShortcutSpec synonyms(double lambda) {
        return ShortcutSpec{Kind::synonyms, honesty_synonyms(), lambda};
    }

    void validate() const {
        require(std::isfinite(lambda) && lambda >= 0.0 && lambda <= 1.0, ErrorCode::invalid_argument,
                "shortcut: lambda must lie in [0, 1]");
        require(!phrases.empty(), ErrorCode::invalid_argument, "shortcut: no phrases");
        require(kind == Kind::single_token ? phrases.size() == 1 : phrases.size() >= 2,
                ErrorCode::invalid_argument, "shortcut: ST needs one token, Syn at least two phrases");
    }
};

/// Per-class occurrence probabilities λ·c/(C−1) for 0-based class c
/// (λ(c−1)/(C−1) in 1-based labels), reversed across classes on request.
inline std::vector<double> occurrence_probabilities(std::size_t n_classes, double lambda, bool reversed) {
    require(n_classes >= 2, ErrorCode::invalid_argument, "occurrence: need at least two classes");
    require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::invalid_argument, "occurrence: lambda out of range");
    std::vector<double> probs(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        const std::size_t rank = reversed ? n_classes - 1 - c : c;
        probs[c] = lambda * static_cast<double>(rank) / static_cast<double>(n_classes - 1);
    }
    return probs;
}

/// Inserts a shortcut phrase before a uniformly chosen word boundary of each
/// example of class c with probability probs[c].
inline GroupedDataset inject_with_probabilities(const GroupedDataset& ds, const ShortcutSpec& shortcut,
                                                const std::vector<double>& probs, std::uint64_t seed) {
    shortcut.validate();
    require(probs.size() == ds.n_classes, ErrorCode::invalid_argument, "inject: one probability per class");
    for (const auto& e : ds.examples)
        require(!contains_shortcut(e.text, shortcut.phrases), ErrorCode::invalid_argument,
                "inject: source dataset already contains the shortcut");
    Rng rng(seed);
    GroupedDataset out;
    out.n_classes = ds.n_classes;
    out.shortcut_phrases = shortcut.phrases;
    out.examples.reserve(ds.size());
    for (const auto& e : ds.examples) {
        Example x = e;
        if (rng.bernoulli(probs[e.label])) {
            const std::string& phrase = shortcut.phrases[rng.index(shortcut.phrases.size())];
            auto words = textenc::split_words(e.text);
            const std::size_t at = rng.between(0, words.size());
            std::string text;
            for (std::size_t i = 0; i <= words.size(); ++i) {
                if (i == at) text += (text.empty() ? "" : " ") + phrase;
                if (i < words.size()) text += (text.empty() ? "" : " ") + words[i];
            }
            x.text = std::move(text);
        }
        out.examples.push_back(std::move(x));
    }
    regroup(out);
    return out;
}

inline GroupedDataset inject(const GroupedDataset& ds, const ShortcutSpec& shortcut, bool reversed,
                             std::uint64_t seed) {
    shortcut.validate();
    return inject_with_probabilities(ds, shortcut, occurrence_probabilities(ds.n_classes, shortcut.lambda, reversed),
                                     seed);
}

/// Testbed group proportions (Groups 1..4 in testbed naming) realizing
/// P(y=1 | token ∈ x) = p with `proportion` of examples carrying the token
/// and balanced labels.
struct TestbedCounts {
    std::size_t g1, g2, g3, g4;
};

inline TestbedCounts testbed_counts(std::size_t n, double p, double proportion) {
    require(n % 2 == 0, ErrorCode::invalid_argument, "filter_spurious: size must be even");
    require(p >= 0.0 && p <= 1.0 && proportion >= 0.0 && proportion <= 1.0, ErrorCode::invalid_argument,
            "filter_spurious: p and proportion must lie in [0, 1]");
    const double with = static_cast<double>(n) * proportion;
    const auto g2 = static_cast<std::size_t>(std::llround(with * p));
    const auto g4 = static_cast<std::size_t>(std::llround(with * (1.0 - p)));
    require(g2 <= n / 2 && g4 <= n / 2, ErrorCode::invalid_argument,
            "filter_spurious: proportions incompatible with balanced labels");
    return TestbedCounts{n / 2 - g2, g2, n / 2 - g4, g4};
}

/// Draws a balanced binary dataset of `n` examples from a source that carries
/// the token in some examples of both classes, with testbed group sizes from
/// testbed_counts().
inline GroupedDataset filter_spurious(const GroupedDataset& source, const std::string& token, double p,
                                      double proportion, std::size_t n, std::uint64_t seed) {
    require(source.n_classes == 2, ErrorCode::invalid_argument, "filter_spurious: binary labels required");
    const TestbedCounts counts = testbed_counts(n, p, proportion);
    const std::vector<std::string> phrases{token};
    std::vector<std::vector<const Example*>> pools(4);
    for (const auto& e : source.examples) {
        const bool present = contains_shortcut(e.text, phrases);
        pools[testbed_group(e.label, present) - 1].push_back(&e);
    }
    Rng rng(seed);
    const std::size_t wanted[4] = {counts.g1, counts.g2, counts.g3, counts.g4};
    GroupedDataset out;
    out.n_classes = 2;
    out.shortcut_phrases = phrases;
    for (std::size_t g = 0; g < 4; ++g) {
        require(pools[g].size() >= wanted[g], ErrorCode::insufficient_data,
                "filter_spurious: testbed group " + std::to_string(g + 1) + " needs " +
                    std::to_string(wanted[g]) + " examples, source has " + std::to_string(pools[g].size()));
        rng.shuffle(std::span<const Example*>(pools[g]));
        for (std::size_t i = 0; i < wanted[g]; ++i) out.examples.push_back(*pools[g][i]);
    }
    rng.shuffle(std::span<Example>(out.examples));
    regroup(out);
    return out;
}

inline std::vector<textenc::EncodedInput> encode(const GroupedDataset& ds, const textenc::Vocabulary& vocab,
                                                 std::size_t max_len, bool with_labels = true) {
    std::vector<textenc::EncodedInput> out;
    out.reserve(ds.size());
    for (const auto& e : ds.examples)
        out.push_back(textenc::tokenize(e.text, vocab, max_len,
                                        with_labels ? std::optional<std::size_t>(e.label) : std::nullopt));
    return out;
}

}  // namespace guardrail::bench
