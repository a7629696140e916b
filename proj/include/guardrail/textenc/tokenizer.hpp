#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "guardrail/error.hpp"

namespace guardrail::textenc {

inline constexpr std::size_t pad_id = 0;
inline constexpr std::size_t cls_id = 1;
inline constexpr std::size_t mask_id = 2;
inline constexpr std::size_t unk_id = 3;
inline constexpr std::size_t reserved_count = 4;

inline const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> tokens{"[PAD]", "[CLS]", "[MASK]", "[UNK]"};
    return tokens;
}

/// Lowercases and splits on whitespace; punctuation becomes its own token,
/// except an apostrophe between two letters ("i'm" stays one token).
inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            const bool inner_apostrophe = c == '\'' && !current.empty() && i + 1 < text.size() &&
                                          std::isalpha(static_cast<unsigned char>(text[i + 1]));
            if (inner_apostrophe) {
                current.push_back('\'');
            } else {
                flush();
                out.emplace_back(1, static_cast<char>(c));
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return out;
}

/// Dense token↔id map. Ids 0..3 are the reserved symbols; the remaining ids
/// follow the lexicographic order of the tokens the vocabulary was built from.
class Vocabulary {
public:
    Vocabulary() : tokens_(reserved_tokens()) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = i;
    }

    static Vocabulary from_texts(const std::vector<std::string>& texts) {
        std::set<std::string> words;
        for (const auto& text : texts)
            for (auto& w : split_words(text)) words.insert(std::move(w));
        return from_tokens(std::vector<std::string>(words.begin(), words.end()));
    }

    /// Tokens in id order, excluding the reserved prefix.
    static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
        Vocabulary v;
        for (const auto& t : tokens) {
            require(!t.empty(), ErrorCode::schema_violation, "vocabulary: empty token");
            require(!v.index_.contains(t), ErrorCode::schema_violation,
                    "vocabulary: duplicate token '" + t + "'");
            v.index_[t] = v.tokens_.size();
            v.tokens_.push_back(t);
        }
        return v;
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    std::size_t id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? unk_id : it->second;
    }
    bool contains(const std::string& token) const { return index_.contains(token); }
    const std::string& token(std::size_t id) const {
        require(id < tokens_.size(), ErrorCode::out_of_range, "vocabulary: id out of range");
        return tokens_[id];
    }
    // Non-reserved tokens in id order.
    std::vector<std::string> user_tokens() const {
        return {tokens_.begin() + static_cast<std::ptrdiff_t>(reserved_count), tokens_.end()};
    }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// x = (t_1..t_L) with [CLS] prepended in `ids`.
struct EncodedInput {
    std::vector<std::size_t> ids;
    std::vector<std::string> tokens;
    std::optional<std::size_t> label;

    std::size_t length() const noexcept { return tokens.size(); }
};

inline EncodedInput tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len,
                             std::optional<std::size_t> label = std::nullopt) {
    require(max_len >= 2, ErrorCode::invalid_argument, "tokenize: max_len must be at least 2");
    auto words = split_words(text);
    require(!words.empty(), ErrorCode::empty_input, "tokenize: empty text");
    if (words.size() > max_len - 1) words.resize(max_len - 1);
    EncodedInput out;
    out.ids.reserve(words.size() + 1);
    out.ids.push_back(cls_id);
    for (const auto& w : words) out.ids.push_back(vocab.id(w));
    out.tokens = std::move(words);
    out.label = label;
    return out;
}

}  // namespace guardrail::textenc
