#pragma once

// WordPiece and word-level tokenization with the [CLS]/[SEP] input layout.
// Text handling is byte-oriented: ASCII is lowercased and punctuation-split,
// anything beyond ASCII passes through untouched.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtkd/error.hpp"

namespace mtkd {

struct Vocabulary {
    // Specials occupy ids 0..4 in this order, also in the on-disk format.
    static constexpr int32_t pad_id = 0;
    static constexpr int32_t unk_id = 1;
    static constexpr int32_t cls_id = 2;
    static constexpr int32_t sep_id = 3;
    static constexpr int32_t mask_id = 4;

    static const std::vector<std::string>& specials() {
        static const std::vector<std::string> s{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
        return s;
    }

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int32_t> index;

    size_t size() const { return tokens.size(); }

    bool contains(const std::string& t) const { return index.count(t) != 0; }

    int32_t id_of(const std::string& t) const {
        auto it = index.find(t);
        return it == index.end() ? unk_id : it->second;
    }

    void validate() const {
        if (tokens.size() < 5) fail("tokenize", "vocabulary is missing special tokens");
        for (int i = 0; i < 5; ++i)
            if (tokens[i] != specials()[i])
                fail("tokenize", "vocabulary line " + std::to_string(i) + " must be " +
                                     specials()[i] + ", got '" + tokens[i] + "'");
        if (index.size() != tokens.size())
            fail("tokenize", "vocabulary contains duplicate tokens");
    }

    static Vocabulary from_tokens(std::vector<std::string> toks) {
        Vocabulary v;
        v.tokens = std::move(toks);
        for (size_t i = 0; i < v.tokens.size(); ++i) {
            if (!v.index.emplace(v.tokens[i], static_cast<int32_t>(i)).second)
                fail("tokenize", "duplicate token in vocabulary: '" + v.tokens[i] + "'");
        }
        v.validate();
        return v;
    }

    // UTF-8 text, one token per line, line number = id.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) fail("tokenize", "cannot write vocabulary file: " + path);
        for (const auto& t : tokens) out << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) fail("tokenize", "cannot read vocabulary file: " + path);
        std::vector<std::string> toks;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            toks.push_back(line);
        }
        while (!toks.empty() && toks.back().empty()) toks.pop_back();
        return from_tokens(std::move(toks));
    }
};

enum class TokenizerMode { wordpiece, word };

inline TokenizerMode tokenizer_mode_from(const std::string& s) {
    if (s == "wordpiece") return TokenizerMode::wordpiece;
    if (s == "word") return TokenizerMode::word;
    fail("tokenize", "unknown tokenizer mode: '" + s + "'");
}

namespace detail {

inline bool is_special_literal(const std::string& w) {
    for (const auto& s : Vocabulary::specials())
        if (w == s) return true;
    return false;
}

inline bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }

} // namespace detail

// Split on whitespace, keep special-token literals atomic, lowercase, then
// split off each punctuation character as its own token.
inline std::vector<std::string> pre_tokenize(std::string_view text) {
    std::vector<std::string> words;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j == i) break;
        std::string w(text.substr(i, j - i));
        i = j;
        if (detail::is_special_literal(w)) {
            words.push_back(std::move(w));
            continue;
        }
        std::string cur;
        for (char ch : w) {
            unsigned char uc = static_cast<unsigned char>(ch);
            if (detail::is_ascii_punct(uc)) {
                if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
                words.push_back(std::string(1, ch));
            } else {
                cur.push_back(static_cast<char>(uc < 128 ? std::tolower(uc) : uc));
            }
        }
        if (!cur.empty()) words.push_back(std::move(cur));
    }
    return words;
}

// Greedy longest-match-first segmentation; continuation pieces carry "##".
// A word with no valid segmentation or longer than max_chars_per_word maps
// to [UNK] as a whole.
inline std::vector<std::string> wordpiece_tokenize(std::string_view text, const Vocabulary& vocab,
                                                   size_t max_chars_per_word = 100) {
    std::vector<std::string> out;
    for (const std::string& word : pre_tokenize(text)) {
        if (detail::is_special_literal(word)) {
            out.push_back(word);
            continue;
        }
        if (word.size() > max_chars_per_word) {
            out.push_back("[UNK]");
            continue;
        }
        std::vector<std::string> pieces;
        size_t start = 0;
        bool ok = true;
        while (start < word.size()) {
            size_t end = word.size();
            std::string match;
            while (end > start) {
                std::string cand =
                    (start > 0 ? "##" : "") + word.substr(start, end - start);
                if (vocab.contains(cand)) {
                    match = std::move(cand);
                    break;
                }
                --end;
            }
            if (match.empty()) {
                ok = false;
                break;
            }
            pieces.push_back(std::move(match));
            start = end;
        }
        if (ok)
            out.insert(out.end(), pieces.begin(), pieces.end());
        else
            out.push_back("[UNK]");
    }
    return out;
}

inline std::vector<std::string> word_tokenize(std::string_view text, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (const std::string& word : pre_tokenize(text))
        out.push_back(vocab.contains(word) ? word : "[UNK]");
    return out;
}

inline std::vector<std::string> tokenize(std::string_view text, const Vocabulary& vocab,
                                         TokenizerMode mode, size_t max_chars_per_word = 100) {
    return mode == TokenizerMode::wordpiece ? wordpiece_tokenize(text, vocab, max_chars_per_word)
                                            : word_tokenize(text, vocab);
}

// Token + segment ids for one (possibly paired) input. Labels and task
// bindings are attached at the dataset layer, not here.
struct TokenizedExample {
    std::vector<int32_t> token_ids;
    std::vector<int32_t> segment_ids;

    size_t length() const { return token_ids.size(); }
};

// Layout: [CLS] s1 [SEP] for singles, [CLS] s1 [SEP] s2 [SEP] for pairs.
// When the pair exceeds max_seq_len, trailing tokens of the currently longer
// segment are dropped first.
inline TokenizedExample encode_example(const std::string& s1,
                                       const std::optional<std::string>& s2,
                                       const Vocabulary& vocab, size_t max_seq_len,
                                       TokenizerMode mode, size_t max_chars_per_word = 100) {
    if (max_seq_len < 8) fail("tokenize", "max_seq_len must be >= 8");
    std::vector<std::string> a = tokenize(s1, vocab, mode, max_chars_per_word);
    if (a.empty()) fail("tokenize", "encode_example: first sentence is empty");
    std::vector<std::string> b;
    bool pair = s2.has_value();
    if (pair) b = tokenize(*s2, vocab, mode, max_chars_per_word);

    size_t budget = max_seq_len - (pair ? 3 : 2);
    if (pair) {
        while (a.size() + b.size() > budget) {
            if (a.size() > b.size())
                a.pop_back();
            else
                b.pop_back();
        }
    } else if (a.size() > budget) {
        a.resize(budget);
    }

    TokenizedExample ex;
    ex.token_ids.push_back(Vocabulary::cls_id);
    ex.segment_ids.push_back(0);
    for (const auto& t : a) {
        ex.token_ids.push_back(vocab.id_of(t));
        ex.segment_ids.push_back(0);
    }
    ex.token_ids.push_back(Vocabulary::sep_id);
    ex.segment_ids.push_back(0);
    if (pair) {
        for (const auto& t : b) {
            ex.token_ids.push_back(vocab.id_of(t));
            ex.segment_ids.push_back(1);
        }
        ex.token_ids.push_back(Vocabulary::sep_id);
        ex.segment_ids.push_back(1);
    }
    return ex;
}

// Frequency-based desk-scale vocabulary construction. Word mode keeps the
// top (size-5) words; wordpiece mode seeds all seen character forms and
// fills the rest with the most frequent substrings of length <= 12,
// word-initial and "##" continuation forms counted separately. Ties break
// lexicographically.
inline Vocabulary build_vocab(std::string_view corpus, size_t size, TokenizerMode mode) {
    if (size <= 5) fail("tokenize", "vocabulary size must exceed the 5 special tokens");
    std::vector<std::string> words = pre_tokenize(corpus);
    std::erase_if(words, [](const std::string& w) { return detail::is_special_literal(w); });
    if (words.empty()) fail("tokenize", "build_vocab: empty corpus");

    std::map<std::string, uint64_t> word_freq;
    for (const auto& w : words) ++word_freq[w];

    std::vector<std::string> toks = Vocabulary::specials();

    auto take_top = [&](std::map<std::string, uint64_t>& freq, size_t budget,
                        const std::unordered_map<std::string, bool>& taken) {
        std::vector<std::pair<std::string, uint64_t>> items(freq.begin(), freq.end());
        std::sort(items.begin(), items.end(), [](const auto& x, const auto& y) {
            if (x.second != y.second) return x.second > y.second;
            return x.first < y.first;
        });
        for (const auto& [tok, n] : items) {
            if (budget == 0) break;
            if (taken.count(tok)) continue;
            toks.push_back(tok);
            --budget;
        }
    };

    if (mode == TokenizerMode::word) {
        take_top(word_freq, size - 5, {});
    } else {
        std::unordered_map<std::string, bool> taken;
        // Character floor: both forms of every seen character, so any word
        // over corpus characters stays segmentable.
        std::map<std::string, bool> char_forms;
        for (const auto& [w, n] : word_freq) {
            for (char c : w) {
                char_forms[std::string(1, c)] = true;
                char_forms["##" + std::string(1, c)] = true;
            }
        }
        if (5 + char_forms.size() > size)
            fail("tokenize", "vocabulary size " + std::to_string(size) +
                                 " cannot cover " + std::to_string(char_forms.size()) +
                                 " character forms");
        for (const auto& [c, _] : char_forms) {
            toks.push_back(c);
            taken[c] = true;
        }
        std::map<std::string, uint64_t> sub_freq;
        for (const auto& [w, n] : word_freq) {
            for (size_t i = 0; i < w.size(); ++i)
                for (size_t j = i + 1; j <= std::min(w.size(), i + 12); ++j)
                    sub_freq[(i > 0 ? "##" : "") + w.substr(i, j - i)] += n;
        }
        take_top(sub_freq, size - toks.size(), taken);
    }
    return Vocabulary::from_tokens(std::move(toks));
}

} // namespace mtkd
