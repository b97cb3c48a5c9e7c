// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Word-level vocabulary. Text is lowercased and split on anything that is
// not a letter, digit or apostrophe.

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"

namespace exo2ego::models {

inline std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || ch == '\'') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

class Vocab {
public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kSep = 2;

    Vocab() : words_{"<bos>", "<eos>", "<sep>"} { reindex(); }

    /// Specials first, then the sorted word set of `texts`.
    static Vocab from_texts(const std::vector<std::string>& texts) {
        std::set<std::string> seen;
        for (const auto& t : texts) {
            for (auto& w : tokenize_words(t)) {
                seen.insert(std::move(w));
            }
        }
        Vocab v;
        v.words_.insert(v.words_.end(), seen.begin(), seen.end());
        v.reindex();
        return v;
    }

    static Vocab from_words(std::vector<std::string> words) {
        Vocab v;
        require(words.size() >= 3 && words[0] == "<bos>" && words[1] == "<eos>" && words[2] == "<sep>",
                "vocabulary must start with <bos>, <eos>, <sep>");
        v.words_ = std::move(words);
        v.reindex();
        return v;
    }

    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }
    const std::string& word(int id) const {
        require(id >= 0 && id < size(), fmt::format("token id {} out of range", id));
        return words_[static_cast<std::size_t>(id)];
    }

    bool contains(const std::string& w) const { return index_.contains(w); }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const auto& w : tokenize_words(text)) {
            auto it = index_.find(w);
            require(it != index_.end(), fmt::format("out-of-vocabulary word '{}'", w));
            ids.push_back(it->second);
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id == kEos) {
                break;
            }
            if (id == kBos || id == kSep) {
                continue;
            }
            if (!out.empty()) {
                out.push_back(' ');
            }
            out += word(id);
        }
        return out;
    }

private:
    void reindex() {
        index_.clear();
        for (std::size_t i = 0; i < words_.size(); ++i) {
            require(index_.emplace(words_[i], static_cast<int>(i)).second,
                    fmt::format("duplicate vocabulary word '{}'", words_[i]));
        }
    }

    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

/// Token layout of one supervised sequence: instruction words, <sep>, the
/// target words, <eos>. target_mask marks the rows whose next token is part
/// of the target (target words and <eos>).
struct TokenizedSample {
    std::vector<int> tokens;
    std::vector<unsigned char> target_mask;
};

inline TokenizedSample tokenize_sample(const Vocab& vocab, const std::string& instruction, const std::string& target) {
    TokenizedSample s;
    for (int id : vocab.encode(instruction)) {
        s.tokens.push_back(id);
        s.target_mask.push_back(0);
    }
    s.tokens.push_back(Vocab::kSep);
    s.target_mask.push_back(0);
    for (int id : vocab.encode(target)) {
        s.tokens.push_back(id);
        s.target_mask.push_back(1);
    }
    s.tokens.push_back(Vocab::kEos);
    s.target_mask.push_back(1);
    return s;
}

}  // namespace exo2ego::models
