#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "utf8.hpp"

namespace kwmatch {

using TokenSequence = std::vector<std::string>;
using Count = std::uint64_t;

enum class TokenizeMode { Char, Whitespace };

inline TokenizeMode parse_tokenize_mode(std::string_view name) {
    if (name == "char") return TokenizeMode::Char;
    if (name == "whitespace") return TokenizeMode::Whitespace;
    throw Error("unknown tokenize mode \"" + std::string(name) + "\"");
}

inline const char* to_string(TokenizeMode mode) noexcept {
    return mode == TokenizeMode::Char ? "char" : "whitespace";
}

/// Separator that turns a token run back into its surface string.
inline std::string_view joiner(TokenizeMode mode) noexcept {
    return mode == TokenizeMode::Char ? "" : " ";
}

inline std::string join(const TokenSequence& tokens, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.append(sep);
        out += tokens[i];
    }
    return out;
}

inline std::string join(const TokenSequence& tokens, TokenizeMode mode) {
    return join(tokens, joiner(mode));
}

/// Char mode yields one token per non-whitespace code point; whitespace mode
/// splits on runs of Unicode whitespace.
inline TokenSequence tokenize(std::string_view text, TokenizeMode mode) {
    TokenSequence out;
    std::string current;
    for (std::size_t i = 0; i < text.size();) {
        auto [cp, len] = utf8::decode(text, i);
        const bool space = utf8::is_space(cp);
        if (mode == TokenizeMode::Char) {
            if (!space) out.emplace_back(text.substr(i, len));
        } else if (space) {
            if (!current.empty()) out.push_back(std::move(current));
            current.clear();
        } else {
            current.append(text.substr(i, len));
        }
        i += len;
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

struct Document {
    std::string id;
    std::string domain;
    std::string text;
};

struct Question {
    std::string id;
    std::string text;
};

namespace detail {

inline bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

inline std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string())
        throw ParseError(line, std::string("missing or non-string field \"") + key + "\"");
    return it->get<std::string>();
}

template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line)) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw ParseError(lineno, "malformed JSON");
        }
        if (!obj.is_object()) throw ParseError(lineno, "expected a JSON object");
        fn(obj, lineno);
    }
}

} // namespace detail

/// Reads a JSONL corpus with fields id, domain, text.
inline std::vector<Document> load_corpus(const std::string& path) {
    std::vector<Document> docs;
    std::unordered_set<std::string> seen;
    detail::for_each_jsonl(path, [&](const nlohmann::json& obj, std::size_t line) {
        Document d{detail::required_string(obj, "id", line),
                   detail::required_string(obj, "domain", line),
                   detail::required_string(obj, "text", line)};
        if (d.domain.empty()) throw ParseError(line, "empty domain");
        if (detail::blank(d.text)) throw ParseError(line, "empty text");
        if (!seen.insert(d.id).second) throw ParseError(line, "duplicate id \"" + d.id + "\"");
        docs.push_back(std::move(d));
    });
    return docs;
}

/// Reads a JSONL question database with fields id, text.
inline std::vector<Question> load_questions(const std::string& path) {
    std::vector<Question> out;
    std::unordered_set<std::string> seen;
    detail::for_each_jsonl(path, [&](const nlohmann::json& obj, std::size_t line) {
        Question q{detail::required_string(obj, "id", line), detail::required_string(obj, "text", line)};
        if (detail::blank(q.text)) throw ParseError(line, "empty text");
        if (!seen.insert(q.id).second) throw ParseError(line, "duplicate id \"" + q.id + "\"");
        out.push_back(std::move(q));
    });
    return out;
}

using Bigram = std::pair<std::string, std::string>;

/// Raw counts shared by phrase discovery and domain scoring. Bigrams never
/// cross a document boundary.
struct CorpusStats {
    std::map<std::string, Count> unigram_count;
    std::map<Bigram, Count> bigram_count;
    Count total_tokens = 0;
    Count total_bigrams = 0;
    /// domain -> token -> number of documents of that domain containing the token
    std::map<std::string, std::map<std::string, Count>> doc_freq;
    std::map<std::string, Count> doc_count;

    void add_document(const std::string& domain, const TokenSequence& tokens) {
        ++doc_count[domain];
        auto& df = doc_freq[domain];
        std::set<std::string_view> distinct;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            ++unigram_count[tokens[i]];
            if (i + 1 < tokens.size()) ++bigram_count[{tokens[i], tokens[i + 1]}];
            distinct.insert(tokens[i]);
        }
        for (auto t : distinct) ++df[std::string(t)];
        total_tokens += tokens.size();
        if (tokens.size() > 1) total_bigrams += tokens.size() - 1;
    }

    /// Adds another shard's counts. Order-independent.
    void merge(const CorpusStats& other) {
        for (const auto& [k, v] : other.unigram_count) unigram_count[k] += v;
        for (const auto& [k, v] : other.bigram_count) bigram_count[k] += v;
        for (const auto& [dom, m] : other.doc_freq) {
            auto& dst = doc_freq[dom];
            for (const auto& [k, v] : m) dst[k] += v;
        }
        for (const auto& [k, v] : other.doc_count) doc_count[k] += v;
        total_tokens += other.total_tokens;
        total_bigrams += other.total_bigrams;
    }

    Count df(const std::string& domain, const std::string& token) const {
        auto d = doc_freq.find(domain);
        if (d == doc_freq.end()) return 0;
        auto t = d->second.find(token);
        return t == d->second.end() ? 0 : t->second;
    }

    Count documents(const std::string& domain) const {
        auto it = doc_count.find(domain);
        return it == doc_count.end() ? 0 : it->second;
    }

    bool operator==(const CorpusStats&) const = default;
};

inline CorpusStats compute_stats(const std::vector<Document>& docs, TokenizeMode mode) {
    if (docs.empty()) throw Error("compute_stats: empty document list");
    CorpusStats stats;
    for (const auto& d : docs) stats.add_document(d.domain, tokenize(d.text, mode));
    return stats;
}

/// Order- and punctuation-insensitive canonical form used as the dedup key.
inline std::string dedup_key(const TokenSequence& q) {
    std::vector<std::string> parts;
    parts.reserve(q.size());
    for (const auto& t : q) {
        auto s = utf8::strip_punct(t);
        if (!s.empty()) parts.push_back(std::move(s));
    }
    std::sort(parts.begin(), parts.end());
    return join(parts, "\x1f");
}

/// Drops questions whose canonical form collides with an earlier one.
inline std::vector<TokenSequence> dedup_questions(const std::vector<TokenSequence>& questions) {
    std::unordered_set<std::string> seen;
    std::vector<TokenSequence> kept;
    for (const auto& q : questions)
        if (seen.insert(dedup_key(q)).second) kept.push_back(q);
    return kept;
}

} // namespace kwmatch
