#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"

namespace kwmatch {

/// Pointwise mutual information of the ordered adjacent pair (w1, w2), natural
/// log. Returns -inf when the pair never occurs adjacently.
inline double pmi(const CorpusStats& stats, const std::string& w1, const std::string& w2) {
    auto u1 = stats.unigram_count.find(w1);
    auto u2 = stats.unigram_count.find(w2);
    if (u1 == stats.unigram_count.end()) throw Error("pmi: unknown token \"" + w1 + "\"");
    if (u2 == stats.unigram_count.end()) throw Error("pmi: unknown token \"" + w2 + "\"");
    auto b = stats.bigram_count.find({w1, w2});
    if (b == stats.bigram_count.end() || b->second == 0)
        return -std::numeric_limits<double>::infinity();
    const double n = static_cast<double>(stats.total_tokens);
    const double joint = static_cast<double>(b->second) / static_cast<double>(stats.total_bigrams);
    const double p1 = static_cast<double>(u1->second) / n;
    const double p2 = static_cast<double>(u2->second) / n;
    return std::log(joint / (p1 * p2));
}

struct PhraseCandidate {
    TokenSequence tokens;
    /// PMI of the weakest adjacent link; for pairs this is the pair's PMI.
    double pmi_score = 0.0;
};

/// Every adjacent pair whose PMI clears `pmi_threshold`, plus longer phrases
/// grown from each accepted one by repeatedly appending the successor with the
/// highest PMI that also clears the threshold, up to `max_len` tokens.
inline std::vector<PhraseCandidate> discover_phrases(const CorpusStats& stats, double pmi_threshold,
                                                     std::size_t max_len) {
    if (max_len < 2) throw Error("discover_phrases: max_len must be >= 2");

    std::vector<PhraseCandidate> out;
    // best successor per token: (next token, pmi)
    std::unordered_map<std::string, std::pair<std::string, double>> best_next;
    for (const auto& [pair, count] : stats.bigram_count) {
        if (count == 0) continue;
        const double score = pmi(stats, pair.first, pair.second);
        if (!(score >= pmi_threshold)) continue;
        out.push_back({{pair.first, pair.second}, score});
        auto [it, inserted] = best_next.try_emplace(pair.first, pair.second, score);
        // bigram_count iterates in lexicographic order, so the first of equal scores wins
        if (!inserted && score > it->second.second) it->second = {pair.second, score};
    }

    std::set<TokenSequence> seen;
    for (const auto& c : out) seen.insert(c.tokens);
    const std::size_t pair_count = out.size();
    for (std::size_t i = 0; i < pair_count; ++i) {
        PhraseCandidate grown = out[i];
        while (grown.tokens.size() < max_len) {
            auto it = best_next.find(grown.tokens.back());
            if (it == best_next.end()) break;
            grown.tokens.push_back(it->second.first);
            grown.pmi_score = std::min(grown.pmi_score, it->second.second);
            if (seen.insert(grown.tokens).second) out.push_back(grown);
        }
    }

    std::sort(out.begin(), out.end(), [](const PhraseCandidate& a, const PhraseCandidate& b) {
        if (a.pmi_score != b.pmi_score) return a.pmi_score > b.pmi_score;
        return a.tokens < b.tokens;
    });
    return out;
}

/// Document counts feeding one diff-idf evaluation.
struct DomainFrequency {
    double domain_docs = 0;
    double domain_df = 0;
    double anti_docs = 0;
    double anti_df = 0;
};

/// idf in the anti-domain minus idf in the domain, both smoothed by `lambda`.
inline double diff_idf(const DomainFrequency& f, double lambda) {
    if (!(lambda > 0)) throw Error("diff_idf: lambda must be > 0");
    if (f.anti_docs <= 0) throw Error("diff_idf: anti-domain corpus is empty");
    if (f.domain_docs <= 0) throw Error("diff_idf: domain corpus is empty");
    return std::log(f.anti_docs / (f.anti_df + lambda)) - std::log(f.domain_docs / (f.domain_df + lambda));
}

inline DomainFrequency domain_frequency(const CorpusStats& stats, const std::string& token,
                                        const std::string& domain) {
    if (!stats.doc_count.contains(domain)) throw Error("unknown domain \"" + domain + "\"");
    DomainFrequency f;
    for (const auto& [dom, n] : stats.doc_count) {
        const auto df = static_cast<double>(stats.df(dom, token));
        if (dom == domain) {
            f.domain_docs = static_cast<double>(n);
            f.domain_df = df;
        } else {
            f.anti_docs += static_cast<double>(n);
            f.anti_df += df;
        }
    }
    return f;
}

inline double diff_idf(const CorpusStats& stats, const std::string& token, const std::string& domain,
                       double lambda) {
    return diff_idf(domain_frequency(stats, token, domain), lambda);
}

struct KeywordEntry {
    std::string surface;
    std::string domain;
    double score = 0.0;

    bool operator==(const KeywordEntry&) const = default;
};

struct KeywordSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string surface;

    bool operator==(const KeywordSpan&) const = default;
};

/// Merged keyword dictionary. Surfaces are token runs joined with the
/// tokenizer's joiner, so a surface maps back to its tokens unambiguously.
class KeywordDictionary {
public:
    explicit KeywordDictionary(TokenizeMode mode = TokenizeMode::Char) : mode_(mode) {}

    /// Keeps the higher-scoring entry per surface; equal scores keep the
    /// lexicographically smaller domain.
    void insert(KeywordEntry entry) {
        if (entry.surface.empty()) throw Error("keyword dictionary: empty surface");
        const auto len = tokenize(entry.surface, mode_).size();
        if (len == 0) throw Error("keyword dictionary: blank surface");
        auto [it, inserted] = entries_.try_emplace(entry.surface, entry);
        if (!inserted) {
            auto& cur = it->second;
            if (entry.score > cur.score || (entry.score == cur.score && entry.domain < cur.domain))
                cur = std::move(entry);
        }
        max_surface_len_ = std::max(max_surface_len_, len);
    }

    const KeywordEntry* find(const std::string& surface) const {
        auto it = entries_.find(surface);
        return it == entries_.end() ? nullptr : &it->second;
    }

    const std::map<std::string, KeywordEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t max_surface_len() const noexcept { return max_surface_len_; }
    TokenizeMode mode() const noexcept { return mode_; }

    bool operator==(const KeywordDictionary&) const = default;

private:
    TokenizeMode mode_;
    std::map<std::string, KeywordEntry> entries_;
    std::size_t max_surface_len_ = 0;
};

inline KeywordDictionary merge_dictionaries(const std::vector<std::vector<KeywordEntry>>& parts,
                                            TokenizeMode mode = TokenizeMode::Char) {
    KeywordDictionary dict(mode);
    for (const auto& part : parts)
        for (const auto& e : part) dict.insert(e);
    return dict;
}

/// Greedy left-to-right longest match against the dictionary surfaces.
inline std::vector<KeywordSpan> extract_keywords(const KeywordDictionary& dict, const TokenSequence& seq) {
    std::vector<KeywordSpan> spans;
    if (dict.empty()) return spans;
    const auto sep = joiner(dict.mode());
    std::size_t i = 0;
    while (i < seq.size()) {
        std::size_t matched = 0;
        for (std::size_t len = std::min(dict.max_surface_len(), seq.size() - i); len >= 1; --len) {
            std::string surface = seq[i];
            for (std::size_t k = 1; k < len; ++k) {
                surface.append(sep);
                surface += seq[i + k];
            }
            if (dict.find(surface)) {
                spans.push_back({i, i + len, std::move(surface)});
                matched = len;
                break;
            }
        }
        i += matched ? matched : 1;
    }
    return spans;
}

/// Distinct keyword surfaces found in `seq`.
inline std::set<std::string> keyword_set(const KeywordDictionary& dict, const TokenSequence& seq) {
    std::set<std::string> out;
    for (auto& s : extract_keywords(dict, seq)) out.insert(std::move(s.surface));
    return out;
}

struct KeywordConfig {
    double pmi_threshold = 3.0;
    double diff_idf_threshold = 0.0;
    double lambda = 1.0;
    std::size_t max_phrase_len = 4;
};

/// Shared corpus pass for per-domain dictionary building: counts, discovered
/// phrases, and phrase document frequencies (token-level containment).
class DomainKeywordExtractor {
public:
    DomainKeywordExtractor(const std::vector<Document>& docs, const KeywordConfig& cfg, TokenizeMode mode)
        : cfg_(cfg), mode_(mode) {
        if (!(cfg.lambda > 0)) throw Error("keyword extraction: lambda must be > 0");
        stats_ = compute_stats(docs, mode);
        if (stats_.doc_count.size() < 2) throw Error("keyword extraction needs at least 2 domains");
        phrases_ = discover_phrases(stats_, cfg.pmi_threshold, cfg.max_phrase_len);

        std::unordered_set<std::string> keys;
        for (const auto& p : phrases_) keys.insert(join(p.tokens, "\x1f"));
        if (keys.empty()) return;
        for (const auto& d : docs) {
            const auto tokens = tokenize(d.text, mode);
            std::set<std::string> present;
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                std::string key = tokens[i];
                for (std::size_t len = 2; len <= cfg.max_phrase_len && i + len <= tokens.size(); ++len) {
                    key += '\x1f';
                    key += tokens[i + len - 1];
                    if (keys.contains(key)) present.insert(key);
                }
            }
            auto& df = phrase_df_[d.domain];
            for (const auto& k : present) ++df[k];
        }
    }

    const CorpusStats& stats() const noexcept { return stats_; }
    const std::vector<PhraseCandidate>& phrases() const noexcept { return phrases_; }

    std::vector<std::string> domains() const {
        std::vector<std::string> out;
        for (const auto& [d, n] : stats_.doc_count) out.push_back(d);
        return out;
    }

    /// Scored entries for one domain, best first. Candidates are the unigrams
    /// and phrases that occur in at least one document of the domain.
    std::vector<KeywordEntry> domain_entries(const std::string& domain) const {
        if (stats_.documents(domain) == 0) throw Error("domain \"" + domain + "\" has no documents");
        std::vector<KeywordEntry> out;
        auto consider = [&](const std::string& surface, const DomainFrequency& f) {
            if (f.domain_df <= 0) return;
            const double score = diff_idf(f, cfg_.lambda);
            if (score >= cfg_.diff_idf_threshold) out.push_back({surface, domain, score});
        };
        for (const auto& [token, df] : stats_.doc_freq.at(domain)) consider(token, domain_frequency(stats_, token, domain));
        for (const auto& p : phrases_) {
            const auto key = join(p.tokens, "\x1f");
            DomainFrequency f;
            for (const auto& [dom, n] : stats_.doc_count) {
                double df = 0;
                if (auto it = phrase_df_.find(dom); it != phrase_df_.end())
                    if (auto jt = it->second.find(key); jt != it->second.end()) df = static_cast<double>(jt->second);
                if (dom == domain) {
                    f.domain_docs = static_cast<double>(n);
                    f.domain_df = df;
                } else {
                    f.anti_docs += static_cast<double>(n);
                    f.anti_df += df;
                }
            }
            consider(join(p.tokens, mode_), f);
        }
        std::sort(out.begin(), out.end(), [](const KeywordEntry& a, const KeywordEntry& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.surface < b.surface;
        });
        return out;
    }

    KeywordDictionary build() const {
        std::vector<std::vector<KeywordEntry>> parts;
        for (const auto& d : domains()) parts.push_back(domain_entries(d));
        return merge_dictionaries(parts, mode_);
    }

private:
    KeywordConfig cfg_;
    TokenizeMode mode_;
    CorpusStats stats_;
    std::vector<PhraseCandidate> phrases_;
    std::map<std::string, std::unordered_map<std::string, Count>> phrase_df_;
};

inline std::vector<KeywordEntry> build_domain_dictionary(const std::vector<Document>& docs,
                                                         const std::string& domain, const KeywordConfig& cfg,
                                                         TokenizeMode mode) {
    return DomainKeywordExtractor(docs, cfg, mode).domain_entries(domain);
}

inline KeywordDictionary build_keyword_dictionary(const std::vector<Document>& docs, const KeywordConfig& cfg,
                                                  TokenizeMode mode) {
    return DomainKeywordExtractor(docs, cfg, mode).build();
}

/// Fixed-point text with at least six decimals that parses back to the same double.
inline std::string format_score(double v) {
    char buf[512];
    for (int prec = 6; prec <= 340; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*f", prec, v);
        double back = 0;
        std::from_chars(buf, buf + std::char_traits<char>::length(buf), back);
        if (back == v) return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void save_dictionary(const KeywordDictionary& dict, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    for (const auto& [surface, e] : dict.entries()) {
        if (surface.find_first_of("\t\n") != std::string::npos || e.domain.find_first_of("\t\n") != std::string::npos)
            throw Error("keyword dictionary: tab or newline in \"" + surface + "\"");
        out << surface << '\t' << e.domain << '\t' << format_score(e.score) << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

inline KeywordDictionary load_dictionary(const std::string& path, TokenizeMode mode) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    KeywordDictionary dict(mode);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
            throw ParseError(lineno, "expected 3 tab-separated columns");
        KeywordEntry e{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), 0.0};
        const char* first = line.data() + t2 + 1;
        const char* last = line.data() + line.size();
        auto [ptr, ec] = std::from_chars(first, last, e.score);
        if (ec != std::errc{} || ptr != last) throw ParseError(lineno, "bad score");
        try {
            dict.insert(std::move(e));
        } catch (const Error& err) {
            throw ParseError(lineno, err.what());
        }
    }
    return dict;
}

} // namespace kwmatch
