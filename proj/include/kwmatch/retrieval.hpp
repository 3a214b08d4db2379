#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "error.hpp"
#include "keywords.hpp"

namespace kwmatch {

/// Appends the tokens of every extracted keyword span once more, in span order.
inline TokenSequence augment_with_keywords(const TokenSequence& seq, const KeywordDictionary& dict) {
    TokenSequence out = seq;
    for (const auto& span : extract_keywords(dict, seq))
        out.insert(out.end(), seq.begin() + static_cast<std::ptrdiff_t>(span.start),
                   seq.begin() + static_cast<std::ptrdiff_t>(span.end));
    return out;
}

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    bool operator==(const Bm25Params&) const = default;
};

/// idf with the +1 floor, never negative.
inline double bm25_idf(double doc_total, double df) {
    return std::log((doc_total - df + 0.5) / (df + 0.5) + 1.0);
}

inline double bm25_term(const Bm25Params& p, double idf, double tf, double dl, double avgdl) {
    return idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * dl / avgdl));
}

struct Posting {
    std::uint32_t doc = 0;
    Count tf = 0;

    bool operator==(const Posting&) const = default;
};

struct ScoredHit {
    std::string doc_id;
    double score = 0.0;
};

class InvertedIndex;
using IndexedQuestion = std::pair<std::string, TokenSequence>;

InvertedIndex build_index(const std::vector<IndexedQuestion>& questions, const KeywordDictionary* dict,
                          Bm25Params params = {});

/// Single-field BM25 index over the question database. Immutable once built.
class InvertedIndex {
public:
    std::size_t doc_total() const noexcept { return doc_ids_.size(); }
    double avg_doc_len() const noexcept { return avg_doc_len_; }
    bool augmented() const noexcept { return augmented_; }
    const Bm25Params& params() const noexcept { return params_; }

    const std::string& doc_id(std::size_t doc) const { return doc_ids_.at(doc); }
    /// Original (unaugmented) tokens of an indexed question.
    const TokenSequence& doc_tokens(std::size_t doc) const { return doc_tokens_.at(doc); }
    Count doc_len(std::size_t doc) const { return doc_len_.at(doc); }

    std::size_t doc_index(const std::string& id) const {
        auto it = lookup_.find(id);
        if (it == lookup_.end()) throw Error("unknown document \"" + id + "\"");
        return it->second;
    }
    bool contains(const std::string& id) const { return lookup_.contains(id); }

    const std::vector<Posting>* postings(const std::string& token) const {
        auto it = postings_.find(token);
        return it == postings_.end() ? nullptr : &it->second;
    }
    Count df(const std::string& token) const {
        auto p = postings(token);
        return p ? p->size() : 0;
    }
    const std::map<std::string, std::vector<Posting>>& all_postings() const noexcept { return postings_; }

    double idf(const std::string& token) const {
        return bm25_idf(static_cast<double>(doc_total()), static_cast<double>(df(token)));
    }

    Count tf(const std::string& token, std::size_t doc) const {
        auto p = postings(token);
        if (!p) return 0;
        auto it = std::lower_bound(p->begin(), p->end(), doc,
                                   [](const Posting& a, std::size_t d) { return a.doc < d; });
        return it != p->end() && it->doc == doc ? it->tf : 0;
    }

    bool operator==(const InvertedIndex& o) const {
        return doc_ids_ == o.doc_ids_ && doc_tokens_ == o.doc_tokens_ && doc_len_ == o.doc_len_ &&
               postings_ == o.postings_ && avg_doc_len_ == o.avg_doc_len_ && augmented_ == o.augmented_ &&
               params_ == o.params_;
    }

    void save(const std::string& path) const;
    static InvertedIndex load(const std::string& path);

    static constexpr int kFormatVersion = 1;

private:
    friend InvertedIndex build_index(const std::vector<IndexedQuestion>&, const KeywordDictionary*, Bm25Params);

    void add(const std::string& id, const TokenSequence& original, const TokenSequence& counted) {
        const auto doc = static_cast<std::uint32_t>(doc_ids_.size());
        if (!lookup_.emplace(id, doc).second) throw Error("duplicate question id \"" + id + "\"");
        doc_ids_.push_back(id);
        doc_tokens_.push_back(original);
        doc_len_.push_back(counted.size());
        std::map<std::string_view, Count> tf;
        for (const auto& t : counted) ++tf[t];
        for (const auto& [t, n] : tf) postings_[std::string(t)].push_back({doc, n});
    }

    void finish() {
        double total = 0;
        for (auto n : doc_len_) total += static_cast<double>(n);
        avg_doc_len_ = doc_len_.empty() ? 0.0 : total / static_cast<double>(doc_len_.size());
    }

    std::vector<std::string> doc_ids_;
    std::vector<TokenSequence> doc_tokens_;
    std::vector<Count> doc_len_;
    std::map<std::string, std::vector<Posting>> postings_;
    std::unordered_map<std::string, std::uint32_t> lookup_;
    double avg_doc_len_ = 0.0;
    bool augmented_ = false;
    Bm25Params params_;
};

/// When `dict` is non-null each question is keyword-augmented before
/// counting, which doubles the term frequency of keyword tokens.
inline InvertedIndex build_index(const std::vector<IndexedQuestion>& questions, const KeywordDictionary* dict,
                                 Bm25Params params) {
    if (questions.empty()) throw Error("build_index: empty question set");
    InvertedIndex index;
    index.params_ = params;
    index.augmented_ = dict != nullptr && !dict->empty();
    for (const auto& [id, tokens] : questions)
        index.add(id, tokens, index.augmented_ ? augment_with_keywords(tokens, *dict) : tokens);
    index.finish();
    return index;
}

inline std::set<std::string> unique_terms(const TokenSequence& query) {
    return {query.begin(), query.end()};
}

inline double bm25_score(const InvertedIndex& index, const TokenSequence& query, std::size_t doc) {
    const auto dl = static_cast<double>(index.doc_len(doc));
    double score = 0.0;
    for (const auto& t : unique_terms(query)) {
        const auto tf = index.tf(t, doc);
        if (tf == 0) continue;
        score += bm25_term(index.params(), index.idf(t), static_cast<double>(tf), dl, index.avg_doc_len());
    }
    return score;
}

inline double bm25_score(const InvertedIndex& index, const TokenSequence& query, const std::string& doc_id) {
    return bm25_score(index, query, index.doc_index(doc_id));
}

/// Scores every indexed question and returns the best `k`, score descending
/// with ties broken by ascending doc id.
inline std::vector<ScoredHit> search(const InvertedIndex& index, const TokenSequence& query,
                                     const KeywordDictionary* dict, std::size_t k) {
    if (k < 1) throw Error("search: k must be >= 1");
    const TokenSequence q = dict ? augment_with_keywords(query, *dict) : query;
    std::vector<double> scores(index.doc_total(), 0.0);
    for (const auto& t : unique_terms(q)) {
        const auto* plist = index.postings(t);
        if (!plist) continue;
        const double idf = index.idf(t);
        for (const auto& p : *plist)
            scores[p.doc] += bm25_term(index.params(), idf, static_cast<double>(p.tf),
                                       static_cast<double>(index.doc_len(p.doc)), index.avg_doc_len());
    }
    std::vector<std::size_t> order(index.doc_total());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return index.doc_id(a) < index.doc_id(b);
    };
    const auto top = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(), better);
    std::vector<ScoredHit> hits;
    hits.reserve(top);
    for (std::size_t i = 0; i < top; ++i) hits.push_back({index.doc_id(order[i]), scores[order[i]]});
    return hits;
}

/// BM25 of the query against itself as a virtual document under the index's
/// global statistics. The virtual document is keyword-augmented exactly when
/// indexed documents were.
inline double self_similarity(const InvertedIndex& index, const TokenSequence& query, const KeywordDictionary* dict) {
    const TokenSequence doc = dict && index.augmented() ? augment_with_keywords(query, *dict) : query;
    if (doc.empty()) return 0.0;
    std::map<std::string_view, Count> tf;
    for (const auto& t : doc) ++tf[t];
    const auto dl = static_cast<double>(doc.size());
    double score = 0.0;
    for (const auto& t : unique_terms(query)) {
        score += bm25_term(index.params(), index.idf(t), static_cast<double>(tf[t]), dl, index.avg_doc_len());
    }
    return score;
}

/// P@k for each k: the fraction of queries whose gold id is in the first k results.
inline std::vector<double> precision_at_k(const std::map<std::string, std::vector<std::string>>& rankings,
                                          const std::map<std::string, std::string>& gold,
                                          const std::vector<std::size_t>& ks) {
    if (rankings.empty()) throw Error("precision_at_k: no queries");
    std::vector<double> hits(ks.size(), 0.0);
    for (const auto& [qid, ranked] : rankings) {
        auto g = gold.find(qid);
        if (g == gold.end()) throw Error("precision_at_k: no gold reference for query \"" + qid + "\"");
        const auto pos = std::find(ranked.begin(), ranked.end(), g->second);
        const auto rank = static_cast<std::size_t>(pos - ranked.begin());
        for (std::size_t i = 0; i < ks.size(); ++i)
            if (pos != ranked.end() && rank < ks[i]) hits[i] += 1.0;
    }
    for (auto& h : hits) h /= static_cast<double>(rankings.size());
    return hits;
}

inline void InvertedIndex::save(const std::string& path) const {
    nlohmann::json j;
    j["format"] = "kwmatch-index";
    j["version"] = kFormatVersion;
    j["augmented"] = augmented_;
    j["k1"] = params_.k1;
    j["b"] = params_.b;
    auto& docs = j["docs"] = nlohmann::json::array();
    for (std::size_t i = 0; i < doc_ids_.size(); ++i)
        docs.push_back({{"id", doc_ids_[i]}, {"tokens", doc_tokens_[i]}, {"len", doc_len_[i]}});
    auto& post = j["postings"] = nlohmann::json::object();
    for (const auto& [t, plist] : postings_) {
        auto& arr = post[t] = nlohmann::json::array();
        for (const auto& p : plist) arr.push_back({p.doc, p.tf});
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump() << '\n';
    if (!out) throw Error("write failed: " + path);
}

inline InvertedIndex InvertedIndex::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    InvertedIndex index;
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("format") != "kwmatch-index") throw Error(path + ": not a kwmatch index");
        if (j.at("version").get<int>() != kFormatVersion)
            throw Error(path + ": unsupported index version " + j.at("version").dump());
        index.augmented_ = j.at("augmented").get<bool>();
        index.params_ = {j.at("k1").get<double>(), j.at("b").get<double>()};
        for (const auto& d : j.at("docs")) {
            const auto id = d.at("id").get<std::string>();
            const auto doc = static_cast<std::uint32_t>(index.doc_ids_.size());
            if (!index.lookup_.emplace(id, doc).second) throw Error(path + ": duplicate id " + id);
            index.doc_ids_.push_back(id);
            index.doc_tokens_.push_back(d.at("tokens").get<TokenSequence>());
            index.doc_len_.push_back(d.at("len").get<Count>());
        }
        for (const auto& [t, arr] : j.at("postings").items()) {
            auto& plist = index.postings_[t];
            for (const auto& p : arr) {
                Posting post{p.at(0).get<std::uint32_t>(), p.at(1).get<Count>()};
                if (post.doc >= index.doc_ids_.size()) throw Error(path + ": posting references unknown doc");
                plist.push_back(post);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(path + ": malformed index: " + e.what());
    }
    if (index.doc_ids_.empty()) throw Error(path + ": index has no documents");
    index.finish();
    return index;
}

} // namespace kwmatch
