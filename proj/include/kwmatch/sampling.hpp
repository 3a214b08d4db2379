#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "error.hpp"
#include "keywords.hpp"
#include "retrieval.hpp"

namespace kwmatch {

enum class Label : std::uint8_t { Negative = 0, Positive = 1 };

enum class Provenance { Retrieved, RuleMined, EntityReplaced, Human, Random };

inline const char* to_string(Provenance p) noexcept {
    switch (p) {
    case Provenance::Retrieved: return "retrieved";
    case Provenance::RuleMined: return "rule_mined";
    case Provenance::EntityReplaced: return "entity_replaced";
    case Provenance::Human: return "human";
    case Provenance::Random: return "random";
    }
    return "?";
}

inline std::optional<Provenance> parse_provenance(std::string_view s) {
    for (auto p : {Provenance::Retrieved, Provenance::RuleMined, Provenance::EntityReplaced, Provenance::Human,
                   Provenance::Random})
        if (s == to_string(p)) return p;
    return std::nullopt;
}

struct QueryPair {
    TokenSequence q;
    TokenSequence Q;
    Label label = Label::Negative;
    Provenance provenance = Provenance::Retrieved;

    bool operator==(const QueryPair&) const = default;
};

struct SamplerConfig {
    double alpha = 0.6;
    double beta = 0.2;
    double replacement_ratio = 0.0;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(alpha > 0 && alpha < 1)) throw Error("sampler: alpha must be in (0,1)");
        if (!(beta > 0)) throw Error("sampler: beta must be > 0");
        if (!(replacement_ratio >= 0 && replacement_ratio <= 1))
            throw Error("sampler: replacement_ratio must be in [0,1]");
    }
};

/// Keyword overlap ratio (|A ∪ B| - |A ∩ B|) / |A ∩ B|. Disjoint non-empty
/// sets give +inf; two empty sets give 0.
inline double keyword_divergence(const std::set<std::string>& q_keys, const std::set<std::string>& Q_keys) {
    std::size_t common = 0;
    for (const auto& k : q_keys) common += Q_keys.contains(k);
    const std::size_t uni = q_keys.size() + Q_keys.size() - common;
    if (uni == 0) return 0.0;
    if (common == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(uni - common) / static_cast<double>(common);
}

/// Negative-pair rule: normalized retrieval similarity strictly below alpha
/// and keyword divergence strictly above beta.
inline bool select_negative(double sim_qQ, double sim_qq, double divergence, const SamplerConfig& cfg) {
    if (!(sim_qq > 0)) throw Error("select_negative: self similarity must be > 0");
    return sim_qQ / sim_qq < cfg.alpha && divergence > cfg.beta;
}

/// Retrieves `top_n` candidates per query with the keyword-augmented query and
/// keeps the ones passing the negative rule.
inline std::vector<QueryPair> mine_negatives(const InvertedIndex& index, const KeywordDictionary& dict,
                                             const std::vector<TokenSequence>& queries, const SamplerConfig& cfg,
                                             std::size_t top_n) {
    if (top_n < 1) throw Error("mine_negatives: top_n must be >= 1");
    std::vector<QueryPair> out;
    for (const auto& q : queries) {
        if (q.empty()) continue;
        const double sim_qq = self_similarity(index, q, &dict);
        if (!(sim_qq > 0)) continue;
        const auto q_keys = keyword_set(dict, q);
        for (const auto& hit : search(index, q, &dict, top_n)) {
            const auto& Q = index.doc_tokens(index.doc_index(hit.doc_id));
            if (Q == q || Q.empty()) continue;
            const double div = keyword_divergence(q_keys, keyword_set(dict, Q));
            if (select_negative(hit.score, sim_qq, div, cfg))
                out.push_back({q, Q, Label::Negative, Provenance::RuleMined});
        }
    }
    return out;
}

/// Top-k retrieval candidates per query, exported for external labeling.
inline std::vector<QueryPair> export_candidates(const InvertedIndex& index, const KeywordDictionary* dict,
                                                const std::vector<TokenSequence>& queries, std::size_t k = 5) {
    std::vector<QueryPair> out;
    for (const auto& q : queries)
        for (const auto& hit : search(index, q, dict, k)) {
            const auto& Q = index.doc_tokens(index.doc_index(hit.doc_id));
            if (Q != q && !Q.empty()) out.push_back({q, Q, Label::Negative, Provenance::Retrieved});
        }
    return out;
}

/// Uniform random question pairs, excluding identical questions.
template <typename Rng>
std::vector<QueryPair> mine_random(const std::vector<TokenSequence>& questions, std::size_t n, Rng& rng) {
    std::vector<QueryPair> out;
    if (questions.size() < 2) return out;
    std::uniform_int_distribution<std::size_t> pick(0, questions.size() - 1);
    std::size_t attempts = 0;
    while (out.size() < n && attempts++ < 100 * n + 100) {
        const auto& a = questions[pick(rng)];
        const auto& b = questions[pick(rng)];
        if (a == b || a.empty() || b.empty()) continue;
        out.push_back({a, b, Label::Negative, Provenance::Random});
    }
    return out;
}

/// category -> entity surfaces, each surface as tokens.
struct EntityLexicon {
    std::map<std::string, std::vector<TokenSequence>> categories;

    void add(const std::string& category, TokenSequence entity) {
        if (entity.empty()) throw Error("entity lexicon: empty entity in category \"" + category + "\"");
        auto& list = categories[category];
        if (std::find(list.begin(), list.end(), entity) == list.end()) list.push_back(std::move(entity));
    }
};

inline EntityLexicon load_lexicon(const std::string& path, TokenizeMode mode) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    EntityLexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
            throw ParseError(lineno, "expected category<TAB>entity");
        auto entity = tokenize(std::string_view(line).substr(tab + 1), mode);
        if (tab == 0 || entity.empty()) throw ParseError(lineno, "empty category or entity");
        lex.add(line.substr(0, tab), std::move(entity));
    }
    return lex;
}

struct EntityReplacement {
    TokenSequence rewritten;
    std::size_t start = 0; ///< replaced span in the original question
    std::size_t end = 0;
    TokenSequence original_entity;
    TokenSequence replacement;
};

namespace detail {

struct EntityOccurrence {
    std::size_t start, end;
    const std::string* category;
};

/// Longest-match occurrences of replaceable entities, left to right.
inline std::vector<EntityOccurrence> find_entities(const TokenSequence& q, const EntityLexicon& lex) {
    std::vector<EntityOccurrence> found;
    std::size_t i = 0;
    while (i < q.size()) {
        std::size_t best = 0;
        const std::string* best_cat = nullptr;
        for (const auto& [cat, ents] : lex.categories) {
            if (ents.size() < 2) continue;
            for (const auto& e : ents) {
                if (e.size() <= best || i + e.size() > q.size()) continue;
                if (std::equal(e.begin(), e.end(), q.begin() + static_cast<std::ptrdiff_t>(i))) {
                    best = e.size();
                    best_cat = &cat;
                }
            }
        }
        if (best) {
            found.push_back({i, i + best, best_cat});
            i += best;
        } else {
            ++i;
        }
    }
    return found;
}

} // namespace detail

/// Replaces one uniformly chosen entity occurrence with a uniformly chosen
/// different entity of the same category. Categories with fewer than two
/// entities never act as a replacement source.
template <typename Rng>
std::optional<EntityReplacement> entity_replace(const TokenSequence& question, const EntityLexicon& lex, Rng& rng) {
    const auto occ = detail::find_entities(question, lex);
    if (occ.empty()) return std::nullopt;
    const auto& o = occ[std::uniform_int_distribution<std::size_t>(0, occ.size() - 1)(rng)];
    const auto& ents = lex.categories.at(*o.category);
    const TokenSequence current(question.begin() + static_cast<std::ptrdiff_t>(o.start),
                                question.begin() + static_cast<std::ptrdiff_t>(o.end));
    std::vector<const TokenSequence*> others;
    for (const auto& e : ents)
        if (e != current) others.push_back(&e);
    const auto& repl = *others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];

    EntityReplacement r;
    r.start = o.start;
    r.end = o.end;
    r.original_entity = current;
    r.replacement = repl;
    r.rewritten.assign(question.begin(), question.begin() + static_cast<std::ptrdiff_t>(o.start));
    r.rewritten.insert(r.rewritten.end(), repl.begin(), repl.end());
    r.rewritten.insert(r.rewritten.end(), question.begin() + static_cast<std::ptrdiff_t>(o.end), question.end());
    return r;
}

/// Each question is picked with probability `replacement_ratio`; successful
/// rewrites become (original, rewritten) negatives.
template <typename Rng>
std::vector<QueryPair> generate_entity_negatives(const std::vector<TokenSequence>& questions,
                                                 const EntityLexicon& lex, const SamplerConfig& cfg, Rng& rng) {
    if (!(cfg.replacement_ratio >= 0 && cfg.replacement_ratio <= 1))
        throw Error("replacement_ratio must be in [0,1]");
    std::vector<QueryPair> out;
    std::bernoulli_distribution coin(cfg.replacement_ratio);
    for (const auto& q : questions) {
        if (!coin(rng)) continue;
        if (auto r = entity_replace(q, lex, rng))
            out.push_back({q, std::move(r->rewritten), Label::Negative, Provenance::EntityReplaced});
    }
    return out;
}

/// Pair file: JSONL with q, Q (token runs joined for `mode`), label 0/1, provenance.
inline void write_pairs(const std::vector<QueryPair>& pairs, const std::string& path, TokenizeMode mode) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    for (const auto& p : pairs) {
        nlohmann::json j{{"q", join(p.q, mode)},
                         {"Q", join(p.Q, mode)},
                         {"label", static_cast<int>(p.label)},
                         {"provenance", to_string(p.provenance)}};
        out << j.dump() << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

inline std::vector<QueryPair> read_pairs(const std::string& path, TokenizeMode mode) {
    std::vector<QueryPair> pairs;
    detail::for_each_jsonl(path, [&](const nlohmann::json& obj, std::size_t line) {
        QueryPair p;
        p.q = tokenize(detail::required_string(obj, "q", line), mode);
        p.Q = tokenize(detail::required_string(obj, "Q", line), mode);
        if (p.q.empty() || p.Q.empty()) throw ParseError(line, "empty question");
        auto label = obj.find("label");
        if (label == obj.end() || !label->is_number_integer() || (*label != 0 && *label != 1))
            throw ParseError(line, "label must be 0 or 1");
        p.label = *label == 1 ? Label::Positive : Label::Negative;
        auto prov = parse_provenance(detail::required_string(obj, "provenance", line));
        if (!prov) throw ParseError(line, "unknown provenance");
        p.provenance = *prov;
        pairs.push_back(std::move(p));
    });
    return pairs;
}

} // namespace kwmatch
