#pragma once

// Synthetic data shared by the unit tests and the acceptance runner.

#include <kwmatch/fastpair.hpp>
#include <kwmatch/kwattn.hpp>
#include <kwmatch/retrieval.hpp>
#include <kwmatch/sampling.hpp>

#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace kwmatch::synthetic {

/// One sentence pair with keyword spans given by construction.
struct KeywordPair {
    TokenSequence a, b;
    std::vector<KeywordSpan> a_spans, b_spans;
    Label label = Label::Negative;
};

/// Keyword discrimination: each sentence holds one keyword among fillers, all
/// drawn from one shared vocabulary. Positives share the keyword; negatives
/// share a filler instead, so both classes have exactly one common token and
/// only the keyword marking tells them apart. Token order is shuffled.
inline std::vector<KeywordPair> keyword_discrimination(std::size_t n, std::size_t vocab, std::size_t fillers,
                                                       std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> ids(vocab);
    for (std::size_t i = 0; i < vocab; ++i) ids[i] = i;
    auto name = [](std::size_t i) { return "t" + std::to_string(i); };
    std::vector<KeywordPair> out;
    for (std::size_t e = 0; e < n; ++e) {
        std::shuffle(ids.begin(), ids.end(), rng);
        const bool positive = e % 2 == 0;
        // distinct draws: ids[0..] are unique tokens
        std::size_t next = 0;
        TokenSequence a, b;
        std::size_t ka, kb;
        if (positive) {
            ka = kb = ids[next++];
        } else {
            ka = ids[next++];
            kb = ids[next++];
            const auto shared = ids[next++];
            a.push_back(name(shared));
            b.push_back(name(shared));
        }
        while (a.size() < fillers) a.push_back(name(ids[next++]));
        while (b.size() < fillers) b.push_back(name(ids[next++]));
        a.push_back(name(ka));
        b.push_back(name(kb));
        std::shuffle(a.begin(), a.end(), rng);
        std::shuffle(b.begin(), b.end(), rng);
        KeywordPair p;
        p.label = positive ? Label::Positive : Label::Negative;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] == name(ka)) p.a_spans.push_back({i, i + 1, a[i]});
        for (std::size_t i = 0; i < b.size(); ++i)
            if (b[i] == name(kb)) p.b_spans.push_back({i, i + 1, b[i]});
        p.a = std::move(a);
        p.b = std::move(b);
        out.push_back(std::move(p));
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

inline kwattn::Vocabulary vocabulary_for(const std::vector<KeywordPair>& pairs) {
    std::set<std::string> tokens;
    for (const auto& p : pairs) {
        tokens.insert(p.a.begin(), p.a.end());
        tokens.insert(p.b.begin(), p.b.end());
    }
    return kwattn::Vocabulary::from_tokens(tokens);
}

inline std::vector<kwattn::LabeledPair> pack_all(const std::vector<KeywordPair>& pairs, const kwattn::Vocabulary& v,
                                                 std::size_t max_len) {
    std::vector<kwattn::LabeledPair> out;
    for (const auto& p : pairs) out.push_back({kwattn::pack_pair(p.a, p.a_spans, p.b, p.b_spans, v, max_len), p.label});
    return out;
}

inline std::vector<FastpairExample> fastpair_examples(const std::vector<KeywordPair>& pairs) {
    std::vector<FastpairExample> out;
    for (const auto& p : pairs) {
        FastpairExample e{p.a, p.b, {}, {}, p.label};
        for (const auto& s : p.a_spans) e.q_keys.push_back(s.surface);
        for (const auto& s : p.b_spans) e.Q_keys.push_back(s.surface);
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Template question world: a question is a template filled with an entity
// and a subject; entities and subjects are the keywords.

inline const std::vector<std::string>& question_templates() {
    static const std::vector<std::string> t{
        "what factors will affect {E} 's {S}", "what is the {S} of {E}", "how has {E} 's {S} changed recently",
        "talk about {E} {S} influencing factors", "{E} {S} trend", "why is the {S} in {E} so high",
        "how do i find {E} {S} data", "is {E} 's {S} growing"};
    return t;
}

inline std::string entity_name(std::size_t e) { return "ent" + std::to_string(e); }
inline std::string subject_name(std::size_t s) { return "subj" + std::to_string(s); }

inline TokenSequence fill_template(std::size_t t, std::size_t e, std::size_t s) {
    std::string out = question_templates().at(t);
    out.replace(out.find("{E}"), 3, entity_name(e));
    out.replace(out.find("{S}"), 3, subject_name(s));
    return tokenize(out, TokenizeMode::Whitespace);
}

inline KeywordDictionary world_dictionary(std::size_t entities, std::size_t subjects) {
    KeywordDictionary dict(TokenizeMode::Whitespace);
    for (std::size_t e = 0; e < entities; ++e) dict.insert({entity_name(e), "entity", 1.0});
    for (std::size_t s = 0; s < subjects; ++s) dict.insert({subject_name(s), "subject", 1.0});
    return dict;
}

inline EntityLexicon world_lexicon(std::size_t entities) {
    EntityLexicon lex;
    for (std::size_t e = 0; e < entities; ++e) lex.add("entity", {entity_name(e)});
    return lex;
}

struct RetrievalWorld {
    std::vector<IndexedQuestion> database;
    std::vector<TokenSequence> queries;
    std::vector<std::string> gold;
    KeywordDictionary dict{TokenizeMode::Whitespace};
};

/// Each topic (entity, subject) contributes its reference question (template
/// b) and a distractor sharing the query's template and subject but not its
/// entity. The query uses template a.
inline RetrievalWorld retrieval_world(std::size_t topics, std::size_t entities, std::size_t subjects,
                                      std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto nt = question_templates().size();
    RetrievalWorld w;
    w.dict = world_dictionary(entities, subjects);
    std::set<std::pair<std::size_t, std::size_t>> used;
    while (w.queries.size() < topics) {
        const std::size_t e = rng() % entities, s = rng() % subjects;
        if (!used.insert({e, s}).second) continue;
        const std::size_t ta = rng() % nt;
        std::size_t tb, e2;
        do tb = rng() % nt; while (tb == ta);
        do e2 = rng() % entities; while (e2 == e);
        const auto id = std::to_string(w.queries.size());
        w.database.push_back({"ref" + id, fill_template(tb, e, s)});
        w.database.push_back({"distract" + id, fill_template(ta, e2, s)});
        w.queries.push_back(fill_template(ta, e, s));
        w.gold.push_back("ref" + id);
    }
    return w;
}

/// Paraphrase pairs (same topic, different templates) as positives.
inline std::vector<QueryPair> paraphrase_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& topics,
                                               std::size_t per_topic, std::mt19937_64& rng) {
    const auto nt = question_templates().size();
    std::vector<QueryPair> out;
    for (auto [e, s] : topics)
        for (std::size_t k = 0; k < per_topic; ++k) {
            const std::size_t ta = rng() % nt;
            std::size_t tb;
            do tb = rng() % nt; while (tb == ta);
            out.push_back({fill_template(ta, e, s), fill_template(tb, e, s), Label::Positive, Provenance::Human});
        }
    return out;
}

/// All template fillings of the given topics.
inline std::vector<TokenSequence> topic_questions(const std::vector<std::pair<std::size_t, std::size_t>>& topics) {
    std::vector<TokenSequence> out;
    for (auto [e, s] : topics)
        for (std::size_t t = 0; t < question_templates().size(); ++t) out.push_back(fill_template(t, e, s));
    return out;
}

} // namespace kwmatch::synthetic
