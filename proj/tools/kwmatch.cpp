// kwmatch: keyword extraction, retrieval, pair generation, training and evaluation.
//
// Exit codes: 0 success, 1 internal failure, 2 usage, configuration or input error.

#include <kwmatch/corpus.hpp>
#include <kwmatch/fastpair.hpp>
#include <kwmatch/keywords.hpp>
#include <kwmatch/kwattn.hpp>
#include <kwmatch/retrieval.hpp>
#include <kwmatch/sampling.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace kwmatch;
using nlohmann::json;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kMetricsVersion = 1;

/// Bad input or configuration detected by the tool itself.
struct UsageError : Error {
    using Error::Error;
};

struct Global {
    std::uint64_t seed = 0;
    std::string tokenize = "char";

    TokenizeMode mode() const { return parse_tokenize_mode(tokenize); }
};

/// Independent stream per consumer, all derived from the one seed.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose)};
    return std::mt19937_64(seq);
}

bool on(const std::string& flag) { return flag == "on"; }

json accuracy_json(const ClassAccuracy& a) {
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    return {{"examples", a.count}, {"positives", a.positives}, {"negatives", a.negatives},
            {"overall", a.overall}, {"positive", num(a.positive)}, {"negative", num(a.negative)}};
}

json metrics_header(const std::string& command, const std::string& kind) {
    return {{"schema", "kwmatch-metrics"}, {"version", kMetricsVersion}, {"command", command}, {"kind", kind}};
}

void write_json(const json& j, const std::string& path) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out) throw Error("write failed: " + path);
}

std::string fixed(double v, int prec = 4) {
    if (std::isnan(v)) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

void print_accuracy_table(const std::string& kind, const ClassAccuracy& a) {
    std::printf("%-16s %8s %10s %10s %10s\n", "model", "examples", "overall", "+ve acc", "-ve acc");
    std::printf("%-16s %8zu %10s %10s %10s\n", kind.c_str(), a.count, fixed(a.overall).c_str(),
                fixed(a.positive).c_str(), fixed(a.negative).c_str());
}

std::vector<IndexedQuestion> indexed_questions(const std::string& path, TokenizeMode mode) {
    std::vector<IndexedQuestion> out;
    for (const auto& q : load_questions(path)) out.push_back({q.id, tokenize(q.text, mode)});
    return out;
}

KeywordDictionary require_dictionary(const std::string& path, TokenizeMode mode, const char* why) {
    if (path.empty()) throw UsageError(std::string("--dictionary is required ") + why);
    return load_dictionary(path, mode);
}

// ---------------------------------------------------------------------------
// extract-keywords

struct ExtractOptions {
    std::string corpus, output, report;
    KeywordConfig cfg;
    std::size_t top_k = 10;
};

void extract_keywords_cmd(const Global& g, const ExtractOptions& o) {
    const auto mode = g.mode();
    const auto docs = load_corpus(o.corpus);
    const DomainKeywordExtractor extractor(docs, o.cfg, mode);
    std::ostringstream report;
    report << "domain\trank\tkeyword\tscore\n";
    std::vector<std::vector<KeywordEntry>> parts;
    for (const auto& domain : extractor.domains()) {
        parts.push_back(extractor.domain_entries(domain));
        for (std::size_t i = 0; i < parts.back().size() && i < o.top_k; ++i)
            report << domain << '\t' << i + 1 << '\t' << parts.back()[i].surface << '\t'
                   << fixed(parts.back()[i].score, 6) << '\n';
    }
    const auto dict = merge_dictionaries(parts, mode);
    save_dictionary(dict, o.output);
    std::cout << report.str();
    if (!o.report.empty()) {
        std::ofstream out(o.report);
        if (!(out << report.str())) throw Error("cannot write " + o.report);
    }
    std::cerr << "wrote " << dict.size() << " keywords from " << docs.size() << " documents in "
              << extractor.domains().size() << " domains to " << o.output << '\n';
}

// ---------------------------------------------------------------------------
// index / search

struct IndexOptions {
    std::string questions, dictionary, output, keywords = "on";
};

void index_cmd(const Global& g, const IndexOptions& o) {
    const auto mode = g.mode();
    std::optional<KeywordDictionary> dict;
    if (on(o.keywords)) dict = require_dictionary(o.dictionary, mode, "with --keywords on");
    const auto questions = indexed_questions(o.questions, mode);
    const auto index = build_index(questions, dict ? &*dict : nullptr);
    index.save(o.output);
    std::cerr << "indexed " << index.doc_total() << " questions (keywords " << o.keywords << ") to " << o.output
              << '\n';
}

struct SearchOptions {
    std::string index, dictionary, query, keywords = "on";
    std::size_t k = 10;
};

void check_index_mode(const InvertedIndex& index, bool keywords) {
    if (index.augmented() != keywords)
        throw UsageError(std::string("index was built with keywords ") + (index.augmented() ? "on" : "off") +
                         " but search requested keywords " + (keywords ? "on" : "off"));
}

void search_cmd(const Global& g, const SearchOptions& o) {
    const auto mode = g.mode();
    const auto index = InvertedIndex::load(o.index);
    check_index_mode(index, on(o.keywords));
    std::optional<KeywordDictionary> dict;
    if (on(o.keywords)) dict = require_dictionary(o.dictionary, mode, "with --keywords on");
    const auto hits = search(index, tokenize(o.query, mode), dict ? &*dict : nullptr, o.k);
    std::size_t rank = 0;
    for (const auto& h : hits) std::printf("%zu\t%s\t%.6f\n", ++rank, h.doc_id.c_str(), h.score);
}

// ---------------------------------------------------------------------------
// gen-pairs

struct GenPairsOptions {
    std::string questions, dictionary, lexicon, positives, output, stats;
    SamplerConfig sampler;
    std::size_t top_n = 10, random = 0;
};

void gen_pairs_cmd(const Global& g, GenPairsOptions o) {
    const auto mode = g.mode();
    o.sampler.rng_seed = g.seed;
    o.sampler.validate();
    const auto dict = require_dictionary(o.dictionary, mode, "for mining");
    std::optional<EntityLexicon> lexicon;
    if (o.sampler.replacement_ratio > 0) {
        if (o.lexicon.empty()) throw UsageError("--lexicon is required when --ratio > 0");
        lexicon = load_lexicon(o.lexicon, mode);
    }
    const auto database = indexed_questions(o.questions, mode);
    std::vector<TokenSequence> questions;
    for (const auto& q : database) questions.push_back(q.second);
    const auto index = build_index(database, &dict);

    std::vector<QueryPair> pairs;
    if (!o.positives.empty()) pairs = read_pairs(o.positives, mode);
    const auto mined = mine_negatives(index, dict, questions, o.sampler, o.top_n);
    pairs.insert(pairs.end(), mined.begin(), mined.end());
    if (lexicon) {
        auto rng = stream(g.seed, 1);
        const auto ent = generate_entity_negatives(questions, *lexicon, o.sampler, rng);
        pairs.insert(pairs.end(), ent.begin(), ent.end());
    }
    if (o.random > 0) {
        auto rng = stream(g.seed, 2);
        const auto rnd = mine_random(questions, o.random, rng);
        pairs.insert(pairs.end(), rnd.begin(), rnd.end());
    }
    write_pairs(pairs, o.output, mode);

    std::map<std::string, std::size_t> by_source;
    std::size_t pos = 0;
    for (const auto& p : pairs) {
        ++by_source[to_string(p.provenance)];
        pos += p.label == Label::Positive;
    }
    std::printf("%-16s %8s\n", "provenance", "pairs");
    for (const auto& [name, n] : by_source) std::printf("%-16s %8zu\n", name.c_str(), n);
    std::printf("%-16s %8zu (pos/neg %zu/%zu)\n", "total", pairs.size(), pos, pairs.size() - pos);

    auto j = metrics_header("gen-pairs", "pairs");
    j["pairs"] = pairs.size();
    j["positive"] = pos;
    j["negative"] = pairs.size() - pos;
    j["by_provenance"] = by_source;
    write_json(j, o.stats);
}

// ---------------------------------------------------------------------------
// train / eval

struct ModelOptions {
    std::string kind, pairs, dictionary, model, vocab, metrics, trace;
    std::string keyword_features = "on";
    bool json_stdout = false;
    // fastpair
    std::size_t dim = 64, buckets = std::size_t{1} << 20;
    // kwattn
    std::size_t hidden = 32, heads = 4, layers = 2, max_len = 64, batch = 8;
    double init_std = 0.3, momentum = 0.9;
    bool stack_on_top = false;
    // shared
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    // retrieval eval
    std::string index, queries, keywords = "on";
    std::vector<std::size_t> ks{1, 3, 5, 10};
};

std::string vocab_path(const ModelOptions& o) { return o.vocab.empty() ? o.model + ".vocab" : o.vocab; }

std::vector<FastpairExample> fastpair_data(const std::vector<QueryPair>& pairs, const KeywordDictionary* dict,
                                           bool keyword_features) {
    if (keyword_features && !dict) throw UsageError("--dictionary is required with --keyword-features on");
    return make_examples(pairs, keyword_features ? dict : nullptr);
}

std::vector<kwattn::LabeledPair> kwattn_data(const std::vector<QueryPair>& pairs, const KeywordDictionary& dict,
                                             const kwattn::Vocabulary& vocab, std::size_t max_len) {
    std::vector<kwattn::LabeledPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (p.q.size() + p.Q.size() + 4 > max_len)
            throw UsageError("pair of " + std::to_string(p.q.size()) + "+" + std::to_string(p.Q.size()) +
                             " tokens does not fit max_len " + std::to_string(max_len));
        out.push_back({kwattn::pack_pair(p.q, extract_keywords(dict, p.q), p.Q, extract_keywords(dict, p.Q), vocab,
                                         max_len),
                       p.label});
    }
    return out;
}

ClassAccuracy kwattn_accuracy(const kwattn::KwAttnModel<double>& m, const std::vector<kwattn::LabeledPair>& data) {
    const auto probs = kwattn::predict(m, data);
    std::vector<Label> labels;
    for (const auto& e : data) labels.push_back(e.label);
    return accuracy_from_probabilities(probs, labels);
}

void emit_trace(const std::string& path, const std::string& csv) {
    std::cout << csv;
    if (path.empty()) return;
    std::ofstream out(path);
    if (!(out << csv)) throw Error("cannot write " + path);
}

void train_cmd(const Global& g, const ModelOptions& o) {
    const auto mode = g.mode();
    const auto pairs = read_pairs(o.pairs, mode);
    if (pairs.empty()) throw UsageError(o.pairs + ": no training pairs");
    std::optional<KeywordDictionary> dict;
    if (!o.dictionary.empty()) dict = load_dictionary(o.dictionary, mode);
    auto metrics = metrics_header("train", o.kind);
    std::ostringstream csv;
    csv << "epoch,loss,accuracy\n";

    if (o.kind == "fastpair") {
        FastpairTrainConfig cfg;
        cfg.epochs = o.epochs.value_or(cfg.epochs);
        cfg.learning_rate = o.lr.value_or(cfg.learning_rate);
        cfg.rng_seed = g.seed;
        cfg.dim = o.dim;
        cfg.num_buckets = o.buckets;
        cfg.keyword_features = on(o.keyword_features);
        const auto examples = fastpair_data(pairs, dict ? &*dict : nullptr, cfg.keyword_features);
        const auto result = train_fastpair<double>(examples, cfg);
        const auto acc = evaluate(result.model, examples, cfg.keyword_features);
        // accuracy is only measured once, after the final epoch
        for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
            csv << e + 1 << ',' << fixed(result.epoch_loss[e], 6) << ',';
            if (e + 1 == result.epoch_loss.size()) csv << fixed(acc.overall, 6);
            csv << '\n';
        }
        save_fastpair(result.model, o.model);
        metrics["trace"] = result.epoch_loss;
        metrics["train"] = accuracy_json(acc);
    } else {
        const auto d = require_dictionary(o.dictionary, mode, "for kwattn keyword spans");
        std::set<std::string> tokens;
        for (const auto& p : pairs) {
            tokens.insert(p.q.begin(), p.q.end());
            tokens.insert(p.Q.begin(), p.Q.end());
        }
        const auto vocab = kwattn::Vocabulary::from_tokens(tokens);
        const auto data = kwattn_data(pairs, d, vocab, o.max_len);
        kwattn::KwAttnConfig cfg;
        cfg.vocab_size = vocab.size();
        cfg.hidden = o.hidden;
        cfg.heads = o.heads;
        cfg.layers = o.layers;
        cfg.max_len = o.max_len;
        cfg.init_std = o.init_std;
        cfg.stack_on_top = o.stack_on_top;
        cfg.mask = o.kind == "kwattn" ? kwattn::MaskKind::Keyword : kwattn::MaskKind::AllCross;
        auto model = kwattn::KwAttnModel<double>::initialized(cfg, g.seed);
        kwattn::ToyTrainConfig tc;
        tc.epochs = o.epochs.value_or(tc.epochs);
        tc.learning_rate = o.lr.value_or(0.02);
        tc.momentum = o.momentum;
        tc.batch_size = o.batch;
        tc.seed = g.seed;
        const auto trace = kwattn::train_toy(model, data, tc);
        json jt = json::array();
        for (const auto& s : trace) {
            csv << s.epoch << ',' << fixed(s.loss, 6) << ',' << fixed(s.accuracy, 6) << '\n';
            jt.push_back({{"epoch", s.epoch}, {"loss", s.loss}, {"accuracy", s.accuracy}});
        }
        model.save(o.model);
        vocab.save(vocab_path(o));
        metrics["trace"] = jt;
        metrics["train"] = accuracy_json(kwattn_accuracy(model, data));
    }
    emit_trace(o.trace, csv.str());
    write_json(metrics, o.metrics);
}

void eval_retrieval(const Global& g, const ModelOptions& o) {
    const auto mode = g.mode();
    if (o.index.empty() || o.queries.empty()) throw UsageError("retrieval eval needs --index and --queries");
    const auto index = InvertedIndex::load(o.index);
    check_index_mode(index, on(o.keywords));
    std::optional<KeywordDictionary> dict;
    if (on(o.keywords)) dict = require_dictionary(o.dictionary, mode, "with --keywords on");
    std::map<std::string, std::vector<std::string>> rankings;
    std::map<std::string, std::string> gold;
    const auto depth = *std::max_element(o.ks.begin(), o.ks.end());
    detail::for_each_jsonl(o.queries, [&](const json& obj, std::size_t line) {
        const auto id = detail::required_string(obj, "id", line);
        if (gold.contains(id)) throw ParseError(line, "duplicate id \"" + id + "\"");
        gold[id] = detail::required_string(obj, "gold", line);
        auto& r = rankings[id];
        for (const auto& h : search(index, tokenize(detail::required_string(obj, "text", line), mode),
                                    dict ? &*dict : nullptr, depth))
            r.push_back(h.doc_id);
    });
    if (gold.empty()) throw UsageError(o.queries + ": no queries");
    const auto p = precision_at_k(rankings, gold, o.ks);
    auto j = metrics_header("eval", "retrieval");
    j["queries"] = gold.size();
    j["keywords"] = on(o.keywords);
    j["precision_at_k"] = json::object();
    for (std::size_t i = 0; i < o.ks.size(); ++i) j["precision_at_k"][std::to_string(o.ks[i])] = p[i];
    if (o.json_stdout) {
        std::cout << j.dump(2) << '\n';
    } else {
        std::printf("%-10s %8s", "retrieval", "queries");
        for (auto k : o.ks) std::printf(" %8s", ("P@" + std::to_string(k)).c_str());
        std::printf("\n%-10s %8zu", on(o.keywords) ? "keywords" : "plain", gold.size());
        for (double v : p) std::printf(" %8s", fixed(v).c_str());
        std::printf("\n");
    }
    write_json(j, o.metrics);
}

void eval_cmd(const Global& g, const ModelOptions& o) {
    if (o.kind == "retrieval") return eval_retrieval(g, o);
    const auto mode = g.mode();
    if (o.model.empty() || o.pairs.empty()) throw UsageError("model eval needs --model and --pairs");
    if (!std::filesystem::exists(o.model)) throw UsageError("model file not found: " + o.model);
    const auto pairs = read_pairs(o.pairs, mode);
    if (pairs.empty()) throw UsageError(o.pairs + ": no evaluation pairs");
    std::optional<KeywordDictionary> dict;
    if (!o.dictionary.empty()) dict = load_dictionary(o.dictionary, mode);
    ClassAccuracy acc;
    if (o.kind == "fastpair") {
        const auto model = load_fastpair<double>(o.model);
        const bool kw = on(o.keyword_features);
        acc = evaluate(model, fastpair_data(pairs, dict ? &*dict : nullptr, kw), kw);
    } else {
        const auto model = kwattn::KwAttnModel<double>::load(o.model);
        const auto expected = o.kind == "kwattn" ? kwattn::MaskKind::Keyword : kwattn::MaskKind::AllCross;
        if (model.config().mask != expected)
            throw UsageError(o.model + " was trained as " +
                             (model.config().mask == kwattn::MaskKind::Keyword ? "kwattn" : "kwattn-nomask"));
        const auto vocab = kwattn::Vocabulary::load(vocab_path(o));
        if (vocab.size() != model.config().vocab_size)
            throw UsageError("vocabulary size " + std::to_string(vocab.size()) + " does not match model (" +
                             std::to_string(model.config().vocab_size) + ")");
        const auto d = require_dictionary(o.dictionary, mode, "for kwattn keyword spans");
        acc = kwattn_accuracy(model, kwattn_data(pairs, d, vocab, model.config().max_len));
    }
    auto j = metrics_header("eval", o.kind);
    j["accuracy"] = accuracy_json(acc);
    if (o.json_stdout)
        std::cout << j.dump(2) << '\n';
    else
        print_accuracy_table(o.kind, acc);
    write_json(j, o.metrics);
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> parse_ks(const std::string& text) {
    std::vector<std::size_t> ks;
    std::stringstream in(text);
    for (std::string part; std::getline(in, part, ',');) {
        std::size_t pos = 0;
        long long v = 0;
        try {
            v = std::stoll(part, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != part.size() || v < 1) throw UsageError("--k-list: expected positive integers, got \"" + part + "\"");
        ks.push_back(static_cast<std::size_t>(v));
    }
    if (ks.empty()) throw UsageError("--k-list is empty");
    return ks;
}

const std::string kGlobalFooter =
    "Global options (accepted before or after the subcommand): --config FILE, --seed N, --tokenize char|whitespace.";

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kwmatch: keyword-aware question matching pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_config("--config", "", "Key-value config file; command-line flags override it");
    app.footer("Config file: top-level 'key = value' lines set global options; a [subcommand] section sets that "
               "subcommand's options (long option names without dashes).");
    Global g;
    app.add_option("--seed", g.seed, "Seed for every random stream")->capture_default_str();
    app.add_option("--tokenize", g.tokenize, "Tokenization mode")
        ->check(CLI::IsMember({"char", "whitespace"}))
        ->capture_default_str();
    const auto on_off = CLI::IsMember({"on", "off"});

    ExtractOptions ex;
    auto* extract = app.add_subcommand("extract-keywords", "Build the keyword dictionary from a domain corpus");
    extract->add_option("--corpus", ex.corpus, "Corpus JSONL (id, domain, text)")->required()->check(CLI::ExistingFile);
    extract->add_option("--output", ex.output, "Dictionary TSV to write")->required();
    extract->add_option("--report", ex.report, "Also write the per-domain report here");
    extract->add_option("--pmi-threshold", ex.cfg.pmi_threshold, "Minimum PMI for phrase growth")->capture_default_str();
    extract->add_option("--diff-idf-threshold", ex.cfg.diff_idf_threshold, "Minimum diff-idf score")
        ->capture_default_str();
    extract->add_option("--lambda", ex.cfg.lambda, "Smoothing constant (> 0)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    extract->add_option("--max-phrase-len", ex.cfg.max_phrase_len, "Longest phrase in tokens")
        ->check(CLI::Range(std::size_t{2}, std::size_t{16}))
        ->capture_default_str();
    extract->add_option("--top-k", ex.top_k, "Report rows per domain")->capture_default_str();
    extract->footer(kGlobalFooter);

    IndexOptions ix;
    auto* index = app.add_subcommand("index", "Build a BM25 index over a question database");
    index->add_option("--questions", ix.questions, "Questions JSONL (id, text)")->required()->check(CLI::ExistingFile);
    index->add_option("--dictionary", ix.dictionary, "Keyword dictionary TSV");
    index->add_option("--keywords", ix.keywords, "Keyword augmentation")->check(on_off)->capture_default_str();
    index->add_option("--output", ix.output, "Index file to write")->required();
    index->footer(kGlobalFooter);

    SearchOptions so;
    auto* search_sc = app.add_subcommand("search", "Rank indexed questions for a query (TSV rank, id, score)");
    search_sc->add_option("--index", so.index, "Index file")->required()->check(CLI::ExistingFile);
    search_sc->add_option("--dictionary", so.dictionary, "Keyword dictionary TSV");
    search_sc->add_option("--keywords", so.keywords, "Keyword augmentation")->check(on_off)->capture_default_str();
    search_sc->add_option("--query", so.query, "Query text")->required();
    search_sc->add_option("-k", so.k, "Number of results")->check(CLI::PositiveNumber)->capture_default_str();
    search_sc->footer(kGlobalFooter);

    GenPairsOptions gp;
    auto* gen = app.add_subcommand("gen-pairs", "Mine negative pairs and write a pair file");
    gen->add_option("--questions", gp.questions, "Questions JSONL (id, text)")->required()->check(CLI::ExistingFile);
    gen->add_option("--dictionary", gp.dictionary, "Keyword dictionary TSV")->required()->check(CLI::ExistingFile);
    gen->add_option("--lexicon", gp.lexicon, "Entity lexicon TSV (category, entity)");
    gen->add_option("--positives", gp.positives, "Labeled pair JSONL copied to the front of the output")
        ->check(CLI::ExistingFile);
    gen->add_option("--alpha", gp.sampler.alpha, "Similarity ratio bound")->capture_default_str();
    gen->add_option("--beta", gp.sampler.beta, "Keyword divergence bound")->capture_default_str();
    gen->add_option("--ratio", gp.sampler.replacement_ratio, "Entity replacement probability")->capture_default_str();
    gen->add_option("--top-n", gp.top_n, "Retrieved candidates per question")->capture_default_str();
    gen->add_option("--random", gp.random, "Random negative pairs to add")->capture_default_str();
    gen->add_option("--output", gp.output, "Pair JSONL to write")->required();
    gen->add_option("--stats", gp.stats, "Write pair statistics JSON here");
    gen->footer(kGlobalFooter);

    ModelOptions tr;
    auto* train = app.add_subcommand("train", "Train a pair classifier");
    train->add_option("--kind", tr.kind, "Model kind")
        ->required()
        ->check(CLI::IsMember({"fastpair", "kwattn", "kwattn-nomask"}));
    train->add_option("--pairs", tr.pairs, "Training pair JSONL")->required()->check(CLI::ExistingFile);
    train->add_option("--dictionary", tr.dictionary, "Keyword dictionary TSV");
    train->add_option("--model", tr.model, "Model file to write")->required();
    train->add_option("--vocab", tr.vocab, "Vocabulary file for kwattn (default MODEL.vocab)");
    train->add_option("--metrics", tr.metrics, "Write metrics JSON here");
    train->add_option("--trace", tr.trace, "Also write the CSV loss trace here");
    train->add_option("--epochs", tr.epochs, "Training epochs (fastpair 5, kwattn 10)");
    train->add_option("--lr", tr.lr, "Learning rate (fastpair 0.5, kwattn 0.02)")->check(CLI::NonNegativeNumber);
    train->add_option("--keyword-features", tr.keyword_features, "Fastpair keyword-pair features")
        ->check(on_off)
        ->capture_default_str();
    train->add_option("--dim", tr.dim, "Fastpair embedding width")->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--buckets", tr.buckets, "Fastpair hash buckets (power of two)")->capture_default_str();
    train->add_option("--hidden", tr.hidden, "kwattn hidden width")->capture_default_str();
    train->add_option("--heads", tr.heads, "kwattn attention heads")->capture_default_str();
    train->add_option("--layers", tr.layers, "kwattn encoder layers")->capture_default_str();
    train->add_option("--max-len", tr.max_len, "kwattn packed length limit")->capture_default_str();
    train->add_option("--init-std", tr.init_std, "kwattn initialization std")->capture_default_str();
    train->add_option("--momentum", tr.momentum, "kwattn SGD momentum")->capture_default_str();
    train->add_option("--batch", tr.batch, "kwattn batch size")->check(CLI::PositiveNumber)->capture_default_str();
    train->add_flag("--stack-on-top", tr.stack_on_top, "kwattn layer reads the last encoder output");
    train->footer(kGlobalFooter);

    ModelOptions ev;
    std::string k_list = "1,3,5,10";
    auto* eval = app.add_subcommand("eval", "Evaluate a pair classifier or retrieval precision");
    eval->add_option("--kind", ev.kind, "What to evaluate")
        ->required()
        ->check(CLI::IsMember({"fastpair", "kwattn", "kwattn-nomask", "retrieval"}));
    eval->add_option("--model", ev.model, "Model file");
    eval->add_option("--pairs", ev.pairs, "Evaluation pair JSONL");
    eval->add_option("--dictionary", ev.dictionary, "Keyword dictionary TSV");
    eval->add_option("--vocab", ev.vocab, "kwattn vocabulary (default MODEL.vocab)");
    eval->add_option("--keyword-features", ev.keyword_features, "Fastpair keyword-pair features")
        ->check(on_off)
        ->capture_default_str();
    eval->add_option("--index", ev.index, "Retrieval: index file");
    eval->add_option("--queries", ev.queries, "Retrieval: query JSONL (id, text, gold)");
    eval->add_option("--keywords", ev.keywords, "Retrieval: keyword augmentation")
        ->check(on_off)
        ->capture_default_str();
    eval->add_option("--k-list", k_list, "Retrieval: comma-separated cutoffs")->capture_default_str();
    eval->add_option("--metrics", ev.metrics, "Write metrics JSON here");
    eval->add_flag("--json", ev.json_stdout, "Print metrics JSON instead of the table");
    eval->footer(kGlobalFooter);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*extract) extract_keywords_cmd(g, ex);
        else if (*index) index_cmd(g, ix);
        else if (*search_sc) search_cmd(g, so);
        else if (*gen) gen_pairs_cmd(g, gp);
        else if (*train) train_cmd(g, tr);
        else if (*eval) {
            ev.ks = parse_ks(k_list);
            eval_cmd(g, ev);
        }
    } catch (const Error& e) {
        // library contract violations and malformed inputs are caller errors
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return 0;
}
