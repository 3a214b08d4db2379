#include <kwmatch/fastpair.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

namespace kwmatch {
namespace {

using testing::TempDir;

TEST(FeatureHasher, FrozenValues) {
    EXPECT_EQ(FeatureHasher::hash64("", 0), 0x7bd3144f29c0cc9eULL);
    EXPECT_EQ(FeatureHasher::hash64("q:a", 0), 0xa518d40a9e6f5715ULL);
    EXPECT_EQ(FeatureHasher::hash64("x:gdp\x1f" "china", 42), 0x64f64f58b36a99b8ULL);
    EXPECT_EQ(FeatureHasher(1024, 7).bucket("kQ:中国\x1fGDP"), 626u);
}

TEST(FeatureHasher, InRangeAndSeeded) {
    const FeatureHasher h(64, 1), g(64, 2);
    int differ = 0;
    for (int i = 0; i < 200; ++i) {
        const auto s = "q:t" + std::to_string(i);
        EXPECT_LT(h.bucket(s), 64u);
        differ += h.bucket(s) != g.bucket(s);
    }
    EXPECT_GT(differ, 100);
}

TEST(FeatureHasher, RejectsNonPowerOfTwo) {
    EXPECT_THROW(FeatureHasher(0, 0), Error);
    EXPECT_THROW(FeatureHasher(1000, 0), Error);
    EXPECT_NO_THROW(FeatureHasher(1, 0));
}

TEST(Featurize, CountFormula) {
    const FeatureHasher h(1 << 10, 0);
    EXPECT_EQ(featurize({"a", "b"}, {"c", "d", "e"}, {"a"}, {"d"}, h).size(), 16u);
    EXPECT_EQ(featurize({"a", "b"}, {"c", "d", "e"}, {}, {}, h).size(), 11u);
    EXPECT_EQ(featurize({"a", "a"}, {"a"}, {}, {}, h).size(), 5u);
}

TEST(Featurize, RolePrefixesAndOrder) {
    const auto f = pair_features({"a"}, {"b"}, {"ka"}, {"kb"});
    EXPECT_EQ(f, (std::vector<std::string>{"q:a", "Q:b", "x:a\x1f" "b", "kq:a\x1f" "kb", "kQ:b\x1f" "ka"}));
}

TEST(Featurize, Deterministic) {
    const FeatureHasher h(1 << 20, 9);
    const TokenSequence q{"what", "is", "gdp"}, Q{"gdp", "of", "china"};
    EXPECT_EQ(featurize(q, Q, {"gdp"}, {"gdp", "china"}, h), featurize(q, Q, {"gdp"}, {"gdp", "china"}, h));
}

FastpairModel<double> hand_model() {
    FastpairModel<double> m(4, 2, 0);
    m.embeddings = {0.1, -0.2, 0.3, 0.4, -0.5, 0.25, 0.0, 0.0};
    m.head_weights = {0.7, -0.3, 0.2, 0.9};
    m.head_bias = {0.05, -0.1};
    return m;
}

TEST(FastpairForward, HandOracle) {
    const auto m = hand_model();
    const std::vector<std::uint64_t> ids{0, 1, 1, 2};
    EXPECT_NEAR(forward(m, std::span<const std::uint64_t>(ids)), 0.4871903036662711, 1e-12);
    EXPECT_NEAR(fastpair_loss(m, std::span<const std::uint64_t>(ids), Label::Positive), 0.7191004649473266, 1e-12);
    EXPECT_NEAR(fastpair_loss(m, std::span<const std::uint64_t>(ids), Label::Negative), 0.6678504649473265, 1e-12);
}

TEST(FastpairForward, ZeroModelIsHalf) {
    const FastpairModel<double> m(8, 3, 0);
    const std::vector<std::uint64_t> ids{1, 5};
    EXPECT_EQ(forward(m, std::span<const std::uint64_t>(ids)), 0.5);
}

TEST(FastpairForward, Errors) {
    const auto m = hand_model();
    const std::vector<std::uint64_t> none, bad{9};
    EXPECT_THROW(forward(m, std::span<const std::uint64_t>(none)), Error);
    EXPECT_THROW(forward(m, std::span<const std::uint64_t>(bad)), Error);
}

TEST(FastpairForward, ProbabilityInUnitInterval) {
    std::mt19937_64 rng(3);
    auto m = init_fastpair<double>(16, 4, 3);
    std::normal_distribution<double> n(0, 3);
    for (auto& w : m.head_weights) w = n(rng);
    for (int i = 0; i < 100; ++i) {
        std::vector<std::uint64_t> ids{rng() % 16, rng() % 16};
        const double p = forward(m, std::span<const std::uint64_t>(ids));
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
    }
}

TEST(FastpairGradient, MatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        auto m = init_fastpair<double>(32, 5, trial);
        std::normal_distribution<double> n(0, 0.5);
        for (auto& w : m.head_weights) w = n(rng);
        for (auto& b : m.head_bias) b = n(rng);
        for (auto& e : m.embeddings) e = n(rng);
        const FeatureHasher h(32, trial);
        const auto ids = featurize({"a", "b", "c"}, {"b", "d"}, {"b"}, {"d"}, h);
        const auto report = fastpair_grad_check(m, std::span<const std::uint64_t>(ids),
                                                trial % 2 ? Label::Positive : Label::Negative, 1e-5, 200, rng);
        ASSERT_EQ(report.groups.size(), 3u);
        EXPECT_LT(report.max_rel_error(), 1e-4);
        EXPECT_GE(report.groups[2].coordinates, 2u);
    }
}

// q and Q each carry one keyword among filler tokens; positives share it.
std::vector<FastpairExample> planted_keyword_pairs(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<FastpairExample> out;
    auto filler = [&] { return "w" + std::to_string(rng() % 40); };
    for (std::size_t i = 0; i < n; ++i) {
        const std::string k1 = "k" + std::to_string(rng() % 10);
        std::string k2 = k1;
        const bool positive = i % 2 == 0;
        while (!positive && k2 == k1) k2 = "k" + std::to_string(rng() % 10);
        FastpairExample e;
        e.q = {filler(), k1, filler()};
        e.Q = {filler(), filler(), k2};
        e.q_keys = {k1};
        e.Q_keys = {k2};
        e.label = positive ? Label::Positive : Label::Negative;
        out.push_back(e);
    }
    return out;
}

FastpairTrainConfig small_config() {
    FastpairTrainConfig cfg;
    cfg.epochs = 10;
    cfg.learning_rate = 0.5;
    cfg.dim = 16;
    cfg.num_buckets = 1 << 14;
    cfg.rng_seed = 5;
    return cfg;
}

TEST(FastpairTrain, SeparablePlantedKeywordTask) {
    const auto data = planted_keyword_pairs(2000, 1);
    const auto result = train_fastpair<double>(data, small_config());
    EXPECT_GE(evaluate(result.model, data).overall, 0.99);
    ASSERT_EQ(result.epoch_loss.size(), 10u);
    for (std::size_t i = 1; i < result.epoch_loss.size(); ++i)
        EXPECT_LE(result.epoch_loss[i], result.epoch_loss[i - 1]);
}

TEST(FastpairTrain, ZeroLearningRateLeavesInitialParameters) {
    const auto data = planted_keyword_pairs(50, 2);
    auto cfg = small_config();
    cfg.learning_rate = 0.0;
    cfg.epochs = 2;
    EXPECT_EQ(train_fastpair<double>(data, cfg).model, init_fastpair<double>(cfg.num_buckets, cfg.dim, cfg.rng_seed));
}

TEST(FastpairTrain, SameSeedSameWeights) {
    const auto data = planted_keyword_pairs(200, 3);
    auto cfg = small_config();
    cfg.epochs = 2;
    EXPECT_EQ(train_fastpair<float>(data, cfg).model, train_fastpair<float>(data, cfg).model);
    auto other = cfg;
    other.rng_seed = 6;
    EXPECT_NE(train_fastpair<float>(data, cfg).model, train_fastpair<float>(data, other).model);
}

TEST(FastpairTrain, Errors) {
    auto data = planted_keyword_pairs(10, 4);
    for (auto& e : data) e.label = Label::Positive;
    EXPECT_THROW(train_fastpair<double>(data, small_config()), Error);
    auto cfg = small_config();
    cfg.epochs = 0;
    EXPECT_THROW(train_fastpair<double>(planted_keyword_pairs(10, 4), cfg), Error);
}

TEST(FastpairTrain, InitRange) {
    const auto m = init_fastpair<double>(64, 8, 1);
    for (double v : m.embeddings) EXPECT_LE(std::abs(v), 1.0 / 8);
    for (double v : m.head_weights) EXPECT_EQ(v, 0.0);
}

TEST(Accuracy, PerfectAndConstantPredictors) {
    const std::vector<Label> labels{Label::Positive, Label::Negative, Label::Positive, Label::Negative};
    const auto perfect = accuracy_from_probabilities(std::vector<double>{0.9, 0.1, 0.6, 0.4}, labels);
    EXPECT_EQ(perfect.overall, 1.0);
    EXPECT_EQ(perfect.positive, 1.0);
    EXPECT_EQ(perfect.negative, 1.0);
    const auto constant = accuracy_from_probabilities(std::vector<double>(4, 0.5), labels);
    EXPECT_EQ(constant.overall, 0.5);
    EXPECT_EQ(constant.positive, 1.0);
    EXPECT_EQ(constant.negative, 0.0);
}

TEST(Accuracy, MatchesCountingOracle) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p;
        std::vector<Label> y;
        for (int i = 0, n = 1 + static_cast<int>(rng() % 30); i < n; ++i) {
            p.push_back(u(rng));
            y.push_back(rng() % 2 ? Label::Positive : Label::Negative);
        }
        int tp = 0, tn = 0, np = 0, nn = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (y[i] == Label::Positive) ++np, tp += p[i] >= 0.5;
            else ++nn, tn += p[i] < 0.5;
        }
        const auto acc = accuracy_from_probabilities(p, y);
        EXPECT_DOUBLE_EQ(acc.overall, double(tp + tn) / p.size());
        if (np) EXPECT_DOUBLE_EQ(acc.positive, double(tp) / np);
        else EXPECT_TRUE(std::isnan(acc.positive));
        if (nn) EXPECT_DOUBLE_EQ(acc.negative, double(tn) / nn);
        else EXPECT_TRUE(std::isnan(acc.negative));
    }
}

TEST(Accuracy, EmptyIsError) {
    EXPECT_THROW(accuracy_from_probabilities({}, {}), Error);
    EXPECT_THROW(evaluate(hand_model(), {}), Error);
}

TEST(MakeExamples, UsesDictionary) {
    KeywordDictionary dict(TokenizeMode::Whitespace);
    dict.insert({"gdp", "econ", 1.0});
    const std::vector<QueryPair> pairs{{{"china", "gdp"}, {"gdp", "now"}, Label::Positive, Provenance::Human}};
    const auto ex = make_examples(pairs, &dict);
    ASSERT_EQ(ex.size(), 1u);
    EXPECT_EQ(ex[0].q_keys, std::vector<std::string>{"gdp"});
    EXPECT_EQ(ex[0].Q_keys, std::vector<std::string>{"gdp"});
    EXPECT_TRUE(make_examples(pairs, nullptr)[0].q_keys.empty());
}

TEST(FastpairFile, RoundTripExact) {
    TempDir dir;
    auto cfg = small_config();
    cfg.epochs = 1;
    const auto m = train_fastpair<float>(planted_keyword_pairs(100, 8), cfg).model;
    save_fastpair(m, dir.file("m.bin"));
    EXPECT_EQ(load_fastpair<float>(dir.file("m.bin")), m);
    EXPECT_THROW(load_fastpair<double>(dir.file("m.bin")), Error);
}

TEST(FastpairFile, RejectsGarbageAndTruncation) {
    TempDir dir;
    EXPECT_THROW(load_fastpair<double>(dir.write("x.bin", "definitely not a model")), Error);
    save_fastpair(hand_model(), dir.file("m.bin"));
    auto bytes = testing::slurp(dir.file("m.bin"));
    bytes.resize(bytes.size() - 4);
    EXPECT_THROW(load_fastpair<double>(dir.write("t.bin", bytes)), Error);
    EXPECT_THROW(load_fastpair<double>(dir.file("missing.bin")), Error);
}

} // namespace
} // namespace kwmatch
