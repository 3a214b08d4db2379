#include <kwmatch/corpus.hpp>

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

namespace kwmatch {
namespace {

using testing::TempDir;

TEST(Tokenize, WhitespaceSplits) {
    EXPECT_EQ(tokenize("ab cd", TokenizeMode::Whitespace), (TokenSequence{"ab", "cd"}));
    EXPECT_EQ(tokenize("  ab\t\ncd  ", TokenizeMode::Whitespace), (TokenSequence{"ab", "cd"}));
}

TEST(Tokenize, CharModeOnePerCodePoint) {
    EXPECT_EQ(tokenize("ab", TokenizeMode::Char), (TokenSequence{"a", "b"}));
    EXPECT_EQ(tokenize("中国 GDP", TokenizeMode::Char), (TokenSequence{"中", "国", "G", "D", "P"}));
}

TEST(Tokenize, EmptyInput) {
    EXPECT_TRUE(tokenize("", TokenizeMode::Char).empty());
    EXPECT_TRUE(tokenize("", TokenizeMode::Whitespace).empty());
    EXPECT_TRUE(tokenize(" \t　", TokenizeMode::Whitespace).empty());
}

TEST(Tokenize, IdeographicSpaceSeparates) {
    EXPECT_EQ(tokenize("中国　经济", TokenizeMode::Whitespace), (TokenSequence{"中国", "经济"}));
}

TEST(Tokenize, CharModePreservesNonWhitespaceLength) {
    std::mt19937 rng(7);
    const std::vector<std::string> alphabet{"a", "b", " ", "中", "\t", "。", "Z"};
    for (int trial = 0; trial < 200; ++trial) {
        std::string text;
        std::size_t visible = 0;
        std::string visible_text;
        for (int i = 0, n = static_cast<int>(rng() % 20); i < n; ++i) {
            const auto& piece = alphabet[rng() % alphabet.size()];
            text += piece;
            if (piece != " " && piece != "\t") {
                ++visible;
                visible_text += piece;
            }
        }
        const auto toks = tokenize(text, TokenizeMode::Char);
        EXPECT_EQ(toks.size(), visible);
        EXPECT_EQ(join(toks, ""), visible_text);
        EXPECT_EQ(join(tokenize(text, TokenizeMode::Whitespace), ""), visible_text);
    }
}

TEST(LoadCorpus, WellFormed) {
    TempDir dir;
    const auto path = dir.write("c.jsonl",
                                "{\"id\":\"1\",\"domain\":\"economy\",\"text\":\"gdp grows\"}\n"
                                "{\"id\":\"2\",\"domain\":\"sports\",\"text\":\"team wins\"}\n"
                                "{\"id\":\"3\",\"domain\":\"economy\",\"text\":\"prices\"}\n");
    const auto docs = load_corpus(path);
    ASSERT_EQ(docs.size(), 3u);
    EXPECT_EQ(docs[1].domain, "sports");
    EXPECT_EQ(docs[2].text, "prices");
}

TEST(LoadCorpus, DuplicateIdNamesLine) {
    TempDir dir;
    const auto path = dir.write("c.jsonl",
                                "{\"id\":\"1\",\"domain\":\"e\",\"text\":\"x\"}\n"
                                "{\"id\":\"1\",\"domain\":\"e\",\"text\":\"y\"}\n");
    try {
        load_corpus(path);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_NE(std::string(e.what()).find("duplicate id"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(LoadCorpus, MissingDomainIsParseError) {
    TempDir dir;
    const auto path = dir.write("c.jsonl", "{\"id\":\"1\",\"text\":\"x\"}\n");
    EXPECT_THROW(load_corpus(path), ParseError);
}

TEST(LoadCorpus, MalformedJsonNamesLine) {
    TempDir dir;
    const auto path = dir.write("c.jsonl", "{\"id\":\"1\",\"domain\":\"e\",\"text\":\"x\"}\n{oops\n");
    try {
        load_corpus(path);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(LoadCorpus, BlankTextRejected) {
    TempDir dir;
    EXPECT_THROW(load_corpus(dir.write("c.jsonl", "{\"id\":\"1\",\"domain\":\"e\",\"text\":\"  \"}\n")), ParseError);
}

TEST(LoadQuestions, Basic) {
    TempDir dir;
    const auto qs = load_questions(dir.write("q.jsonl", "{\"id\":\"q1\",\"text\":\"a b\"}\n\n{\"id\":\"q2\",\"text\":\"c\"}\n"));
    ASSERT_EQ(qs.size(), 2u);
    EXPECT_EQ(qs[1].id, "q2");
}

TEST(ComputeStats, HandCount) {
    const std::vector<Document> docs{{"1", "d1", "a b"}, {"2", "d1", "a a"}};
    const auto s = compute_stats(docs, TokenizeMode::Whitespace);
    EXPECT_EQ(s.unigram_count.at("a"), 3u);
    EXPECT_EQ(s.unigram_count.at("b"), 1u);
    EXPECT_EQ(s.df("d1", "a"), 2u);
    EXPECT_EQ(s.df("d1", "b"), 1u);
    EXPECT_EQ(s.documents("d1"), 2u);
    EXPECT_EQ(s.total_tokens, 4u);
    EXPECT_EQ(s.total_bigrams, 2u);
    EXPECT_EQ(s.bigram_count.at({"a", "b"}), 1u);
    EXPECT_EQ(s.bigram_count.at({"a", "a"}), 1u);
}

TEST(ComputeStats, SingleTokenDocHasNoBigrams) {
    const auto s = compute_stats({{"1", "d", "x"}}, TokenizeMode::Whitespace);
    EXPECT_EQ(s.total_bigrams, 0u);
    EXPECT_TRUE(s.bigram_count.empty());
}

TEST(ComputeStats, DocFreqSplitByDomain) {
    const auto s = compute_stats({{"1", "econ", "gdp up"}, {"2", "sport", "gdp up"}}, TokenizeMode::Whitespace);
    EXPECT_EQ(s.df("econ", "gdp"), 1u);
    EXPECT_EQ(s.df("sport", "gdp"), 1u);
    EXPECT_EQ(s.documents("econ"), 1u);
    EXPECT_EQ(s.documents("sport"), 1u);
}

TEST(ComputeStats, BigramsDoNotCrossDocuments) {
    const auto s = compute_stats({{"1", "d", "a"}, {"2", "d", "b"}}, TokenizeMode::Whitespace);
    EXPECT_FALSE(s.bigram_count.contains({"a", "b"}));
}

TEST(ComputeStats, EmptyListIsError) {
    EXPECT_THROW(compute_stats({}, TokenizeMode::Char), Error);
}

std::vector<Document> random_docs(std::mt19937& rng, int n, int offset) {
    static const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
    static const std::vector<std::string> domains{"x", "y", "z"};
    std::vector<Document> docs;
    for (int i = 0; i < n; ++i) {
        std::string text = vocab[rng() % vocab.size()];
        for (int k = 0, len = static_cast<int>(rng() % 6); k < len; ++k) text += " " + vocab[rng() % vocab.size()];
        docs.push_back({std::to_string(offset + i), domains[rng() % domains.size()], text});
    }
    return docs;
}

TEST(ComputeStats, ShardMergeIsAdditiveAndOrderIndependent) {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = random_docs(rng, 1 + static_cast<int>(rng() % 8), 0);
        const auto b = random_docs(rng, 1 + static_cast<int>(rng() % 8), 100);
        auto all = a;
        all.insert(all.end(), b.begin(), b.end());
        auto ab = compute_stats(a, TokenizeMode::Whitespace);
        ab.merge(compute_stats(b, TokenizeMode::Whitespace));
        auto ba = compute_stats(b, TokenizeMode::Whitespace);
        ba.merge(compute_stats(a, TokenizeMode::Whitespace));
        const auto whole = compute_stats(all, TokenizeMode::Whitespace);
        EXPECT_EQ(ab, whole);
        EXPECT_EQ(ba, whole);
        for (const auto& [dom, m] : whole.doc_freq)
            for (const auto& [t, df] : m) EXPECT_LE(df, whole.documents(dom));
    }
}

TEST(Dedup, WordOrderCollision) {
    const auto out = dedup_questions({{"a", "b"}, {"b", "a"}});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0], (TokenSequence{"a", "b"}));
}

TEST(Dedup, DistinctKept) {
    EXPECT_EQ(dedup_questions({{"a", "b"}, {"a", "c"}}).size(), 2u);
}

TEST(Dedup, PunctuationCollisionKeepsFirst) {
    const auto out = dedup_questions({{"a", "b!"}, {"a", "b"}});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0], (TokenSequence{"a", "b!"}));
}

TEST(Dedup, FullwidthAndCjkPunctuation) {
    const auto q1 = tokenize("中国的GDP？", TokenizeMode::Char);
    const auto q2 = tokenize("GDP的中国。", TokenizeMode::Char);
    EXPECT_EQ(dedup_questions({q1, q2}).size(), 1u);
}

TEST(Dedup, Idempotent) {
    std::mt19937 rng(3);
    const std::vector<std::string> vocab{"a", "b", "c", "a!", "?"};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<TokenSequence> qs;
        for (int i = 0, n = static_cast<int>(rng() % 10); i < n; ++i) {
            TokenSequence q;
            for (int k = 0, len = 1 + static_cast<int>(rng() % 3); k < len; ++k) q.push_back(vocab[rng() % vocab.size()]);
            qs.push_back(q);
        }
        const auto once = dedup_questions(qs);
        EXPECT_EQ(dedup_questions(once), once);
    }
}

} // namespace
} // namespace kwmatch
