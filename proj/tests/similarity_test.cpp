// Copyright 2026 The vlmaudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "vlmaudit/similarity.hpp"

namespace vlmaudit {
namespace {

// Bigram overlaps enumerated by hand. F1 = 2 * clipped overlap / (nc + nr).
struct RougeCase {
  const char* candidate;
  const char* reference;
  double expected;
};
const RougeCase kRougeTable[] = {
    {"the cat sat on the mat", "the cat sat on the mat", 1.0},
    {"alpha beta", "gamma delta", 0.0},
    {"the cat lay on the mat", "the cat sat on the mat", 0.6},  // 3 of 5 and 5
    {"a b c", "a b d", 0.5},                                    // {ab} of 2 and 2
    {"a b c", "x y z", 0.0},
    {"a a a", "a a", 2.0 / 3.0},           // aa x2 vs aa x1, clipped to 1
    {"a b a b", "a b", 0.5},               // ab x2, ba; ab -> 2*1/(3+1)
    {"a b c d", "d c b a", 0.0},           // reversed order shares nothing
    {"a b c d e", "a b c", 2.0 / 3.0},     // 2 of 4 and 2
    {"x y x y x", "x y x", 2.0 / 3.0},     // xy x2, yx x2 vs xy, yx -> 2*2/(4+2)
    {"one two three four five six", "two three four", 4.0 / 7.0},
    {"a b", "b a", 0.0},
    {"A, B!", "a b", 1.0},                           // case and punctuation folded
    {"hello-world foo", "hello world foo", 1.0},     // hyphen splits tokens
    {"The  Quick\tbrown\nfox", "the quick brown fox", 1.0},
    {"", "", 1.0},          // no bigrams, equal (empty) token sequences
    {"...", "", 1.0},       // punctuation only tokenizes to nothing
    {"word", "word", 1.0},  // no bigrams, equal single tokens
    {"word", "other", 0.0}, // no bigrams, different tokens
    {"word", "word word", 0.0},  // one side without bigrams
    {"", "a b", 0.0},
};

TEST(Rouge2, HandEnumeratedTable) {
  ASSERT_GE(std::size(kRougeTable), 20u);
  for (const auto& c : kRougeTable) {
    EXPECT_NEAR(Rouge2(c.candidate, c.reference), c.expected, 1e-15)
        << '"' << c.candidate << "\" vs \"" << c.reference << '"';
  }
}

TEST(Rouge2, SymmetricAndBounded) {
  for (const auto& c : kRougeTable) {
    const double ab = Rouge2(c.candidate, c.reference);
    EXPECT_EQ(ab, Rouge2(c.reference, c.candidate));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Tokenize, LowercasesAndSplitsOnPunctuation) {
  EXPECT_EQ(Tokenize("Hello, World! it's"),
            (std::vector<std::string>{"hello", "world", "it", "s"}));
  EXPECT_TRUE(Tokenize("  \t ").empty());
}

TEST(Cosine, HandArithmetic) {
  const EmbeddingVector u{{1, 2, 2}}, v{{2, 1, 2}};
  EXPECT_NEAR(CosineSimilarity(u, v), 8.0 / 9.0, 1e-12);
  EXPECT_NEAR(CosineSimilarity(EmbeddingVector{{1, 0}}, EmbeddingVector{{0, 1}}), 0.0, 1e-12);
  EXPECT_NEAR(CosineSimilarity(u, u), 1.0, 1e-12);
  const EmbeddingVector w{{-3, 0.5, 7, 1e-3}};
  EXPECT_NEAR(CosineSimilarity(w, w), 1.0, 1e-12);
}

TEST(Cosine, RejectsMismatchAndZeroNorm) {
  EXPECT_THROW(CosineSimilarity(EmbeddingVector{{1, 0}}, EmbeddingVector{{1, 0, 0}}),
               InvalidInputError);
  EXPECT_THROW(CosineSimilarity(EmbeddingVector{{0, 0}}, EmbeddingVector{{1, 0}}),
               InvalidInputError);
}

TEST(Cosine, StaysInRange) {
  // Rounding in dot/(|u||v|) can overshoot 1 without the clamp.
  for (int i = 1; i < 200; ++i) {
    const EmbeddingVector u{{i / 3.0, i / 7.0, i / 11.0}};
    const double c = CosineSimilarity(u, u);
    EXPECT_LE(c, 1.0);
    EXPECT_GE(c, -1.0);
  }
  const double d = CosineSimilarity(EmbeddingVector{{0.1, 0.7, 0.2}},
                                    EmbeddingVector{{-0.1, -0.7, -0.2}});
  EXPECT_GE(d, -1.0);
}

TEST(HashedBagOfWords, DeterministicAndNormalized) {
  HashedBagOfWordsProvider p;
  EXPECT_EQ(p.dimension(), 256u);
  const auto a = p.Embed("a quick brown fox");
  const auto b = p.Embed("a quick brown fox");
  EXPECT_EQ(a, b);
  EXPECT_NEAR(a.Norm(), 1.0, 1e-12);
  EXPECT_NEAR(CosineSimilarity(a, b), 1.0, 1e-12);
}

TEST(HashedBagOfWords, EmptyTextIsFirstBasisVector) {
  HashedBagOfWordsProvider p;
  const auto e = p.Embed("");
  ASSERT_EQ(e.dimension(), 256u);
  EXPECT_EQ(e.values[0], 1.0);
  for (size_t i = 1; i < e.dimension(); ++i) EXPECT_EQ(e.values[i], 0.0);
}

TEST(HashedBagOfWords, DisjointVocabulariesAreOrthogonal) {
  HashedBagOfWordsProvider p;
  const std::vector<std::string> left = {"red", "green", "blue"};
  const std::vector<std::string> right = {"dog", "cat", "bird"};
  // The claim only holds when the buckets do not collide; check that first.
  for (const auto& l : left) {
    for (const auto& r : right) ASSERT_NE(p.BucketOf(l), p.BucketOf(r)) << l << "/" << r;
  }
  EXPECT_NEAR(CosineSimilarity(p.Embed("red green blue"), p.Embed("dog cat bird")), 0.0, 1e-12);
}

TEST(EmbeddingRegistry, UnknownProviderIsConfigError) {
  EmbeddingRegistry reg;
  EXPECT_NO_THROW(reg.Find("hashed-bow"));
  EXPECT_THROW(reg.Find("missing"), ConfigError);
}

TEST(SimilarityMetric, ParseAndPrint) {
  EXPECT_EQ(SimilarityMetric::Parse("rouge2"), SimilarityMetric::Rouge2());
  EXPECT_EQ(SimilarityMetric::Parse("embedding").provider_id, "hashed-bow");
  EXPECT_EQ(SimilarityMetric::Parse("embedding:remote").provider_id, "remote");
  EXPECT_EQ(SimilarityMetric::Parse("embedding:remote").ToString(), "embedding:remote");
  EXPECT_THROW(SimilarityMetric::Parse("bleu"), ConfigError);
}

TEST(PairwiseMean, Examples) {
  const std::vector<std::string> same = {"x y z", "x y z", "x y z"};
  EXPECT_DOUBLE_EQ(PairwiseMeanSimilarity(same, SimilarityScorer(SimilarityMetric::Rouge2())), 1.0);
  const std::vector<std::string> mixed = {"a b c", "a b d", "x y z"};
  EXPECT_NEAR(PairwiseMeanSimilarity(mixed, SimilarityScorer(SimilarityMetric::Rouge2())),
              1.0 / 6.0, 1e-15);
}

TEST(PairwiseMean, EvaluatesEveryPairOnce) {
  std::vector<std::string> responses;
  for (int i = 0; i < 10; ++i) responses.push_back("r" + std::to_string(i));
  int calls = 0;
  PairwiseMeanSimilarity(responses, [&](const std::string&, const std::string&) {
    ++calls;
    return 0.0;
  });
  EXPECT_EQ(calls, 45);
}

TEST(PairwiseMean, NeedsTwoResponses) {
  const std::vector<std::string> one = {"only"};
  EXPECT_THROW(PairwiseMeanSimilarity(one, SimilarityScorer(SimilarityMetric::Rouge2())),
               InvalidInputError);
}

// Counts embedding calls to observe memoization.
class CountingProvider final : public EmbeddingProvider {
 public:
  std::string id() const override { return "counting"; }
  size_t dimension() const override { return 2; }
  std::vector<EmbeddingVector> EmbedBatch(std::span<const std::string> texts) override {
    calls += static_cast<int>(texts.size());
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) out.push_back({{1.0, static_cast<double>(t.size())}});
    return out;
  }
  std::atomic<int> calls{0};
};

TEST(SimilarityScorer, EmbeddingMetricUsesProviderAndMemoizes) {
  auto reg = std::make_shared<EmbeddingRegistry>();
  auto counting = std::make_shared<CountingProvider>();
  reg->Register(counting);
  SimilarityScorer scorer(SimilarityMetric::EmbeddingCosine("counting"), reg);
  const double s = scorer.Score("ab", "abcd");
  const double expected = (1.0 + 8.0) / (std::sqrt(5.0) * std::sqrt(17.0));
  EXPECT_NEAR(s, expected, 1e-12);
  scorer.Score("ab", "abcd");
  EXPECT_EQ(counting->calls.load(), 2);
}

TEST(SimilarityScorer, MissingProviderIsConfigError) {
  EXPECT_THROW(SimilarityScorer(SimilarityMetric::EmbeddingCosine("nope")), ConfigError);
}

}  // namespace
}  // namespace vlmaudit
