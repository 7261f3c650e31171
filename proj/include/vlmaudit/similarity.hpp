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

// Similarity between an oracle response and a reference text: Rouge-2 F1 over
// normalized tokens, or cosine similarity of embedding vectors produced by a
// registered provider.

#ifndef VLMAUDIT_SIMILARITY_HPP_
#define VLMAUDIT_SIMILARITY_HPP_

#include <algorithm>
#include <cctype>
#include <cmath>
#include <concepts>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vlmaudit/errors.hpp"
#include "vlmaudit/random.hpp"

namespace vlmaudit {

// Lowercases ASCII letters, turns ASCII punctuation into whitespace, and
// splits on whitespace. Bytes >= 0x80 are kept verbatim.
inline std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

namespace internal {

inline std::map<std::pair<std::string, std::string>, int> BigramCounts(
    const std::vector<std::string>& tokens) {
  std::map<std::pair<std::string, std::string>, int> counts;
  for (size_t i = 1; i < tokens.size(); ++i) ++counts[{tokens[i - 1], tokens[i]}];
  return counts;
}

}  // namespace internal

// Rouge-2 F1 with clipped bigram counts. When either side has no bigram the
// score is 1 for identical token sequences and 0 otherwise.
inline double Rouge2(std::string_view candidate, std::string_view reference) {
  const auto cand = Tokenize(candidate);
  const auto ref = Tokenize(reference);
  const size_t nc = cand.size() < 2 ? 0 : cand.size() - 1;
  const size_t nr = ref.size() < 2 ? 0 : ref.size() - 1;
  if (nc == 0 || nr == 0) return (nc == 0 && nr == 0 && cand == ref) ? 1.0 : 0.0;

  const auto cc = internal::BigramCounts(cand);
  const auto rc = internal::BigramCounts(ref);
  size_t overlap = 0;
  for (const auto& [bigram, count] : cc) {
    auto it = rc.find(bigram);
    if (it != rc.end()) overlap += static_cast<size_t>(std::min(count, it->second));
  }
  // 2PR/(P+R) with P = o/nc, R = o/nr reduces to 2o/(nc+nr).
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(nc + nr);
}

struct EmbeddingVector {
  std::vector<double> values;

  size_t dimension() const { return values.size(); }
  double Norm() const {
    double ss = 0.0;
    for (double v : values) ss += v * v;
    return std::sqrt(ss);
  }
  bool operator==(const EmbeddingVector&) const = default;
};

inline double CosineSimilarity(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dimension() != v.dimension()) {
    throw InvalidInputError("embedding dimension mismatch: " +
                            std::to_string(u.dimension()) + " vs " +
                            std::to_string(v.dimension()));
  }
  const double nu = u.Norm();
  const double nv = v.Norm();
  if (nu == 0.0 || nv == 0.0) throw InvalidInputError("zero-norm embedding");
  double dot = 0.0;
  for (size_t i = 0; i < u.dimension(); ++i) dot += u.values[i] * v.values[i];
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual size_t dimension() const = 0;
  virtual std::vector<EmbeddingVector> EmbedBatch(std::span<const std::string> texts) = 0;
  // Whether scorers should keep computed vectors around.
  virtual bool Memoizable() const { return true; }

  EmbeddingVector Embed(const std::string& text) {
    auto out = EmbedBatch(std::span<const std::string>(&text, 1));
    return std::move(out.at(0));
  }
};

// Offline provider: token counts hashed into a fixed number of buckets, then
// L2-normalized. Text without tokens maps to the unit vector e_0.
class HashedBagOfWordsProvider final : public EmbeddingProvider {
 public:
  static constexpr size_t kDefaultDimension = 256;
  static constexpr const char* kId = "hashed-bow";

  explicit HashedBagOfWordsProvider(size_t dimension = kDefaultDimension)
      : dimension_(dimension) {
    if (dimension_ == 0) throw InvalidInputError("embedding dimension must be positive");
  }

  std::string id() const override { return kId; }
  size_t dimension() const override { return dimension_; }
  bool Memoizable() const override { return false; }

  size_t BucketOf(std::string_view token) const {
    return static_cast<size_t>(Fnv1a64(token) % dimension_);
  }

  EmbeddingVector EmbedOne(std::string_view text) const {
    EmbeddingVector v{std::vector<double>(dimension_, 0.0)};
    const auto tokens = Tokenize(text);
    if (tokens.empty()) {
      v.values[0] = 1.0;
      return v;
    }
    for (const auto& t : tokens) v.values[BucketOf(t)] += 1.0;
    const double norm = v.Norm();
    for (double& x : v.values) x /= norm;
    return v;
  }

  std::vector<EmbeddingVector> EmbedBatch(std::span<const std::string> texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(EmbedOne(t));
    return out;
  }

 private:
  size_t dimension_;
};

// Maps provider ids to providers. Ships with the offline hashed provider.
class EmbeddingRegistry {
 public:
  EmbeddingRegistry() { Register(std::make_shared<HashedBagOfWordsProvider>()); }

  void Register(std::shared_ptr<EmbeddingProvider> provider) {
    std::lock_guard lock(mu_);
    providers_[provider->id()] = std::move(provider);
  }

  std::shared_ptr<EmbeddingProvider> Find(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = providers_.find(id);
    if (it == providers_.end()) {
      throw ConfigError("embedding provider not registered: " + id);
    }
    return it->second;
  }

  EmbeddingVector Embed(const std::string& text, const std::string& provider_id) const {
    return Find(provider_id)->Embed(text);
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<EmbeddingProvider>> providers_;
};

struct SimilarityMetric {
  enum class Kind { kRouge2, kEmbeddingCosine };

  Kind kind = Kind::kRouge2;
  std::string provider_id;  // only for kEmbeddingCosine

  static SimilarityMetric Rouge2() { return {Kind::kRouge2, ""}; }
  static SimilarityMetric EmbeddingCosine(
      std::string provider = HashedBagOfWordsProvider::kId) {
    return {Kind::kEmbeddingCosine, std::move(provider)};
  }

  // "rouge2", "embedding", or "embedding:<provider id>".
  static SimilarityMetric Parse(std::string_view text) {
    if (text == "rouge2" || text == "rouge-2") return Rouge2();
    if (text == "embedding" || text == "cosine") return EmbeddingCosine();
    constexpr std::string_view kPrefix = "embedding:";
    if (text.starts_with(kPrefix) && text.size() > kPrefix.size()) {
      return EmbeddingCosine(std::string(text.substr(kPrefix.size())));
    }
    throw ConfigError("unknown similarity metric: " + std::string(text));
  }

  std::string ToString() const {
    if (kind == Kind::kRouge2) return "rouge2";
    return "embedding:" + provider_id;
  }

  bool operator==(const SimilarityMetric&) const = default;
};

// Binds a metric to the provider it needs. Embeddings from memoizable
// providers are kept per text across calls.
class SimilarityScorer {
 public:
  explicit SimilarityScorer(SimilarityMetric metric,
                            std::shared_ptr<const EmbeddingRegistry> registry = nullptr)
      : metric_(std::move(metric)) {
    if (metric_.kind == SimilarityMetric::Kind::kEmbeddingCosine) {
      if (!registry) registry = std::make_shared<const EmbeddingRegistry>();
      provider_ = registry->Find(metric_.provider_id);
      if (provider_->Memoizable()) memo_ = std::make_shared<Memo>();
    }
  }

  const SimilarityMetric& metric() const { return metric_; }

  double Score(const std::string& a, const std::string& b) const {
    if (metric_.kind == SimilarityMetric::Kind::kRouge2) return Rouge2(a, b);
    return CosineSimilarity(EmbeddingOf(a), EmbeddingOf(b));
  }

 private:
  struct Memo {
    std::mutex mu;
    std::unordered_map<std::string, EmbeddingVector> vectors;
  };

  static constexpr size_t kMaxMemoEntries = 1 << 16;

  EmbeddingVector EmbeddingOf(const std::string& text) const {
    if (!memo_) return provider_->Embed(text);
    {
      std::lock_guard lock(memo_->mu);
      auto it = memo_->vectors.find(text);
      if (it != memo_->vectors.end()) return it->second;
    }
    EmbeddingVector v = provider_->Embed(text);
    std::lock_guard lock(memo_->mu);
    if (memo_->vectors.size() >= kMaxMemoEntries) memo_->vectors.clear();
    return memo_->vectors.emplace(text, std::move(v)).first->second;
  }

  SimilarityMetric metric_;
  std::shared_ptr<EmbeddingProvider> provider_;
  std::shared_ptr<Memo> memo_;
};

// Mean of score(r_i, r_j) over all k(k-1)/2 unordered pairs, k >= 2.
template <typename ScoreFn>
  requires std::invocable<ScoreFn&, const std::string&, const std::string&>
double PairwiseMeanSimilarity(std::span<const std::string> responses, ScoreFn&& score) {
  const size_t k = responses.size();
  if (k < 2) throw InvalidInputError("pairwise similarity needs at least 2 responses");
  double sum = 0.0;
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = i + 1; j < k; ++j) sum += score(responses[i], responses[j]);
  }
  return sum / static_cast<double>(k * (k - 1) / 2);
}

inline double PairwiseMeanSimilarity(std::span<const std::string> responses,
                                     const SimilarityScorer& scorer) {
  return PairwiseMeanSimilarity(responses, [&](const std::string& a, const std::string& b) {
    return scorer.Score(a, b);
  });
}

}  // namespace vlmaudit

#endif  // VLMAUDIT_SIMILARITY_HPP_
