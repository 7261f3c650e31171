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

// Set-level membership inference procedures:
//   - shadow-model inference: a classifier trained on temperature-sweep
//     features of shadow member/non-member sets
//   - reference inference against a known non-member or member set (z-test)
//   - target-only inference comparing low- and high-temperature scores
//   - image-only inference from self-consistency of repeated descriptions

#ifndef VLMAUDIT_ATTACKS_HPP_
#define VLMAUDIT_ATTACKS_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "vlmaudit/classifier.hpp"
#include "vlmaudit/errors.hpp"
#include "vlmaudit/oracle.hpp"
#include "vlmaudit/parallel.hpp"
#include "vlmaudit/random.hpp"
#include "vlmaudit/similarity.hpp"
#include "vlmaudit/statistics.hpp"

namespace vlmaudit {

enum class AttackKind { kShadow, kReferenceNonMember, kReferenceMember, kTargetOnly, kImageOnly };

inline std::string_view AttackName(AttackKind kind) {
  switch (kind) {
    case AttackKind::kShadow: return "shadow";
    case AttackKind::kReferenceNonMember: return "ref-nonmember";
    case AttackKind::kReferenceMember: return "ref-member";
    case AttackKind::kTargetOnly: return "target-only";
    case AttackKind::kImageOnly: return "image-only";
  }
  return "unknown";
}

inline AttackKind ParseAttackKind(std::string_view name) {
  for (auto k : {AttackKind::kShadow, AttackKind::kReferenceNonMember,
                 AttackKind::kReferenceMember, AttackKind::kTargetOnly, AttackKind::kImageOnly}) {
    if (AttackName(k) == name) return k;
  }
  throw ConfigError("unknown attack: " + std::string(name));
}

enum class SignalKind { kPValue, kProbability, kMeanSelfSimilarity };

inline std::string_view SignalName(SignalKind kind) {
  switch (kind) {
    case SignalKind::kPValue: return "p-value";
    case SignalKind::kProbability: return "probability";
    case SignalKind::kMeanSelfSimilarity: return "mean-self-similarity";
  }
  return "unknown";
}

// A set of samples judged together. Ids are unique within the set.
class SampleSet {
 public:
  explicit SampleSet(std::vector<Sample> samples, std::optional<bool> label = std::nullopt)
      : samples_(std::move(samples)), label_(label) {
    if (samples_.empty()) throw InvalidInputError("a sample set needs at least one sample");
    std::unordered_set<std::string> seen;
    for (const auto& s : samples_) {
      if (!seen.insert(s.id).second) {
        throw InvalidInputError("duplicate sample id in set: " + s.id);
      }
    }
  }

  std::span<const Sample> samples() const { return samples_; }
  size_t granularity() const { return samples_.size(); }
  const std::optional<bool>& label() const { return label_; }

 private:
  std::vector<Sample> samples_;
  std::optional<bool> label_;
};

struct Verdict {
  bool membership = false;
  double signal = 0.0;
  SignalKind signal_kind = SignalKind::kPValue;
  double threshold_used = 0.0;
  AttackKind attack = AttackKind::kReferenceNonMember;
  // z statistic behind a p-value signal (may be +/-inf in the degenerate case).
  std::optional<double> statistic;

  // Higher means more member-like. Z-test verdicts rank by the statistic
  // itself, which orders sets exactly as 1-p (or p for a member reference)
  // without saturating once p underflows.
  double MemberScore() const {
    switch (attack) {
      case AttackKind::kReferenceNonMember:
      case AttackKind::kTargetOnly:
        return statistic.value_or(-signal);
      case AttackKind::kReferenceMember:
        return statistic ? -*statistic : signal;
      default:
        return signal;
    }
  }
};

// One query per sample at `temperature` (repeat 0), scored against answers.
inline ScoreArray ScoreSet(OracleClient& client, const SampleSet& set, const std::string& oracle_id,
                           double temperature, const SimilarityScorer& scorer) {
  std::vector<double> scores;
  scores.reserve(set.granularity());
  for (const auto& s : set.samples()) {
    if (!s.answer) throw InvalidInputError("sample " + s.id + " has no answer to compare against");
    scores.push_back(scorer.Score(client.Query(oracle_id, s, temperature).text, *s.answer));
  }
  return ScoreArray(std::move(scores));
}

// [mu_T1, sigma_T1, ...] in the given temperature order.
inline FeatureVector BuildFeatureVector(OracleClient& client, const SampleSet& set,
                                        const std::string& oracle_id,
                                        std::span<const double> temperatures,
                                        const SimilarityScorer& scorer) {
  if (temperatures.empty()) throw InvalidInputError("temperature grid is empty");
  for (double t : temperatures) {
    if (!(t > 0.0)) throw InvalidInputError("temperatures must be positive");
  }
  std::vector<double> values;
  values.reserve(2 * temperatures.size());
  for (double t : temperatures) {
    const auto stats = ComputeMeanStd(ScoreSet(client, set, oracle_id, t, scorer));
    values.push_back(stats.mean);
    values.push_back(stats.std);
  }
  return FeatureVector(std::move(values),
                       std::vector<double>(temperatures.begin(), temperatures.end()));
}

// {0.1, 0.2, ..., 1.6}
inline std::vector<double> DefaultTemperatureGrid() {
  std::vector<double> grid;
  for (int i = 1; i <= 16; ++i) grid.push_back(i / 10.0);
  return grid;
}

inline constexpr double kDefaultTau = 0.05;
inline constexpr const char* kDefaultDescriptionPrompt = "Describe this image in detail.";

// Non-member reference: member when the target significantly outscores the
// reference, p = 1 - Phi((mean_t - mean_r) / e) < tau.
inline Verdict ReferenceNonMemberFromScores(const ScoreArray& reference, const ScoreArray& target,
                                            double tau = kDefaultTau) {
  const auto test = ZTest(target, reference);
  return {test.p.value() < tau, test.p.value(), SignalKind::kPValue, tau,
          AttackKind::kReferenceNonMember, test.z};
}

// Member reference: the inverse decision. The test asks whether the member
// reference outscores the target, so weaker (non-member) targets land in the
// low-p tail and are rejected when p <= tau.
inline Verdict ReferenceMemberFromScores(const ScoreArray& reference, const ScoreArray& target,
                                         double tau = kDefaultTau) {
  const auto test = ZTest(reference, target);
  return {test.p.value() > tau, test.p.value(), SignalKind::kPValue, tau,
          AttackKind::kReferenceMember, test.z};
}

inline Verdict ReferenceInferenceNonMember(OracleClient& client, const SampleSet& reference,
                                           const SampleSet& target, const std::string& oracle_id,
                                           double temperature, const SimilarityScorer& scorer,
                                           double tau = kDefaultTau) {
  const auto ref = ScoreSet(client, reference, oracle_id, temperature, scorer);
  const auto tgt = ScoreSet(client, target, oracle_id, temperature, scorer);
  return ReferenceNonMemberFromScores(ref, tgt, tau);
}

inline Verdict ReferenceInferenceMember(OracleClient& client, const SampleSet& reference,
                                        const SampleSet& target, const std::string& oracle_id,
                                        double temperature, const SimilarityScorer& scorer,
                                        double tau = kDefaultTau) {
  const auto ref = ScoreSet(client, reference, oracle_id, temperature, scorer);
  const auto tgt = ScoreSet(client, target, oracle_id, temperature, scorer);
  return ReferenceMemberFromScores(ref, tgt, tau);
}

// p = 1 - Phi((mean_low - mean_high) / sqrt((var_low + var_high) / g)).
inline Verdict TargetOnlyFromScores(const ScoreArray& low, const ScoreArray& high,
                                    double tau = kDefaultTau) {
  const auto test = ZTest(low, high);
  return {test.p.value() < tau, test.p.value(), SignalKind::kPValue, tau,
          AttackKind::kTargetOnly, test.z};
}

inline Verdict TargetOnlyInference(OracleClient& client, const SampleSet& target,
                                   const std::string& oracle_id, double t_low, double t_high,
                                   const SimilarityScorer& scorer, double tau = kDefaultTau) {
  if (!(t_low > 0.0) || !(t_low < t_high)) {
    throw InvalidInputError("target-only inference needs 0 < T_low < T_high");
  }
  const auto low = ScoreSet(client, target, oracle_id, t_low, scorer);
  const auto high = ScoreSet(client, target, oracle_id, t_high, scorer);
  return TargetOnlyFromScores(low, high, tau);
}

// Mean pairwise similarity of k descriptions of one image.
inline double SelfSimilarity(OracleClient& client, const Sample& image,
                             const std::string& oracle_id, double temperature, int k,
                             const SimilarityScorer& scorer, const std::string& prompt) {
  if (k < 2) throw InvalidInputError("image-only inference needs k >= 2");
  std::vector<std::string> responses;
  responses.reserve(static_cast<size_t>(k));
  for (int r = 0; r < k; ++r) {
    responses.push_back(client.Query(oracle_id, image, prompt, temperature, r).text);
  }
  return PairwiseMeanSimilarity(responses, scorer);
}

// Member when the set's mean self-similarity exceeds tau. Answers are unused.
inline Verdict ImageOnlyInference(OracleClient& client, const SampleSet& images,
                                  const std::string& oracle_id, double temperature, int k,
                                  const SimilarityScorer& scorer, double tau,
                                  const std::string& prompt = kDefaultDescriptionPrompt) {
  if (k < 2) throw InvalidInputError("image-only inference needs k >= 2");
  double sum = 0.0;
  for (const auto& s : images.samples()) {
    sum += SelfSimilarity(client, s, oracle_id, temperature, k, scorer, prompt);
  }
  const double mean = sum / static_cast<double>(images.granularity());
  return {mean > tau, mean, SignalKind::kMeanSelfSimilarity, tau, AttackKind::kImageOnly,
          std::nullopt};
}

struct ShadowConfig {
  size_t granularity = 20;
  size_t n_sets = 500;  // per class
  std::vector<double> temperatures = DefaultTemperatureGrid();
  uint64_t seed = 0;
  Hyperparameters hyperparameters;
  double threshold = 0.5;
  size_t threads = 1;
};

// Draws `count` sets of `g` distinct samples each; a sample may recur across
// sets.
inline std::vector<SampleSet> DrawSets(std::span<const Sample> pool, size_t g, size_t count,
                                       std::optional<bool> label, Rng& rng) {
  if (g == 0) throw InvalidInputError("set granularity must be positive");
  if (g > pool.size()) {
    throw InvalidInputError("cannot draw sets of " + std::to_string(g) + " from a pool of " +
                            std::to_string(pool.size()));
  }
  std::vector<SampleSet> sets;
  sets.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    std::vector<Sample> picked;
    picked.reserve(g);
    for (size_t idx : rng.SampleWithoutReplacement(pool.size(), g)) picked.push_back(pool[idx]);
    sets.emplace_back(std::move(picked), label);
  }
  return sets;
}

// A classifier fitted on a shadow oracle's member and non-member sets.
class ShadowAttack {
 public:
  static ShadowAttack Fit(OracleClient& client, std::span<const Sample> shadow_dataset,
                          const std::string& shadow_oracle_id, const ShadowConfig& config,
                          const SimilarityScorer& scorer) {
    if (shadow_dataset.empty()) throw InvalidInputError("shadow dataset is empty");
    const auto declared = client.Find(shadow_oracle_id)->DeclaredMemberIds();
    if (!declared) {
      throw ConfigError("shadow oracle " + shadow_oracle_id + " does not declare its member ids");
    }
    const std::set<std::string> member_ids(declared->begin(), declared->end());
    std::vector<Sample> members, nonmembers;
    for (const auto& s : shadow_dataset) {
      if (!s.answer) throw InvalidInputError("shadow sample " + s.id + " has no answer");
      (member_ids.count(s.id) ? members : nonmembers).push_back(s);
    }

    Rng rng(CombineSeeds(config.seed, 0x5ad0));
    auto sets = DrawSets(members, config.granularity, config.n_sets, true, rng);
    auto neg = DrawSets(nonmembers, config.granularity, config.n_sets, false, rng);
    sets.insert(sets.end(), std::make_move_iterator(neg.begin()),
                std::make_move_iterator(neg.end()));

    std::vector<std::vector<double>> features(sets.size());
    std::vector<int> labels(sets.size());
    ParallelFor(sets.size(), config.threads, [&](size_t i) {
      const auto f = BuildFeatureVector(client, sets[i], shadow_oracle_id, config.temperatures,
                                        scorer);
      features[i].assign(f.values().begin(), f.values().end());
      labels[i] = *sets[i].label() ? 1 : 0;
    });
    return ShadowAttack(config, Train(std::span<const std::vector<double>>(features), labels,
                                      config.hyperparameters, config.seed));
  }

  Verdict Infer(OracleClient& client, const SampleSet& target, const std::string& target_oracle_id,
                const SimilarityScorer& scorer) const {
    const auto f = BuildFeatureVector(client, target, target_oracle_id, config_.temperatures, scorer);
    const double p = classifier_.Predict(f);
    return {p > config_.threshold, p, SignalKind::kProbability, config_.threshold,
            AttackKind::kShadow, std::nullopt};
  }

  const ClassifierModel& classifier() const { return classifier_; }
  const ShadowConfig& config() const { return config_; }

 private:
  ShadowAttack(ShadowConfig config, ClassifierModel classifier)
      : config_(std::move(config)), classifier_(std::move(classifier)) {}

  ShadowConfig config_;
  ClassifierModel classifier_;
};

inline Verdict ShadowModelInference(OracleClient& client, std::span<const Sample> shadow_dataset,
                                    const std::string& shadow_oracle_id,
                                    const std::string& target_oracle_id, const SampleSet& target,
                                    const ShadowConfig& config, const SimilarityScorer& scorer) {
  return ShadowAttack::Fit(client, shadow_dataset, shadow_oracle_id, config, scorer)
      .Infer(client, target, target_oracle_id, scorer);
}

}  // namespace vlmaudit

#endif  // VLMAUDIT_ATTACKS_HPP_
