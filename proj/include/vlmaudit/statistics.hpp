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

// Summary statistics, the one-sided z-test used by the reference and
// target-only attacks, and threshold-free evaluation metrics.

#ifndef VLMAUDIT_STATISTICS_HPP_
#define VLMAUDIT_STATISTICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vlmaudit/errors.hpp"

namespace vlmaudit {

// Per-sample similarity scores for one set at one temperature. Never empty,
// never holds a non-finite value.
class ScoreArray {
 public:
  explicit ScoreArray(std::vector<double> scores) : scores_(std::move(scores)) {
    if (scores_.empty()) throw InvalidInputError("ScoreArray must not be empty");
    for (double s : scores_) {
      if (!std::isfinite(s)) {
        throw InvalidInputError("ScoreArray holds a non-finite score");
      }
    }
  }

  std::span<const double> scores() const { return scores_; }
  size_t size() const { return scores_.size(); }
  double operator[](size_t i) const { return scores_[i]; }

 private:
  std::vector<double> scores_;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (divisor n)
};

inline MeanStd ComputeMeanStd(std::span<const double> values) {
  if (values.empty()) throw InvalidInputError("mean/std of an empty array");
  // Constant arrays are exact; sum / n can be off by an ulp otherwise.
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; })) {
    return {values[0], 0.0};
  }
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

inline MeanStd ComputeMeanStd(const ScoreArray& a) {
  return ComputeMeanStd(a.scores());
}

// Phi(z). std::erfc keeps full relative precision in both tails.
inline double StandardNormalCdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

// 1 - Phi(z), computed without cancellation so tiny p-values survive.
inline double StandardNormalUpperTail(double z) {
  return 0.5 * std::erfc(z / std::numbers::sqrt2);
}

// A one-sided (greater-tail) p-value.
class PValue {
 public:
  explicit PValue(double value) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw InvariantError("p-value outside [0, 1]");
    }
  }
  double value() const { return value_; }

 private:
  double value_;
};

struct ZTestResult {
  // +/-inf when the combined standard error is zero and the means differ;
  // 0 when it is zero and the means agree.
  double z = 0.0;
  double standard_error = 0.0;
  PValue p{0.5};
};

// Tests whether `a` is drawn from a distribution with a larger mean than
// `b`: p = 1 - Phi((mean_a - mean_b) / sqrt(var_a/n_a + var_b/n_b)).
inline ZTestResult ZTest(const ScoreArray& a, const ScoreArray& b) {
  const MeanStd sa = ComputeMeanStd(a);
  const MeanStd sb = ComputeMeanStd(b);
  const double se = std::sqrt(sa.std * sa.std / static_cast<double>(a.size()) +
                              sb.std * sb.std / static_cast<double>(b.size()));
  const double diff = sa.mean - sb.mean;
  if (se == 0.0) {
    // Continuous limit of the statistic.
    if (diff == 0.0) return {0.0, 0.0, PValue(0.5)};
    constexpr double kInf = std::numeric_limits<double>::infinity();
    return diff > 0.0 ? ZTestResult{kInf, 0.0, PValue(0.0)}
                      : ZTestResult{-kInf, 0.0, PValue(1.0)};
  }
  const double z = diff / se;
  return {z, se, PValue(StandardNormalUpperTail(z))};
}

inline PValue ZTestPValue(const ScoreArray& a, const ScoreArray& b) {
  return ZTest(a, b).p;
}

// Mann-Whitney statistic in integer form: twice_u counts each strictly
// ordered (pos > neg) pair as 2 and each tie as 1.
struct MannWhitneyCounts {
  int64_t twice_u = 0;
  int64_t pairs = 0;

  double Auc() const {
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pairs));
  }
};

// Rank-based O((m+n) log(m+n)) computation with average ranks for ties.
inline MannWhitneyCounts ComputeMannWhitney(std::span<const double> positives,
                                            std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) {
    throw InvalidInputError("AUC needs at least one positive and one negative");
  }
  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(positives.size() + negatives.size());
  for (double s : positives) all.push_back({s, true});
  for (double s : negatives) all.push_back({s, false});
  for (const Entry& e : all) {
    if (std::isnan(e.score)) throw InvalidInputError("AUC over NaN score");
  }
  std::sort(all.begin(), all.end(),
            [](const Entry& x, const Entry& y) { return x.score < y.score; });

  // Sum over positives of twice their (1-based, tie-averaged) rank.
  int64_t twice_rank_sum = 0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    int64_t group_pos = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      group_pos += all[j].positive ? 1 : 0;
      ++j;
    }
    // Ranks i+1 .. j share the average (i+1+j)/2.
    twice_rank_sum += group_pos * static_cast<int64_t>(i + 1 + j);
    i = j;
  }
  const auto m = static_cast<int64_t>(positives.size());
  const auto n = static_cast<int64_t>(negatives.size());
  return {twice_rank_sum - m * (m + 1), m * n};
}

// Probability that a random positive outscores a random negative, ties 1/2.
inline double Auc(std::span<const double> positives,
                  std::span<const double> negatives) {
  return ComputeMannWhitney(positives, negatives).Auc();
}

inline double Auc(const ScoreArray& positives, const ScoreArray& negatives) {
  return Auc(positives.scores(), negatives.scores());
}

struct ClassificationMetrics {
  double accuracy = 0.0;
  std::optional<double> precision;  // undefined without positive predictions
  std::optional<double> recall;     // undefined without actual positives
};

inline ClassificationMetrics ComputeClassificationMetrics(
    std::span<const bool> predicted, std::span<const bool> actual) {
  if (predicted.size() != actual.size()) {
    throw InvalidInputError("predicted/actual length mismatch: " +
                            std::to_string(predicted.size()) + " vs " +
                            std::to_string(actual.size()));
  }
  if (predicted.empty()) throw InvalidInputError("no predictions to score");
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && actual[i]) ++tp;
    else if (predicted[i]) ++fp;
    else if (actual[i]) ++fn;
    else ++tn;
  }
  ClassificationMetrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(predicted.size());
  if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return m;
}

struct RocPoint {
  double threshold;  // predict positive when score >= threshold
  double fpr;
  double tpr;
};

// One point per distinct score plus the (0,0) and (1,1) endpoints at
// thresholds +inf and -inf.
inline std::vector<RocPoint> RocCurve(std::span<const double> positives,
                                      std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) {
    throw InvalidInputError("ROC needs at least one positive and one negative");
  }
  std::vector<std::pair<double, bool>> all;
  for (double s : positives) all.emplace_back(s, true);
  for (double s : negatives) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& x, const auto& y) { return x.first > y.first; });
  const double np = static_cast<double>(positives.size());
  const double nn = static_cast<double>(negatives.size());
  constexpr double kInf = std::numeric_limits<double>::infinity();

  std::vector<RocPoint> points{{kInf, 0.0, 0.0}};
  size_t tp = 0, fp = 0, i = 0;
  while (i < all.size()) {
    const double t = all[i].first;
    while (i < all.size() && all[i].first == t) {
      (all[i].second ? tp : fp) += 1;
      ++i;
    }
    points.push_back({t, static_cast<double>(fp) / nn, static_cast<double>(tp) / np});
  }
  points.push_back({-kInf, 1.0, 1.0});
  return points;
}

// Trapezoid area under a ROC polyline ordered by increasing fpr.
inline double TrapezoidArea(std::span<const RocPoint> points) {
  double area = 0.0;
  for (size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) *
            (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

}  // namespace vlmaudit

#endif  // VLMAUDIT_STATISTICS_HPP_
