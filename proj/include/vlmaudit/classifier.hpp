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

// Binary set-membership classifier: a small feed-forward network
// (input -> 64 ReLU -> 64 ReLU -> 1 sigmoid) trained with Adam on binary
// cross-entropy. Deterministic for a fixed seed.

#ifndef VLMAUDIT_CLASSIFIER_HPP_
#define VLMAUDIT_CLASSIFIER_HPP_

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vlmaudit/errors.hpp"
#include "vlmaudit/random.hpp"

namespace vlmaudit {

// [mu_T1, sigma_T1, ..., mu_Tn, sigma_Tn] for one set over a temperature grid.
class FeatureVector {
 public:
  FeatureVector(std::vector<double> values, std::vector<double> temperatures)
      : values_(std::move(values)), temperatures_(std::move(temperatures)) {
    if (values_.size() != 2 * temperatures_.size()) {
      throw InvalidInputError("feature vector length must be 2 x temperature count");
    }
    for (size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) throw InvalidInputError("non-finite feature");
      if (i % 2 == 1 && values_[i] < 0.0) {
        throw InvalidInputError("negative standard deviation feature");
      }
    }
  }

  std::span<const double> values() const { return values_; }
  std::span<const double> temperatures() const { return temperatures_; }
  double mean_at(size_t t) const { return values_[2 * t]; }
  double std_at(size_t t) const { return values_[2 * t + 1]; }
  size_t size() const { return values_.size(); }

 private:
  std::vector<double> values_;
  std::vector<double> temperatures_;
};

struct Hyperparameters {
  size_t hidden1 = 64;
  size_t hidden2 = 64;
  double learning_rate = 1e-3;
  int max_epochs = 200;
  size_t batch_size = 64;  // 0 means full batch
  int patience = 20;       // epochs without validation improvement
  double validation_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const Hyperparameters&) const = default;
};

namespace internal {

inline double Sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
inline double Softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline std::string FormatHex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double ParseDouble(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw InvalidInputError("malformed number in model file: " + s);
  }
  return v;
}

}  // namespace internal

class ClassifierModel {
 public:
  static constexpr int kFormatVersion = 1;

  ClassifierModel() = default;

  // All weights zero: every prediction is exactly 0.5.
  static ClassifierModel Zero(size_t input_dim, Hyperparameters hp = {}) {
    ClassifierModel m(input_dim, hp, 0);
    return m;
  }

  // He-style uniform initialization, U(-sqrt(6/fan_in), sqrt(6/fan_in)).
  static ClassifierModel Initialized(size_t input_dim, const Hyperparameters& hp,
                                     uint64_t seed) {
    ClassifierModel m(input_dim, hp, seed);
    Rng rng(CombineSeeds(seed, 0x1417));
    auto fill = [&](size_t offset, size_t count, size_t fan_in) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (size_t i = 0; i < count; ++i) {
        m.params_[offset + i] = (2.0 * rng.Uniform() - 1.0) * bound;
      }
    };
    fill(m.w1(), hp.hidden1 * input_dim, input_dim);
    fill(m.w2(), hp.hidden2 * hp.hidden1, hp.hidden1);
    fill(m.w3(), hp.hidden2, hp.hidden2);
    return m;
  }

  size_t input_dim() const { return input_dim_; }
  const Hyperparameters& hyperparameters() const { return hp_; }
  uint64_t seed() const { return seed_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }
  // Mean training loss after each completed epoch.
  const std::vector<double>& loss_history() const { return loss_history_; }
  int epochs_run() const { return static_cast<int>(loss_history_.size()); }

  double Logit(std::span<const double> x) const {
    CheckDim(x.size());
    std::vector<double> a1, a2;
    return Forward(x, a1, a2);
  }

  // Probability in (0, 1) that `x` belongs to the positive (member) class.
  double Predict(std::span<const double> x) const {
    const double p = internal::Sigmoid(Logit(x));
    return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
  }

  double Predict(const FeatureVector& f) const { return Predict(f.values()); }

  // Mean binary cross-entropy over the batch.
  double Loss(std::span<const std::vector<double>> xs, std::span<const int> ys) const {
    double total = 0.0;
    std::vector<double> a1, a2;
    for (size_t i = 0; i < xs.size(); ++i) {
      CheckDim(xs[i].size());
      const double z = Forward(xs[i], a1, a2);
      total += internal::Softplus(z) - ys[i] * z;
    }
    return total / static_cast<double>(xs.size());
  }

  // Gradient of Loss with respect to parameters(), by backpropagation.
  std::vector<double> Gradient(std::span<const std::vector<double>> xs,
                               std::span<const int> ys) const {
    std::vector<double> grad(params_.size(), 0.0);
    std::vector<size_t> all(xs.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    AccumulateGradient(xs, ys, all, grad);
    return grad;
  }

  void Save(std::ostream& out) const {
    out << "vlmaudit-mlp " << kFormatVersion << "\n";
    out << "dims " << input_dim_ << " " << hp_.hidden1 << " " << hp_.hidden2 << "\n";
    out << "seed " << seed_ << "\n";
    out << "hyperparameters " << internal::FormatHex(hp_.learning_rate) << " "
        << hp_.max_epochs << " " << hp_.batch_size << " " << hp_.patience << " "
        << internal::FormatHex(hp_.validation_fraction) << " "
        << internal::FormatHex(hp_.beta1) << " " << internal::FormatHex(hp_.beta2)
        << " " << internal::FormatHex(hp_.epsilon) << "\n";
    out << "params " << params_.size() << "\n";
    for (double p : params_) out << internal::FormatHex(p) << "\n";
  }

  std::string SaveToString() const {
    std::ostringstream os;
    Save(os);
    return os.str();
  }

  static ClassifierModel Load(std::istream& in) {
    auto expect = [&](const std::string& word) {
      std::string got;
      if (!(in >> got) || got != word) {
        throw InvalidInputError("model file: expected '" + word + "', got '" + got + "'");
      }
    };
    auto next = [&]() {
      std::string s;
      if (!(in >> s)) throw InvalidInputError("model file truncated");
      return s;
    };
    expect("vlmaudit-mlp");
    if (next() != std::to_string(kFormatVersion)) {
      throw InvalidInputError("unsupported model file version");
    }
    expect("dims");
    const size_t input_dim = std::stoul(next());
    Hyperparameters hp;
    hp.hidden1 = std::stoul(next());
    hp.hidden2 = std::stoul(next());
    expect("seed");
    const uint64_t seed = std::stoull(next());
    expect("hyperparameters");
    hp.learning_rate = internal::ParseDouble(next());
    hp.max_epochs = std::stoi(next());
    hp.batch_size = std::stoul(next());
    hp.patience = std::stoi(next());
    hp.validation_fraction = internal::ParseDouble(next());
    hp.beta1 = internal::ParseDouble(next());
    hp.beta2 = internal::ParseDouble(next());
    hp.epsilon = internal::ParseDouble(next());
    ClassifierModel m(input_dim, hp, seed);
    expect("params");
    if (std::stoul(next()) != m.params_.size()) {
      throw InvalidInputError("model file parameter count does not match dims");
    }
    for (double& p : m.params_) p = internal::ParseDouble(next());
    return m;
  }

  static ClassifierModel LoadFromString(const std::string& s) {
    std::istringstream is(s);
    return Load(is);
  }

 private:
  friend ClassifierModel Train(std::span<const std::vector<double>>, std::span<const int>,
                               const Hyperparameters&, uint64_t);

  ClassifierModel(size_t input_dim, const Hyperparameters& hp, uint64_t seed)
      : input_dim_(input_dim), hp_(hp), seed_(seed) {
    if (input_dim == 0 || hp.hidden1 == 0 || hp.hidden2 == 0) {
      throw InvalidInputError("classifier dimensions must be positive");
    }
    params_.assign(hp.hidden1 * input_dim + hp.hidden1 + hp.hidden2 * hp.hidden1 +
                       hp.hidden2 + hp.hidden2 + 1,
                   0.0);
  }

  // Offsets into params_.
  size_t w1() const { return 0; }
  size_t b1() const { return w1() + hp_.hidden1 * input_dim_; }
  size_t w2() const { return b1() + hp_.hidden1; }
  size_t b2() const { return w2() + hp_.hidden2 * hp_.hidden1; }
  size_t w3() const { return b2() + hp_.hidden2; }
  size_t b3() const { return w3() + hp_.hidden2; }

  void CheckDim(size_t n) const {
    if (n != input_dim_) {
      throw InvalidInputError("feature dimension " + std::to_string(n) +
                              " does not match classifier input " +
                              std::to_string(input_dim_));
    }
  }

  // Returns the logit; a1/a2 receive post-ReLU activations.
  double Forward(std::span<const double> x, std::vector<double>& a1,
                 std::vector<double>& a2) const {
    const size_t h1 = hp_.hidden1, h2 = hp_.hidden2, d = input_dim_;
    a1.assign(h1, 0.0);
    a2.assign(h2, 0.0);
    for (size_t j = 0; j < h1; ++j) {
      double s = params_[b1() + j];
      const double* row = &params_[w1() + j * d];
      for (size_t i = 0; i < d; ++i) s += row[i] * x[i];
      a1[j] = s > 0.0 ? s : 0.0;
    }
    for (size_t j = 0; j < h2; ++j) {
      double s = params_[b2() + j];
      const double* row = &params_[w2() + j * h1];
      for (size_t i = 0; i < h1; ++i) s += row[i] * a1[i];
      a2[j] = s > 0.0 ? s : 0.0;
    }
    double z = params_[b3()];
    for (size_t j = 0; j < h2; ++j) z += params_[w3() + j] * a2[j];
    return z;
  }

  // Adds d(mean loss over `batch`)/d(params) into grad.
  void AccumulateGradient(std::span<const std::vector<double>> xs, std::span<const int> ys,
                          std::span<const size_t> batch, std::vector<double>& grad) const {
    const size_t h1 = hp_.hidden1, h2 = hp_.hidden2, d = input_dim_;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<double> a1, a2, d2(h2), d1(h1);
    for (size_t idx : batch) {
      const auto& x = xs[idx];
      const double z = Forward(x, a1, a2);
      const double dz = (internal::Sigmoid(z) - ys[idx]) * inv_b;
      grad[b3()] += dz;
      for (size_t j = 0; j < h2; ++j) {
        grad[w3() + j] += dz * a2[j];
        d2[j] = a2[j] > 0.0 ? dz * params_[w3() + j] : 0.0;
      }
      std::fill(d1.begin(), d1.end(), 0.0);
      for (size_t j = 0; j < h2; ++j) {
        if (d2[j] == 0.0) continue;
        grad[b2() + j] += d2[j];
        const size_t row = w2() + j * h1;
        for (size_t i = 0; i < h1; ++i) {
          grad[row + i] += d2[j] * a1[i];
          d1[i] += d2[j] * params_[row + i];
        }
      }
      for (size_t j = 0; j < h1; ++j) {
        if (a1[j] <= 0.0 || d1[j] == 0.0) continue;
        grad[b1() + j] += d1[j];
        const size_t row = w1() + j * d;
        for (size_t i = 0; i < d; ++i) grad[row + i] += d1[j] * x[i];
      }
    }
  }

  size_t input_dim_ = 0;
  Hyperparameters hp_;
  uint64_t seed_ = 0;
  std::vector<double> params_;
  std::vector<double> loss_history_;
};

// Fits a classifier with Adam on mini-batches. A seeded 90/10 split drives
// early stopping; the weights with the best validation loss are kept.
inline ClassifierModel Train(std::span<const std::vector<double>> features,
                             std::span<const int> labels, const Hyperparameters& hp,
                             uint64_t seed) {
  if (features.size() != labels.size()) {
    throw InvalidInputError("features/labels length mismatch");
  }
  if (features.size() < 2) throw InvalidInputError("need at least 2 training examples");
  const size_t dim = features[0].size();
  bool has_pos = false, has_neg = false;
  for (size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != dim) throw InvalidInputError("non-uniform feature length");
    for (double v : features[i]) {
      if (!std::isfinite(v)) throw InvalidInputError("non-finite training feature");
    }
    if (labels[i] != 0 && labels[i] != 1) throw InvalidInputError("labels must be 0 or 1");
    (labels[i] == 1 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) {
    throw InvalidInputError("training data must contain both classes");
  }

  ClassifierModel model = ClassifierModel::Initialized(dim, hp, seed);
  Rng rng(CombineSeeds(seed, 0x7a11));

  // Stratified split so the validation prior matches the training prior.
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < features.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  std::vector<size_t> val, train;
  for (auto* cls : {&pos, &neg}) {
    rng.Shuffle(*cls);
    const auto n_val = static_cast<size_t>(
        std::floor(hp.validation_fraction * static_cast<double>(cls->size())));
    val.insert(val.end(), cls->begin(), cls->begin() + static_cast<ptrdiff_t>(n_val));
    train.insert(train.end(), cls->begin() + static_cast<ptrdiff_t>(n_val), cls->end());
  }

  auto subset_loss = [&](const std::vector<size_t>& idx) {
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    xs.reserve(idx.size());
    for (size_t i : idx) {
      xs.push_back(features[i]);
      ys.push_back(labels[i]);
    }
    return model.Loss(xs, ys);
  };

  const size_t n_params = model.params_.size();
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0), grad(n_params);
  const size_t batch = hp.batch_size == 0 ? train.size() : hp.batch_size;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_params = model.params_;
  int since_best = 0;
  int64_t step = 0;

  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    rng.Shuffle(train);
    for (size_t start = 0; start < train.size(); start += batch) {
      const size_t end = std::min(train.size(), start + batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      model.AccumulateGradient(
          features, labels,
          std::span<const size_t>(train.data() + start, end - start), grad);
      ++step;
      const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
      for (size_t k = 0; k < n_params; ++k) {
        m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * grad[k];
        v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * grad[k] * grad[k];
        model.params_[k] -=
            hp.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + hp.epsilon);
      }
    }
    const double train_loss = subset_loss(train);
    if (!std::isfinite(train_loss)) {
      throw TrainingDivergedError(
          "classifier training diverged at epoch " + std::to_string(epoch), epoch);
    }
    model.loss_history_.push_back(train_loss);

    if (val.empty()) continue;
    const double val_loss = subset_loss(val);
    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = model.params_;
      since_best = 0;
    } else if (++since_best >= hp.patience) {
      break;
    }
  }
  if (!val.empty()) model.params_ = best_params;
  return model;
}

inline ClassifierModel Train(std::span<const FeatureVector> features,
                             std::span<const int> labels, const Hyperparameters& hp,
                             uint64_t seed) {
  std::vector<std::vector<double>> xs;
  xs.reserve(features.size());
  for (const auto& f : features) xs.emplace_back(f.values().begin(), f.values().end());
  return Train(std::span<const std::vector<double>>(xs), labels, hp, seed);
}

}  // namespace vlmaudit

#endif  // VLMAUDIT_CLASSIFIER_HPP_
