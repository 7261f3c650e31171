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

// Experiment orchestration: dataset ingestion, set sampling (including
// heterogeneous sets), running an attack over many member and non-member
// sets, and report emission.

#ifndef VLMAUDIT_HARNESS_HPP_
#define VLMAUDIT_HARNESS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "vlmaudit/attacks.hpp"
#include "vlmaudit/classifier.hpp"
#include "vlmaudit/errors.hpp"
#include "vlmaudit/oracle.hpp"
#include "vlmaudit/parallel.hpp"
#include "vlmaudit/random.hpp"
#include "vlmaudit/remote.hpp"
#include "vlmaudit/simulated.hpp"
#include "vlmaudit/similarity.hpp"
#include "vlmaudit/statistics.hpp"

namespace vlmaudit {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Datasets

// One JSON record per line: {id, image: {sha256, path?, b64?}, question,
// answer?, membership?}. Blank lines are skipped. Relative image paths are
// resolved against the dataset's directory.
inline std::vector<Sample> LoadDataset(const fs::path& path, bool require_image_bytes = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<Sample> samples;
  std::unordered_set<std::string> ids;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    Sample s;
    try {
      s = SampleFromJson(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": malformed record: " + e.what());
    } catch (const InvalidInputError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (!ids.insert(s.id).second) throw ConfigError(where + ": duplicate id " + s.id);
    if (s.image.path && fs::path(*s.image.path).is_relative()) {
      s.image.path = (path.parent_path() / *s.image.path).string();
    }
    if (require_image_bytes && !s.image.bytes && !s.image.path) {
      throw ConfigError("sample " + s.id + ": image bytes are required but only a hash is given");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

inline void WriteDataset(const fs::path& path, std::span<const Sample> samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write dataset " + path.string());
  for (const auto& s : samples) out << SampleToJson(s).dump() << '\n';
  if (!out.flush()) throw IoError("cannot write dataset " + path.string());
}

// ---------------------------------------------------------------------------
// Set sampling

// `n` sets of size g. Each holds round(ratio * g) contaminants drawn from
// `contaminants` (the opposite membership) and the rest from `dataset`, all
// without replacement within the set. The set label is the majority
// membership of its samples; a tie goes to the `dataset` side.
inline std::vector<SampleSet> SampleSets(std::span<const Sample> dataset, size_t g, size_t n,
                                         uint64_t seed, double ratio = 0.0,
                                         std::span<const Sample> contaminants = {}) {
  if (g == 0) throw InvalidInputError("set granularity must be positive");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidInputError("heterogeneity ratio outside [0, 1]");
  const auto n_contam = static_cast<size_t>(std::lround(ratio * static_cast<double>(g)));
  const size_t n_main = g - n_contam;
  if (n_main > dataset.size()) {
    throw InvalidInputError("pool of " + std::to_string(dataset.size()) +
                            " samples is too small for " + std::to_string(n_main) + " per set");
  }
  if (n_contam > contaminants.size()) {
    throw InvalidInputError("contaminant pool of " + std::to_string(contaminants.size()) +
                            " samples is too small for " + std::to_string(n_contam) + " per set");
  }
  Rng rng(CombineSeeds(seed, 0x5e75));
  std::vector<SampleSet> sets;
  sets.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    std::vector<Sample> picked;
    picked.reserve(g);
    for (size_t idx : rng.SampleWithoutReplacement(dataset.size(), n_main)) {
      picked.push_back(dataset[idx]);
    }
    for (size_t idx : rng.SampleWithoutReplacement(contaminants.size(), n_contam)) {
      picked.push_back(contaminants[idx]);
    }
    size_t members = 0, labelled = 0;
    for (const auto& s : picked) {
      if (s.membership) {
        ++labelled;
        members += *s.membership ? 1 : 0;
      }
    }
    std::optional<bool> label;
    if (labelled == picked.size()) {
      if (2 * members != g) {
        label = 2 * members > g;
      } else {
        label = n_main > 0 ? *picked.front().membership : *picked.back().membership;
      }
    }
    sets.emplace_back(std::move(picked), label);
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Configuration

struct OracleConfig {
  std::string id;
  std::string kind;       // "simulated" or "remote"
  std::string spec_path;  // simulated
  std::string endpoint;   // remote
  std::string auth_env;   // remote: environment variable holding the token
  int max_tokens = 512;
  std::string member_ids_path;  // remote: newline-separated declared member ids
  int timeout_seconds = 60;
};

struct EmbeddingProviderConfig {
  std::string id;
  std::string endpoint;
  std::string auth_env;
};

struct ExperimentConfig {
  AttackKind attack = AttackKind::kReferenceNonMember;
  std::string target_oracle;
  std::string shadow_oracle;
  std::vector<OracleConfig> oracles;
  std::vector<EmbeddingProviderConfig> embedding_providers;
  std::string target_dataset;
  std::string reference_dataset;  // optional; otherwise half of the matching pool
  std::string shadow_dataset;
  size_t g_target = 20;
  size_t g_reference = 0;  // 0: same as g_target
  size_t g_shadow = 0;     // 0: same as g_target
  size_t n_sets = 200;     // per class
  size_t shadow_n_sets = 500;
  double temperature = 0.1;
  std::vector<double> temperatures = DefaultTemperatureGrid();
  double t_low = 0.1;
  double t_high = 1.6;
  double image_temperature = 0.5;
  int k = 10;
  std::string metric = "rouge2";
  std::optional<double> tau;
  double heterogeneity_ratio = 0.0;
  std::vector<double> length_bucket_edges;  // character counts, strictly increasing
  uint64_t seed = 0;
  std::string output_dir = "report";
  std::string cache_dir;  // empty: in-memory cache
  size_t max_in_flight = 8;
  size_t threads = 0;  // 0: hardware concurrency
  std::string description_prompt = kDefaultDescriptionPrompt;
  Hyperparameters hyperparameters;

  size_t EffectiveReferenceGranularity() const { return g_reference ? g_reference : g_target; }
  size_t EffectiveShadowGranularity() const { return g_shadow ? g_shadow : g_target; }
  size_t EffectiveThreads() const { return threads ? threads : DefaultThreadCount(); }

  double EffectiveTau() const {
    if (tau) return *tau;
    switch (attack) {
      case AttackKind::kShadow: return 0.5;
      case AttackKind::kImageOnly: return 0.5;
      default: return kDefaultTau;
    }
  }

  // The lowest temperature the attack queries at; used for length buckets.
  double LowestTemperature() const {
    switch (attack) {
      case AttackKind::kShadow: return *std::min_element(temperatures.begin(), temperatures.end());
      case AttackKind::kTargetOnly: return t_low;
      case AttackKind::kImageOnly: return image_temperature;
      default: return temperature;
    }
  }

  void Validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
    if (target_oracle.empty()) fail("target_oracle is required");
    if (target_dataset.empty()) fail("target_dataset is required");
    if (g_target == 0) fail("g_target must be positive");
    if (attack == AttackKind::kShadow) {
      if (shadow_oracle.empty()) fail("shadow attack needs shadow_oracle");
      if (shadow_dataset.empty()) fail("shadow attack needs shadow_dataset");
      if (shadow_n_sets == 0) fail("shadow_n_sets must be positive");
      if (temperatures.empty()) fail("temperature grid is empty");
    }
    for (double t : temperatures) {
      if (!(t > 0.0)) fail("temperatures must be positive");
    }
    if (!(temperature > 0.0) || !(image_temperature > 0.0)) fail("temperatures must be positive");
    if (!(t_low > 0.0) || !(t_low < t_high)) fail("need 0 < t_low < t_high");
    if (attack == AttackKind::kImageOnly && k < 2) fail("k must be at least 2");
    if (!(heterogeneity_ratio >= 0.0 && heterogeneity_ratio <= 1.0)) {
      fail("heterogeneity_ratio must lie in [0, 1]");
    }
    for (size_t i = 1; i < length_bucket_edges.size(); ++i) {
      if (!(length_bucket_edges[i] > length_bucket_edges[i - 1])) {
        fail("length bucket edges must be strictly increasing");
      }
    }
    if (length_bucket_edges.size() == 1) fail("length buckets need at least two edges");
    if (max_in_flight == 0) fail("max_in_flight must be positive");
    SimilarityMetric::Parse(metric);
  }

  nlohmann::json ToJson() const {
    nlohmann::json oracles_json = nlohmann::json::array();
    for (const auto& o : oracles) {
      oracles_json.push_back({{"id", o.id}, {"kind", o.kind}, {"spec_path", o.spec_path},
                              {"endpoint", o.endpoint}, {"auth_env", o.auth_env},
                              {"max_tokens", o.max_tokens}, {"member_ids_path", o.member_ids_path},
                              {"timeout_seconds", o.timeout_seconds}});
    }
    nlohmann::json providers = nlohmann::json::array();
    for (const auto& p : embedding_providers) {
      providers.push_back({{"id", p.id}, {"endpoint", p.endpoint}, {"auth_env", p.auth_env}});
    }
    nlohmann::json j = {
        {"attack", AttackName(attack)},
        {"target_oracle", target_oracle},
        {"shadow_oracle", shadow_oracle},
        {"oracles", oracles_json},
        {"embedding_providers", providers},
        {"target_dataset", target_dataset},
        {"reference_dataset", reference_dataset},
        {"shadow_dataset", shadow_dataset},
        {"g_target", g_target},
        {"g_reference", g_reference},
        {"g_shadow", g_shadow},
        {"n_sets", n_sets},
        {"shadow_n_sets", shadow_n_sets},
        {"temperature", temperature},
        {"temperatures", temperatures},
        {"t_low", t_low},
        {"t_high", t_high},
        {"image_temperature", image_temperature},
        {"k", k},
        {"metric", metric},
        {"heterogeneity_ratio", heterogeneity_ratio},
        {"length_bucket_edges", length_bucket_edges},
        {"seed", seed},
        {"output_dir", output_dir},
        {"cache_dir", cache_dir},
        {"max_in_flight", max_in_flight},
        {"threads", threads},
        {"description_prompt", description_prompt},
        {"hyperparameters",
         {{"hidden1", hyperparameters.hidden1},
          {"hidden2", hyperparameters.hidden2},
          {"learning_rate", hyperparameters.learning_rate},
          {"max_epochs", hyperparameters.max_epochs},
          {"batch_size", hyperparameters.batch_size},
          {"patience", hyperparameters.patience},
          {"validation_fraction", hyperparameters.validation_fraction}}},
    };
    j["tau"] = tau ? nlohmann::json(*tau) : nlohmann::json(nullptr);
    return j;
  }

  // Relative paths are resolved against `base_dir`.
  static ExperimentConfig FromJson(const nlohmann::json& j, const fs::path& base_dir = {}) {
    ExperimentConfig c;
    try {
      auto path = [&](const char* key) -> std::string {
        const std::string p = j.value(key, std::string());
        if (p.empty() || fs::path(p).is_absolute() || base_dir.empty()) return p;
        return (base_dir / p).string();
      };
      c.attack = ParseAttackKind(j.at("attack").get<std::string>());
      c.target_oracle = j.value("target_oracle", "");
      c.shadow_oracle = j.value("shadow_oracle", "");
      for (const auto& o : j.value("oracles", nlohmann::json::array())) {
        OracleConfig oc;
        oc.id = o.at("id").get<std::string>();
        oc.kind = o.at("kind").get<std::string>();
        oc.spec_path = o.value("spec_path", "");
        if (!oc.spec_path.empty() && fs::path(oc.spec_path).is_relative() && !base_dir.empty()) {
          oc.spec_path = (base_dir / oc.spec_path).string();
        }
        oc.endpoint = o.value("endpoint", "");
        oc.auth_env = o.value("auth_env", "");
        oc.max_tokens = o.value("max_tokens", oc.max_tokens);
        oc.member_ids_path = o.value("member_ids_path", "");
        if (!oc.member_ids_path.empty() && fs::path(oc.member_ids_path).is_relative() &&
            !base_dir.empty()) {
          oc.member_ids_path = (base_dir / oc.member_ids_path).string();
        }
        oc.timeout_seconds = o.value("timeout_seconds", oc.timeout_seconds);
        c.oracles.push_back(oc);
      }
      for (const auto& p : j.value("embedding_providers", nlohmann::json::array())) {
        c.embedding_providers.push_back({p.at("id").get<std::string>(),
                                         p.at("endpoint").get<std::string>(),
                                         p.value("auth_env", "")});
      }
      c.target_dataset = path("target_dataset");
      c.reference_dataset = path("reference_dataset");
      c.shadow_dataset = path("shadow_dataset");
      c.g_target = j.value("g_target", c.g_target);
      c.g_reference = j.value("g_reference", c.g_reference);
      c.g_shadow = j.value("g_shadow", c.g_shadow);
      c.n_sets = j.value("n_sets", c.n_sets);
      c.shadow_n_sets = j.value("shadow_n_sets", c.shadow_n_sets);
      c.temperature = j.value("temperature", c.temperature);
      c.temperatures = j.value("temperatures", c.temperatures);
      c.t_low = j.value("t_low", c.t_low);
      c.t_high = j.value("t_high", c.t_high);
      c.image_temperature = j.value("image_temperature", c.image_temperature);
      c.k = j.value("k", c.k);
      c.metric = j.value("metric", c.metric);
      if (j.contains("tau") && !j["tau"].is_null()) c.tau = j["tau"].get<double>();
      c.heterogeneity_ratio = j.value("heterogeneity_ratio", c.heterogeneity_ratio);
      c.length_bucket_edges = j.value("length_bucket_edges", c.length_bucket_edges);
      c.seed = j.value("seed", c.seed);
      if (j.contains("output_dir")) c.output_dir = path("output_dir");
      c.cache_dir = path("cache_dir");
      c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
      c.threads = j.value("threads", c.threads);
      c.description_prompt = j.value("description_prompt", c.description_prompt);
      if (j.contains("hyperparameters")) {
        const auto& h = j["hyperparameters"];
        auto& hp = c.hyperparameters;
        hp.hidden1 = h.value("hidden1", hp.hidden1);
        hp.hidden2 = h.value("hidden2", hp.hidden2);
        hp.learning_rate = h.value("learning_rate", hp.learning_rate);
        hp.max_epochs = h.value("max_epochs", hp.max_epochs);
        hp.batch_size = h.value("batch_size", hp.batch_size);
        hp.patience = h.value("patience", hp.patience);
        hp.validation_fraction = h.value("validation_fraction", hp.validation_fraction);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return c;
  }

  static ExperimentConfig Load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
    return FromJson(j, path.parent_path());
  }
};

// ---------------------------------------------------------------------------
// Reports

struct SetRecord {
  std::string set_id;
  bool label = false;
  double signal = 0.0;
  std::optional<double> statistic;
  double score = 0.0;  // higher is more member-like
  bool membership = false;
  std::string error;   // non-empty when the attack failed on this set

  bool ok() const { return error.empty(); }
  bool operator==(const SetRecord&) const = default;
};

struct Aggregates {
  size_t records = 0;
  size_t errors = 0;
  std::optional<double> auc;
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::vector<RocPoint> roc;

  bool operator==(const Aggregates& o) const {
    auto same_roc = [&] {
      if (roc.size() != o.roc.size()) return false;
      for (size_t i = 0; i < roc.size(); ++i) {
        if (roc[i].threshold != o.roc[i].threshold || roc[i].fpr != o.roc[i].fpr ||
            roc[i].tpr != o.roc[i].tpr) {
          return false;
        }
      }
      return true;
    };
    return records == o.records && errors == o.errors && auc == o.auc &&
           accuracy == o.accuracy && precision == o.precision && recall == o.recall && same_roc();
  }
};

inline Aggregates ComputeAggregates(std::span<const SetRecord> records) {
  Aggregates a;
  a.records = records.size();
  std::vector<double> pos, neg;
  std::vector<char> predicted, actual;
  for (const auto& r : records) {
    if (!r.ok()) {
      ++a.errors;
      continue;
    }
    (r.label ? pos : neg).push_back(r.score);
    predicted.push_back(r.membership);
    actual.push_back(r.label);
  }
  if (!pos.empty() && !neg.empty()) {
    a.auc = Auc(pos, neg);
    a.roc = RocCurve(pos, neg);
  }
  if (!predicted.empty()) {
    auto p = std::make_unique<bool[]>(predicted.size());
    auto t = std::make_unique<bool[]>(actual.size());
    std::copy(predicted.begin(), predicted.end(), p.get());
    std::copy(actual.begin(), actual.end(), t.get());
    const auto m = ComputeClassificationMetrics(std::span<const bool>(p.get(), predicted.size()),
                                                std::span<const bool>(t.get(), actual.size()));
    a.accuracy = m.accuracy;
    a.precision = m.precision;
    a.recall = m.recall;
  }
  return a;
}

struct BucketReport;

struct ExperimentReport {
  std::string attack;
  std::string signal_kind;
  nlohmann::json config;
  std::vector<SetRecord> records;
  Aggregates aggregates;
  QueryCounters counters;
  std::vector<BucketReport> buckets;
};

struct BucketReport {
  double min_chars = 0.0;
  double max_chars = 0.0;
  std::string skipped;  // reason, when the bucket could not be evaluated
  ExperimentReport report;
};

namespace internal {

// JSON has no infinities; they travel as strings.
inline nlohmann::json EncodeNumber(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double DecodeNumber(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw InvalidInputError("not a number: " + s);
}

inline nlohmann::json EncodeOptional(const std::optional<double>& v) {
  return v ? EncodeNumber(*v) : nlohmann::json(nullptr);
}

inline std::optional<double> DecodeOptional(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return DecodeNumber(j);
}

inline std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace internal

inline nlohmann::json AggregatesToJson(const Aggregates& a) {
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : a.roc) {
    roc.push_back({internal::EncodeNumber(p.threshold), p.fpr, p.tpr});
  }
  return {{"records", a.records},
          {"errors", a.errors},
          {"auc", internal::EncodeOptional(a.auc)},
          {"accuracy", internal::EncodeOptional(a.accuracy)},
          {"precision", internal::EncodeOptional(a.precision)},
          {"recall", internal::EncodeOptional(a.recall)},
          {"roc", roc}};
}

inline Aggregates AggregatesFromJson(const nlohmann::json& j) {
  Aggregates a;
  a.records = j.at("records").get<size_t>();
  a.errors = j.at("errors").get<size_t>();
  a.auc = internal::DecodeOptional(j.at("auc"));
  a.accuracy = internal::DecodeOptional(j.at("accuracy"));
  a.precision = internal::DecodeOptional(j.at("precision"));
  a.recall = internal::DecodeOptional(j.at("recall"));
  for (const auto& p : j.at("roc")) {
    a.roc.push_back({internal::DecodeNumber(p.at(0)), p.at(1).get<double>(), p.at(2).get<double>()});
  }
  return a;
}

inline nlohmann::json ReportToJson(const ExperimentReport& r) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& s : r.records) {
    records.push_back({{"set_id", s.set_id},
                       {"label", s.label},
                       {"signal", internal::EncodeNumber(s.signal)},
                       {"statistic", internal::EncodeOptional(s.statistic)},
                       {"score", internal::EncodeNumber(s.score)},
                       {"membership", s.membership},
                       {"error", s.error}});
  }
  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& b : r.buckets) {
    buckets.push_back({{"min_chars", b.min_chars},
                       {"max_chars", b.max_chars},
                       {"skipped", b.skipped},
                       {"report", ReportToJson(b.report)}});
  }
  return {{"format", "vlmaudit-report-1"},
          {"attack", r.attack},
          {"signal_kind", r.signal_kind},
          {"config", r.config},
          {"records", records},
          {"aggregates", AggregatesToJson(r.aggregates)},
          {"counters",
           {{"queries", r.counters.queries},
            {"cache_hits", r.counters.cache_hits},
            {"cache_misses", r.counters.cache_misses},
            {"backend_attempts", r.counters.backend_attempts},
            {"failures", r.counters.failures}}},
          {"buckets", buckets}};
}

inline ExperimentReport ReportFromJson(const nlohmann::json& j) {
  ExperimentReport r;
  try {
    r.attack = j.at("attack").get<std::string>();
    r.signal_kind = j.at("signal_kind").get<std::string>();
    r.config = j.at("config");
    for (const auto& s : j.at("records")) {
      r.records.push_back({s.at("set_id").get<std::string>(), s.at("label").get<bool>(),
                           internal::DecodeNumber(s.at("signal")),
                           internal::DecodeOptional(s.at("statistic")),
                           internal::DecodeNumber(s.at("score")), s.at("membership").get<bool>(),
                           s.at("error").get<std::string>()});
    }
    r.aggregates = AggregatesFromJson(j.at("aggregates"));
    const auto& c = j.at("counters");
    r.counters = {c.at("queries").get<uint64_t>(), c.at("cache_hits").get<uint64_t>(),
                  c.at("cache_misses").get<uint64_t>(), c.at("backend_attempts").get<uint64_t>(),
                  c.at("failures").get<uint64_t>()};
    for (const auto& b : j.at("buckets")) {
      r.buckets.push_back({b.at("min_chars").get<double>(), b.at("max_chars").get<double>(),
                           b.at("skipped").get<std::string>(), ReportFromJson(b.at("report"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string("malformed report: ") + e.what());
  }
  return r;
}

// True when every stored aggregate equals the one recomputed from records.
inline bool AggregatesConsistent(const ExperimentReport& r) {
  if (!(ComputeAggregates(r.records) == r.aggregates)) return false;
  for (const auto& b : r.buckets) {
    if (!AggregatesConsistent(b.report)) return false;
  }
  return true;
}

struct EmittedFiles {
  fs::path report;
  fs::path roc;
  fs::path scores;
};

// Writes report.json, roc.csv, and scores.csv into `directory`.
inline EmittedFiles EmitReport(const ExperimentReport& report, const fs::path& directory) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());
  EmittedFiles files{directory / "report.json", directory / "roc.csv", directory / "scores.csv"};
  auto open = [](const fs::path& p) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
  };
  {
    auto out = open(files.report);
    out << ReportToJson(report).dump(2) << '\n';
    if (!out.flush()) throw IoError("cannot write " + files.report.string());
  }
  {
    auto out = open(files.roc);
    out << "threshold,fpr,tpr\n";
    for (const auto& p : report.aggregates.roc) {
      out << internal::FormatDouble(p.threshold) << ',' << internal::FormatDouble(p.fpr) << ','
          << internal::FormatDouble(p.tpr) << '\n';
    }
    if (!out.flush()) throw IoError("cannot write " + files.roc.string());
  }
  {
    auto out = open(files.scores);
    out << "set_id,label,signal,statistic,score,membership,error\n";
    for (const auto& r : report.records) {
      out << r.set_id << ',' << (r.label ? 1 : 0) << ',' << internal::FormatDouble(r.signal) << ','
          << (r.statistic ? internal::FormatDouble(*r.statistic) : "") << ','
          << internal::FormatDouble(r.score) << ',' << (r.membership ? 1 : 0) << ",\""
          << r.error << "\"\n";
    }
    if (!out.flush()) throw IoError("cannot write " + files.scores.string());
  }
  return files;
}

inline ExperimentReport LoadReport(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "report.json" : path;
  std::ifstream in(file);
  if (!in) throw IoError("cannot open report " + file.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw InvalidInputError("report " + file.string() + " is not valid JSON");
  return ReportFromJson(j);
}

// Reads roc.csv back as points.
inline std::vector<RocPoint> LoadRocTable(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<RocPoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    RocPoint p{};
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &p.threshold, &p.fpr, &p.tpr) != 3) {
      throw InvalidInputError("malformed ROC row: " + line);
    }
    points.push_back(p);
  }
  return points;
}

// ---------------------------------------------------------------------------
// Running experiments

// Oracles, embeddings, and datasets an experiment runs against.
struct ExperimentEnvironment {
  std::shared_ptr<OracleClient> client;
  std::shared_ptr<const EmbeddingRegistry> embeddings;
  std::vector<Sample> target;
  std::vector<Sample> reference;
  std::vector<Sample> shadow;
};

inline std::string SecretFromEnv(const std::string& var) {
  if (var.empty()) return "";
  const char* v = std::getenv(var.c_str());
  return v ? v : "";
}

inline std::shared_ptr<OracleBackend> MakeOracle(const OracleConfig& oc) {
  if (oc.kind == "simulated") {
    std::ifstream in(oc.spec_path);
    if (!in) throw ConfigError("cannot open simulated oracle spec " + oc.spec_path);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(oc.spec_path + " is not valid JSON");
    auto spec = SimulatedOracleSpec::FromJson(j);
    if (!oc.id.empty() && spec.id != oc.id) {
      throw ConfigError("oracle spec " + oc.spec_path + " declares id " + spec.id + ", not " + oc.id);
    }
    return std::make_shared<SimulatedOracle>(std::move(spec));
  }
  if (oc.kind == "remote") {
    if (oc.endpoint.empty()) throw ConfigError("remote oracle " + oc.id + " needs an endpoint");
    std::optional<std::vector<std::string>> members;
    if (!oc.member_ids_path.empty()) {
      std::ifstream in(oc.member_ids_path);
      if (!in) throw ConfigError("cannot open member id list " + oc.member_ids_path);
      members.emplace();
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) members->push_back(line);
      }
    }
    HttpOptions http{SecretFromEnv(oc.auth_env), std::chrono::seconds(oc.timeout_seconds)};
    return std::make_shared<RemoteOracle>(oc.id, oc.endpoint, http, oc.max_tokens,
                                          std::move(members));
  }
  throw ConfigError("unknown oracle kind '" + oc.kind + "' for " + oc.id);
}

// Loads datasets and registers oracles and embedding providers from files.
inline ExperimentEnvironment PrepareEnvironment(const ExperimentConfig& config) {
  config.Validate();
  std::shared_ptr<ResponseCache> cache;
  if (config.cache_dir.empty()) {
    cache = std::make_shared<MemoryResponseCache>();
  } else {
    cache = std::make_shared<DirectoryResponseCache>(config.cache_dir);
  }
  ExperimentEnvironment env;
  env.client = std::make_shared<OracleClient>(cache, config.max_in_flight);
  bool remote_target = false;
  for (const auto& oc : config.oracles) {
    env.client->Register(MakeOracle(oc));
    if (oc.kind == "remote" && oc.id == config.target_oracle) remote_target = true;
  }
  auto registry = std::make_shared<EmbeddingRegistry>();
  for (const auto& p : config.embedding_providers) {
    registry->Register(std::make_shared<RemoteEmbeddingProvider>(
        p.id, p.endpoint, HttpOptions{SecretFromEnv(p.auth_env), std::chrono::seconds(60)}));
  }
  env.embeddings = registry;
  env.target = LoadDataset(config.target_dataset, remote_target);
  if (!config.reference_dataset.empty()) {
    env.reference = LoadDataset(config.reference_dataset, remote_target);
  }
  if (!config.shadow_dataset.empty()) env.shadow = LoadDataset(config.shadow_dataset);
  return env;
}

namespace internal {

struct Pools {
  std::vector<Sample> members;     // target member sets come from here
  std::vector<Sample> nonmembers;  // target non-member sets come from here
  std::vector<Sample> reference;   // reference attacks only
};

inline Pools BuildPools(const ExperimentConfig& config, const ExperimentEnvironment& env) {
  Pools pools;
  for (const auto& s : env.target) {
    if (!s.membership) {
      throw ConfigError("target sample " + s.id + " has no membership label for evaluation");
    }
    (*s.membership ? pools.members : pools.nonmembers).push_back(s);
  }
  const bool ref_nonmember = config.attack == AttackKind::kReferenceNonMember;
  const bool ref_member = config.attack == AttackKind::kReferenceMember;
  if (!ref_nonmember && !ref_member) return pools;
  if (!env.reference.empty()) {
    pools.reference = env.reference;
    return pools;
  }
  // Split the pool matching the reference's membership into target and
  // reference halves so the two never share samples.
  auto& source = ref_nonmember ? pools.nonmembers : pools.members;
  Rng rng(CombineSeeds(config.seed, 0x2ef));
  rng.Shuffle(source);
  const size_t half = source.size() / 2;
  pools.reference.assign(source.begin() + static_cast<ptrdiff_t>(half), source.end());
  source.resize(half);
  return pools;
}

inline ExperimentReport RunTrials(const ExperimentConfig& config, ExperimentEnvironment& env,
                                  const Pools& pools, const std::optional<ShadowAttack>& shadow) {
  OracleClient& client = *env.client;
  const QueryCounters before = client.counters();
  ExperimentReport report;
  report.attack = std::string(AttackName(config.attack));
  report.config = config.ToJson();
  const SimilarityScorer scorer(SimilarityMetric::Parse(config.metric), env.embeddings);
  const double tau = config.EffectiveTau();
  switch (config.attack) {
    case AttackKind::kShadow: report.signal_kind = SignalName(SignalKind::kProbability); break;
    case AttackKind::kImageOnly: report.signal_kind = SignalName(SignalKind::kMeanSelfSimilarity); break;
    default: report.signal_kind = SignalName(SignalKind::kPValue);
  }

  const size_t n = config.n_sets;
  std::vector<SampleSet> sets;
  if (n > 0) {
    sets = SampleSets(pools.members, config.g_target, n, CombineSeeds(config.seed, 1),
                      config.heterogeneity_ratio, pools.nonmembers);
    auto neg = SampleSets(pools.nonmembers, config.g_target, n, CombineSeeds(config.seed, 2),
                          config.heterogeneity_ratio, pools.members);
    sets.insert(sets.end(), std::make_move_iterator(neg.begin()), std::make_move_iterator(neg.end()));
  }
  std::vector<SampleSet> references;
  if (n > 0 && !pools.reference.empty()) {
    Rng rng(CombineSeeds(config.seed, 3));
    references = DrawSets(pools.reference, config.EffectiveReferenceGranularity(), 2 * n,
                          std::nullopt, rng);
  }

  report.records.resize(sets.size());
  ParallelFor(sets.size(), config.EffectiveThreads(), [&](size_t i) {
    SetRecord& rec = report.records[i];
    const bool member_side = i < n;
    char id[32];
    std::snprintf(id, sizeof(id), "%s-%05zu", member_side ? "m" : "n", member_side ? i : i - n);
    rec.set_id = id;
    rec.label = sets[i].label().value_or(member_side);
    try {
      Verdict v;
      switch (config.attack) {
        case AttackKind::kShadow:
          v = shadow->Infer(client, sets[i], config.target_oracle, scorer);
          break;
        case AttackKind::kReferenceNonMember:
          v = ReferenceInferenceNonMember(client, references.at(i), sets[i], config.target_oracle,
                                          config.temperature, scorer, tau);
          break;
        case AttackKind::kReferenceMember:
          v = ReferenceInferenceMember(client, references.at(i), sets[i], config.target_oracle,
                                       config.temperature, scorer, tau);
          break;
        case AttackKind::kTargetOnly:
          v = TargetOnlyInference(client, sets[i], config.target_oracle, config.t_low,
                                  config.t_high, scorer, tau);
          break;
        case AttackKind::kImageOnly:
          v = ImageOnlyInference(client, sets[i], config.target_oracle, config.image_temperature,
                                 config.k, scorer, tau, config.description_prompt);
          break;
      }
      rec.signal = v.signal;
      rec.statistic = v.statistic;
      rec.score = v.MemberScore();
      rec.membership = v.membership;
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      rec.error = e.what();
    }
  });

  report.aggregates = ComputeAggregates(report.records);
  const QueryCounters after = client.counters();
  report.counters = {after.queries - before.queries, after.cache_hits - before.cache_hits,
                     after.cache_misses - before.cache_misses,
                     after.backend_attempts - before.backend_attempts,
                     after.failures - before.failures};
  return report;
}

// Keeps samples whose response at the attack's lowest temperature has a
// character count in [lo, hi).
inline std::vector<Sample> FilterByResponseLength(const ExperimentConfig& config,
                                                  ExperimentEnvironment& env,
                                                  std::span<const Sample> pool, double lo,
                                                  double hi) {
  std::vector<char> keep(pool.size(), 0);
  const double t = config.LowestTemperature();
  ParallelFor(pool.size(), config.EffectiveThreads(), [&](size_t i) {
    const auto& s = pool[i];
    const auto text =
        config.attack == AttackKind::kImageOnly
            ? env.client->Query(config.target_oracle, s, config.description_prompt, t, 0).text
            : env.client->Query(config.target_oracle, s, t, 0).text;
    const auto len = static_cast<double>(text.size());
    keep[i] = len >= lo && len < hi;
  });
  std::vector<Sample> out;
  for (size_t i = 0; i < pool.size(); ++i) {
    if (keep[i]) out.push_back(pool[i]);
  }
  return out;
}

}  // namespace internal

// Samples member and non-member target sets, runs the configured attack on
// each, and aggregates AUC over member scores and accuracy/precision/recall
// over verdicts. Errors on individual sets are recorded, not fatal;
// configuration errors abort the run.
inline ExperimentReport RunExperiment(const ExperimentConfig& config, ExperimentEnvironment& env) {
  config.Validate();
  const auto pools = internal::BuildPools(config, env);
  std::optional<ShadowAttack> shadow;
  if (config.attack == AttackKind::kShadow && config.n_sets > 0) {
    ShadowConfig sc;
    sc.granularity = config.EffectiveShadowGranularity();
    sc.n_sets = config.shadow_n_sets;
    sc.temperatures = config.temperatures;
    sc.seed = CombineSeeds(config.seed, 4);
    sc.hyperparameters = config.hyperparameters;
    sc.threshold = config.EffectiveTau();
    sc.threads = config.EffectiveThreads();
    const SimilarityScorer scorer(SimilarityMetric::Parse(config.metric), env.embeddings);
    shadow = ShadowAttack::Fit(*env.client, env.shadow, config.shadow_oracle, sc, scorer);
  }
  const QueryCounters before = env.client->counters();
  auto report = internal::RunTrials(config, env, pools, shadow);

  for (size_t b = 0; b + 1 < config.length_bucket_edges.size(); ++b) {
    BucketReport bucket;
    bucket.min_chars = config.length_bucket_edges[b];
    bucket.max_chars = config.length_bucket_edges[b + 1];
    internal::Pools filtered;
    filtered.members = internal::FilterByResponseLength(config, env, pools.members,
                                                        bucket.min_chars, bucket.max_chars);
    filtered.nonmembers = internal::FilterByResponseLength(config, env, pools.nonmembers,
                                                           bucket.min_chars, bucket.max_chars);
    filtered.reference = internal::FilterByResponseLength(config, env, pools.reference,
                                                          bucket.min_chars, bucket.max_chars);
    try {
      bucket.report = internal::RunTrials(config, env, filtered, shadow);
    } catch (const InvalidInputError& e) {
      bucket.skipped = e.what();
      bucket.report.attack = report.attack;
      bucket.report.signal_kind = report.signal_kind;
      bucket.report.config = report.config;
    }
    report.buckets.push_back(std::move(bucket));
  }
  const QueryCounters after = env.client->counters();
  report.counters = {after.queries - before.queries, after.cache_hits - before.cache_hits,
                     after.cache_misses - before.cache_misses,
                     after.backend_attempts - before.backend_attempts,
                     after.failures - before.failures};
  return report;
}

inline ExperimentReport RunExperiment(const ExperimentConfig& config) {
  auto env = PrepareEnvironment(config);
  return RunExperiment(config, env);
}

}  // namespace vlmaudit

#endif  // VLMAUDIT_HARNESS_HPP_
