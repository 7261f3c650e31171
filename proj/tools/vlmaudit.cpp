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

// vlmaudit command-line front end.
//
//   vlmaudit attack <kind> --config cfg.json [overrides]
//   vlmaudit simulate build --out dir [--seed N]
//   vlmaudit cache stats|purge --dir path
//   vlmaudit report recompute --report dir

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vlmaudit/harness.hpp"

namespace {

namespace fs = std::filesystem;
using namespace vlmaudit;

enum ExitCode { kOk = 0, kConfig = 2, kTransport = 3, kInternal = 4 };

struct AttackOptions {
  std::string kind;
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  std::optional<size_t> g;
  std::optional<size_t> n_sets;
  std::string temps;
  std::optional<double> t_low;
  std::optional<double> t_high;
  std::optional<int> k;
  std::optional<double> tau;
  std::string metric;
  std::optional<double> het_ratio;
};

std::vector<double> ParseTemperatureList(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("bad temperature in --temps: " + item);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--temps is empty");
  return out;
}

int RunAttack(const AttackOptions& o) {
  auto config = ExperimentConfig::Load(o.config);
  config.attack = ParseAttackKind(o.kind);
  if (o.seed) config.seed = *o.seed;
  if (!o.out.empty()) config.output_dir = o.out;
  if (o.g) config.g_target = *o.g;
  if (o.n_sets) config.n_sets = *o.n_sets;
  if (!o.temps.empty()) {
    const auto temps = ParseTemperatureList(o.temps);
    // A single value sets the query temperature of the single-temperature
    // attacks; a list replaces the shadow grid.
    if (temps.size() == 1) {
      config.temperature = temps[0];
      config.image_temperature = temps[0];
    }
    config.temperatures = temps;
  }
  if (o.t_low) config.t_low = *o.t_low;
  if (o.t_high) config.t_high = *o.t_high;
  if (o.k) config.k = *o.k;
  if (o.tau) config.tau = *o.tau;
  if (!o.metric.empty()) config.metric = o.metric;
  if (o.het_ratio) config.heterogeneity_ratio = *o.het_ratio;

  const auto report = RunExperiment(config);
  const auto files = EmitReport(report, config.output_dir);
  const auto& a = report.aggregates;
  auto show = [](const std::optional<double>& v) {
    return v ? internal::FormatDouble(*v) : std::string("undefined");
  };
  std::printf("attack=%s sets=%zu errors=%zu auc=%s accuracy=%s precision=%s recall=%s\n",
              report.attack.c_str(), a.records, a.errors, show(a.auc).c_str(),
              show(a.accuracy).c_str(), show(a.precision).c_str(), show(a.recall).c_str());
  std::printf("queries=%llu cache_hits=%llu cache_misses=%llu\n",
              static_cast<unsigned long long>(report.counters.queries),
              static_cast<unsigned long long>(report.counters.cache_hits),
              static_cast<unsigned long long>(report.counters.cache_misses));
  std::printf("report written to %s\n", files.report.string().c_str());
  if (a.records > 0 && a.errors == a.records) {
    std::fprintf(stderr, "every set failed; first error: %s\n", report.records.front().error.c_str());
    return kTransport;
  }
  return kOk;
}

void WriteJsonFile(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out.flush()) throw IoError("cannot write " + path.string());
}

int SimulateBuild(const fs::path& out, uint64_t seed, const SimulationConfig& sim) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  const auto target = BuildSimulatedDataset(sim, seed, "target");
  const auto shadow = BuildSimulatedDataset(sim, CombineSeeds(seed, 1), "shadow");
  WriteDataset(out / "target.jsonl", target.AllSamples());
  WriteDataset(out / "shadow.jsonl", shadow.AllSamples());
  WriteJsonFile(out / "target_oracle.json", target.oracle.ToJson());
  WriteJsonFile(out / "shadow_oracle.json", shadow.oracle.ToJson());

  ExperimentConfig config;
  config.target_oracle = "target";
  config.shadow_oracle = "shadow";
  for (const char* id : {"target", "shadow"}) {
    OracleConfig oc;
    oc.id = id;
    oc.kind = "simulated";
    oc.spec_path = std::string(id) + "_oracle.json";
    config.oracles.push_back(oc);
  }
  config.target_dataset = "target.jsonl";
  config.shadow_dataset = "shadow.jsonl";
  config.seed = seed;
  config.output_dir = "report";
  config.cache_dir = "cache";
  WriteJsonFile(out / "config.json", config.ToJson());
  std::printf("wrote %zu target and %zu shadow samples to %s\n",
              target.members.size() + target.nonmembers.size(),
              shadow.members.size() + shadow.nonmembers.size(), out.string().c_str());
  return kOk;
}

int CacheCommand(const std::string& action, const fs::path& dir) {
  DirectoryResponseCache cache(dir);
  if (action == "stats") {
    const auto s = cache.ComputeStats();
    std::printf("entries=%zu bytes=%llu\n", s.entries, static_cast<unsigned long long>(s.bytes));
  } else {
    std::printf("removed %zu entries\n", cache.Purge());
  }
  return kOk;
}

int ReportRecompute(const fs::path& path) {
  auto report = LoadReport(path);
  const bool consistent = AggregatesConsistent(report);
  const auto recomputed = ComputeAggregates(report.records);
  const auto auc = recomputed.auc ? internal::FormatDouble(*recomputed.auc) : "undefined";
  std::printf("records=%zu auc=%s consistent=%s\n", recomputed.records, auc.c_str(),
              consistent ? "yes" : "no");
  if (!consistent) {
    std::fprintf(stderr, "stored aggregates do not match the per-set records\n");
    return kInternal;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set-level membership inference audits against vision-language model oracles"};
  app.require_subcommand(1);

  AttackOptions attack;
  auto* attack_cmd = app.add_subcommand("attack", "run an attack experiment and emit a report");
  attack_cmd->add_option("kind", attack.kind, "shadow|ref-nonmember|ref-member|target-only|image-only")
      ->required()
      ->check(CLI::IsMember({"shadow", "ref-nonmember", "ref-member", "target-only", "image-only"}));
  attack_cmd->add_option("--config", attack.config, "experiment configuration (JSON)")->required();
  attack_cmd->add_option("--seed", attack.seed, "experiment seed");
  attack_cmd->add_option("--out", attack.out, "output directory");
  attack_cmd->add_option("--g", attack.g, "target set granularity");
  attack_cmd->add_option("--n-sets", attack.n_sets, "sets per class");
  attack_cmd->add_option("--temps", attack.temps, "comma-separated temperatures");
  attack_cmd->add_option("--t-low", attack.t_low, "low temperature (target-only)");
  attack_cmd->add_option("--t-high", attack.t_high, "high temperature (target-only)");
  attack_cmd->add_option("--k", attack.k, "repeats per image (image-only)");
  attack_cmd->add_option("--tau", attack.tau, "decision threshold");
  attack_cmd->add_option("--metric", attack.metric, "rouge2 | embedding[:provider]");
  attack_cmd->add_option("--het-ratio", attack.het_ratio, "fraction of opposite-membership samples");

  auto* simulate_cmd = app.add_subcommand("simulate", "simulated datasets and oracles");
  simulate_cmd->require_subcommand(1);
  auto* build_cmd = simulate_cmd->add_subcommand("build", "write datasets, oracle specs, and a config");
  std::string sim_out;
  uint64_t sim_seed = 0;
  SimulationConfig sim;
  build_cmd->add_option("--out", sim_out, "output directory")->required();
  build_cmd->add_option("--seed", sim_seed, "simulation seed");
  build_cmd->add_option("--members", sim.members, "members per dataset");
  build_cmd->add_option("--nonmembers", sim.nonmembers, "non-members per dataset");
  build_cmd->add_option("--member-margin", sim.member_margin, "ground-truth margin for members");
  build_cmd->add_option("--nonmember-margin", sim.nonmember_margin, "ground-truth margin for non-members");

  auto* cache_cmd = app.add_subcommand("cache", "inspect or clear a response cache");
  std::string cache_action, cache_dir;
  cache_cmd->add_option("action", cache_action, "stats|purge")
      ->required()
      ->check(CLI::IsMember({"stats", "purge"}));
  cache_cmd->add_option("--dir", cache_dir, "cache directory")->required();

  auto* report_cmd = app.add_subcommand("report", "report utilities");
  std::string report_action, report_path;
  report_cmd->add_option("action", report_action, "recompute")
      ->required()
      ->check(CLI::IsMember({"recompute"}));
  report_cmd->add_option("--report", report_path, "report directory or report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*attack_cmd) return RunAttack(attack);
    if (*build_cmd) return SimulateBuild(sim_out, sim_seed, sim);
    if (*cache_cmd) return CacheCommand(cache_action, cache_dir);
    if (*report_cmd) return ReportRecompute(report_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfig;
  } catch (const InvalidInputError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kConfig;
  } catch (const TransportError& e) {
    std::fprintf(stderr, "transport failure: %s\n", e.what());
    return kTransport;
  } catch (const QueryError& e) {
    std::fprintf(stderr, "oracle failure: %s\n", e.what());
    return kTransport;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternal;
  }
  return kInternal;
}
