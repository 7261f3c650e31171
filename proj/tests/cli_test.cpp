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

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vlmaudit/harness.hpp"

#ifndef VLMAUDIT_CLI_PATH
#error "VLMAUDIT_CLI_PATH must name the CLI binary"
#endif

namespace vlmaudit {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct RunResult {
  int code = -1;
  std::string out;
};

// Runs the CLI with `args`, capturing stdout and stderr together.
RunResult Cli(const std::string& args) {
  const std::string cmd = std::string(VLMAUDIT_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string Q(const fs::path& p) { return "'" + p.string() + "'"; }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto r = Cli("simulate build --out " + Q(dir_.path()) +
                       " --seed 3 --members 80 --nonmembers 80");
    ASSERT_EQ(r.code, 0) << r.out;
  }
  fs::path config() const { return dir_.path() / "config.json"; }
  TempDir dir_;
};

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(Cli("").code, 2);
  EXPECT_EQ(Cli("frobnicate").code, 2);
  EXPECT_EQ(Cli("attack ref-nonmember").code, 2);  // --config is required
  EXPECT_EQ(Cli("attack bogus --config x.json").code, 2);
  EXPECT_EQ(Cli("--help").code, 0);
}

TEST_F(CliTest, SimulateBuildWritesWorld) {
  for (const char* f : {"target.jsonl", "shadow.jsonl", "target_oracle.json", "shadow_oracle.json",
                        "config.json"}) {
    EXPECT_TRUE(fs::exists(dir_.path() / f)) << f;
  }
  EXPECT_EQ(LoadDataset(dir_.path() / "target.jsonl").size(), 160u);
  const auto cfg = ExperimentConfig::Load(config());
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.target_oracle, "target");
}

TEST_F(CliTest, AttackEmitsReportAndRerunIsWarm) {
  const std::string args = "attack ref-nonmember --config " + Q(config()) + " --g 5 --n-sets 15";
  const auto first = Cli(args);
  ASSERT_EQ(first.code, 0) << first.out;
  EXPECT_NE(first.out.find("auc="), std::string::npos);
  const fs::path report = dir_.path() / "report";
  for (const char* f : {"report.json", "roc.csv", "scores.csv"}) {
    EXPECT_TRUE(fs::exists(report / f)) << f;
  }
  auto r1 = ReportToJson(LoadReport(report));
  EXPECT_EQ(r1["records"].size(), 30u);
  EXPECT_EQ(r1["config"]["g_target"], 5);

  const auto second = Cli(args);
  ASSERT_EQ(second.code, 0) << second.out;
  EXPECT_NE(second.out.find("cache_misses=0"), std::string::npos) << second.out;
  auto r2 = ReportToJson(LoadReport(report));
  r1.erase("counters");
  r2.erase("counters");
  EXPECT_EQ(r1, r2);
}

TEST_F(CliTest, OverridesAndOutputDirectory) {
  const fs::path out = dir_.path() / "elsewhere";
  const auto r = Cli("attack target-only --config " + Q(config()) +
                     " --g 4 --n-sets 6 --t-low 0.2 --t-high 1.4 --metric embedding --tau 0.1 --seed 9"
                     " --het-ratio 0.25 --out " + Q(out));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = ReportToJson(LoadReport(out));
  EXPECT_EQ(j["config"]["t_low"], 0.2);
  EXPECT_EQ(j["config"]["t_high"], 1.4);
  EXPECT_EQ(j["config"]["metric"], "embedding");
  EXPECT_EQ(j["config"]["tau"], 0.1);
  EXPECT_EQ(j["config"]["seed"], 9);
  EXPECT_EQ(j["config"]["heterogeneity_ratio"], 0.25);

  const auto img = Cli("attack image-only --config " + Q(config()) +
                       " --g 3 --n-sets 4 --k 2 --temps 0.7 --out " + Q(dir_.path() / "img"));
  ASSERT_EQ(img.code, 0) << img.out;
  const auto ji = ReportToJson(LoadReport(dir_.path() / "img"));
  EXPECT_EQ(ji["config"]["k"], 2);
  EXPECT_EQ(ji["config"]["image_temperature"], 0.7);
}

TEST_F(CliTest, ConfigurationErrorsExitTwo) {
  EXPECT_EQ(Cli("attack ref-nonmember --config " + Q(dir_.path() / "missing.json")).code, 2);
  EXPECT_EQ(Cli("attack ref-nonmember --config " + Q(config()) + " --het-ratio 1.5").code, 2);
  EXPECT_EQ(Cli("attack ref-nonmember --config " + Q(config()) + " --g 0").code, 2);
  EXPECT_EQ(Cli("attack ref-nonmember --config " + Q(config()) + " --metric bleu").code, 2);
  // Not enough samples for the requested sets.
  EXPECT_EQ(Cli("attack ref-nonmember --config " + Q(config()) + " --g 500 --n-sets 2").code, 2);
}

TEST_F(CliTest, ReportRecomputeDetectsTampering) {
  ASSERT_EQ(Cli("attack ref-member --config " + Q(config()) + " --g 5 --n-sets 10").code, 0);
  const fs::path report = dir_.path() / "report" / "report.json";
  const auto ok = Cli("report recompute --report " + Q(report.parent_path()));
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("consistent=yes"), std::string::npos);

  nlohmann::json j;
  std::ifstream(report) >> j;
  j["aggregates"]["auc"] = 0.123;
  std::ofstream(report, std::ios::trunc) << j.dump();
  const auto bad = Cli("report recompute --report " + Q(report));
  EXPECT_EQ(bad.code, 4) << bad.out;
  EXPECT_NE(bad.out.find("consistent=no"), std::string::npos);
}

TEST_F(CliTest, CacheStatsAndPurge) {
  ASSERT_EQ(Cli("attack ref-nonmember --config " + Q(config()) + " --g 3 --n-sets 5").code, 0);
  const std::string cache = Q(dir_.path() / "cache");
  const auto stats = Cli("cache stats --dir " + cache);
  ASSERT_EQ(stats.code, 0);
  EXPECT_EQ(stats.out.find("entries=0 "), std::string::npos) << stats.out;
  ASSERT_EQ(Cli("cache purge --dir " + cache).code, 0);
  EXPECT_NE(Cli("cache stats --dir " + cache).out.find("entries=0 "), std::string::npos);
  EXPECT_EQ(Cli("cache wipe --dir " + cache).code, 2);
}

TEST(Cli, UnreachableRemoteOracleExitsThree) {
  TempDir dir;
  {
    std::ofstream d(dir.path() / "d.jsonl");
    for (int i = 0; i < 4; ++i) {
      const std::string bytes = "image-" + std::to_string(i);
      nlohmann::json rec = {{"id", "s" + std::to_string(i)},
                            {"image", {{"b64", Base64Encode(bytes)}}},
                            {"question", "what is shown?"},
                            {"answer", "a cat"},
                            {"membership", i < 2}};
      d << rec.dump() << '\n';
    }
  }
  nlohmann::json cfg = {
      {"attack", "target-only"},
      {"target_oracle", "remote"},
      {"target_dataset", "d.jsonl"},
      {"g_target", 1},
      {"n_sets", 2},
      {"output_dir", "report"},
      {"oracles",
       {{{"id", "remote"}, {"kind", "remote"}, {"endpoint", "http://127.0.0.1:1/generate"},
         {"timeout_seconds", 2}}}}};
  std::ofstream(dir.path() / "c.json") << cfg.dump();
  const auto r = Cli("attack target-only --config " + Q(dir.path() / "c.json"));
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_TRUE(fs::exists(dir.path() / "report" / "report.json"));
}

}  // namespace
}  // namespace vlmaudit
