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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vlmaudit/harness.hpp"

namespace vlmaudit {
namespace {

namespace fs = std::filesystem;
using testing::MakeSample;
using testing::ScriptedBackend;
using testing::TempDir;
using testing::WriteSimulatedWorld;

void WriteText(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

SimulationConfig SmallSim(int per_class = 120) {
  SimulationConfig c;
  c.members = c.nonmembers = per_class;
  return c;
}

// ---------------------------------------------------------------------------
// Datasets

TEST(LoadDataset, EmptyFileIsEmpty) {
  TempDir dir;
  WriteText(dir.path() / "d.jsonl", "");
  EXPECT_TRUE(LoadDataset(dir.path() / "d.jsonl").empty());
}

TEST(LoadDataset, PreservesOrderAndOptionalAnswer) {
  TempDir dir;
  const std::vector<Sample> in = {MakeSample("c", "x y", true), MakeSample("a", "y z", false),
                                  MakeSample("b", "z w")};
  WriteDataset(dir.path() / "d.jsonl", in);
  auto lines = LoadDataset(dir.path() / "d.jsonl");
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0].id, "c");
  EXPECT_EQ(lines[1].id, "a");
  EXPECT_EQ(lines[2].id, "b");
  EXPECT_FALSE(lines[2].membership.has_value());

  WriteText(dir.path() / "noanswer.jsonl",
            "{\"id\":\"q\",\"image\":{\"sha256\":\"ab\"},\"question\":\"describe\"}\n\n");
  const auto na = LoadDataset(dir.path() / "noanswer.jsonl");
  ASSERT_EQ(na.size(), 1u);
  EXPECT_FALSE(na[0].answer.has_value());
}

TEST(LoadDataset, MalformedRecordNamesLine) {
  TempDir dir;
  std::ostringstream os;
  os << SampleToJson(MakeSample("a", "x")).dump() << "\n\n{\"id\": \"b\", \"question\": }\n";
  WriteText(dir.path() / "d.jsonl", os.str());
  try {
    LoadDataset(dir.path() / "d.jsonl");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("d.jsonl:3"), std::string::npos) << e.what();
  }
  WriteText(dir.path() / "e.jsonl", "{\"id\":\"b\",\"question\":\"q\"}\n");
  try {
    LoadDataset(dir.path() / "e.jsonl");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("e.jsonl:1"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, DuplicateIdsRejected) {
  TempDir dir;
  WriteDataset(dir.path() / "d.jsonl", std::vector<Sample>{MakeSample("a", "x"), MakeSample("a", "y")});
  EXPECT_THROW(LoadDataset(dir.path() / "d.jsonl"), ConfigError);
}

TEST(LoadDataset, HashOnlyImageWhenBytesRequiredNamesId) {
  TempDir dir;
  WriteText(dir.path() / "d.jsonl",
            "{\"id\":\"img-42\",\"image\":{\"sha256\":\"ab\"},\"question\":\"q\"}\n");
  EXPECT_NO_THROW(LoadDataset(dir.path() / "d.jsonl"));
  try {
    LoadDataset(dir.path() / "d.jsonl", true);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("img-42"), std::string::npos);
  }
}

TEST(LoadDataset, RelativeImagePathsResolveAgainstDatasetDir) {
  TempDir dir;
  fs::create_directories(dir.path() / "imgs");
  std::ofstream(dir.path() / "imgs" / "one.png", std::ios::binary) << "PNGDATA";
  WriteText(dir.path() / "d.jsonl", "{\"id\":\"p\",\"image\":{\"sha256\":\"" +
                                        Sha256Hex("PNGDATA") +
                                        "\",\"path\":\"imgs/one.png\"},\"question\":\"q\"}\n");
  const auto s = LoadDataset(dir.path() / "d.jsonl", true);
  EXPECT_EQ(s[0].image.LoadBytes(s[0].id), "PNGDATA");
}

TEST(LoadDataset, MissingFileIsIoError) {
  EXPECT_THROW(LoadDataset("/nonexistent/file.jsonl"), IoError);
}

// ---------------------------------------------------------------------------
// Set sampling

std::vector<Sample> Pool(const std::string& prefix, size_t n, bool member) {
  std::vector<Sample> out;
  for (size_t i = 0; i < n; ++i) out.push_back(MakeSample(prefix + std::to_string(i), "a b", member));
  return out;
}

size_t CountMembers(const SampleSet& s) {
  size_t n = 0;
  for (const auto& x : s.samples()) n += *x.membership;
  return n;
}

TEST(SampleSets, HomogeneousSets) {
  const auto members = Pool("m", 50, true);
  const auto sets = SampleSets(members, 10, 30, 1);
  ASSERT_EQ(sets.size(), 30u);
  for (const auto& s : sets) {
    EXPECT_EQ(s.granularity(), 10u);
    EXPECT_EQ(CountMembers(s), 10u);
    EXPECT_EQ(s.label(), true);
  }
}

TEST(SampleSets, ContaminantCountIsRounded) {
  const auto members = Pool("m", 50, true), nonmembers = Pool("n", 50, false);
  for (const auto& s : SampleSets(members, 10, 20, 2, 0.2, nonmembers)) {
    EXPECT_EQ(CountMembers(s), 8u);
    EXPECT_EQ(s.label(), true);
  }
  for (const auto& s : SampleSets(members, 7, 20, 2, 0.25, nonmembers)) {
    EXPECT_EQ(CountMembers(s), 5u);  // round(1.75) = 2 contaminants
  }
}

TEST(SampleSets, LabelIsMajorityMembership) {
  const auto members = Pool("m", 50, true), nonmembers = Pool("n", 50, false);
  for (const auto& s : SampleSets(members, 10, 5, 3, 0.6, nonmembers)) {
    EXPECT_EQ(s.label(), false);
  }
  for (const auto& s : SampleSets(members, 10, 5, 3, 0.5, nonmembers)) {
    EXPECT_EQ(s.label(), true);  // tie goes to the main source
  }
}

TEST(SampleSets, MirrorCompositionUnderSwappedPools) {
  const auto a = Pool("a", 60, true), b = Pool("b", 60, false);
  for (double r : {0.0, 0.2, 0.3, 0.4, 0.7, 1.0}) {
    const auto left = SampleSets(a, 10, 10, 4, r, b);
    const auto right = SampleSets(b, 10, 10, 4, 1.0 - r, a);
    for (size_t i = 0; i < left.size(); ++i) {
      EXPECT_EQ(CountMembers(left[i]), CountMembers(right[i])) << "r=" << r;
    }
  }
}

TEST(SampleSets, DeterministicAndWithoutReplacement) {
  const auto members = Pool("m", 30, true), nonmembers = Pool("n", 30, false);
  const auto a = SampleSets(members, 12, 10, 5, 0.25, nonmembers);
  const auto b = SampleSets(members, 12, 10, 5, 0.25, nonmembers);
  for (size_t i = 0; i < a.size(); ++i) {
    std::set<std::string> ids;
    for (size_t j = 0; j < a[i].granularity(); ++j) {
      EXPECT_EQ(a[i].samples()[j].id, b[i].samples()[j].id);
      ids.insert(a[i].samples()[j].id);
    }
    EXPECT_EQ(ids.size(), 12u);
  }
}

TEST(SampleSets, InsufficientPools) {
  const auto members = Pool("m", 5, true), nonmembers = Pool("n", 1, false);
  EXPECT_THROW(SampleSets(members, 6, 1, 0), InvalidInputError);
  EXPECT_THROW(SampleSets(members, 5, 1, 0, 0.4, nonmembers), InvalidInputError);
  EXPECT_THROW(SampleSets(members, 5, 1, 0, 0.2), InvalidInputError);  // no contaminant pool
  EXPECT_THROW(SampleSets(members, 5, 1, 0, 1.5, nonmembers), InvalidInputError);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(ExperimentConfig, JsonRoundTripAndRelativePaths) {
  TempDir dir;
  ExperimentConfig c;
  c.attack = AttackKind::kImageOnly;
  c.target_oracle = "t";
  c.target_dataset = "data/target.jsonl";
  c.cache_dir = "cache";
  c.output_dir = "out";
  c.tau = 0.3;
  c.length_bucket_edges = {0, 100, 200};
  c.hyperparameters.max_epochs = 7;
  OracleConfig o;
  o.id = "t";
  o.kind = "simulated";
  o.spec_path = "t.json";
  c.oracles.push_back(o);
  const auto j = c.ToJson();
  const auto back = ExperimentConfig::FromJson(j, dir.path());
  EXPECT_EQ(back.attack, AttackKind::kImageOnly);
  EXPECT_EQ(back.tau, 0.3);
  EXPECT_EQ(back.hyperparameters.max_epochs, 7);
  EXPECT_EQ(back.target_dataset, (dir.path() / "data/target.jsonl").string());
  EXPECT_EQ(back.cache_dir, (dir.path() / "cache").string());
  EXPECT_EQ(back.output_dir, (dir.path() / "out").string());
  EXPECT_EQ(back.oracles[0].spec_path, (dir.path() / "t.json").string());
  EXPECT_EQ(ExperimentConfig::FromJson(j).ToJson(), j);
}

TEST(ExperimentConfig, DefaultsPerAttack) {
  ExperimentConfig c;
  EXPECT_EQ(c.n_sets, 200u);
  EXPECT_EQ(c.EffectiveTau(), 0.05);
  c.attack = AttackKind::kImageOnly;
  EXPECT_EQ(c.EffectiveTau(), 0.5);
  c.attack = AttackKind::kShadow;
  EXPECT_EQ(c.EffectiveTau(), 0.5);
  c.g_target = 30;
  EXPECT_EQ(c.EffectiveReferenceGranularity(), 30u);
  c.g_reference = 5;
  EXPECT_EQ(c.EffectiveReferenceGranularity(), 5u);
}

TEST(ExperimentConfig, ValidationFailures) {
  ExperimentConfig c;
  c.target_oracle = "t";
  c.target_dataset = "d";
  EXPECT_NO_THROW(c.Validate());
  auto bad = c;
  bad.heterogeneity_ratio = 1.2;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.g_target = 0;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.length_bucket_edges = {0, 50, 50};
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.t_low = 1.6;
  bad.t_high = 0.1;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.metric = "bleu";
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.attack = AttackKind::kShadow;
  EXPECT_THROW(bad.Validate(), ConfigError);
  EXPECT_THROW(ExperimentConfig::FromJson(nlohmann::json{{"attack", "nope"}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::Load("/nonexistent.json"), ConfigError);
}

// ---------------------------------------------------------------------------
// Experiments and reports

TEST(RunExperiment, ZeroSetsGivesEmptyReportWithUndefinedAggregates) {
  TempDir dir;
  auto w = WriteSimulatedWorld(dir.path(), SmallSim(30), 1, AttackKind::kReferenceNonMember);
  w.config.n_sets = 0;
  const auto r = RunExperiment(w.config);
  EXPECT_TRUE(r.records.empty());
  EXPECT_FALSE(r.aggregates.auc.has_value());
  EXPECT_FALSE(r.aggregates.accuracy.has_value());
  const auto j = ReportToJson(r);
  EXPECT_TRUE(j["aggregates"]["auc"].is_null());
  EXPECT_TRUE(AggregatesConsistent(r));
}

TEST(RunExperiment, ReferenceSplitKeepsTargetAndReferenceDisjoint) {
  TempDir dir;
  auto w = WriteSimulatedWorld(dir.path(), SmallSim(40), 2, AttackKind::kReferenceNonMember);
  auto env = PrepareEnvironment(w.config);
  const auto pools = internal::BuildPools(w.config, env);
  EXPECT_EQ(pools.nonmembers.size() + pools.reference.size(), 40u);
  std::set<std::string> ids;
  for (const auto& s : pools.nonmembers) ids.insert(s.id);
  for (const auto& s : pools.reference) EXPECT_EQ(ids.count(s.id), 0u);
  for (const auto& s : pools.reference) EXPECT_FALSE(*s.membership);
}

TEST(RunExperiment, RecordsAndAggregates) {
  TempDir dir;
  auto w = WriteSimulatedWorld(dir.path(), SmallSim(), 3, AttackKind::kReferenceNonMember);
  w.config.g_target = 10;
  w.config.n_sets = 30;
  const auto r = RunExperiment(w.config);
  ASSERT_EQ(r.records.size(), 60u);
  EXPECT_EQ(r.records.front().set_id, "m-00000");
  EXPECT_EQ(r.records.back().set_id, "n-00029");
  for (size_t i = 0; i < r.records.size(); ++i) EXPECT_EQ(r.records[i].label, i < 30);
  EXPECT_EQ(r.signal_kind, "p-value");
  ASSERT_TRUE(r.aggregates.auc.has_value());
  EXPECT_GT(*r.aggregates.auc, 0.8);
  // One query per sample at one temperature: 60 target sets plus 2n = 60
  // reference sets of 10. Samples reused across sets hit the cache.
  EXPECT_EQ(r.counters.queries, 1200u);
  EXPECT_EQ(r.counters.cache_hits + r.counters.cache_misses, 1200u);
  EXPECT_LT(r.counters.cache_misses, 240u);  // at most 240 distinct samples exist
  EXPECT_EQ(r.config["g_target"], 10);
}

TEST(RunExperiment, LabelsComeFromDatasetNotOracle) {
  TempDir dir;
  auto w = WriteSimulatedWorld(dir.path(), SmallSim(), 4, AttackKind::kTargetOnly);
  w.config.g_target = 10;
  w.config.n_sets = 40;
  w.config.metric = "embedding";
  const auto normal = RunExperiment(w.config);
  ASSERT_GT(*normal.aggregates.auc, 0.5);

  // Same scores with flipped labels: the AUC complements exactly.
  auto flipped = normal.records;
  for (auto& rec : flipped) rec.label = !rec.label;
  EXPECT_NEAR(*ComputeAggregates(flipped).auc, 1.0 - *normal.aggregates.auc, 1e-15);

  // Flipping the dataset's membership flags makes the attack rank the
  // former non-members as members.
  auto samples = LoadDataset(w.config.target_dataset);
  for (auto& s : samples) s.membership = !*s.membership;
  WriteDataset(dir.path() / "inverted.jsonl", samples);
  auto inverted_cfg = w.config;
  inverted_cfg.target_dataset = (dir.path() / "inverted.jsonl").string();
  const auto inverted = RunExperiment(inverted_cfg);
  EXPECT_LT(*inverted.aggregates.auc, 0.5);
}

TEST(RunExperiment, PerSetErrorsAreRecordedConfigErrorsAbort) {
  TempDir dir;
  auto w = WriteSimulatedWorld(dir.path(), SmallSim(40), 5, AttackKind::kTargetOnly);
  w.config.g_target = 4;
  w.config.n_sets = 10;
  w.config.threads = 2;
  auto env = PrepareEnvironment(w.config);
  // Replace the target with a backend that fails for one image.
  const std::string poisoned = env.target[0].image.sha256;
  env.client = std::make_shared<OracleClient>(nullptr, 4, RetryPolicy{2, std::chrono::milliseconds(0), 1.0});
  env.client->Register(std::make_shared<ScriptedBackend>(
      "target", [&](const Sample& s, const std::string&, double t, int, int) -> std::string {
        if (s.image.sha256 == poisoned) throw TransportError("boom", 1);
        return t < 1.0 ? *s.answer : "tok1 tok2 tok3";
      }));
  const auto r = RunExperiment(w.config, env);
  size_t errors = 0;
  for (const auto& rec : r.records) errors += !rec.ok();
  EXPECT_EQ(r.aggregates.errors, errors);
  EXPECT_EQ(r.aggregates.records, 20u);
  EXPECT_TRUE(AggregatesConsistent(r));

  auto broken = w.config;
  broken.target_oracle = "missing";
  auto env2 = PrepareEnvironment(w.config);
  EXPECT_THROW(RunExperiment(broken, env2), ConfigError);
}

TEST(RunExperiment, WarmCacheRerunsAreBitIdentical) {
  TempDir dir;
  auto w = WriteSimulatedWorld(dir.path(), SmallSim(), 6, AttackKind::kImageOnly);
  w.config.g_target = 8;
  w.config.n_sets = 20;
  w.config.k = 4;
  w.config.threads = 4;
  w.config.cache_dir = (dir.path() / "cache").string();
  const auto r1 = ReportToJson(RunExperiment(w.config));
  const auto r2 = ReportToJson(RunExperiment(w.config));
  const auto r3 = ReportToJson(RunExperiment(w.config));
  EXPECT_EQ(r2.dump(), r3.dump());
  EXPECT_EQ(r2["counters"]["cache_misses"], 0);
  auto strip = [](nlohmann::json j) {
    j.erase("counters");
    return j.dump();
  };
  EXPECT_EQ(strip(r1), strip(r2));
}

TEST(EmitReport, RoundTripAndRocTable) {
  TempDir dir;
  auto w = WriteSimulatedWorld(dir.path(), SmallSim(), 7, AttackKind::kReferenceNonMember);
  w.config.g_target = 5;
  w.config.n_sets = 40;
  const auto r = RunExperiment(w.config);
  const auto files = EmitReport(r, dir.path() / "out");
  const auto loaded = LoadReport(dir.path() / "out");
  EXPECT_TRUE(AggregatesConsistent(loaded));
  EXPECT_EQ(ReportToJson(loaded), ReportToJson(r));
  EXPECT_EQ(loaded.records, r.records);

  std::set<double> distinct;
  for (const auto& rec : r.records) distinct.insert(rec.score);
  const auto roc = LoadRocTable(files.roc);
  EXPECT_EQ(roc.size(), distinct.size() + 2);
  EXPECT_NEAR(TrapezoidArea(roc), *r.aggregates.auc, 1e-9);

  std::ifstream scores(files.scores);
  std::string line;
  size_t rows = 0;
  while (std::getline(scores, line)) ++rows;
  EXPECT_EQ(rows, r.records.size() + 1);
}

TEST(EmitReport, TamperedAggregatesAreDetected) {
  TempDir dir;
  auto w = WriteSimulatedWorld(dir.path(), SmallSim(40), 8, AttackKind::kReferenceNonMember);
  w.config.g_target = 5;
  w.config.n_sets = 10;
  auto r = RunExperiment(w.config);
  r.records[0].score += 100.0;
  EXPECT_FALSE(AggregatesConsistent(r));
}

TEST(EmitReport, NonFiniteValuesSurviveJson) {
  ExperimentReport r;
  r.attack = "ref-nonmember";
  r.signal_kind = "p-value";
  r.config = nlohmann::json::object();
  r.records.push_back({"m-00000", true, 0.0, INFINITY, INFINITY, true, ""});
  r.records.push_back({"n-00000", false, 1.0, -INFINITY, -INFINITY, false, ""});
  r.aggregates = ComputeAggregates(r.records);
  const auto back = ReportFromJson(nlohmann::json::parse(ReportToJson(r).dump()));
  EXPECT_EQ(back.records, r.records);
  EXPECT_TRUE(AggregatesConsistent(back));
}

TEST(EmitReport, UnwritableDirectoryNamesPath) {
  TempDir dir;
  WriteText(dir.path() / "file", "x");
  try {
    EmitReport(ExperimentReport{}, dir.path() / "file" / "sub");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("sub"), std::string::npos);
  }
}

TEST(LengthBuckets, ProduceSubReports) {
  TempDir dir;
  auto w = WriteSimulatedWorld(dir.path(), SmallSim(), 9, AttackKind::kReferenceNonMember);
  w.config.g_target = 5;
  w.config.n_sets = 20;
  w.config.length_bucket_edges = {0, 150, 1000, 1e9};
  const auto r = RunExperiment(w.config);
  ASSERT_EQ(r.buckets.size(), 3u);
  EXPECT_EQ(r.buckets[0].max_chars, 150);
  EXPECT_EQ(r.buckets[1].min_chars, 150);
  // Simulated answers are 12-48 words of 4-5 characters; nothing exceeds 1000.
  EXPECT_FALSE(r.buckets[2].skipped.empty());
  for (const auto& b : r.buckets) {
    if (b.skipped.empty()) {
      EXPECT_EQ(b.report.records.size(), 40u);
    }
  }
  EXPECT_TRUE(AggregatesConsistent(r));
  const auto back = ReportFromJson(ReportToJson(r));
  EXPECT_EQ(back.buckets.size(), 3u);
}

}  // namespace
}  // namespace vlmaudit
