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

// A desk-scale stand-in for a fine-tuned vision-language model.
//
// Every known image maps to a profile: a ground-truth token sequence and, per
// position, a vector of vocabulary scores. The ground-truth token's score is
// raised by the sample's affinity (how guessable the answer is, shared by
// members and non-members) plus a membership margin, which is larger for
// samples the simulated model was trained on. Generation samples each
// position from softmax(scores / T).

#ifndef VLMAUDIT_SIMULATED_HPP_
#define VLMAUDIT_SIMULATED_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlmaudit/errors.hpp"
#include "vlmaudit/hashing.hpp"
#include "vlmaudit/oracle.hpp"
#include "vlmaudit/random.hpp"
#include "vlmaudit/similarity.hpp"

namespace vlmaudit {

struct SimulationConfig {
  int vocab_size = 64;
  int min_length = 12;
  int max_length = 48;
  double member_margin = 4.0;
  double nonmember_margin = 1.0;
  // Standard deviation of the per-sample ground-truth affinity.
  double affinity_stddev = 3.0;
  int members = 1000;
  int nonmembers = 1000;

  void Validate() const {
    if (members <= 0 || nonmembers <= 0) {
      throw InvalidInputError("simulated member and non-member counts must be positive");
    }
    if (vocab_size < 2) throw InvalidInputError("vocab_size must be at least 2");
    if (min_length < 1 || max_length < min_length) {
      throw InvalidInputError("invalid sequence length range");
    }
    if (!std::isfinite(member_margin) || !std::isfinite(nonmember_margin)) {
      throw InvalidInputError("margins must be finite");
    }
    if (member_margin < nonmember_margin) {
      throw InvalidInputError("member margin must not be below the non-member margin");
    }
    if (!(affinity_stddev >= 0.0) || !std::isfinite(affinity_stddev)) {
      throw InvalidInputError("affinity_stddev must be finite and non-negative");
    }
  }

  nlohmann::json ToJson() const {
    return {{"vocab_size", vocab_size},       {"min_length", min_length},
            {"max_length", max_length},       {"member_margin", member_margin},
            {"nonmember_margin", nonmember_margin}, {"affinity_stddev", affinity_stddev},
            {"members", members},             {"nonmembers", nonmembers}};
  }

  static SimulationConfig FromJson(const nlohmann::json& j) {
    SimulationConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.min_length = j.value("min_length", c.min_length);
    c.max_length = j.value("max_length", c.max_length);
    c.member_margin = j.value("member_margin", c.member_margin);
    c.nonmember_margin = j.value("nonmember_margin", c.nonmember_margin);
    c.affinity_stddev = j.value("affinity_stddev", c.affinity_stddev);
    c.members = j.value("members", c.members);
    c.nonmembers = j.value("nonmembers", c.nonmembers);
    return c;
  }
};

inline std::string TokenWord(int token) { return "tok" + std::to_string(token); }

inline std::string TokensToText(std::span<const int> tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += TokenWord(tokens[i]);
  }
  return out;
}

// Inverse of TokensToText; rejects words outside the vocabulary.
inline std::vector<int> TextToTokens(std::string_view text, int vocab_size) {
  std::vector<int> tokens;
  for (const auto& word : Tokenize(text)) {
    int id = -1;
    if (word.size() > 3 && word.starts_with("tok")) {
      try {
        size_t used = 0;
        id = std::stoi(word.substr(3), &used);
        if (used != word.size() - 3) id = -1;
      } catch (const std::exception&) {
        id = -1;
      }
    }
    if (id < 0 || id >= vocab_size) {
      throw ConfigError("'" + word + "' is not a simulated vocabulary token");
    }
    tokens.push_back(id);
  }
  return tokens;
}

// softmax(scores / T), shifted by the maximum for stability.
inline std::vector<double> SoftmaxWithTemperature(std::span<const double> scores,
                                                  double temperature) {
  if (!(temperature > 0.0)) throw InvalidInputError("temperature must be positive");
  if (scores.empty()) throw InvalidInputError("empty score vector");
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp((scores[i] - top) / temperature);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

struct SimulatedSampleProfile {
  std::vector<int> token_sequence;
  int vocab_size = 0;
  std::vector<double> base_scores;  // token_sequence.size() x vocab_size
  double margin = 0.0;
  double affinity = 0.0;

  size_t length() const { return token_sequence.size(); }

  // Scores at one position, with the ground-truth token boosted.
  std::vector<double> ScoresAt(size_t position) const {
    const auto v = static_cast<size_t>(vocab_size);
    std::vector<double> s(base_scores.begin() + static_cast<ptrdiff_t>(position * v),
                          base_scores.begin() + static_cast<ptrdiff_t>((position + 1) * v));
    s[static_cast<size_t>(token_sequence[position])] += affinity + margin;
    return s;
  }

  static SimulatedSampleProfile Make(std::vector<int> tokens, int vocab_size, double margin,
                                     double affinity_stddev, uint64_t seed) {
    SimulatedSampleProfile p;
    p.token_sequence = std::move(tokens);
    p.vocab_size = vocab_size;
    p.margin = margin;
    Rng rng(seed);
    p.affinity = affinity_stddev * rng.Normal();
    p.base_scores.resize(p.token_sequence.size() * static_cast<size_t>(vocab_size));
    for (double& b : p.base_scores) b = rng.Normal();
    return p;
  }
};

// Samples one token per position; deterministic in (profile, T, seed).
inline std::vector<int> SimulatedGenerateTokens(const SimulatedSampleProfile& profile,
                                                double temperature, uint64_t seed) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidInputError("temperature must be positive");
  }
  Rng rng(seed);
  std::vector<int> out;
  out.reserve(profile.length());
  for (size_t pos = 0; pos < profile.length(); ++pos) {
    const auto p = SoftmaxWithTemperature(profile.ScoresAt(pos), temperature);
    const double u = rng.Uniform();
    double acc = 0.0;
    int chosen = static_cast<int>(p.size()) - 1;
    for (size_t j = 0; j < p.size(); ++j) {
      acc += p[j];
      if (u < acc) {
        chosen = static_cast<int>(j);
        break;
      }
    }
    out.push_back(chosen);
  }
  return out;
}

inline std::string SimulatedGenerate(const SimulatedSampleProfile& profile, double temperature,
                                     uint64_t seed) {
  return TokensToText(SimulatedGenerateTokens(profile, temperature, seed));
}

// Everything needed to reconstruct a simulated oracle.
struct SimulatedOracleSpec {
  struct Entry {
    std::string sample_id;
    std::string image_sha256;
    std::string answer;
    bool member = false;
  };

  std::string id;
  uint64_t seed = 0;
  SimulationConfig config;
  std::vector<Entry> entries;

  nlohmann::json ToJson() const {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& e : entries) {
      samples.push_back({{"id", e.sample_id}, {"image_sha256", e.image_sha256},
                         {"answer", e.answer}, {"member", e.member}});
    }
    return {{"kind", "simulated"}, {"id", id}, {"seed", seed},
            {"config", config.ToJson()}, {"samples", samples}};
  }

  static SimulatedOracleSpec FromJson(const nlohmann::json& j) {
    if (j.value("kind", "") != "simulated") throw ConfigError("not a simulated oracle spec");
    SimulatedOracleSpec s;
    s.id = j.at("id").get<std::string>();
    s.seed = j.at("seed").get<uint64_t>();
    s.config = SimulationConfig::FromJson(j.at("config"));
    for (const auto& e : j.at("samples")) {
      s.entries.push_back({e.at("id").get<std::string>(), e.at("image_sha256").get<std::string>(),
                           e.at("answer").get<std::string>(), e.at("member").get<bool>()});
    }
    return s;
  }
};

class SimulatedOracle final : public OracleBackend {
 public:
  explicit SimulatedOracle(SimulatedOracleSpec spec) : spec_(std::move(spec)) {
    for (const auto& e : spec_.entries) {
      const double margin = e.member ? spec_.config.member_margin : spec_.config.nonmember_margin;
      auto profile = SimulatedSampleProfile::Make(
          TextToTokens(e.answer, spec_.config.vocab_size), spec_.config.vocab_size, margin,
          spec_.config.affinity_stddev, CombineSeeds(spec_.seed, Fnv1a64(e.image_sha256)));
      if (!profiles_.emplace(e.image_sha256, std::move(profile)).second) {
        throw ConfigError("duplicate image in simulated oracle " + spec_.id);
      }
    }
  }

  std::string id() const override { return spec_.id; }
  const SimulatedOracleSpec& spec() const { return spec_; }

  const SimulatedSampleProfile& ProfileFor(const std::string& image_sha256) const {
    auto it = profiles_.find(image_sha256);
    if (it == profiles_.end()) {
      throw ConfigError("image " + image_sha256 + " is unknown to simulated oracle " + spec_.id);
    }
    return it->second;
  }

  std::string Generate(const Sample& sample, const std::string& question, double temperature,
                       int repeat_index) override {
    const auto& profile = ProfileFor(sample.image.sha256);
    return SimulatedGenerate(profile, temperature,
                             GenerationSeed(sample.image.sha256, question, temperature, repeat_index));
  }

  uint64_t GenerationSeed(const std::string& image_sha256, const std::string& question,
                          double temperature, int repeat_index) const {
    uint64_t s = CombineSeeds(spec_.seed, Fnv1a64(image_sha256));
    s = CombineSeeds(s, Fnv1a64(question));
    s = CombineSeeds(s, static_cast<uint64_t>(QueryKey::RoundTemperature(temperature)));
    return CombineSeeds(s, static_cast<uint64_t>(repeat_index));
  }

  std::optional<std::vector<std::string>> DeclaredMemberIds() const override {
    std::vector<std::string> ids;
    for (const auto& e : spec_.entries) {
      if (e.member) ids.push_back(e.sample_id);
    }
    return ids;
  }

 private:
  SimulatedOracleSpec spec_;
  std::map<std::string, SimulatedSampleProfile> profiles_;
};

struct SimulatedDataset {
  std::vector<Sample> members;
  std::vector<Sample> nonmembers;
  SimulatedOracleSpec oracle;

  std::vector<Sample> AllSamples() const {
    std::vector<Sample> all = members;
    all.insert(all.end(), nonmembers.begin(), nonmembers.end());
    return all;
  }
};

// Deterministic in (config, seed, oracle_id).
inline SimulatedDataset BuildSimulatedDataset(const SimulationConfig& config, uint64_t seed,
                                              const std::string& oracle_id = "sim") {
  config.Validate();
  SimulatedDataset ds;
  ds.oracle.id = oracle_id;
  ds.oracle.seed = seed;
  ds.oracle.config = config;
  Rng rng(CombineSeeds(seed, Fnv1a64(oracle_id)));

  auto make = [&](int index, bool member) {
    char tag[32];
    std::snprintf(tag, sizeof(tag), "%s%05d", member ? "m" : "n", index);
    Sample s;
    s.id = oracle_id + "-" + tag;
    s.image = ImageRef::FromBytes("vlmaudit simulated image\n" + oracle_id + "\n" + tag +
                                  "\n" + std::to_string(seed));
    s.question = "What does image " + std::string(tag) + " show?";
    const auto length = rng.Between(config.min_length, config.max_length);
    std::vector<int> tokens(static_cast<size_t>(length));
    for (int& t : tokens) t = static_cast<int>(rng.Below(static_cast<uint64_t>(config.vocab_size)));
    s.answer = TokensToText(tokens);
    s.membership = member;
    ds.oracle.entries.push_back({s.id, s.image.sha256, *s.answer, member});
    return s;
  };
  for (int i = 0; i < config.members; ++i) ds.members.push_back(make(i, true));
  for (int i = 0; i < config.nonmembers; ++i) ds.nonmembers.push_back(make(i, false));
  return ds;
}

}  // namespace vlmaudit

#endif  // VLMAUDIT_SIMULATED_HPP_
