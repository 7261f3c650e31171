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

// Black-box access to a vision-language model at a caller-chosen
// temperature. OracleClient fronts every backend with a content-addressed
// response cache, bounded retries, a concurrency bound, and query counters.

#ifndef VLMAUDIT_ORACLE_HPP_
#define VLMAUDIT_ORACLE_HPP_

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <unistd.h>

#include "json.hpp"
#include "vlmaudit/errors.hpp"
#include "vlmaudit/hashing.hpp"

namespace vlmaudit {

// Content-addressed image. `bytes` and `path` are optional; when bytes are
// present their SHA-256 must equal `sha256`.
struct ImageRef {
  std::string sha256;
  std::optional<std::string> path;
  std::optional<std::string> bytes;

  static ImageRef FromBytes(std::string data) {
    ImageRef ref;
    ref.sha256 = Sha256Hex(data);
    ref.bytes = std::move(data);
    return ref;
  }

  bool HashMatches() const { return !bytes || Sha256Hex(*bytes) == sha256; }

  // Bytes from memory or disk. Throws when neither is available.
  std::string LoadBytes(const std::string& owner_id) const {
    if (bytes) return *bytes;
    if (!path) {
      throw ConfigError("sample " + owner_id +
                        ": image has only a hash but its bytes are required");
    }
    std::ifstream in(*path, std::ios::binary);
    if (!in) throw IoError("sample " + owner_id + ": cannot read image " + *path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (Sha256Hex(data) != sha256) {
      throw ConfigError("sample " + owner_id + ": image hash does not match " + *path);
    }
    return data;
  }
};

// One image-question-answer tuple.
struct Sample {
  std::string id;
  ImageRef image;
  std::string question;
  std::optional<std::string> answer;  // absent for image-only use
  std::optional<bool> membership;     // evaluation ground truth only
};

inline nlohmann::json SampleToJson(const Sample& s) {
  nlohmann::json image = {{"sha256", s.image.sha256}};
  if (s.image.path) image["path"] = *s.image.path;
  if (s.image.bytes) image["b64"] = Base64Encode(*s.image.bytes);
  nlohmann::json j = {{"id", s.id}, {"image", image}, {"question", s.question}};
  if (s.answer) j["answer"] = *s.answer;
  if (s.membership) j["membership"] = *s.membership;
  return j;
}

// Throws InvalidInputError describing the first schema violation.
inline Sample SampleFromJson(const nlohmann::json& j) {
  auto require_string = [&](const nlohmann::json& obj, const char* key) {
    if (!obj.contains(key) || !obj[key].is_string()) {
      throw InvalidInputError(std::string("missing or non-string field '") + key + "'");
    }
    return obj[key].get<std::string>();
  };
  if (!j.is_object()) throw InvalidInputError("record is not an object");
  Sample s;
  s.id = require_string(j, "id");
  if (s.id.empty()) throw InvalidInputError("empty id");
  if (!j.contains("image") || !j["image"].is_object()) {
    throw InvalidInputError("missing 'image' object");
  }
  const auto& img = j["image"];
  if (img.contains("b64")) {
    s.image.bytes = Base64Decode(require_string(img, "b64"));
  }
  if (img.contains("path")) s.image.path = require_string(img, "path");
  if (img.contains("sha256")) {
    s.image.sha256 = require_string(img, "sha256");
  } else if (s.image.bytes) {
    s.image.sha256 = Sha256Hex(*s.image.bytes);
  } else {
    throw InvalidInputError("image needs 'sha256' or 'b64'");
  }
  if (!s.image.HashMatches()) throw InvalidInputError("image sha256 does not match b64 content");
  s.question = require_string(j, "question");
  if (j.contains("answer") && !j["answer"].is_null()) s.answer = require_string(j, "answer");
  if (j.contains("membership") && !j["membership"].is_null()) {
    const auto& m = j["membership"];
    if (m.is_boolean()) s.membership = m.get<bool>();
    else if (m.is_number_integer() && (m.get<int>() == 0 || m.get<int>() == 1))
      s.membership = m.get<int>() == 1;
    else throw InvalidInputError("'membership' must be a boolean or 0/1");
  }
  return s;
}

// Identity of one query. Temperatures are keyed at 1e-3 resolution.
struct QueryKey {
  std::string oracle_id;
  std::string image_sha256;
  std::string question;
  int64_t temperature_milli = 0;
  int repeat_index = 0;

  static int64_t RoundTemperature(double t) { return std::llround(t * 1000.0); }

  nlohmann::json ToJson() const {
    return {{"oracle_id", oracle_id},
            {"image_sha256", image_sha256},
            {"question", question},
            {"temperature_milli", temperature_milli},
            {"repeat_index", repeat_index}};
  }

  static QueryKey FromJson(const nlohmann::json& j) {
    return {j.at("oracle_id").get<std::string>(), j.at("image_sha256").get<std::string>(),
            j.at("question").get<std::string>(), j.at("temperature_milli").get<int64_t>(),
            j.at("repeat_index").get<int>()};
  }

  // Hex SHA-256 over a length-prefixed encoding of the tuple.
  std::string Hash() const {
    std::string buf;
    auto put = [&](const std::string& s) {
      buf += std::to_string(s.size());
      buf += ':';
      buf += s;
    };
    put(oracle_id);
    put(image_sha256);
    put(question);
    put(std::to_string(temperature_milli));
    put(std::to_string(repeat_index));
    return Sha256Hex(buf);
  }

  bool operator==(const QueryKey&) const = default;
};

struct OracleResponse {
  std::string text;
  double temperature = 0.0;
  int repeat_index = 0;
  std::string oracle_id;
  bool cached = false;
};

// A model that can be asked about an image. Implementations throw
// TransportError for retryable failures and RefusalError for content refusals.
class OracleBackend {
 public:
  virtual ~OracleBackend() = default;
  virtual std::string id() const = 0;
  virtual std::string Generate(const Sample& sample, const std::string& question,
                               double temperature, int repeat_index) = 0;
  // Sample ids the backend declares it was trained on, when known. Shadow
  // inference needs this to split its dataset.
  virtual std::optional<std::vector<std::string>> DeclaredMemberIds() const {
    return std::nullopt;
  }
};

class ResponseCache {
 public:
  virtual ~ResponseCache() = default;
  virtual std::optional<std::string> Lookup(const QueryKey& key) = 0;
  virtual void Store(const QueryKey& key, const std::string& text) = 0;
};

class MemoryResponseCache final : public ResponseCache {
 public:
  std::optional<std::string> Lookup(const QueryKey& key) override {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key.Hash());
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void Store(const QueryKey& key, const std::string& text) override {
    std::lock_guard lock(mu_);
    entries_[key.Hash()] = text;
  }

  size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> entries_;
};

// One file per key under `root`, named by the key hash. The first line is the
// key tuple as compact JSON; the rest of the file is the response text.
// Writes go to a temporary file that is then renamed into place.
class DirectoryResponseCache final : public ResponseCache {
 public:
  explicit DirectoryResponseCache(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw IoError("cannot create cache directory " + root_.string() + ": " + ec.message());
  }

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path PathFor(const QueryKey& key) const { return root_ / key.Hash(); }

  std::optional<std::string> Lookup(const QueryKey& key) override {
    std::ifstream in(PathFor(key), std::ios::binary);
    if (!in) return std::nullopt;
    std::string header;
    std::getline(in, header);
    // A foreign or corrupt entry is treated as a miss and later overwritten.
    try {
      if (!(QueryKey::FromJson(nlohmann::json::parse(header)) == key)) return std::nullopt;
    } catch (const std::exception&) {
      return std::nullopt;
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

  void Store(const QueryKey& key, const std::string& text) override {
    const auto final_path = PathFor(key);
    const auto tmp = root_ / (".tmp-" + key.Hash() + "-" + UniqueSuffix());
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write cache entry " + tmp.string());
      out << key.ToJson().dump() << '\n' << text;
      if (!out.flush()) throw IoError("cannot write cache entry " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, final_path, ec);
    if (ec) {
      std::filesystem::remove(tmp, ec);
      throw IoError("cannot commit cache entry " + final_path.string());
    }
  }

  struct Stats {
    size_t entries = 0;
    uintmax_t bytes = 0;
  };

  Stats ComputeStats() const {
    Stats s;
    for (const auto& e : std::filesystem::directory_iterator(root_)) {
      if (!e.is_regular_file() || e.path().filename().string().starts_with(".tmp-")) continue;
      ++s.entries;
      s.bytes += e.file_size();
    }
    return s;
  }

  // Removes every entry; returns how many were removed.
  size_t Purge() {
    size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(root_)) {
      if (e.is_regular_file()) {
        std::filesystem::remove(e.path());
        ++n;
      }
    }
    return n;
  }

 private:
  static std::string UniqueSuffix() {
    static std::atomic<uint64_t> counter{0};
    std::ostringstream os;
    os << ::getpid() << "-" << std::this_thread::get_id() << "-" << counter.fetch_add(1);
    return os.str();
  }

  std::filesystem::path root_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double backoff_multiplier = 2.0;
};

struct QueryCounters {
  uint64_t queries = 0;
  uint64_t cache_hits = 0;
  uint64_t cache_misses = 0;
  uint64_t backend_attempts = 0;
  uint64_t failures = 0;

  bool operator==(const QueryCounters&) const = default;
};

// Shared entry point for all attacks. Thread-safe.
class OracleClient {
 public:
  explicit OracleClient(std::shared_ptr<ResponseCache> cache = nullptr,
                        size_t max_in_flight = 8, RetryPolicy retry = {})
      : cache_(cache ? std::move(cache) : std::make_shared<MemoryResponseCache>()),
        max_in_flight_(max_in_flight == 0 ? 1 : max_in_flight),
        retry_(retry) {}

  void Register(std::shared_ptr<OracleBackend> backend) {
    std::lock_guard lock(registry_mu_);
    backends_[backend->id()] = std::move(backend);
  }

  std::shared_ptr<OracleBackend> Find(const std::string& oracle_id) const {
    std::lock_guard lock(registry_mu_);
    auto it = backends_.find(oracle_id);
    if (it == backends_.end()) throw ConfigError("oracle not registered: " + oracle_id);
    return it->second;
  }

  OracleResponse Query(const std::string& oracle_id, const Sample& sample,
                       double temperature, int repeat_index = 0) {
    return Query(oracle_id, sample, sample.question, temperature, repeat_index);
  }

  // Asks `question` about the sample's image instead of the sample's own
  // question (image-only inference uses a fixed description prompt).
  OracleResponse Query(const std::string& oracle_id, const Sample& sample,
                       const std::string& question, double temperature, int repeat_index) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw InvalidInputError("temperature must be positive, got " + std::to_string(temperature));
    }
    if (repeat_index < 0) throw InvalidInputError("repeat_index must be non-negative");
    auto backend = Find(oracle_id);
    const QueryKey key{oracle_id, sample.image.sha256, question,
                       QueryKey::RoundTemperature(temperature), repeat_index};
    queries_.fetch_add(1);

    OracleResponse response{"", temperature, repeat_index, oracle_id, false};
    if (auto hit = cache_->Lookup(key)) {
      hits_.fetch_add(1);
      response.text = std::move(*hit);
      response.cached = true;
      return response;
    }
    misses_.fetch_add(1);
    response.text = Dispatch(*backend, key, sample, question, temperature, repeat_index);
    cache_->Store(key, response.text);
    return response;
  }

  QueryCounters counters() const {
    return {queries_.load(), hits_.load(), misses_.load(), attempts_.load(), failures_.load()};
  }

  void ResetCounters() {
    queries_ = hits_ = misses_ = attempts_ = failures_ = 0;
  }

  ResponseCache& cache() { return *cache_; }

 private:
  class Slot {
   public:
    explicit Slot(OracleClient& c) : c_(c) {
      std::unique_lock lock(c_.slot_mu_);
      c_.slot_cv_.wait(lock, [&] { return c_.in_flight_ < c_.max_in_flight_; });
      ++c_.in_flight_;
    }
    ~Slot() {
      {
        std::lock_guard lock(c_.slot_mu_);
        --c_.in_flight_;
      }
      c_.slot_cv_.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    OracleClient& c_;
  };

  std::string Dispatch(OracleBackend& backend, const QueryKey& key, const Sample& sample,
                       const std::string& question, double temperature, int repeat_index) {
    auto backoff = retry_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
      attempts_.fetch_add(1);
      try {
        Slot slot(*this);
        return backend.Generate(sample, question, temperature, repeat_index);
      } catch (const RefusalError& e) {
        failures_.fetch_add(1);
        throw RefusalError(std::string("oracle refused: ") + e.what(), key.Hash());
      } catch (const TransportError& e) {
        last_error = e.what();
      }
      if (attempt < retry_.max_attempts) {
        std::this_thread::sleep_for(backoff);
        backoff = std::chrono::duration_cast<std::chrono::milliseconds>(
            backoff * retry_.backoff_multiplier);
      }
    }
    failures_.fetch_add(1);
    throw QueryError("query failed after " + std::to_string(retry_.max_attempts) +
                         " attempts: " + last_error,
                     key.Hash());
  }

  std::shared_ptr<ResponseCache> cache_;
  size_t max_in_flight_;
  RetryPolicy retry_;

  mutable std::mutex registry_mu_;
  std::map<std::string, std::shared_ptr<OracleBackend>> backends_;

  std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  size_t in_flight_ = 0;

  std::atomic<uint64_t> queries_{0}, hits_{0}, misses_{0}, attempts_{0}, failures_{0};
};

}  // namespace vlmaudit

#endif  // VLMAUDIT_ORACLE_HPP_
