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

// HTTP clients for remote oracles and embedding providers.
//
// Oracle:    POST {"image_b64", "prompt", "temperature", "max_tokens"}
//            -> {"text"} or {"refusal"}
// Embedding: POST {"texts": [...]} -> {"embeddings": [[...], ...]}

#ifndef VLMAUDIT_REMOTE_HPP_
#define VLMAUDIT_REMOTE_HPP_

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "vlmaudit/errors.hpp"
#include "vlmaudit/hashing.hpp"
#include "vlmaudit/oracle.hpp"
#include "vlmaudit/similarity.hpp"

namespace vlmaudit {

// "http://host:port/path" split into the client base and request path.
struct Endpoint {
  std::string base;
  std::string path;

  static Endpoint Parse(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint needs a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
  }
};

struct HttpOptions {
  std::string auth_token;  // sent as "Authorization: Bearer <token>" when set
  std::chrono::seconds timeout{60};
};

namespace internal {

// One POST. Throws TransportError for retryable failures (connection errors,
// 408, 429, 5xx, unparseable bodies) and ConfigError for other 4xx responses.
inline nlohmann::json PostJson(const Endpoint& endpoint, const HttpOptions& options,
                               const nlohmann::json& body) {
  httplib::Client client(endpoint.base);
  client.set_connection_timeout(options.timeout);
  client.set_read_timeout(options.timeout);
  client.set_write_timeout(options.timeout);
  httplib::Headers headers;
  if (!options.auth_token.empty()) {
    headers.emplace("Authorization", "Bearer " + options.auth_token);
  }
  auto res = client.Post(endpoint.path, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError(endpoint.base + endpoint.path + ": " + httplib::to_string(res.error()), 1);
  }
  nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
  if (parsed.is_object() && parsed.contains("refusal") && parsed["refusal"].is_string()) {
    throw RefusalError(parsed["refusal"].get<std::string>(), "");
  }
  const int status = res->status;
  if (status == 408 || status == 429 || status >= 500) {
    throw TransportError(endpoint.path + " returned HTTP " + std::to_string(status), 1);
  }
  if (status >= 400) {
    throw ConfigError(endpoint.base + endpoint.path + " rejected the request with HTTP " +
                      std::to_string(status));
  }
  if (parsed.is_discarded()) throw TransportError("response body is not JSON", 1);
  return parsed;
}

}  // namespace internal

class RemoteOracle final : public OracleBackend {
 public:
  RemoteOracle(std::string id, const std::string& url, HttpOptions options, int max_tokens,
               std::optional<std::vector<std::string>> member_ids = std::nullopt)
      : id_(std::move(id)),
        endpoint_(Endpoint::Parse(url)),
        options_(std::move(options)),
        max_tokens_(max_tokens),
        member_ids_(std::move(member_ids)) {}

  std::string id() const override { return id_; }

  // Temperature is forwarded verbatim.
  std::string Generate(const Sample& sample, const std::string& question, double temperature,
                       int /*repeat_index*/) override {
    const nlohmann::json body = {{"image_b64", Base64Encode(sample.image.LoadBytes(sample.id))},
                                 {"prompt", question},
                                 {"temperature", temperature},
                                 {"max_tokens", max_tokens_}};
    const auto reply = internal::PostJson(endpoint_, options_, body);
    if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
      throw TransportError("oracle response lacks a string 'text' field", 1);
    }
    return reply["text"].get<std::string>();
  }

  std::optional<std::vector<std::string>> DeclaredMemberIds() const override {
    return member_ids_;
  }

 private:
  std::string id_;
  Endpoint endpoint_;
  HttpOptions options_;
  int max_tokens_;
  std::optional<std::vector<std::string>> member_ids_;
};

// Embeddings from a remote service. Retries transport failures itself since
// it is called from scorers rather than through OracleClient.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
 public:
  RemoteEmbeddingProvider(std::string id, const std::string& url, HttpOptions options,
                          RetryPolicy retry = {})
      : id_(std::move(id)), endpoint_(Endpoint::Parse(url)), options_(std::move(options)),
        retry_(retry) {}

  std::string id() const override { return id_; }

  // Zero until the first successful response fixes it.
  size_t dimension() const override {
    std::lock_guard lock(mu_);
    return dimension_;
  }

  std::vector<EmbeddingVector> EmbedBatch(std::span<const std::string> texts) override {
    const nlohmann::json body = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
    auto backoff = retry_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      try {
        return Decode(internal::PostJson(endpoint_, options_, body), texts.size());
      } catch (const TransportError& e) {
        if (attempt >= retry_.max_attempts) {
          throw TransportError("embedding provider " + id_ + " unreachable after " +
                                   std::to_string(attempt) + " attempts: " + e.what(),
                               attempt);
        }
      }
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::duration_cast<std::chrono::milliseconds>(
          backoff * retry_.backoff_multiplier);
    }
  }

 private:
  std::vector<EmbeddingVector> Decode(const nlohmann::json& reply, size_t expected) {
    if (!reply.is_object() || !reply.contains("embeddings") || !reply["embeddings"].is_array()) {
      throw TransportError("embedding response lacks an 'embeddings' array", 1);
    }
    const auto& rows = reply["embeddings"];
    if (rows.size() != expected) {
      throw TransportError("embedding response has " + std::to_string(rows.size()) +
                               " rows for " + std::to_string(expected) + " texts",
                           1);
    }
    std::vector<EmbeddingVector> out;
    out.reserve(rows.size());
    std::lock_guard lock(mu_);
    for (const auto& row : rows) {
      EmbeddingVector v{row.get<std::vector<double>>()};
      if (dimension_ == 0) dimension_ = v.dimension();
      if (v.dimension() != dimension_) {
        throw InvariantError("embedding provider " + id_ + " changed dimension from " +
                             std::to_string(dimension_) + " to " +
                             std::to_string(v.dimension()));
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  std::string id_;
  Endpoint endpoint_;
  HttpOptions options_;
  RetryPolicy retry_;
  mutable std::mutex mu_;
  size_t dimension_ = 0;
};

}  // namespace vlmaudit

#endif  // VLMAUDIT_REMOTE_HPP_
