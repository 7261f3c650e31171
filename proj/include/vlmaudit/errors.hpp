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

#ifndef VLMAUDIT_ERRORS_HPP_
#define VLMAUDIT_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace vlmaudit {

// Root of every error the library throws. The CLI maps subclasses onto
// process exit codes (see ExitCodeFor in tools/).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller handed the library something outside an operation's contract.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent configuration, dataset, or oracle registration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// The network or remote backend failed, possibly after retries.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(what), attempts_(attempts) {}

  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

// A query could not be answered. Carries the cache key that failed.
class QueryError : public Error {
 public:
  QueryError(const std::string& what, std::string key)
      : Error(what + " [key " + key + "]"), key_(std::move(key)) {}

  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// The backend answered but declined to produce content.
class RefusalError : public QueryError {
 public:
  using QueryError::QueryError;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, int epoch)
      : Error(what), epoch_(epoch) {}

  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A library invariant was violated; indicates a bug rather than bad input.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace vlmaudit

#endif  // VLMAUDIT_ERRORS_HPP_
