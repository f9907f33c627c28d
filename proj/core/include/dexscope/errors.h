// Copyright 2026 The Dexscope Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DEXSCOPE_ERRORS_H_
#define DEXSCOPE_ERRORS_H_

#include <stdexcept>
#include <string>

namespace dexscope {

// Invalid configuration, model, or task description. Raised before any
// simulation or training work starts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values during integration or optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File-system and serialization failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Clip or checkpoint written by an incompatible schema version.
class VersionError : public IoError {
 public:
  using IoError::IoError;
};

// A record is present but does not parse or lacks a required field.
class MalformedRecordError : public IoError {
 public:
  MalformedRecordError(const std::string& what, long record_index)
      : IoError(what), record_index_(record_index) {}
  long record_index() const { return record_index_; }

 private:
  long record_index_;
};

// The file ended before the declared number of records.
class TruncatedFileError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace dexscope

#endif  // DEXSCOPE_ERRORS_H_
