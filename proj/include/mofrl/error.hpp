// Copyright 2026 The mofrl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mofrl {

enum class ErrorCode {
  kEmptyInput,
  kNoComponents,
  kEmptyCorpus,
  kShapeMismatch,
  kSequenceTooLong,
  kLengthMismatch,
  kNonFiniteLoss,
  kNonFiniteGradient,
  kEmptySplit,
  kZeroAttempts,
  kInvalidArgument,
  kConfigError,
  kDatasetError,
  kMissingColumn,
  kUnparseableRow,
  kIoError,
  kFormatError,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kNoComponents: return "NoComponents";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kSequenceTooLong: return "SequenceTooLong";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kZeroAttempts: return "ZeroAttempts";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kDatasetError: return "DatasetError";
    case ErrorCode::kMissingColumn: return "MissingColumn";
    case ErrorCode::kUnparseableRow: return "UnparseableRow";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kFormatError: return "FormatError";
  }
  return "Unknown";
}

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mofrl
