/*
 * Copyright 2026 The tec Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef TEC_ERROR_HPP_
#define TEC_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace tec {

/*! \brief Stable error categories surfaced to callers and the CLI. */
enum class ErrorCode {
  kUnknownOperator,
  kShapeMismatch,
  kFoldOverflow,
  kUnboundAxis,
  kDuplicateIntrinsic,
  kInvalidFactor,
  kIllegalReorder,
  kIllegalAnnotation,
  kIllegalBind,
  kBindConflict,
  kIllegalComputeAt,
  kScopeError,
  kCapacityError,
  kTensorizeMismatch,
  kLoweringError,
  kBoundsError,
  kDeadlockError,
  kRaceError,
  kNotEnoughData,
  kIOError,
  kInternal,
};

const char* error_code_name(ErrorCode code);

/*! \brief Single exception type; the code tells callers what went wrong. */
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

// Internal invariant check. Not for user input validation.
#define TEC_CHECK(cond, msg)                                    \
  do {                                                          \
    if (!(cond)) ::tec::fail(::tec::ErrorCode::kInternal, msg); \
  } while (0)

}  // namespace tec

#endif  // TEC_ERROR_HPP_
