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
#include "tec/error.hpp"

namespace tec {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownOperator:
      return "UnknownOperator";
    case ErrorCode::kShapeMismatch:
      return "ShapeMismatch";
    case ErrorCode::kFoldOverflow:
      return "FoldOverflow";
    case ErrorCode::kUnboundAxis:
      return "UnboundAxis";
    case ErrorCode::kDuplicateIntrinsic:
      return "DuplicateIntrinsic";
    case ErrorCode::kInvalidFactor:
      return "InvalidFactor";
    case ErrorCode::kIllegalReorder:
      return "IllegalReorder";
    case ErrorCode::kIllegalAnnotation:
      return "IllegalAnnotation";
    case ErrorCode::kIllegalBind:
      return "IllegalBind";
    case ErrorCode::kBindConflict:
      return "BindConflict";
    case ErrorCode::kIllegalComputeAt:
      return "IllegalComputeAt";
    case ErrorCode::kScopeError:
      return "ScopeError";
    case ErrorCode::kCapacityError:
      return "CapacityError";
    case ErrorCode::kTensorizeMismatch:
      return "TensorizeMismatch";
    case ErrorCode::kLoweringError:
      return "LoweringError";
    case ErrorCode::kBoundsError:
      return "BoundsError";
    case ErrorCode::kDeadlockError:
      return "DeadlockError";
    case ErrorCode::kRaceError:
      return "RaceError";
    case ErrorCode::kNotEnoughData:
      return "NotEnoughData";
    case ErrorCode::kIOError:
      return "IOError";
    case ErrorCode::kInternal:
      return "Internal";
  }
  return "Unknown";
}

}  // namespace tec
