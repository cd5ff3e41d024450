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
#ifndef TEC_SCOPE_HPP_
#define TEC_SCOPE_HPP_

#include <string>

#include "tec/error.hpp"

namespace tec {

/*!
 * \brief Storage scope of a buffer.
 *
 * Global is off-chip. Shared is one instance per thread block, visible
 * across threadIdx lanes. Local is private per thread. The Accel scopes
 * name the accelerator's on-chip SRAMs.
 */
enum class MemoryScope {
  kGlobal,
  kShared,
  kLocal,
  kAccelActivation,
  kAccelWeight,
  kAccelAccum,
};

inline const char* scope_name(MemoryScope s) {
  switch (s) {
    case MemoryScope::kGlobal:
      return "global";
    case MemoryScope::kShared:
      return "shared";
    case MemoryScope::kLocal:
      return "local";
    case MemoryScope::kAccelActivation:
      return "accel.activation";
    case MemoryScope::kAccelWeight:
      return "accel.weight";
    case MemoryScope::kAccelAccum:
      return "accel.accum";
  }
  return "?";
}

inline MemoryScope scope_from_name(const std::string& s) {
  if (s == "global") return MemoryScope::kGlobal;
  if (s == "shared") return MemoryScope::kShared;
  if (s == "local") return MemoryScope::kLocal;
  if (s == "accel.activation") return MemoryScope::kAccelActivation;
  if (s == "accel.weight") return MemoryScope::kAccelWeight;
  if (s == "accel.accum") return MemoryScope::kAccelAccum;
  fail(ErrorCode::kIOError, "unknown memory scope '" + s + "'");
}

inline bool is_accel_scope(MemoryScope s) {
  return s == MemoryScope::kAccelActivation ||
         s == MemoryScope::kAccelWeight || s == MemoryScope::kAccelAccum;
}

}  // namespace tec

#endif  // TEC_SCOPE_HPP_
