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
#ifndef TEC_LOWER_HPP_
#define TEC_LOWER_HPP_

#include <string>

#include "tec/loop_ir.hpp"
#include "tec/schedule.hpp"

namespace tec {

struct LowerOptions {
  std::string target = "interp";  // "interp" | "vdla"
  // On-chip SRAM budgets enforced for the vdla target; virtual threads
  // split each budget evenly.
  int64_t accel_activation_bytes = 32 * 1024;
  int64_t accel_weight_bytes = 32 * 1024;
  int64_t accum_bytes = 128 * 1024;
};

/*!
 * \brief Lowers a schedule tree to a loop program.
 *
 * Performs scope inference, bound inference for attached stages, guard
 * insertion for non-dividing splits, cooperative fetch rewriting for
 * shared caches, tensorizer pattern matching, unroll expansion and the
 * target legality/capacity checks.
 */
LoopProgram lower(const Schedule& sched, const std::string& program_name,
                  const LowerOptions& opts = {});

// Conservative interval of an expression given var ranges (inclusive).
struct Interval {
  int64_t lo = 0, hi = 0;
};
Interval interval_of(const Expr& e,
                     const std::map<std::string, Interval>& ranges);

}  // namespace tec

#endif  // TEC_LOWER_HPP_
