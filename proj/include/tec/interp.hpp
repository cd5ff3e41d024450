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
#ifndef TEC_INTERP_HPP_
#define TEC_INTERP_HPP_

#include <cstdint>
#include <map>
#include <string>

#include "tec/loop_ir.hpp"
#include "tec/tensor.hpp"

namespace tec {

/*!
 * \brief Loop program interpreter.
 *
 * Thread-bound loops run as a cooperatively scheduled thread group: one
 * thread executes at a time, yielding at barriers, so every run is
 * deterministic. `seed` permutes the per-interval thread order; seed 0
 * keeps ascending order. With `log_accesses` set, cross-thread conflicts
 * on the same location within one barrier interval are reported.
 */
struct InterpOptions {
  uint64_t seed = 0;
  bool log_accesses = false;
};

struct InterpResult {
  std::map<std::string, DenseTensor> outputs;
  int64_t stores = 0;      // executed store statements
  int64_t loop_iters = 0;  // loop body entries
  bool race_found = false;
  std::string race_buffer;
  std::string race_detail;

  // Abstract cost of one run; the measurement proxy for the interp target.
  int64_t cost() const { return stores + loop_iters; }
};

InterpResult interpret(const LoopProgram& p,
                       const std::map<std::string, DenseTensor>& inputs,
                       const InterpOptions& opts = {});

struct RaceReport {
  bool racy = false;
  std::string buffer;
  std::string detail;
};

/*!
 * \brief Access-conflict analysis plus output comparison across
 *        `serializations` random per-interval thread orders.
 */
RaceReport race_check(const LoopProgram& p,
                      const std::map<std::string, DenseTensor>& inputs,
                      int serializations, uint64_t seed);

// Number of barrier statements in the program.
int count_barriers(const LoopProgram& p);

// Copy of the program with the index-th barrier (pre-order) removed.
LoopProgram remove_barrier(const LoopProgram& p, int index);

}  // namespace tec

#endif  // TEC_INTERP_HPP_
