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
#ifndef TEC_GRAPH_PASSES_HPP_
#define TEC_GRAPH_PASSES_HPP_

#include <map>
#include <string>
#include <vector>

#include "tec/graph.hpp"

namespace tec {

/*!
 * \brief Evaluates nodes whose inputs are all constant and replaces them
 *        with const nodes; unreferenced nodes are dropped afterwards.
 *
 * Folding a const that carries no payload raises NotEnoughData; integer
 * overflow during folding raises FoldOverflow.
 */
ComputeGraph fold_constants(const ComputeGraph& g);

/*!
 * \brief Rewrites tensors between ops whose preferred layouts differ by
 *        inserting explicit layout_transform nodes.
 *
 * Preferences name "row_major" or "tiled4x4" per node id; absent means
 * row_major. A tiled4x4 preference is only meaningful for rank-2 f32/i32
 * elementwise ops at desk scale and is validated as such.
 */
ComputeGraph apply_layouts(const ComputeGraph& g,
                           const std::map<std::string, std::string>& prefs);

/*!
 * \brief Greedy operator fusion over pattern classes.
 *
 * Scanning in reverse topological order, a node joins the group of its
 * consumers when all consumers sit in one group and the merge keeps a
 * single sink: injective into injective or reduction groups, and a
 * complex-out-fusable op absorbs the injective group on its output.
 * Opaque ops never move. Nothing is ever recomputed or duplicated.
 */
ComputeGraph fuse_pass(const ComputeGraph& g);

/*! \brief Result of static memory planning over a fused graph. */
struct MemoryPlan {
  // Slot index per intermediate node id (graph outputs and inputs are
  // excluded; they own their storage).
  std::map<std::string, int> slot_of;
  std::vector<int64_t> slot_bytes;
  int64_t total_bytes = 0;
  int64_t naive_bytes = 0;  // sum of all intermediate sizes
};

/*!
 * \brief Greedy liveness-based slot assignment in execution order.
 *
 * A producer's buffer stays live through each consumer's execution, so
 * an op never writes a slot it is still reading (no in-place update).
 */
MemoryPlan plan_memory(const ComputeGraph& g);

/*! \brief Replays the plan and verifies no buffer is clobbered early. */
void check_memory_plan(const ComputeGraph& g, const MemoryPlan& plan);

}  // namespace tec

#endif  // TEC_GRAPH_PASSES_HPP_
