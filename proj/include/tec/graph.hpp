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
#ifndef TEC_GRAPH_HPP_
#define TEC_GRAPH_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tec/ops.hpp"
#include "tec/tensor.hpp"
#include "vendor/json.hpp"

namespace tec {

/*!
 * \brief One node of the computational graph.
 *
 * op is "input" (graph input), "const" (embedded data), an operator
 * name, or "fused". Fused super-nodes keep their original members in
 * execution order, the group's sink last; members reference each other
 * and external inputs by id.
 */
struct GraphNode {
  std::string id;
  std::string op;
  std::vector<std::string> inputs;
  AttrMap attrs;
  TensorType out_type;
  std::optional<DenseTensor> data;
  std::vector<GraphNode> members;
};

struct ComputeGraph {
  std::vector<GraphNode> nodes;  // topologically ordered
  std::vector<std::string> outputs;

  const GraphNode& node(const std::string& id) const;
  const GraphNode* find(const std::string& id) const;
  std::map<std::string, std::vector<std::string>> consumers() const;

  // Checks ids, topology and output references, then (re)infers every
  // node's type and verifies it against any declared one.
  void validate();
};

ComputeGraph graph_from_json(const nlohmann::json& j);
nlohmann::json graph_to_json(const ComputeGraph& g);

/*!
 * \brief Reference execution of a whole graph on the host.
 *
 * Node order is the stored topological order; fused members run in
 * member order. Returns the output tensors keyed by node id.
 */
std::map<std::string, DenseTensor> evaluate_graph(
    const ComputeGraph& g, const std::map<std::string, DenseTensor>& feeds);

// Per-node evaluation used by both the reference path and const folding.
DenseTensor eval_graph_node(const GraphNode& n,
                            const std::vector<DenseTensor>& inputs);

}  // namespace tec

#endif  // TEC_GRAPH_HPP_
