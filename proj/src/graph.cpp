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
#include "tec/graph.hpp"

#include <set>

#include "tec/io.hpp"

namespace tec {

const GraphNode* ComputeGraph::find(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

const GraphNode& ComputeGraph::node(const std::string& id) const {
  const GraphNode* n = find(id);
  if (!n) fail(ErrorCode::kShapeMismatch, "graph has no node '" + id + "'");
  return *n;
}

std::map<std::string, std::vector<std::string>> ComputeGraph::consumers()
    const {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& n : nodes)
    for (const auto& in : n.inputs) out[in].push_back(n.id);
  return out;
}

namespace {

// Infers the node's result type given resolved input types. For fused
// nodes, runs member-by-member inference.
TensorType infer_node_type(const GraphNode& n,
                           const std::vector<TensorType>& in_types) {
  if (n.op == "input" || n.op == "const") {
    n.out_type.validate();
    return n.out_type;
  }
  if (n.op == "fused") {
    if (n.members.empty())
      fail(ErrorCode::kShapeMismatch, "fused node " + n.id + " has no members");
    std::map<std::string, TensorType> env;
    for (size_t i = 0; i < n.inputs.size(); ++i) env.emplace(n.inputs[i], in_types[i]);
    TensorType last;
    for (const auto& m : n.members) {
      std::vector<TensorType> mt;
      for (const auto& in : m.inputs) {
        auto it = env.find(in);
        if (it == env.end())
          fail(ErrorCode::kShapeMismatch,
               "fused member " + m.id + " reads unknown tensor " + in);
        mt.push_back(it->second);
      }
      last = op_def(m.op).infer_type(mt, m.attrs);
      env.emplace(m.id, last);
    }
    return last;
  }
  const OperatorDef& def = op_def(n.op);
  if (static_cast<int>(n.inputs.size()) != def.arity)
    fail(ErrorCode::kShapeMismatch,
         n.op + " node " + n.id + " has " + std::to_string(n.inputs.size()) +
             " inputs, expected " + std::to_string(def.arity));
  return def.infer_type(in_types, n.attrs);
}

}  // namespace

void ComputeGraph::validate() {
  std::set<std::string> seen;
  std::map<std::string, TensorType> types;
  for (auto& n : nodes) {
    if (!seen.insert(n.id).second)
      fail(ErrorCode::kShapeMismatch, "duplicate node id '" + n.id + "'");
    std::vector<TensorType> in_types;
    for (const auto& in : n.inputs) {
      auto it = types.find(in);
      if (it == types.end())
        fail(ErrorCode::kShapeMismatch,
             "node " + n.id + " references '" + in +
                 "' before its definition");
      in_types.push_back(it->second);
    }
    TensorType inferred = infer_node_type(n, in_types);
    if (!n.out_type.shape.empty() && n.out_type != inferred)
      fail(ErrorCode::kShapeMismatch,
           "node " + n.id + " declares " + n.out_type.str() +
               " but computes " + inferred.str());
    n.out_type = inferred;
    if (n.op == "const" && n.data && n.data->type() != inferred)
      fail(ErrorCode::kShapeMismatch,
           "const " + n.id + " payload is " + n.data->type().str() +
               ", declared " + inferred.str());
    types.emplace(n.id, inferred);
  }
  if (outputs.empty())
    fail(ErrorCode::kShapeMismatch, "graph declares no outputs");
  for (const auto& o : outputs)
    if (!types.count(o))
      fail(ErrorCode::kShapeMismatch, "output '" + o + "' is not a node");
}

namespace {

AttrMap attrs_from_json(const nlohmann::json& j) {
  AttrMap out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& v = it.value();
    if (v.is_number_integer())
      out[it.key()] = v.get<int64_t>();
    else if (v.is_number_float())
      out[it.key()] = v.get<double>();
    else if (v.is_string())
      out[it.key()] = v.get<std::string>();
    else if (v.is_array())
      out[it.key()] = v.get<std::vector<int64_t>>();
    else
      fail(ErrorCode::kIOError, "unsupported attr type for '" + it.key() + "'");
  }
  return out;
}

nlohmann::json attrs_to_json(const AttrMap& attrs) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : attrs) {
    std::visit([&](const auto& x) { j[k] = x; }, v);
  }
  return j;
}

GraphNode node_from_json(const nlohmann::json& j) {
  GraphNode n;
  n.id = j.at("id").get<std::string>();
  n.op = j.at("op").get<std::string>();
  if (j.contains("inputs")) n.inputs = j.at("inputs").get<std::vector<std::string>>();
  if (j.contains("attrs")) n.attrs = attrs_from_json(j.at("attrs"));
  if (j.contains("shape")) {
    n.out_type.shape = j.at("shape").get<std::vector<int64_t>>();
    n.out_type.dtype = dtype_from_name(
        j.contains("dtype") ? j.at("dtype").get<std::string>() : "f32");
  } else if (n.op == "input" || n.op == "const") {
    fail(ErrorCode::kIOError, "node " + n.id + " needs an explicit shape");
  }
  if (j.contains("data") && !j.at("data").get<std::string>().empty()) {
    auto bytes = base64_decode(j.at("data").get<std::string>());
    n.data = DenseTensor::from_bytes(n.out_type, bytes.data(), bytes.size());
  }
  if (j.contains("members"))
    for (const auto& m : j.at("members")) n.members.push_back(node_from_json(m));
  return n;
}

nlohmann::json node_to_json(const GraphNode& n) {
  nlohmann::json j;
  j["id"] = n.id;
  j["op"] = n.op;
  j["inputs"] = n.inputs;
  if (!n.attrs.empty()) j["attrs"] = attrs_to_json(n.attrs);
  if (!n.out_type.shape.empty()) {
    j["shape"] = n.out_type.shape;
    j["dtype"] = dtype_name(n.out_type.dtype);
  }
  if (n.data) j["data"] = base64_encode(n.data->to_bytes());
  if (!n.members.empty()) {
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& m : n.members) ms.push_back(node_to_json(m));
    j["members"] = std::move(ms);
  }
  return j;
}

}  // namespace

ComputeGraph graph_from_json(const nlohmann::json& j) {
  ComputeGraph g;
  if (!j.contains("nodes") || !j.at("nodes").is_array())
    fail(ErrorCode::kIOError, "graph JSON needs a 'nodes' array");
  for (const auto& nj : j.at("nodes")) g.nodes.push_back(node_from_json(nj));
  if (j.contains("outputs"))
    g.outputs = j.at("outputs").get<std::vector<std::string>>();
  g.validate();
  return g;
}

nlohmann::json graph_to_json(const ComputeGraph& g) {
  nlohmann::json j;
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes) nodes.push_back(node_to_json(n));
  j["nodes"] = std::move(nodes);
  j["outputs"] = g.outputs;
  return j;
}

DenseTensor eval_graph_node(const GraphNode& n,
                            const std::vector<DenseTensor>& inputs) {
  if (n.op == "fused") {
    std::map<std::string, DenseTensor> env;
    for (size_t i = 0; i < n.inputs.size(); ++i)
      env.emplace(n.inputs[i], inputs[i]);
    DenseTensor last;
    for (const auto& m : n.members) {
      std::vector<DenseTensor> mi;
      for (const auto& in : m.inputs) mi.push_back(env.at(in));
      last = eval_operator(m.op, mi, m.attrs);
      env.insert_or_assign(m.id, last);
    }
    return last;
  }
  return eval_operator(n.op, inputs, n.attrs);
}

std::map<std::string, DenseTensor> evaluate_graph(
    const ComputeGraph& g, const std::map<std::string, DenseTensor>& feeds) {
  std::map<std::string, DenseTensor> env;
  for (const auto& n : g.nodes) {
    if (n.op == "input") {
      auto it = feeds.find(n.id);
      if (it == feeds.end())
        fail(ErrorCode::kIOError, "no value for graph input '" + n.id + "'");
      if (it->second.type() != n.out_type)
        fail(ErrorCode::kShapeMismatch,
             "input " + n.id + " is " + it->second.type().str() +
                 ", expected " + n.out_type.str());
      env.emplace(n.id, it->second);
      continue;
    }
    if (n.op == "const") {
      if (!n.data)
        fail(ErrorCode::kNotEnoughData,
             "const node '" + n.id + "' carries no data");
      env.emplace(n.id, *n.data);
      continue;
    }
    std::vector<DenseTensor> ins;
    for (const auto& in : n.inputs) ins.push_back(env.at(in));
    env.insert_or_assign(n.id, eval_graph_node(n, ins));
  }
  std::map<std::string, DenseTensor> out;
  for (const auto& o : g.outputs) out.emplace(o, env.at(o));
  return out;
}

}  // namespace tec
