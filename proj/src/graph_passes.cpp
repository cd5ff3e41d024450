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
#include "tec/graph_passes.hpp"

#include <algorithm>
#include <set>

namespace tec {

namespace {

// Drops nodes unreachable from the outputs, preserving order.
ComputeGraph strip_dead(ComputeGraph g) {
  std::set<std::string> live(g.outputs.begin(), g.outputs.end());
  for (auto it = g.nodes.rbegin(); it != g.nodes.rend(); ++it) {
    if (live.count(it->id))
      for (const auto& in : it->inputs) live.insert(in);
  }
  std::vector<GraphNode> kept;
  for (auto& n : g.nodes)
    if (live.count(n.id)) kept.push_back(std::move(n));
  g.nodes = std::move(kept);
  return g;
}

}  // namespace

ComputeGraph fold_constants(const ComputeGraph& g) {
  ComputeGraph out;
  out.outputs = g.outputs;
  std::map<std::string, const GraphNode*> consts;
  for (const auto& n : g.nodes) {
    GraphNode copy = n;
    bool foldable = n.op != "input" && n.op != "const" && !n.inputs.empty();
    for (const auto& in : n.inputs)
      foldable = foldable && consts.count(in) > 0;
    if (foldable) {
      std::vector<DenseTensor> ins;
      for (const auto& in : n.inputs) {
        const GraphNode* c = consts.at(in);
        if (!c->data)
          fail(ErrorCode::kNotEnoughData,
               "cannot fold through const '" + in + "' with no data");
        ins.push_back(*c->data);
      }
      DenseTensor v = eval_graph_node(n, ins);
      copy = GraphNode{};
      copy.id = n.id;
      copy.op = "const";
      copy.out_type = v.type();
      copy.data = std::move(v);
    }
    out.nodes.push_back(std::move(copy));
    const GraphNode& stored = out.nodes.back();
    if (stored.op == "const") consts.emplace(stored.id, &stored);
  }
  out = strip_dead(std::move(out));
  out.validate();
  return out;
}

namespace {

bool layout_elemwise(const std::string& op) {
  return op == "add" || op == "mul" || op == "exp" || op == "sqrt" ||
         op == "relu" || op == "scale";
}

}  // namespace

ComputeGraph apply_layouts(const ComputeGraph& g,
                           const std::map<std::string, std::string>& prefs) {
  auto pref_of = [&](const std::string& id) -> std::string {
    auto it = prefs.find(id);
    return it == prefs.end() ? "row_major" : it->second;
  };
  for (const auto& [id, p] : prefs) {
    if (p != "row_major" && p != "tiled4x4")
      fail(ErrorCode::kShapeMismatch, "unknown layout preference '" + p + "'");
    if (p == "row_major") continue;
    const GraphNode& n = g.node(id);
    if (!layout_elemwise(n.op))
      fail(ErrorCode::kShapeMismatch,
           "tiled4x4 preference on '" + id + "' (" + n.op +
               "): only elementwise ops can carry it");
    if (n.out_type.rank() != 2)
      fail(ErrorCode::kShapeMismatch,
           "tiled4x4 preference on '" + id + "' needs a rank-2 tensor");
  }

  ComputeGraph out;
  out.outputs = g.outputs;
  // Row-major shape of each producer, for the inverse transform attrs.
  std::map<std::string, TensorType> rm_type;
  // Current id serving each (producer, layout) pair.
  std::map<std::pair<std::string, std::string>, std::string> realized;

  for (const auto& n : g.nodes) rm_type.emplace(n.id, n.out_type);

  auto emit = [&out](GraphNode n) { out.nodes.push_back(std::move(n)); };

  for (const auto& n : g.nodes) {
    const std::string p = pref_of(n.id);
    const std::string run_id = p == "tiled4x4" ? n.id + "#t" : n.id;
    GraphNode copy = n;
    copy.id = run_id;
    copy.out_type = TensorType{};  // re-inferred by validate
    if (n.op == "input" || n.op == "const") {
      copy.out_type = n.out_type;
      emit(std::move(copy));
      realized[{n.id, "row_major"}] = n.id;
      continue;
    }
    for (auto& in : copy.inputs) {
      auto key = std::make_pair(in, p);
      auto it = realized.find(key);
      if (it != realized.end()) {
        in = it->second;
        continue;
      }
      // Producer exists in the other layout; insert a transform.
      const TensorType& rt = rm_type.at(in);
      GraphNode tr;
      tr.op = "layout_transform";
      if (p == "tiled4x4") {
        tr.id = in + "#t";
        tr.inputs = {realized.at({in, "row_major"})};
        tr.attrs["src_layout"] = std::string("row_major");
        tr.attrs["dst_layout"] = std::string("tiled4x4");
      } else {
        tr.id = in + "#r";
        tr.inputs = {realized.at({in, "tiled4x4"})};
        tr.attrs["src_layout"] = std::string("tiled4x4");
        tr.attrs["dst_layout"] = std::string("row_major");
        tr.attrs["height"] = rt.shape[0];
        tr.attrs["width"] = rt.shape[1];
      }
      realized[key] = tr.id;
      in = tr.id;
      emit(std::move(tr));
    }
    emit(std::move(copy));
    realized[{n.id, p}] = run_id;
  }

  // Graph outputs are row-major by contract; add inverse transforms that
  // take over the original output ids.
  for (const auto& o : out.outputs) {
    if (realized.count({o, "row_major"})) continue;
    const TensorType& rt = rm_type.at(o);
    GraphNode tr;
    tr.id = o;
    tr.op = "layout_transform";
    tr.inputs = {realized.at({o, "tiled4x4"})};
    tr.attrs["src_layout"] = std::string("tiled4x4");
    tr.attrs["dst_layout"] = std::string("row_major");
    tr.attrs["height"] = rt.shape[0];
    tr.attrs["width"] = rt.shape[1];
    realized[{o, "row_major"}] = o;
    out.nodes.push_back(std::move(tr));
  }
  out = strip_dead(std::move(out));
  out.validate();
  return out;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void merge(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

ComputeGraph fuse_pass(const ComputeGraph& g) {
  const int n = static_cast<int>(g.nodes.size());
  std::map<std::string, int> index_of;
  for (int i = 0; i < n; ++i) index_of[g.nodes[i].id] = i;
  std::set<std::string> output_set(g.outputs.begin(), g.outputs.end());

  auto pattern_of = [&](const GraphNode& nd) -> std::optional<OpPattern> {
    if (nd.op == "input" || nd.op == "const" || nd.op == "fused")
      return std::nullopt;
    return op_def(nd.op).pattern;
  };

  UnionFind uf(n);
  std::vector<OpPattern> anchor(n, OpPattern::kOpaque);
  for (int i = 0; i < n; ++i) {
    auto p = pattern_of(g.nodes[i]);
    anchor[i] = p.value_or(OpPattern::kOpaque);
  }

  auto consumer_map = g.consumers();

  // Reverse topological scan: a producer may join the single group that
  // consumes all of its uses. Materialized outputs stay where they are.
  for (int i = n - 1; i >= 0; --i) {
    const GraphNode& u = g.nodes[i];
    auto pu = pattern_of(u);
    if (!pu || *pu == OpPattern::kOpaque) continue;
    if (output_set.count(u.id)) continue;
    auto cit = consumer_map.find(u.id);
    if (cit == consumer_map.end() || cit->second.empty()) continue;
    int group = -1;
    bool single = true;
    for (const auto& cid : cit->second) {
      int ci = uf.find(index_of.at(cid));
      if (group == -1) group = ci;
      single = single && (ci == group);
    }
    if (!single || group == uf.find(i)) continue;
    OpPattern ga = anchor[group];
    bool merge = false;
    OpPattern next_anchor = ga;
    if (*pu == OpPattern::kInjective &&
        (ga == OpPattern::kInjective || ga == OpPattern::kReduction)) {
      merge = true;
    } else if (*pu == OpPattern::kComplexOutFusable &&
               ga == OpPattern::kInjective) {
      merge = true;
      next_anchor = OpPattern::kComplexOutFusable;
    }
    if (!merge) continue;
    uf.merge(i, group);
    anchor[uf.find(i)] = next_anchor;
  }

  // Emit: one node per group, ordered by sink position.
  std::map<int, std::vector<int>> groups;  // root -> member indices (topo)
  for (int i = 0; i < n; ++i) groups[uf.find(i)].push_back(i);

  ComputeGraph out;
  out.outputs = g.outputs;
  for (int i = 0; i < n; ++i) {
    int root = uf.find(i);
    const auto& members = groups.at(root);
    if (members.back() != i) continue;  // emit at the sink's position
    if (members.size() == 1) {
      out.nodes.push_back(g.nodes[i]);
      continue;
    }
    GraphNode fused;
    fused.id = g.nodes[i].id;
    fused.op = "fused";
    fused.out_type = g.nodes[i].out_type;
    std::set<std::string> internal;
    for (int m : members) internal.insert(g.nodes[m].id);
    for (int m : members) {
      fused.members.push_back(g.nodes[m]);
      for (const auto& in : g.nodes[m].inputs) {
        if (internal.count(in)) continue;
        if (std::find(fused.inputs.begin(), fused.inputs.end(), in) ==
            fused.inputs.end())
          fused.inputs.push_back(in);
      }
    }
    out.nodes.push_back(std::move(fused));
  }
  out.validate();
  return out;
}

MemoryPlan plan_memory(const ComputeGraph& g) {
  std::set<std::string> output_set(g.outputs.begin(), g.outputs.end());
  auto managed = [&](const GraphNode& nd) {
    return nd.op != "input" && nd.op != "const" && !output_set.count(nd.id);
  };

  std::map<std::string, int> remaining;
  for (const auto& n : g.nodes)
    for (const auto& in : n.inputs) remaining[in]++;

  MemoryPlan plan;
  // Free slots keyed by (size, slot id): best fit is the first entry
  // whose size covers the request.
  std::set<std::pair<int64_t, int>> free_slots;
  std::map<std::string, int> slot_of;

  for (const auto& n : g.nodes) {
    if (n.op == "input" || n.op == "const") continue;
    if (managed(n)) {
      const int64_t need = n.out_type.num_bytes();
      plan.naive_bytes += need;
      auto it = free_slots.lower_bound({need, -1});
      int slot;
      if (it != free_slots.end()) {
        slot = it->second;
        free_slots.erase(it);
      } else {
        slot = static_cast<int>(plan.slot_bytes.size());
        plan.slot_bytes.push_back(need);
      }
      slot_of[n.id] = slot;
      plan.slot_of[n.id] = slot;
    }
    // Operands stay live through this node; release them only now.
    std::set<std::string> seen;
    for (const auto& in : n.inputs) {
      if (--remaining[in] == 0 && slot_of.count(in) && !seen.count(in)) {
        free_slots.insert({plan.slot_bytes[slot_of[in]], slot_of[in]});
        seen.insert(in);
      }
    }
  }
  for (int64_t b : plan.slot_bytes) plan.total_bytes += b;
  return plan;
}

void check_memory_plan(const ComputeGraph& g, const MemoryPlan& plan) {
  std::set<std::string> output_set(g.outputs.begin(), g.outputs.end());
  std::map<int, std::string> slot_content;
  for (const auto& n : g.nodes) {
    if (n.op == "input" || n.op == "const") continue;
    for (const auto& in : n.inputs) {
      auto it = plan.slot_of.find(in);
      if (it == plan.slot_of.end()) continue;  // external or output buffer
      auto cur = slot_content.find(it->second);
      if (cur == slot_content.end() || cur->second != in)
        fail(ErrorCode::kInternal,
             "memory plan clobbers '" + in + "' before node '" + n.id +
                 "' reads it");
    }
    auto self = plan.slot_of.find(n.id);
    if (self != plan.slot_of.end()) {
      if (plan.slot_bytes[self->second] < n.out_type.num_bytes())
        fail(ErrorCode::kInternal, "slot too small for '" + n.id + "'");
      for (const auto& in : n.inputs) {
        auto it = plan.slot_of.find(in);
        if (it != plan.slot_of.end() && it->second == self->second)
          fail(ErrorCode::kInternal,
               "node '" + n.id + "' would overwrite its own operand");
      }
      slot_content[self->second] = n.id;
    }
  }
}

}  // namespace tec
