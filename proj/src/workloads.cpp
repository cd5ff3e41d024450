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
#include "tec/workloads.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "tec/error.hpp"
#include "tec/ops.hpp"
#include "tec/texpr.hpp"

namespace tec {

namespace {

// Elementwise copy stage used to move an on-chip result back to DRAM.
Tensor copy_stage(const std::string& name, const Tensor& src) {
  std::vector<IterDecl> axis;
  std::vector<Expr> idx;
  for (size_t d = 0; d < src->type.shape.size(); ++d) {
    std::string v = "c" + std::to_string(d);
    axis.push_back({v, src->type.shape[d]});
    idx.push_back(var(v));
  }
  return compute(name, src->type, std::move(axis), read(src->name, idx),
                 {src});
}

}  // namespace

Schedule gemm_vdla_schedule(int64_t m, int64_t n, int64_t k, int64_t tile_m,
                            int64_t tile_n, int64_t tile_k, int64_t vthreads,
                            bool n_outer_first) {
  register_builtin_intrinsics();
  if (tile_m <= 0 || tile_n <= 0 || tile_k <= 0 || vthreads <= 0)
    fail(ErrorCode::kLoweringError, "gemm template factors must be positive");
  if (m % tile_m != 0 || n % tile_n != 0 || k % tile_k != 0)
    fail(ErrorCode::kLoweringError,
         "gemm template tiles must divide the problem");
  if (tile_n % 16 != 0 || tile_k % 16 != 0)
    fail(ErrorCode::kLoweringError,
         "gemm template needs 16-aligned n and k tiles for the intrinsic");

  Tensor a = placeholder("A", TensorType{{m, k}, DType::kI8});
  Tensor b = placeholder("B", TensorType{{k, n}, DType::kI8});
  Tensor acc = op_def("matmul").make_compute("Acc", {a, b}, {});
  Tensor out = copy_stage("Out", acc);

  Schedule s = Schedule::create({out});
  auto t = s.tile("Out", "c0", "c1", tile_m, tile_n);
  std::string first = n_outer_first ? t[1] : t[0];
  std::string second = n_outer_first ? t[0] : t[1];
  if (n_outer_first) s.reorder("Out", {t[1], t[0], t[2], t[3]});
  if (vthreads > 1) s.virtual_thread("Out", first, vthreads);
  s.set_scope("Acc", MemoryScope::kAccelAccum);
  s.compute_at("Acc", "Out", second);

  auto kp = s.split("Acc", "k", tile_k);
  Tensor as = s.cache_read("A", MemoryScope::kAccelActivation, {"Acc"});
  Tensor ws = s.cache_read("B", MemoryScope::kAccelWeight, {"Acc"});
  auto kq = s.split("Acc", kp.second, 16);
  // Reduction slices outermost, so each operand tile is fetched once per
  // slice; inner 16x16 blocks match the MAC array.
  if (tile_n > 16) {
    auto xp = s.split("Acc", "x", 16);
    s.reorder("Acc",
              {kp.first, "y", xp.first, kq.first, xp.second, kq.second});
    s.compute_at(as->name, "Acc", kp.first);
    s.compute_at(ws->name, "Acc", kp.first);
    s.tensorize("Acc", xp.second, "vdla.gemm");
  } else {
    s.reorder("Acc", {kp.first, "y", kq.first, "x", kq.second});
    s.compute_at(as->name, "Acc", kp.first);
    s.compute_at(ws->name, "Acc", kp.first);
    s.tensorize("Acc", "x", "vdla.gemm");
  }
  return s;
}

KnobSpace gemm_vdla_space(int64_t m, int64_t n, int64_t k) {
  auto tile_candidates = [](int64_t extent, int64_t align) {
    std::vector<int64_t> v;
    for (int64_t f = align; f <= extent; f += align)
      if (extent % f == 0) v.push_back(f);
    return v;
  };
  KnobSpace space;
  std::ostringstream id;
  id << "gemm_m" << m << "_n" << n << "_k" << k;
  space.workload = id.str();
  space.target = "vdla";
  space.program_name = "gemm";
  space.knobs = {
      {"tile_m", tile_candidates(m, 16)},
      {"tile_n", tile_candidates(n, 16)},
      {"tile_k", tile_candidates(k, 16)},
      {"vthreads", {1, 2, 4, 8}},
      {"order", {0, 1}},
  };
  space.instantiate = [m, n, k](const Config& c) {
    return gemm_vdla_schedule(m, n, k, c.at("tile_m"), c.at("tile_n"),
                              c.at("tile_k"), c.at("vthreads"),
                              c.at("order") != 0);
  };
  return space;
}

Schedule reference_gemm_schedule(int64_t vthreads) {
  return gemm_vdla_schedule(128, 64, 192, 32, 32, 192, vthreads, false);
}

LoopProgram reference_gemm_program(int64_t vthreads) {
  LowerOptions opts;
  opts.target = "vdla";
  return lower(reference_gemm_schedule(vthreads), "gemm_ref", opts);
}

FusionCase conv_relu_case() {
  register_builtin_intrinsics();
  const TensorType in_t{{1, 16, 18, 18}, DType::kI8};
  const TensorType w_t{{16, 16, 3, 3}, DType::kI8};
  LowerOptions opts;
  opts.target = "vdla";

  auto conv_stage = [&](const Tensor& in, const Tensor& w) {
    Tensor acc = op_def("conv2d").make_compute("Acc", {in, w}, {});
    return acc;
  };
  // Shared scheduling of the convolution stage: whole operands staged on
  // chip, 16x16 channel blocks on the MAC array.
  auto schedule_conv = [&](Schedule* s) {
    s->set_scope("Acc", MemoryScope::kAccelAccum);
    Tensor ci = s->cache_read("in", MemoryScope::kAccelActivation, {"Acc"});
    Tensor cw = s->cache_read("w", MemoryScope::kAccelWeight, {"Acc"});
    (void)ci;
    (void)cw;
    s->reorder("Acc", {"n", "oh", "ow", "rh", "rw", "oc", "ic"});
    s->tensorize("Acc", "oc", "vdla.gemm");
  };

  FusionCase fc;
  fc.name = "conv2d_relu";
  fc.outputs = {"Out"};
  {
    Tensor in = placeholder("in", in_t);
    Tensor w = placeholder("w", w_t);
    Tensor acc = conv_stage(in, w);
    Tensor r = op_def("relu").make_compute("R", {acc}, {});
    Tensor out = copy_stage("Out", r);
    Schedule s = Schedule::create({out});
    schedule_conv(&s);
    s.set_scope("R", MemoryScope::kAccelAccum);
    fc.fused = lower(s, "conv_relu_fused", opts);
  }
  {
    Tensor in = placeholder("in", in_t);
    Tensor w = placeholder("w", w_t);
    Tensor acc = conv_stage(in, w);
    Tensor out = copy_stage("C1", acc);
    Schedule s = Schedule::create({out});
    schedule_conv(&s);
    fc.stages.push_back(lower(s, "conv_stage", opts));
  }
  {
    Tensor c1 = placeholder("C1", TensorType{{1, 16, 16, 16}, DType::kI32});
    Tensor r = op_def("relu").make_compute("R", {c1}, {});
    Tensor out = copy_stage("Out", r);
    Schedule s = Schedule::create({out});
    s.cache_read("C1", MemoryScope::kAccelAccum, {"R"});
    s.set_scope("R", MemoryScope::kAccelAccum);
    fc.stages.push_back(lower(s, "relu_stage", opts));
  }
  return fc;
}

FusionCase matmul_bias_relu_case() {
  register_builtin_intrinsics();
  const TensorType a_t{{64, 64}, DType::kI8};
  const TensorType b_t{{64, 64}, DType::kI8};
  const TensorType bias_t{{64}, DType::kI32};
  const TensorType c_t{{64, 64}, DType::kI32};
  LowerOptions opts;
  opts.target = "vdla";

  auto schedule_matmul = [&](Schedule* s) {
    s->set_scope("Acc", MemoryScope::kAccelAccum);
    auto kp = s->split("Acc", "k", 16);
    auto xp = s->split("Acc", "x", 16);
    Tensor ca = s->cache_read("A", MemoryScope::kAccelActivation, {"Acc"});
    Tensor cb = s->cache_read("B", MemoryScope::kAccelWeight, {"Acc"});
    (void)ca;
    (void)cb;
    s->reorder("Acc", {kp.first, "y", xp.first, xp.second, kp.second});
    s->tensorize("Acc", xp.second, "vdla.gemm");
  };

  FusionCase fc;
  fc.name = "matmul_bias_relu";
  fc.outputs = {"Out"};
  {
    Tensor a = placeholder("A", a_t);
    Tensor b = placeholder("B", b_t);
    Tensor bias = placeholder("bias", bias_t);
    Tensor acc = op_def("matmul").make_compute("Acc", {a, b}, {});
    Tensor badd = op_def("bias_add").make_compute("Badd", {acc, bias}, {});
    Tensor r = op_def("relu").make_compute("R", {badd}, {});
    Tensor out = copy_stage("Out", r);
    Schedule s = Schedule::create({out});
    schedule_matmul(&s);
    s.cache_read("bias", MemoryScope::kAccelAccum, {"Badd"});
    s.set_scope("Badd", MemoryScope::kAccelAccum);
    s.set_scope("R", MemoryScope::kAccelAccum);
    fc.fused = lower(s, "matmul_bias_relu_fused", opts);
  }
  {
    Tensor a = placeholder("A", a_t);
    Tensor b = placeholder("B", b_t);
    Tensor acc = op_def("matmul").make_compute("Acc", {a, b}, {});
    Tensor out = copy_stage("C1", acc);
    Schedule s = Schedule::create({out});
    schedule_matmul(&s);
    fc.stages.push_back(lower(s, "matmul_stage", opts));
  }
  {
    Tensor c1 = placeholder("C1", c_t);
    Tensor bias = placeholder("bias", bias_t);
    Tensor badd = op_def("bias_add").make_compute("Badd", {c1, bias}, {});
    Tensor out = copy_stage("C2", badd);
    Schedule s = Schedule::create({out});
    s.cache_read("C1", MemoryScope::kAccelAccum, {"Badd"});
    s.cache_read("bias", MemoryScope::kAccelAccum, {"Badd"});
    s.set_scope("Badd", MemoryScope::kAccelAccum);
    fc.stages.push_back(lower(s, "bias_stage", opts));
  }
  {
    Tensor c2 = placeholder("C2", c_t);
    Tensor r = op_def("relu").make_compute("R", {c2}, {});
    Tensor out = copy_stage("Out", r);
    Schedule s = Schedule::create({out});
    s.cache_read("C2", MemoryScope::kAccelAccum, {"R"});
    s.set_scope("R", MemoryScope::kAccelAccum);
    fc.stages.push_back(lower(s, "relu_stage", opts));
  }
  return fc;
}

LoopProgram coop_matmul_program() {
  Tensor a = placeholder("A", TensorType{{16, 12}, DType::kF32});
  Tensor b = placeholder("B", TensorType{{12, 16}, DType::kF32});
  Tensor c = op_def("matmul").make_compute("C", {a, b}, {});
  Schedule s = Schedule::create({c});
  auto t = s.tile("C", "y", "x", 8, 8);
  s.bind("C", t[0], "blockIdx.y");
  s.bind("C", t[1], "blockIdx.x");
  s.bind("C", t[2], "threadIdx.y");
  s.bind("C", t[3], "threadIdx.x");
  auto kp = s.split("C", "k", 4);
  Tensor cache = s.cache_read("A", MemoryScope::kShared, {"C"});
  // One refill per reduction tile: the leading barrier keeps the refill off
  // data a lagging thread still reads, the trailing one keeps readers
  // behind the fill.
  s.compute_at(cache->name, "C", kp.first);
  return lower(s, "coop_matmul");
}

std::map<std::string, DenseTensor> random_feeds(const LoopProgram& p,
                                                uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::map<std::string, DenseTensor> feeds;
  for (const auto& par : p.params)
    if (!par.is_output) feeds.emplace(par.name, random_tensor(par.type, rng));
  return feeds;
}

std::map<std::string, DenseTensor> run_vdla_chain(
    const std::vector<LoopProgram>& stages,
    const std::map<std::string, DenseTensor>& feeds, const PipelineConfig& cfg,
    int64_t* total_cycles) {
  std::map<std::string, DenseTensor> env = feeds;
  std::map<std::string, DenseTensor> outs;
  if (total_cycles != nullptr) *total_cycles = 0;
  for (const auto& p : stages) {
    InstructionStream st = lower_to_vdla(p, cfg);
    outs.clear();
    SimResult r = cosimulate(st, cfg, env, &outs);
    if (total_cycles != nullptr) *total_cycles += r.total_cycles;
    for (auto& kv : outs) env.insert_or_assign(kv.first, kv.second);
  }
  return outs;
}

RandomSchedule random_schedule(uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int64_t n) {
    return static_cast<int64_t>(rng() % static_cast<uint64_t>(n));
  };
  const std::vector<int64_t> extents = {4, 6, 8, 12, 16, 24, 32};
  auto ext = [&]() { return extents[pick((int64_t)extents.size())]; };

  RandomSchedule out;
  out.target = "interp";
  int kind = (int)pick(4);

  if (kind == 3) {
    // Tensorized accelerator matmul with randomized tile choices.
    const int64_t sizes[] = {16, 32};
    int64_t m = sizes[pick(2)], n = sizes[pick(2)], k = sizes[pick(2)];
    int64_t tm = (pick(2) == 0 || m == 16) ? 16 : 32;
    int64_t tn = (pick(2) == 0 || n == 16) ? 16 : 32;
    int64_t tk = (pick(2) == 0 || k == 16) ? 16 : 32;
    int64_t vt = (pick(2) == 0 && (m / tm) % 2 == 0) ? 2 : 1;
    out.sched = gemm_vdla_schedule(m, n, k, tm, tn, tk, vt, pick(2) != 0);
    out.target = "vdla";
    for (const Tensor& o : out.sched.outputs()) out.outputs.push_back(o);
    return out;
  }

  Tensor result;
  std::vector<std::string> inputs;
  if (kind == 0) {
    int64_t m = ext(), n = ext(), k = ext();
    Tensor a = placeholder("A", TensorType{{m, k}, DType::kI8});
    Tensor b = placeholder("B", TensorType{{k, n}, DType::kI8});
    result = op_def("matmul").make_compute("C", {a, b}, {});
    inputs = {"A", "B"};
  } else if (kind == 1) {
    int64_t c = 2 + pick(3), o = 2 + pick(3);
    int64_t hw = 6 + pick(6);
    int64_t pad = pick(2);
    Tensor in = placeholder("A", TensorType{{1, c, hw, hw}, DType::kI8});
    Tensor w = placeholder("B", TensorType{{o, c, 3, 3}, DType::kI8});
    AttrMap attrs;
    attrs["padding"] = std::vector<int64_t>{pad, pad};
    result = op_def("conv2d").make_compute("C", {in, w}, attrs);
    inputs = {"A", "B"};
  } else {
    int64_t m = ext(), n = ext();
    Tensor a = placeholder("A", TensorType{{m, n}, DType::kF32});
    Tensor red =
        compute("S", TensorType{{m}, DType::kF32}, {{"i", m}},
                read("A", {var("i"), var("j")}), {a}, {{"j", n}},
                Reducer::kSum);
    if (pick(2) == 0) {
      AttrMap attrs;
      attrs["scale"] = 0.5;
      result = op_def("scale").make_compute("C", {red}, attrs);
    } else {
      result = red;
    }
    inputs = {"A"};
  }

  Schedule s = Schedule::create({result});
  const std::string stage = result->name;
  // Leaf axis names evolve as primitives apply; track them so later picks
  // stay valid. Any primitive the schedule rejects is simply skipped.
  std::vector<std::string> axes;
  for (const auto& d : result->op->axis) axes.push_back(d.name);
  std::vector<std::string> raxes;
  for (const auto& d : result->op->reduce_axis) raxes.push_back(d.name);

  int steps = 1 + (int)pick(4);
  for (int i = 0; i < steps; ++i) {
    int prim = (int)pick(6);
    try {
      if (prim == 0) {
        bool red_axis = !raxes.empty() && pick(2) == 0;
        auto& pool = red_axis ? raxes : axes;
        size_t ai = (size_t)pick((int64_t)pool.size());
        int64_t f = 2 + pick(5);
        auto pr = s.split(stage, pool[ai], f);
        pool[ai] = pr.first;
        pool.insert(pool.begin() + (long)ai + 1, pr.second);
      } else if (prim == 1 && axes.size() >= 2) {
        auto tt = s.tile(stage, axes[0], axes[1], 2 + pick(4), 2 + pick(4));
        axes.erase(axes.begin(), axes.begin() + 2);
        axes.insert(axes.begin(), {tt[0], tt[1], tt[2], tt[3]});
      } else if (prim == 2) {
        std::vector<std::string> order = axes;
        for (const auto& r : raxes) order.push_back(r);
        std::shuffle(order.begin(), order.end(), rng);
        s.reorder(stage, order);
      } else if (prim == 3) {
        if (pick(2) == 0)
          s.unroll(stage, axes.back());
        else
          s.vectorize(stage, axes.back());
      } else if (prim == 4) {
        std::string src = inputs[pick((int64_t)inputs.size())];
        Tensor cache = s.cache_read(src, MemoryScope::kLocal, {stage});
        if (pick(2) == 0 && !axes.empty())
          s.compute_at(cache->name, stage, axes.front());
      } else if (prim == 5) {
        int64_t n = 2 + 2 * pick(2);
        std::string vt = s.virtual_thread(stage, axes.front(), n);
        axes.front() = vt;
      }
    } catch (const Error&) {
      // Illegal combination for this workload; try the next primitive.
    }
  }
  out.sched = s;
  out.outputs.push_back(result);
  return out;
}

ComputeGraph random_graph(uint64_t seed, int max_nodes) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int64_t n) {
    return n <= 1 ? 0
                  : static_cast<int64_t>(rng() % static_cast<uint64_t>(n));
  };
  const TensorType big{{6, 8}, DType::kF32};
  const TensorType small{{3, 4}, DType::kF32};

  ComputeGraph g;
  auto add_node = [&](GraphNode n) {
    n.id = "n" + std::to_string(g.nodes.size());
    g.nodes.push_back(std::move(n));
    return g.nodes.back().id;
  };

  int n_inputs = 1 + (int)pick(3);
  for (int i = 0; i < n_inputs; ++i) {
    GraphNode n;
    n.op = "input";
    n.out_type = pick(2) == 0 ? big : small;
    add_node(n);
  }
  if (pick(3) == 0) {
    GraphNode n;
    n.op = "constant";
    n.out_type = pick(2) == 0 ? big : small;
    DenseTensor t(n.out_type);
    for (int64_t i = 0; i < t.num_elements(); ++i)
      t.set_f(i, (float)pick(7) - 3.0f);
    n.data = t;
    add_node(n);
  }

  int total = (int)g.nodes.size() + 1 +
              (int)pick(max_nodes - (int64_t)g.nodes.size());
  total = std::min(total, max_nodes);
  const std::vector<std::string> unary = {"relu", "exp", "scale"};
  while ((int)g.nodes.size() < total) {
    GraphNode n;
    if (pick(2) == 0) {
      // Two same-shape predecessors (possibly the same one twice).
      std::vector<std::string> cand;
      TensorType want = pick(2) == 0 ? big : small;
      for (const auto& m : g.nodes)
        if (m.out_type.shape == want.shape) cand.push_back(m.id);
      if (cand.empty()) continue;
      n.op = pick(2) == 0 ? "add" : "mul";
      n.inputs = {cand[(size_t)pick((int64_t)cand.size())],
                  cand[(size_t)pick((int64_t)cand.size())]};
      n.out_type = want;
    } else {
      const GraphNode& src = g.nodes[(size_t)pick((int64_t)g.nodes.size())];
      n.op = unary[(size_t)pick(3)];
      if (n.op == "scale") n.attrs["scale"] = 1.5;
      n.inputs = {src.id};
      n.out_type = src.out_type;
    }
    add_node(n);
  }

  // Every sink is an output; guarantee at least one.
  std::set<std::string> consumed;
  for (const auto& n : g.nodes)
    for (const auto& in : n.inputs) consumed.insert(in);
  for (const auto& n : g.nodes)
    if (consumed.count(n.id) == 0 && n.op != "input" && n.op != "constant")
      g.outputs.push_back(n.id);
  if (g.outputs.empty()) g.outputs.push_back(g.nodes.back().id);
  g.validate();
  return g;
}

}  // namespace tec
