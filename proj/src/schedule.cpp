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
#include "tec/schedule.hpp"

#include <algorithm>
#include <set>

namespace tec {

namespace {

const std::set<std::string> kThreadTags = {"blockIdx.x", "blockIdx.y",
                                           "threadIdx.x", "threadIdx.y",
                                           "vthread"};

bool reads_tensor(const Stage& s, const std::string& tensor) {
  if (!s.tensor->op) return false;
  std::vector<ReadSite> reads;
  collect_reads(s.tensor->op->body, &reads);
  for (const auto& r : reads)
    if (r.buffer == tensor) return true;
  return false;
}

}  // namespace

IterVar& Stage::axis(const std::string& id) {
  int p = axis_pos(id);
  if (p < 0)
    fail(ErrorCode::kUnboundAxis,
         "stage " + name + " has no leaf axis '" + id + "'");
  return leaf[p];
}

const IterVar& Stage::axis(const std::string& id) const {
  return const_cast<Stage*>(this)->axis(id);
}

int Stage::axis_pos(const std::string& id) const {
  for (size_t i = 0; i < leaf.size(); ++i)
    if (leaf[i].id == id) return static_cast<int>(i);
  return -1;
}

Schedule Schedule::create(const std::vector<Tensor>& outputs) {
  Schedule s;
  s.outputs_ = outputs;
  std::set<std::string> visited;
  std::set<std::string> output_names;
  for (const auto& t : outputs) output_names.insert(t->name);

  // Postorder over the producer DAG: producers come first.
  std::function<void(const Tensor&)> visit = [&](const Tensor& t) {
    if (!t->op || visited.count(t->name)) return;
    visited.insert(t->name);
    for (const auto& in : t->op->inputs) visit(in);
    Stage st;
    st.tensor = t;
    st.name = t->name;
    st.is_output = output_names.count(t->name) > 0;
    for (const auto& a : t->op->axis)
      st.leaf.push_back({a.name, a.extent, IterKind::kDataParallel});
    for (const auto& a : t->op->reduce_axis)
      st.leaf.push_back({a.name, a.extent, IterKind::kReduce});
    s.stages_.push_back(std::move(st));
  };
  for (const auto& t : outputs) {
    if (!t->op)
      fail(ErrorCode::kShapeMismatch,
           "cannot schedule placeholder '" + t->name + "'");
    visit(t);
  }
  return s;
}

int Schedule::stage_index(const std::string& name) const {
  for (size_t i = 0; i < stages_.size(); ++i)
    if (stages_[i].name == name) return static_cast<int>(i);
  return -1;
}

Stage& Schedule::stage(const std::string& name) {
  int i = stage_index(name);
  if (i < 0) fail(ErrorCode::kUnboundAxis, "no stage named '" + name + "'");
  return stages_[i];
}

const Stage& Schedule::stage(const std::string& name) const {
  return const_cast<Schedule*>(this)->stage(name);
}

bool Schedule::has_stage(const std::string& name) const {
  return stage_index(name) >= 0;
}

void Schedule::check_axis_free(const Stage& s, const IterVar& iv,
                               const char* action) const {
  if (!iv.bind_tag.empty())
    fail(ErrorCode::kIllegalBind, std::string("cannot ") + action +
                                      " axis " + iv.id + " of " + s.name +
                                      ": already bound to " + iv.bind_tag);
  if (iv.ann != LoopAnn::kNone)
    fail(ErrorCode::kIllegalAnnotation, std::string("cannot ") + action +
                                            " annotated axis " + iv.id +
                                            " of " + s.name);
  if (s.tensorized && s.tensorized->axis == iv.id)
    fail(ErrorCode::kIllegalAnnotation, std::string("cannot ") + action +
                                            " tensorized axis " + iv.id);
}

// A Reduce axis outside a parallel or thread-bound axis would make the
// reduction cross-thread, which this machine does not do.
void Schedule::check_thread_order(const Stage& s) const {
  bool seen_reduce = false;
  for (const auto& iv : s.leaf) {
    if (iv.kind == IterKind::kReduce) seen_reduce = true;
    bool is_parallel = iv.ann == LoopAnn::kParallel || !iv.bind_tag.empty();
    if (seen_reduce && is_parallel)
      fail(ErrorCode::kIllegalReorder,
           "stage " + s.name + ": parallel axis " + iv.id +
               " sits inside a reduction");
  }
}

std::pair<std::string, std::string> Schedule::split(const std::string& stage_n,
                                                    const std::string& axis,
                                                    int64_t factor) {
  Stage& s = stage(stage_n);
  int pos = s.axis_pos(axis);
  if (pos < 0)
    fail(ErrorCode::kUnboundAxis,
         "stage " + stage_n + " has no leaf axis '" + axis + "'");
  IterVar iv = s.leaf[pos];
  check_axis_free(s, iv, "split");
  if (factor < 1 || factor > iv.extent)
    fail(ErrorCode::kInvalidFactor,
         "split factor " + std::to_string(factor) + " outside [1, " +
             std::to_string(iv.extent) + "] on axis " + axis);
  IterVar outer{axis + ".outer", (iv.extent + factor - 1) / factor, iv.kind};
  IterVar inner{axis + ".inner", factor, iv.kind};
  AxisRelation rel;
  rel.kind = AxisRelation::kSplit;
  rel.parent = axis;
  rel.outer = outer.id;
  rel.inner = inner.id;
  rel.factor = factor;
  rel.needs_guard = (iv.extent % factor) != 0;
  s.relations.push_back(rel);
  s.leaf[pos] = outer;
  s.leaf.insert(s.leaf.begin() + pos + 1, inner);
  log_.push_back({{"prim", "split"},
                  {"stage", stage_n},
                  {"axis", axis},
                  {"factor", factor}});
  return {outer.id, inner.id};
}

void Schedule::reorder(const std::string& stage_n,
                       const std::vector<std::string>& axes) {
  Stage& s = stage(stage_n);
  std::vector<int> positions;
  for (const auto& a : axes) {
    int p = s.axis_pos(a);
    if (p < 0)
      fail(ErrorCode::kUnboundAxis,
           "stage " + stage_n + " has no leaf axis '" + a + "'");
    positions.push_back(p);
  }
  std::set<int> uniq(positions.begin(), positions.end());
  if (uniq.size() != positions.size())
    fail(ErrorCode::kIllegalReorder, "reorder names an axis twice");
  std::vector<int> sorted(uniq.begin(), uniq.end());
  std::vector<IterVar> old = s.leaf;
  for (size_t i = 0; i < axes.size(); ++i)
    s.leaf[sorted[i]] = old[positions[i]];
  check_thread_order(s);
  log_.push_back({{"prim", "reorder"}, {"stage", stage_n}, {"axes", axes}});
}

std::array<std::string, 4> Schedule::tile(const std::string& stage_n,
                                          const std::string& x,
                                          const std::string& y, int64_t fx,
                                          int64_t fy) {
  auto [xo, xi] = split(stage_n, x, fx);
  auto [yo, yi] = split(stage_n, y, fy);
  reorder(stage_n, {xo, yo, xi, yi});
  return {xo, yo, xi, yi};
}

std::string Schedule::fuse_axes(const std::string& stage_n,
                                const std::string& outer,
                                const std::string& inner) {
  Stage& s = stage(stage_n);
  int po = s.axis_pos(outer);
  int pi = s.axis_pos(inner);
  if (po < 0 || pi < 0)
    fail(ErrorCode::kUnboundAxis, "fuse_axes: unknown axis on " + stage_n);
  if (pi != po + 1)
    fail(ErrorCode::kIllegalReorder,
         "fuse_axes needs adjacent axes, got " + outer + " and " + inner);
  IterVar a = s.leaf[po], b = s.leaf[pi];
  check_axis_free(s, a, "fuse");
  check_axis_free(s, b, "fuse");
  if (a.kind != b.kind)
    fail(ErrorCode::kIllegalReorder,
         "fuse_axes cannot mix data-parallel and reduce axes");
  IterVar fused{outer + "." + inner + ".fused", a.extent * b.extent, a.kind};
  AxisRelation rel;
  rel.kind = AxisRelation::kFuse;
  rel.outer = outer;
  rel.inner = inner;
  rel.fused = fused.id;
  rel.inner_extent = b.extent;
  s.relations.push_back(rel);
  s.leaf[po] = fused;
  s.leaf.erase(s.leaf.begin() + pi);
  log_.push_back({{"prim", "fuse_axes"},
                  {"stage", stage_n},
                  {"outer", outer},
                  {"inner", inner}});
  return fused.id;
}

void Schedule::unroll(const std::string& stage_n, const std::string& axis) {
  Stage& s = stage(stage_n);
  IterVar& iv = s.axis(axis);
  check_axis_free(s, iv, "unroll");
  if (iv.extent > 64)
    fail(ErrorCode::kIllegalAnnotation,
         "unroll of extent " + std::to_string(iv.extent) +
             " would explode the body (limit 64)");
  iv.ann = LoopAnn::kUnroll;
  log_.push_back({{"prim", "unroll"}, {"stage", stage_n}, {"axis", axis}});
}

void Schedule::vectorize(const std::string& stage_n, const std::string& axis) {
  Stage& s = stage(stage_n);
  IterVar& iv = s.axis(axis);
  check_axis_free(s, iv, "vectorize");
  if (iv.kind == IterKind::kReduce)
    fail(ErrorCode::kIllegalAnnotation,
         "cannot vectorize reduce axis " + axis);
  if (s.leaf.back().id != axis)
    fail(ErrorCode::kIllegalAnnotation,
         "vectorize applies to the innermost axis only, " + axis +
             " is not innermost");
  iv.ann = LoopAnn::kVectorize;
  log_.push_back({{"prim", "vectorize"}, {"stage", stage_n}, {"axis", axis}});
}

void Schedule::parallel(const std::string& stage_n, const std::string& axis) {
  Stage& s = stage(stage_n);
  IterVar& iv = s.axis(axis);
  check_axis_free(s, iv, "parallel");
  if (iv.kind == IterKind::kReduce)
    fail(ErrorCode::kIllegalAnnotation,
         "cannot parallelize reduce axis " + axis);
  iv.ann = LoopAnn::kParallel;
  check_thread_order(s);
  log_.push_back({{"prim", "parallel"}, {"stage", stage_n}, {"axis", axis}});
}

void Schedule::bind(const std::string& stage_n, const std::string& axis,
                    const std::string& thread_tag) {
  Stage& s = stage(stage_n);
  IterVar& iv = s.axis(axis);
  if (!kThreadTags.count(thread_tag))
    fail(ErrorCode::kIllegalBind, "unknown thread tag '" + thread_tag + "'");
  if (iv.kind == IterKind::kReduce)
    fail(ErrorCode::kIllegalBind,
         "reduce axis " + axis + " cannot bind to " + thread_tag);
  check_axis_free(s, iv, "bind");
  if (thread_tag != "vthread") {
    for (const auto& other : s.leaf)
      if (other.bind_tag == thread_tag)
        fail(ErrorCode::kBindConflict,
             "stage " + stage_n + " already binds " + thread_tag + " to " +
                 other.id);
  }
  iv.bind_tag = thread_tag;
  check_thread_order(s);
  log_.push_back({{"prim", "bind"},
                  {"stage", stage_n},
                  {"axis", axis},
                  {"tag", thread_tag}});
}

std::string Schedule::virtual_thread(const std::string& stage_n,
                                     const std::string& axis, int64_t n) {
  const IterVar iv = stage(stage_n).axis(axis);
  if (n < 1 || iv.extent % n != 0)
    fail(ErrorCode::kInvalidFactor,
         "virtual_thread count " + std::to_string(n) +
             " must divide extent " + std::to_string(iv.extent));
  auto [outer, inner] = split(stage_n, axis, iv.extent / n);
  bind(stage_n, outer, "vthread");
  return outer;
}

Tensor Schedule::cache_read(const std::string& src, MemoryScope scope,
                            const std::vector<std::string>& readers) {
  if (scope == MemoryScope::kGlobal)
    fail(ErrorCode::kScopeError, "cache_read into global scope is pointless");
  // Source: either a scheduled stage's tensor or a placeholder input.
  Tensor source;
  if (has_stage(src)) {
    source = stage(src).tensor;
  } else {
    for (const auto& st : stages_) {
      if (!st.tensor->op) continue;
      for (const auto& in : st.tensor->op->inputs)
        if (in->name == src) source = in;
    }
  }
  if (!source)
    fail(ErrorCode::kUnboundAxis, "cache_read: no tensor named '" + src + "'");

  std::string short_scope;
  switch (scope) {
    case MemoryScope::kShared:
      short_scope = "shared";
      break;
    case MemoryScope::kLocal:
      short_scope = "local";
      break;
    case MemoryScope::kAccelActivation:
      short_scope = "abuf";
      break;
    case MemoryScope::kAccelWeight:
      short_scope = "wbuf";
      break;
    case MemoryScope::kAccelAccum:
      short_scope = "acc";
      break;
    default:
      short_scope = "cache";
  }
  std::string name = src + "." + short_scope;
  while (has_stage(name)) name += "x";

  std::vector<IterDecl> axis;
  std::vector<Expr> idx;
  for (int d = 0; d < source->type.rank(); ++d) {
    std::string an = "c" + std::to_string(d);
    axis.push_back({an, source->type.shape[d]});
    idx.push_back(var(an));
  }
  Tensor cache_t = compute(name, source->type, std::move(axis),
                           read(src, std::move(idx)), {source});

  int first_reader = static_cast<int>(stages_.size());
  for (const auto& r : readers) {
    int ri = stage_index(r);
    if (ri < 0)
      fail(ErrorCode::kUnboundAxis, "cache_read reader '" + r +
                                        "' is not a stage");
    first_reader = std::min(first_reader, ri);
  }
  Stage st;
  st.tensor = cache_t;
  st.name = name;
  st.scope = scope;
  st.scope_set = true;
  st.is_cache = true;
  st.cache_src = src;
  st.cache_readers = readers;
  for (const auto& a : cache_t->op->axis)
    st.leaf.push_back({a.name, a.extent, IterKind::kDataParallel});
  stages_.insert(stages_.begin() + first_reader, std::move(st));

  log_.push_back({{"prim", "cache_read"},
                  {"src", src},
                  {"scope", scope_name(scope)},
                  {"readers", readers}});
  return cache_t;
}

void Schedule::set_scope(const std::string& stage_n, MemoryScope scope) {
  Stage& s = stage(stage_n);
  if (s.is_output && scope != MemoryScope::kGlobal)
    fail(ErrorCode::kScopeError,
         "output stage " + stage_n + " must stay in global scope");
  s.scope = scope;
  s.scope_set = true;
  log_.push_back({{"prim", "set_scope"},
                  {"stage", stage_n},
                  {"scope", scope_name(scope)}});
}

void Schedule::compute_at(const std::string& producer,
                          const std::string& consumer,
                          const std::string& axis) {
  if (producer == consumer)
    fail(ErrorCode::kIllegalComputeAt, "cannot attach a stage to itself");
  Stage& p = stage(producer);
  Stage& c = stage(consumer);
  c.axis(axis);  // must exist
  if (p.is_output)
    fail(ErrorCode::kIllegalComputeAt,
         "output stage " + producer + " cannot be attached");
  // The consumer, or another stage already attached under it, must read
  // the producer; otherwise the attachment can never be realized.  A cache
  // stage is read by its registered readers even though their bodies still
  // name the original tensor (the redirect happens during lowering).
  auto consumes = [&](const Stage& s) {
    if (reads_tensor(s, producer)) return true;
    if (p.is_cache)
      for (const auto& r : p.cache_readers)
        if (r == s.name) return true;
    return false;
  };
  bool used = consumes(c);
  for (const auto& other : stages_)
    if (other.at_stage == consumer) used = used || consumes(other);
  if (!used)
    fail(ErrorCode::kIllegalComputeAt,
         consumer + " does not read " + producer);
  p.at_stage = consumer;
  p.at_axis = axis;
  log_.push_back({{"prim", "compute_at"},
                  {"stage", producer},
                  {"target", consumer},
                  {"axis", axis}});
}

void Schedule::tensorize(const std::string& stage_n, const std::string& axis,
                         const std::string& intrin) {
  Stage& s = stage(stage_n);
  s.axis(axis);  // must exist
  register_builtin_intrinsics();
  if (!find_intrinsic(intrin))
    fail(ErrorCode::kTensorizeMismatch, "no intrinsic named '" + intrin + "'");
  if (s.tensorized)
    fail(ErrorCode::kTensorizeMismatch,
         "stage " + stage_n + " is already tensorized");
  s.tensorized = TensorizeInfo{axis, intrin};
  log_.push_back({{"prim", "tensorize"},
                  {"stage", stage_n},
                  {"axis", axis},
                  {"intrin", intrin}});
}

void Schedule::apply_log_entry(const nlohmann::json& e) {
  const std::string prim = e.at("prim").get<std::string>();
  if (prim == "split") {
    split(e.at("stage"), e.at("axis"), e.at("factor").get<int64_t>());
  } else if (prim == "reorder") {
    reorder(e.at("stage"), e.at("axes").get<std::vector<std::string>>());
  } else if (prim == "fuse_axes") {
    fuse_axes(e.at("stage"), e.at("outer"), e.at("inner"));
  } else if (prim == "unroll") {
    unroll(e.at("stage"), e.at("axis"));
  } else if (prim == "vectorize") {
    vectorize(e.at("stage"), e.at("axis"));
  } else if (prim == "parallel") {
    parallel(e.at("stage"), e.at("axis"));
  } else if (prim == "bind") {
    bind(e.at("stage"), e.at("axis"), e.at("tag"));
  } else if (prim == "cache_read") {
    cache_read(e.at("src"), scope_from_name(e.at("scope")),
               e.at("readers").get<std::vector<std::string>>());
  } else if (prim == "set_scope") {
    set_scope(e.at("stage"), scope_from_name(e.at("scope")));
  } else if (prim == "compute_at") {
    compute_at(e.at("stage"), e.at("target"), e.at("axis"));
  } else if (prim == "tensorize") {
    tensorize(e.at("stage"), e.at("axis"), e.at("intrin"));
  } else {
    fail(ErrorCode::kIOError, "unknown schedule primitive '" + prim + "'");
  }
}

Schedule Schedule::replay(const std::vector<Tensor>& outputs,
                          const nlohmann::json& log) {
  Schedule s = create(outputs);
  for (const auto& e : log) s.apply_log_entry(e);
  return s;
}

}  // namespace tec
