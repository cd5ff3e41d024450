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
#include "tec/lower.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "tec/error.hpp"

namespace tec {
namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

Expr subst1(const Expr& e, const std::string& v, const Expr& r) {
  std::map<std::string, Expr> m;
  m.emplace(v, r);
  return substitute(e, m);
}

std::set<std::string> vars_of(const Expr& e) {
  std::set<std::string> s;
  collect_vars(e, &s);
  return s;
}

std::vector<ReadSite> reads_of(const Expr& e) {
  std::vector<ReadSite> v;
  collect_reads(e, &v);
  return v;
}

Interval iv(int64_t lo, int64_t hi) { return Interval{lo, hi}; }

}  // namespace

Interval interval_of(const Expr& e,
                     const std::map<std::string, Interval>& ranges) {
  switch (e->kind) {
    case ExprKind::kIntConst:
      return iv(e->ival, e->ival);
    case ExprKind::kVar: {
      auto it = ranges.find(e->name);
      if (it == ranges.end())
        fail(ErrorCode::kLoweringError,
             "unknown loop variable in index bound: " + e->name);
      return it->second;
    }
    case ExprKind::kAdd: {
      Interval a = interval_of(e->args[0], ranges);
      Interval b = interval_of(e->args[1], ranges);
      return iv(a.lo + b.lo, a.hi + b.hi);
    }
    case ExprKind::kSub: {
      Interval a = interval_of(e->args[0], ranges);
      Interval b = interval_of(e->args[1], ranges);
      return iv(a.lo - b.hi, a.hi - b.lo);
    }
    case ExprKind::kMul: {
      Interval a = interval_of(e->args[0], ranges);
      Interval b = interval_of(e->args[1], ranges);
      int64_t c[4] = {a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi};
      return iv(*std::min_element(c, c + 4), *std::max_element(c, c + 4));
    }
    case ExprKind::kFloorDiv: {
      Interval b = interval_of(e->args[1], ranges);
      if (b.lo != b.hi || b.lo <= 0)
        fail(ErrorCode::kLoweringError,
             "division bound must be a positive constant");
      Interval a = interval_of(e->args[0], ranges);
      return iv(floordiv_val(a.lo, b.lo), floordiv_val(a.hi, b.lo));
    }
    case ExprKind::kMod: {
      Interval b = interval_of(e->args[1], ranges);
      if (b.lo != b.hi || b.lo <= 0)
        fail(ErrorCode::kLoweringError,
             "modulo bound must be a positive constant");
      Interval a = interval_of(e->args[0], ranges);
      if (floordiv_val(a.lo, b.lo) == floordiv_val(a.hi, b.lo))
        return iv(floormod_val(a.lo, b.lo), floormod_val(a.hi, b.lo));
      return iv(0, b.lo - 1);
    }
    case ExprKind::kMin: {
      Interval a = interval_of(e->args[0], ranges);
      Interval b = interval_of(e->args[1], ranges);
      return iv(std::min(a.lo, b.lo), std::min(a.hi, b.hi));
    }
    case ExprKind::kMax: {
      Interval a = interval_of(e->args[0], ranges);
      Interval b = interval_of(e->args[1], ranges);
      return iv(std::max(a.lo, b.lo), std::max(a.hi, b.hi));
    }
    case ExprKind::kSelect: {
      Interval a = interval_of(e->args[1], ranges);
      Interval b = interval_of(e->args[2], ranges);
      return iv(std::min(a.lo, b.lo), std::max(a.hi, b.hi));
    }
    default:
      fail(ErrorCode::kLoweringError,
           "unsupported index expression for bounds: " + expr_str(e));
  }
}

namespace {

// ---------------------------------------------------------------------------
// fixed + interval decomposition of an index expression
//
// An index is split as (fixed expression over outer vars) + (constant
// interval contributed by the free loop vars).  Divisions and modulos are
// only admitted when their operand is entirely fixed or entirely free,
// which covers everything axis reconstruction can produce.
// ---------------------------------------------------------------------------

struct IndexBox {
  Expr fixed;  // may be null (treated as 0)
  int64_t lo = 0, hi = 0;
};

Expr box_sum(const Expr& a, const Expr& b) {
  if (!a) return b;
  if (!b) return a;
  return add(a, b);
}

std::optional<IndexBox> split_index(
    const Expr& e, const std::set<std::string>& fixed,
    const std::map<std::string, Interval>& ranges) {
  switch (e->kind) {
    case ExprKind::kIntConst:
      return IndexBox{nullptr, e->ival, e->ival};
    case ExprKind::kVar: {
      if (fixed.count(e->name)) return IndexBox{e, 0, 0};
      auto it = ranges.find(e->name);
      if (it == ranges.end()) return std::nullopt;
      return IndexBox{nullptr, it->second.lo, it->second.hi};
    }
    case ExprKind::kAdd: {
      auto a = split_index(e->args[0], fixed, ranges);
      auto b = split_index(e->args[1], fixed, ranges);
      if (!a || !b) return std::nullopt;
      return IndexBox{box_sum(a->fixed, b->fixed), a->lo + b->lo, a->hi + b->hi};
    }
    case ExprKind::kSub: {
      auto a = split_index(e->args[0], fixed, ranges);
      auto b = split_index(e->args[1], fixed, ranges);
      if (!a || !b) return std::nullopt;
      Expr bf = b->fixed ? sub(cst(0), b->fixed) : nullptr;
      return IndexBox{box_sum(a->fixed, bf), a->lo - b->hi, a->hi - b->lo};
    }
    case ExprKind::kMul: {
      Expr lhs = e->args[0], rhs = e->args[1];
      if (lhs->kind == ExprKind::kIntConst) std::swap(lhs, rhs);
      if (rhs->kind != ExprKind::kIntConst) return std::nullopt;
      int64_t c = rhs->ival;
      auto a = split_index(lhs, fixed, ranges);
      if (!a) return std::nullopt;
      Expr f = a->fixed ? mul(a->fixed, cst(c)) : nullptr;
      int64_t lo = a->lo * c, hi = a->hi * c;
      if (c < 0) std::swap(lo, hi);
      return IndexBox{f, lo, hi};
    }
    case ExprKind::kFloorDiv:
    case ExprKind::kMod: {
      if (e->args[1]->kind != ExprKind::kIntConst || e->args[1]->ival <= 0)
        return std::nullopt;
      int64_t c = e->args[1]->ival;
      bool any_fixed = false, any_free = false;
      for (const auto& v : vars_of(e->args[0]))
        (fixed.count(v) ? any_fixed : any_free) = true;
      if (any_fixed && any_free) return std::nullopt;
      if (any_fixed) return IndexBox{e, 0, 0};
      Interval a = interval_of(e->args[0], ranges);
      if (e->kind == ExprKind::kFloorDiv)
        return IndexBox{nullptr, floordiv_val(a.lo, c), floordiv_val(a.hi, c)};
      if (floordiv_val(a.lo, c) == floordiv_val(a.hi, c))
        return IndexBox{nullptr, floormod_val(a.lo, c), floormod_val(a.hi, c)};
      return IndexBox{nullptr, 0, c - 1};
    }
    default:
      return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Per-stage lowering info, prepared in reverse stage order so every
// consumer is analysed before its producers.
// ---------------------------------------------------------------------------

struct StageInfo {
  std::map<std::string, int64_t> ext;   // axis id -> extent (after shrink)
  std::map<std::string, Expr> value;    // axis id -> expr over qualified leaf vars
  std::vector<int64_t> leaf_extents;
  std::vector<Expr> offsets;            // region origin per tensor dim (empty: none)
  std::vector<int64_t> buf_shape;       // materialized extents per tensor dim
  std::vector<Expr> guards;             // split guards; conjunction wraps bodies
  Expr body;                            // substituted element expression
  std::vector<Expr> store_idx;          // region-relative store coordinates
  std::set<std::string> fixed;          // vars in scope at the attach point
  int attach_parent = -1;
  int attach_pos = -1;                  // leaf position in the parent
};

struct ReadRecord {
  int reader = -1;
  std::vector<Expr> idx;
};

struct CallRegion {
  std::string call_name;
  std::vector<RegionArg> args;
};

class Lowerer {
 public:
  Lowerer(const Schedule& sched, std::string name, const LowerOptions& opts)
      : sched_(sched), name_(std::move(name)), opts_(opts) {}

  LoopProgram run();

 private:
  const Schedule& sched_;
  std::string name_;
  LowerOptions opts_;

  std::vector<const Stage*> stages_;
  std::map<std::string, int> stage_index_;   // stage name -> index
  std::map<std::string, int> tensor_stage_;  // tensor name -> producing stage
  std::vector<StageInfo> info_;
  std::map<std::string, std::vector<ReadRecord>> reads_;  // tensor -> reads
  std::map<std::string, Interval> var_ranges_;            // qualified var ranges
  std::map<std::string, std::vector<std::pair<std::string, std::string>>>
      redirects_;  // reader stage -> (src tensor, cache tensor) in order
  std::map<std::string, MemoryScope> buffer_scope_;
  std::set<std::string> thread_bound_vars_;
  std::map<std::string, TensorType> placeholder_types_;
  std::vector<std::string> placeholder_order_;

  // Emission state: open hardware thread loops and loop-var aliases that
  // map a stage's bound axis onto an already-open thread loop.
  std::map<std::string, std::pair<std::string, int64_t>> open_threads_;
  std::map<std::string, Expr> alias_;

  std::string qual(const Stage& s, const std::string& axis_id) const {
    return s.name + "." + axis_id;
  }

  void collect_stages();
  void infer_scopes();
  void check_bind_extents();
  void prepare(int si);
  bool reader_inside(int reader, int parent, int attach_pos) const;
  Expr fix(const Expr& e) const;

  StmtPtr emit_stage(int si);
  StmtPtr emit_at(int si, size_t pos,
                  const std::map<int, std::vector<int>>& kids_at, size_t tpos,
                  size_t pivot);
  StmtPtr emit_body(int si);
  StmtPtr emit_init(int si, size_t pivot);
  StmtPtr wrap_guards(StmtPtr s, const std::vector<Expr>& guards) const;
  std::vector<Expr> body_guards(int si, const std::set<std::string>& avail) const;
  StmtPtr emit_cooperative(int si);
  CallRegion match_tensorize(int si, size_t tpos);
  std::vector<Expr> rebased_read_index(const std::string& buf,
                                       const std::vector<Expr>& idx) const;
  Expr rebase_reads(const Expr& e) const;

  StmtPtr substitute_stmt(const StmtPtr& s, const std::string& v, const Expr& r);
  StmtPtr expand_unrolled(const StmtPtr& s);
  StmtPtr hoist_shared(const StmtPtr& s, bool in_thread,
                       std::vector<StmtPtr>* pending);
  void check_target(const StmtPtr& root);
};

void Lowerer::collect_stages() {
  for (const auto& st : sched_.stages()) {
    stage_index_[st.name] = static_cast<int>(stages_.size());
    stages_.push_back(&st);
    tensor_stage_[st.tensor->name] = stage_index_[st.name];
  }
  info_.resize(stages_.size());
  std::set<std::string> seen;
  for (const auto* st : stages_) {
    for (const auto& in : st->tensor->op->inputs) {
      if (in->op) continue;  // produced by a compute stage
      if (seen.insert(in->name).second) {
        placeholder_order_.push_back(in->name);
        placeholder_types_[in->name] = in->type;
      }
    }
  }
  for (const auto* st : stages_) {
    if (!st->is_cache) continue;
    for (const auto& r : st->cache_readers)
      redirects_[r].push_back({st->cache_src, st->tensor->name});
  }
  for (const auto* st : stages_)
    for (const auto& ax : st->leaf)
      if (ax.bind_tag.rfind("threadIdx", 0) == 0)
        thread_bound_vars_.insert(qual(*st, ax.id));
}

void Lowerer::infer_scopes() {
  for (size_t i = 0; i < stages_.size(); ++i) {
    const Stage& s = *stages_[i];
    MemoryScope sc = s.scope;
    if (!s.scope_set) {
      if (s.is_output) {
        sc = MemoryScope::kGlobal;
      } else {
        // Default: thread-local when the attachment chain passes a thread
        // binding, global otherwise.
        bool under_thread = false;
        std::string at_stage = s.at_stage, at_axis = s.at_axis;
        while (!at_stage.empty()) {
          auto it = stage_index_.find(at_stage);
          if (it == stage_index_.end()) break;
          const Stage& p = *stages_[it->second];
          int pos = p.axis_pos(at_axis);
          for (int k = 0; k <= pos && k < static_cast<int>(p.leaf.size()); ++k) {
            if (p.leaf[k].bind_tag.rfind("threadIdx", 0) == 0) under_thread = true;
          }
          at_stage = p.at_stage;
          at_axis = p.at_axis;
        }
        sc = under_thread ? MemoryScope::kLocal : MemoryScope::kGlobal;
      }
    }
    if (s.is_output && sc != MemoryScope::kGlobal)
      fail(ErrorCode::kScopeError, "output stage " + s.name + " must stay global");
    buffer_scope_[s.tensor->name] = sc;
  }
  for (const auto& p : placeholder_order_) buffer_scope_[p] = MemoryScope::kGlobal;
}

void Lowerer::check_bind_extents() {
  std::map<std::string, int64_t> tag_extent;
  for (const auto* st : stages_) {
    for (const auto& ax : st->leaf) {
      if (ax.bind_tag.empty() || ax.bind_tag == "vthread") continue;
      auto it = tag_extent.find(ax.bind_tag);
      if (it == tag_extent.end()) {
        tag_extent[ax.bind_tag] = ax.extent;
      } else if (it->second != ax.extent) {
        fail(ErrorCode::kBindConflict,
             "extent mismatch for " + ax.bind_tag + ": " +
                 std::to_string(it->second) + " vs " +
                 std::to_string(ax.extent));
      }
    }
  }
}

bool Lowerer::reader_inside(int reader, int parent, int attach_pos) const {
  if (reader == parent) return true;  // the consumer body sits inside all axes
  int cur = reader;
  while (cur >= 0 && !stages_[cur]->at_stage.empty()) {
    auto it = stage_index_.find(stages_[cur]->at_stage);
    if (it == stage_index_.end()) return false;
    if (it->second == parent) return info_[cur].attach_pos >= attach_pos;
    cur = it->second;
  }
  return false;
}

void Lowerer::prepare(int si) {
  const Stage& s = *stages_[si];
  StageInfo& fo = info_[si];
  const ComputeOpNode* op = s.tensor->op.get();

  if (!s.at_stage.empty()) {
    auto it = stage_index_.find(s.at_stage);
    if (it == stage_index_.end())
      fail(ErrorCode::kIllegalComputeAt,
           "unknown attachment target " + s.at_stage);
    fo.attach_parent = it->second;
    const Stage& p = *stages_[fo.attach_parent];
    int pos = p.axis_pos(s.at_axis);
    if (pos < 0)
      fail(ErrorCode::kIllegalComputeAt,
           "axis " + s.at_axis + " no longer exists on stage " + p.name +
               " (split or fused after compute_at)");
    fo.attach_pos = pos;
    fo.fixed = info_[fo.attach_parent].fixed;
    for (int k = 0; k <= pos; ++k) fo.fixed.insert(qual(p, p.leaf[k].id));
    if (buffer_scope_.at(s.tensor->name) == MemoryScope::kShared) {
      // A shared buffer is filled cooperatively by the whole thread block,
      // so thread-bound loop vars do not pin its footprint.
      for (const auto& v : thread_bound_vars_) fo.fixed.erase(v);
    }
  }

  // Root extents: full shape, or the region inferred from consumer reads.
  const auto& shape = s.tensor->type.shape;
  size_t rank = shape.size();
  std::vector<int64_t> region(shape.begin(), shape.end());

  if (fo.attach_parent >= 0) {
    auto rit = reads_.find(s.tensor->name);
    std::vector<const ReadRecord*> use;
    if (rit != reads_.end()) {
      for (const auto& rr : rit->second) {
        if (!reader_inside(rr.reader, fo.attach_parent, fo.attach_pos))
          fail(ErrorCode::kLoweringError,
               "stage " + stages_[rr.reader]->name + " reads " + s.name +
                   " outside its attachment scope");
        use.push_back(&rr);
      }
    }
    if (use.empty())
      fail(ErrorCode::kLoweringError, "attached stage " + s.name +
                                          " has no consumers inside " +
                                          s.at_stage);
    fo.offsets.resize(rank);
    for (size_t d = 0; d < rank; ++d) {
      Expr fixed_part;
      int64_t lo = 0, hi = 0;
      bool first = true;
      for (const ReadRecord* rr : use) {
        auto box = split_index(simplify(rr->idx[d]), fo.fixed, var_ranges_);
        if (!box)
          fail(ErrorCode::kLoweringError,
               "cannot infer the footprint of " + s.name + " dim " +
                   std::to_string(d) + " from index " + expr_str(rr->idx[d]));
        Expr f = box->fixed ? simplify(box->fixed) : cst(0);
        for (const auto& v : vars_of(f))
          if (!fo.fixed.count(v))
            fail(ErrorCode::kLoweringError,
                 "footprint of " + s.name + " depends on inner variable " + v);
        if (first) {
          fixed_part = f;
          lo = box->lo;
          hi = box->hi;
          first = false;
        } else {
          if (expr_str(fixed_part) != expr_str(f))
            fail(ErrorCode::kLoweringError,
                 "consumers of " + s.name + " disagree on its origin: " +
                     expr_str(fixed_part) + " vs " + expr_str(f));
          lo = std::min(lo, box->lo);
          hi = std::max(hi, box->hi);
        }
      }
      fo.offsets[d] = simplify(add(fixed_part, cst(lo)));
      region[d] = hi - lo + 1;
    }
  }
  fo.buf_shape = region;

  // Extents: roots, then replay the split/fuse relations against them.
  for (size_t d = 0; d < rank; ++d) fo.ext[op->axis[d].name] = region[d];
  for (const auto& rv : op->reduce_axis) fo.ext[rv.name] = rv.extent;
  std::map<std::string, int64_t> fused_inner;  // fused id -> shrunk inner extent
  for (const auto& rel : s.relations) {
    if (rel.kind == AxisRelation::kSplit) {
      int64_t pe = fo.ext.at(rel.parent);
      fo.ext[rel.outer] = ceil_div(pe, rel.factor);
      fo.ext[rel.inner] = std::min(rel.factor, pe);
    } else {
      int64_t eo = fo.ext.at(rel.outer), ei = fo.ext.at(rel.inner);
      fo.ext[rel.fused] = eo * ei;
      fused_inner[rel.fused] = ei;
    }
  }
  fo.leaf_extents.resize(s.leaf.size());
  for (size_t k = 0; k < s.leaf.size(); ++k) {
    fo.leaf_extents[k] = fo.ext.at(s.leaf[k].id);
    var_ranges_[qual(s, s.leaf[k].id)] = iv(0, fo.leaf_extents[k] - 1);
  }

  // Axis reconstruction over qualified leaf vars.
  for (const auto& ax : s.leaf) fo.value[ax.id] = var(qual(s, ax.id));
  for (auto it = s.relations.rbegin(); it != s.relations.rend(); ++it) {
    const auto& rel = *it;
    if (rel.kind == AxisRelation::kSplit) {
      fo.value[rel.parent] =
          simplify(add(mul(fo.value.at(rel.outer), cst(rel.factor)),
                       fo.value.at(rel.inner)));
    } else {
      int64_t ei = fused_inner.at(rel.fused);
      fo.value[rel.outer] = simplify(floordiv(fo.value.at(rel.fused), cst(ei)));
      fo.value[rel.inner] = simplify(mod(fo.value.at(rel.fused), cst(ei)));
    }
  }

  // Split guards, recomputed against the shrunk extents.
  for (const auto& rel : s.relations) {
    if (rel.kind != AxisRelation::kSplit) continue;
    int64_t pe = fo.ext.at(rel.parent);
    if (fo.ext.at(rel.outer) * rel.factor > pe)
      fo.guards.push_back(lt(fo.value.at(rel.parent), cst(pe)));
  }

  // Body: cache redirections, then axis vars -> absolute coordinates.
  Expr body = op->body;
  auto rd = redirects_.find(s.name);
  if (rd != redirects_.end()) {
    std::function<Expr(const Expr&)> rewrite = [&](const Expr& e) -> Expr {
      std::vector<Expr> args;
      args.reserve(e->args.size());
      for (const auto& a : e->args) args.push_back(rewrite(a));
      if (e->kind == ExprKind::kRead) {
        std::string nm = e->name;
        for (const auto& pr : rd->second)
          if (nm == pr.first) nm = pr.second;
        return read(nm, std::move(args));
      }
      ExprNode n(*e);
      n.args = std::move(args);
      return std::make_shared<const ExprNode>(std::move(n));
    };
    body = rewrite(body);
  }
  for (size_t d = 0; d < rank; ++d) {
    Expr abs_coord = fo.value.at(op->axis[d].name);
    if (!fo.offsets.empty()) abs_coord = simplify(add(fo.offsets[d], abs_coord));
    body = subst1(body, op->axis[d].name, abs_coord);
  }
  for (const auto& rv : op->reduce_axis)
    body = subst1(body, rv.name, fo.value.at(rv.name));
  fo.body = simplify(body);

  fo.store_idx.resize(rank);
  for (size_t d = 0; d < rank; ++d) fo.store_idx[d] = fo.value.at(op->axis[d].name);

  for (const auto& site : reads_of(fo.body))
    reads_[site.buffer].push_back(ReadRecord{si, site.indices});
}

Expr Lowerer::fix(const Expr& e) const {
  if (alias_.empty()) return simplify(e);
  return simplify(substitute(e, alias_));
}

std::vector<Expr> Lowerer::rebased_read_index(const std::string& buf,
                                              const std::vector<Expr>& idx) const {
  auto it = tensor_stage_.find(buf);
  std::vector<Expr> out(idx.size());
  if (it == tensor_stage_.end() || info_[it->second].offsets.empty()) {
    for (size_t d = 0; d < idx.size(); ++d) out[d] = fix(idx[d]);
    return out;
  }
  const auto& off = info_[it->second].offsets;
  for (size_t d = 0; d < idx.size(); ++d)
    out[d] = fix(simplify(sub(idx[d], off[d])));
  return out;
}

Expr Lowerer::rebase_reads(const Expr& e) const {
  std::function<Expr(const Expr&)> go = [&](const Expr& x) -> Expr {
    std::vector<Expr> args;
    args.reserve(x->args.size());
    for (const auto& a : x->args) args.push_back(go(a));
    if (x->kind == ExprKind::kRead)
      return read(x->name, rebased_read_index(x->name, args));
    ExprNode n(*x);
    n.args = std::move(args);
    return std::make_shared<const ExprNode>(std::move(n));
  };
  return fix(go(e));
}

StmtPtr Lowerer::wrap_guards(StmtPtr s, const std::vector<Expr>& guards) const {
  if (guards.empty()) return s;
  Expr cond = guards[0];
  for (size_t i = 1; i < guards.size(); ++i) cond = land(cond, guards[i]);
  return make_guard(fix(cond), std::move(s));
}

std::vector<Expr> Lowerer::body_guards(int si,
                                       const std::set<std::string>& avail) const {
  std::vector<Expr> out;
  for (const auto& g : info_[si].guards) {
    bool ok = true;
    for (const auto& v : vars_of(g))
      if (!avail.count(v)) ok = false;
    if (ok) out.push_back(g);
  }
  return out;
}

StmtPtr Lowerer::emit_body(int si) {
  const Stage& s = *stages_[si];
  const StageInfo& fo = info_[si];
  const ComputeOpNode* op = s.tensor->op.get();

  Expr value = rebase_reads(fo.body);
  std::vector<Expr> sidx;
  for (const auto& e : fo.store_idx) sidx.push_back(fix(e));
  const std::string& buf = s.tensor->name;

  if (op->reducer != Reducer::kNone) {
    Expr cur = read(buf, sidx);
    value = op->reducer == Reducer::kSum ? add(cur, value) : vmax(cur, value);
  }
  StmtPtr st = make_store(buf, sidx, value);

  std::set<std::string> avail = fo.fixed;
  for (const auto& ax : s.leaf) avail.insert(qual(s, ax.id));
  std::vector<Expr> guards = body_guards(si, avail);

  // Attached stages iterate a rectangle that can spill past the true
  // footprint at edge tiles; guard any read that may go out of range.
  if (fo.attach_parent >= 0) {
    for (const auto& site : reads_of(value)) {
      std::vector<int64_t> dims;
      auto it = tensor_stage_.find(site.buffer);
      if (it != tensor_stage_.end()) {
        dims = info_[it->second].buf_shape;
      } else if (placeholder_types_.count(site.buffer)) {
        dims = placeholder_types_[site.buffer].shape;
      } else {
        continue;
      }
      for (size_t d = 0; d < site.indices.size() && d < dims.size(); ++d) {
        Interval b = interval_of(site.indices[d], var_ranges_);
        if (b.hi >= dims[d]) guards.push_back(lt(site.indices[d], cst(dims[d])));
        if (b.lo < 0) guards.push_back(le(cst(0), site.indices[d]));
      }
    }
  }
  return wrap_guards(st, guards);
}

StmtPtr Lowerer::emit_init(int si, size_t pivot) {
  const Stage& s = *stages_[si];
  const StageInfo& fo = info_[si];
  const ComputeOpNode* op = s.tensor->op.get();

  std::vector<Expr> sidx;
  for (const auto& e : fo.store_idx) sidx.push_back(fix(e));
  DType dt = s.tensor->type.dtype;
  double idv = reducer_identity(op->reducer, dt);
  Expr id = dt == DType::kF32 ? cstf(idv) : cst(static_cast<int64_t>(idv));
  StmtPtr st = make_store(s.tensor->name, std::move(sidx), id);

  std::set<std::string> avail = fo.fixed;
  for (size_t k = 0; k < pivot; ++k) avail.insert(qual(s, s.leaf[k].id));
  std::vector<std::string> init_axes;
  for (size_t k = pivot; k < s.leaf.size(); ++k) {
    if (s.leaf[k].kind == IterKind::kDataParallel) {
      init_axes.push_back(s.leaf[k].id);
      avail.insert(qual(s, s.leaf[k].id));
    }
  }
  st = wrap_guards(std::move(st), body_guards(si, avail));
  for (auto it = init_axes.rbegin(); it != init_axes.rend(); ++it)
    st = make_for(qual(s, *it), fo.ext.at(*it), ForKind::kSerial, "", st);
  return st;
}

// Cooperative fill of a shared cache: the fill space is flattened,
// distributed over the enclosing thread extent and fenced by barriers.
StmtPtr Lowerer::emit_cooperative(int si) {
  const Stage& s = *stages_[si];
  const StageInfo& fo = info_[si];
  if (!s.relations.empty())
    fail(ErrorCode::kLoweringError, "shared cache " + s.name +
                                        " is filled cooperatively; do not "
                                        "reschedule its axes");
  std::vector<std::pair<std::string, int64_t>> tids;  // y before x; x fastest
  for (const char* tag : {"threadIdx.y", "threadIdx.x"}) {
    auto it = open_threads_.find(tag);
    if (it != open_threads_.end()) tids.push_back(it->second);
  }
  if (tids.empty())
    fail(ErrorCode::kScopeError,
         "shared cache " + s.name + " requires enclosing thread-bound loops");
  int64_t tcount = 1;
  for (const auto& t : tids) tcount *= t.second;
  Expr tid = cst(0);
  for (const auto& t : tids) tid = add(mul(tid, cst(t.second)), var(t.first));
  tid = simplify(tid);

  int64_t total = 1;
  for (int64_t e : fo.buf_shape) total *= e;
  int64_t steps = ceil_div(total, tcount);
  std::string fv = s.name + ".fill";
  var_ranges_[fv] = iv(0, steps - 1);
  Expr flat = simplify(add(mul(var(fv), cst(tcount)), tid));

  // Unflatten row-major into region-relative coordinates.
  size_t rank = fo.buf_shape.size();
  std::vector<Expr> rel(rank);
  Expr run = flat;
  for (size_t d = rank; d-- > 0;) {
    rel[d] = simplify(mod(run, cst(fo.buf_shape[d])));
    run = simplify(floordiv(run, cst(fo.buf_shape[d])));
  }
  if (rank == 1) rel[0] = flat;

  const ComputeOpNode* op = s.tensor->op.get();
  if (op->body->kind != ExprKind::kRead)
    fail(ErrorCode::kLoweringError, "shared cache body must be a direct copy");
  const std::string& src = op->body->name;
  std::vector<Expr> src_idx(rank);
  for (size_t d = 0; d < rank; ++d) {
    src_idx[d] = fo.offsets.empty() ? rel[d] : simplify(add(fo.offsets[d], rel[d]));
  }

  std::vector<Expr> guards;
  if (steps * tcount > total) guards.push_back(lt(flat, cst(total)));
  std::vector<int64_t> src_dims;
  if (placeholder_types_.count(src)) {
    src_dims = placeholder_types_[src].shape;
  } else if (tensor_stage_.count(src)) {
    src_dims = info_[tensor_stage_[src]].buf_shape;
  }
  for (size_t d = 0; d < src_dims.size() && d < rank; ++d) {
    Interval b = interval_of(src_idx[d], var_ranges_);
    if (b.hi >= src_dims[d]) guards.push_back(lt(src_idx[d], cst(src_dims[d])));
    if (b.lo < 0) guards.push_back(le(cst(0), src_idx[d]));
  }
  StmtPtr st = make_store(s.tensor->name, rel,
                          read(src, rebased_read_index(src, src_idx)));
  st = wrap_guards(std::move(st), guards);
  st = make_for(fv, steps, ForKind::kSerial, "", st);
  return make_seq({make_barrier(), st, make_barrier()});
}

// Structural match of the stage against the intrinsic behavior at the
// tensorized axis; extracts the call's operand region descriptors.
CallRegion Lowerer::match_tensorize(int si, size_t tpos) {
  const Stage& s = *stages_[si];
  const StageInfo& fo = info_[si];
  const ComputeOpNode* op = s.tensor->op.get();
  const Intrinsic* intr = find_intrinsic(s.tensorized->intrin);
  if (intr == nullptr)
    fail(ErrorCode::kTensorizeMismatch,
         "unknown intrinsic " + s.tensorized->intrin);
  const ComputeOpNode* beh = intr->behavior.get();

  std::vector<const IterVar*> dp, red;
  for (size_t k = tpos; k < s.leaf.size(); ++k) {
    if (s.leaf[k].kind == IterKind::kDataParallel) dp.push_back(&s.leaf[k]);
    else red.push_back(&s.leaf[k]);
  }
  if (dp.size() != beh->axis.size())
    fail(ErrorCode::kTensorizeMismatch,
         s.name + ": intrinsic expects " + std::to_string(beh->axis.size()) +
             " data axes, the tensorized region has " + std::to_string(dp.size()));
  if (red.size() != beh->reduce_axis.size())
    fail(ErrorCode::kTensorizeMismatch,
         s.name + ": intrinsic expects " +
             std::to_string(beh->reduce_axis.size()) +
             " reduction axes, the tensorized region has " +
             std::to_string(red.size()));
  for (size_t i = 0; i < dp.size(); ++i)
    if (fo.ext.at(dp[i]->id) != beh->axis[i].extent)
      fail(ErrorCode::kTensorizeMismatch,
           s.name + ": axis " + dp[i]->id + " extent " +
               std::to_string(fo.ext.at(dp[i]->id)) + " != intrinsic axis " +
               beh->axis[i].name + " extent " +
               std::to_string(beh->axis[i].extent));
  for (size_t i = 0; i < red.size(); ++i)
    if (fo.ext.at(red[i]->id) != beh->reduce_axis[i].extent)
      fail(ErrorCode::kTensorizeMismatch,
           s.name + ": axis " + red[i]->id + " extent " +
               std::to_string(fo.ext.at(red[i]->id)) + " != intrinsic axis " +
               beh->reduce_axis[i].name + " extent " +
               std::to_string(beh->reduce_axis[i].extent));
  if (op->reducer != beh->reducer)
    fail(ErrorCode::kTensorizeMismatch,
         s.name + ": reducer " + std::string(reducer_name(op->reducer)) +
             " != intrinsic reducer " + reducer_name(beh->reducer));
  if (s.tensor->type.dtype != beh->out_type.dtype)
    fail(ErrorCode::kTensorizeMismatch,
         s.name + ": output dtype " + dtype_name(s.tensor->type.dtype) +
             " != intrinsic output dtype " + dtype_name(beh->out_type.dtype));

  std::set<std::string> consumed;
  for (const auto* a : dp) consumed.insert(qual(s, a->id));
  for (const auto* a : red) consumed.insert(qual(s, a->id));
  for (const auto& g : fo.guards)
    for (const auto& v : vars_of(g))
      if (consumed.count(v))
        fail(ErrorCode::kTensorizeMismatch,
             s.name + ": partial tile under the tensorized axis (guard " +
                 expr_str(g) + ")");

  std::map<std::string, std::string> vmap;  // behavior var -> qualified var
  for (size_t i = 0; i < dp.size(); ++i)
    vmap[beh->axis[i].name] = qual(s, dp[i]->id);
  for (size_t i = 0; i < red.size(); ++i)
    vmap[beh->reduce_axis[i].name] = qual(s, red[i]->id);

  CallRegion region;
  region.call_name = intr->name;
  std::map<std::string, std::string> operand_buffer;

  auto check_scope = [&](const std::string& btensor, const std::string& buffer) {
    if (!intr->scope_checked) return;
    auto need = intr->operand_scope.find(btensor);
    if (need == intr->operand_scope.end()) return;
    MemoryScope have = buffer_scope_.count(buffer) ? buffer_scope_.at(buffer)
                                                   : MemoryScope::kGlobal;
    if (have != need->second)
      fail(ErrorCode::kTensorizeMismatch,
           s.name + ": operand " + btensor + " must live in " +
               scope_name(need->second) + ", buffer " + buffer + " is in " +
               scope_name(have));
  };

  auto extract_operand = [&](const std::string& btensor,
                             const std::vector<std::string>& bvars,
                             const std::string& buffer,
                             const std::vector<Expr>& idx) {
    RegionArg arg;
    arg.behavior_tensor = btensor;
    arg.buffer = buffer;
    arg.base.resize(idx.size());
    arg.axis_dim.assign(bvars.size(), -1);
    for (size_t d = 0; d < idx.size(); ++d) {
      auto aff = as_affine(simplify(idx[d]));
      if (!aff)
        fail(ErrorCode::kTensorizeMismatch,
             s.name + ": operand " + buffer + " index " + expr_str(idx[d]) +
                 " is not affine");
      Expr base = cst(aff->base);
      for (const auto& t : aff->coeff) {
        if (consumed.count(t.first)) {
          if (t.second != 1)
            fail(ErrorCode::kTensorizeMismatch,
                 s.name + ": operand " + buffer + " dim " + std::to_string(d) +
                     " strides consumed axis " + t.first + " by " +
                     std::to_string(t.second));
          int bdim = -1;
          for (size_t b = 0; b < bvars.size(); ++b)
            if (vmap.at(bvars[b]) == t.first) bdim = static_cast<int>(b);
          if (bdim < 0)
            fail(ErrorCode::kTensorizeMismatch,
                 s.name + ": operand " + buffer + " indexed by unmapped axis " +
                     t.first);
          if (arg.axis_dim[bdim] != -1)
            fail(ErrorCode::kTensorizeMismatch,
                 s.name + ": operand " + buffer +
                     " maps an intrinsic axis twice");
          arg.axis_dim[bdim] = static_cast<int>(d);
        } else {
          base = add(base, mul(var(t.first), cst(t.second)));
        }
      }
      arg.base[d] = fix(simplify(base));
    }
    for (size_t b = 0; b < bvars.size(); ++b)
      if (arg.axis_dim[b] < 0)
        fail(ErrorCode::kTensorizeMismatch,
             s.name + ": operand " + buffer +
                 " is never indexed by intrinsic axis " + bvars[b]);
    auto prev = operand_buffer.find(btensor);
    if (prev != operand_buffer.end() && prev->second != buffer)
      fail(ErrorCode::kTensorizeMismatch,
           s.name + ": intrinsic operand " + btensor + " bound to both " +
               prev->second + " and " + buffer);
    operand_buffer[btensor] = buffer;
    check_scope(btensor, buffer);
    region.args.push_back(std::move(arg));
  };

  // Output operand from the stage's own store.
  {
    std::vector<std::string> bvars;
    for (const auto& a : beh->axis) bvars.push_back(a.name);
    std::vector<Expr> sidx;
    for (const auto& e : fo.store_idx) sidx.push_back(fix(e));
    extract_operand(beh->name, bvars, s.tensor->name, sidx);
  }

  // Input operands: behavior body and stage body walked in lock step.
  Expr sbody = rebase_reads(fo.body);
  std::function<void(const Expr&, const Expr&)> walk = [&](const Expr& b,
                                                           const Expr& x) {
    if (b->kind == ExprKind::kRead) {
      if (x->kind != ExprKind::kRead)
        fail(ErrorCode::kTensorizeMismatch,
             s.name + ": expected a read of intrinsic operand " + b->name +
                 ", found " + expr_str(x));
      const TensorNode* bin = nullptr;
      for (const auto& in : beh->inputs)
        if (in->name == b->name) bin = in.get();
      if (!bin)
        fail(ErrorCode::kTensorizeMismatch,
             "behavior reads unknown tensor " + b->name);
      DType have;
      auto ts = tensor_stage_.find(x->name);
      if (ts != tensor_stage_.end()) {
        have = stages_[ts->second]->tensor->type.dtype;
      } else if (placeholder_types_.count(x->name)) {
        have = placeholder_types_.at(x->name).dtype;
      } else {
        fail(ErrorCode::kTensorizeMismatch,
             s.name + ": operand read of unknown buffer " + x->name);
      }
      if (have != bin->type.dtype)
        fail(ErrorCode::kTensorizeMismatch,
             s.name + ": operand " + b->name + " wants dtype " +
                 dtype_name(bin->type.dtype) + ", buffer " + x->name + " is " +
                 dtype_name(have));
      std::vector<std::string> bvars;
      for (const auto& a : b->args) {
        if (a->kind != ExprKind::kVar)
          fail(ErrorCode::kTensorizeMismatch,
               "intrinsic behavior must index operands by single axes");
        bvars.push_back(a->name);
      }
      extract_operand(b->name, bvars, x->name, x->args);
      return;
    }
    if (b->kind != x->kind)
      fail(ErrorCode::kTensorizeMismatch,
           s.name + ": body differs from the intrinsic at " + expr_str(x));
    if (b->kind == ExprKind::kIntConst && b->ival != x->ival)
      fail(ErrorCode::kTensorizeMismatch, s.name + ": constant mismatch");
    if (b->args.size() != x->args.size())
      fail(ErrorCode::kTensorizeMismatch, s.name + ": arity mismatch");
    for (size_t i = 0; i < b->args.size(); ++i) walk(b->args[i], x->args[i]);
  };
  walk(beh->body, sbody);
  return region;
}

StmtPtr Lowerer::emit_at(int si, size_t pos,
                         const std::map<int, std::vector<int>>& kids_at,
                         size_t tpos, size_t pivot) {
  const Stage& s = *stages_[si];
  const StageInfo& fo = info_[si];
  bool reducing = s.tensor->op->reducer != Reducer::kNone;

  StmtPtr node;
  if (s.tensorized && pos == tpos) {
    CallRegion cr = match_tensorize(si, tpos);
    node = make_call(cr.call_name, std::move(cr.args));
  } else if (pos == s.leaf.size()) {
    node = emit_body(si);
  } else {
    const IterVar& ax = s.leaf[pos];
    std::string v = qual(s, ax.id);
    int64_t extent = fo.leaf_extents[pos];

    ForKind fk = ForKind::kSerial;
    std::string tag;
    if (!ax.bind_tag.empty()) {
      tag = ax.bind_tag;
      fk = tag == "vthread" ? ForKind::kVirtualThread : ForKind::kThreadBinding;
    } else if (ax.ann == LoopAnn::kUnroll) {
      fk = ForKind::kUnrolled;
    } else if (ax.ann == LoopAnn::kVectorize) {
      fk = ForKind::kVectorized;
    } else if (ax.ann == LoopAnn::kParallel) {
      fk = ForKind::kParallel;
    }

    bool aliased = false, opened = false;
    if (fk == ForKind::kThreadBinding) {
      auto it = open_threads_.find(tag);
      if (it != open_threads_.end()) {
        alias_[v] = var(it->second.first);  // reuse the open thread loop
        aliased = true;
      } else {
        open_threads_[tag] = {v, extent};
        opened = true;
      }
    }

    StmtPtr inner = emit_at(si, pos + 1, kids_at, tpos, pivot);

    auto kit = kids_at.find(static_cast<int>(pos));
    if (kit != kids_at.end()) {
      StmtPtr rest = inner;
      for (auto cit = kit->second.rbegin(); cit != kit->second.rend(); ++cit) {
        const Stage& cs = *stages_[*cit];
        StmtPtr blk = make_seq({emit_stage(*cit), rest});
        rest = make_alloc(cs.tensor->name, buffer_scope_.at(cs.tensor->name),
                          cs.tensor->type.dtype, info_[*cit].buf_shape, blk);
      }
      inner = rest;
    }

    if (aliased) {
      alias_.erase(v);
      node = inner;
    } else {
      if (opened) open_threads_.erase(tag);
      node = make_for(v, extent, fk, tag, inner);
    }
  }
  if (reducing && pos == pivot) node = make_seq({emit_init(si, pivot), node});
  return node;
}

StmtPtr Lowerer::emit_stage(int si) {
  const Stage& s = *stages_[si];
  if (buffer_scope_.at(s.tensor->name) == MemoryScope::kShared) {
    if (!s.is_cache)
      fail(ErrorCode::kScopeError,
           "shared scope is only supported for cache stages (stage " + s.name +
               ")");
    return emit_cooperative(si);
  }

  std::map<int, std::vector<int>> kids_at;
  for (size_t j = 0; j < stages_.size(); ++j) {
    if (info_[j].attach_parent == si)
      kids_at[info_[j].attach_pos].push_back(static_cast<int>(j));
  }

  const ComputeOpNode* op = s.tensor->op.get();
  size_t tpos = s.leaf.size();
  if (s.tensorized) {
    for (size_t k = 0; k < s.leaf.size(); ++k)
      if (s.leaf[k].id == s.tensorized->axis) tpos = k;
    if (tpos >= s.leaf.size())
      fail(ErrorCode::kTensorizeMismatch,
           s.name + ": tensorized axis " + s.tensorized->axis +
               " is not a leaf axis");
  }
  size_t rpos = s.leaf.size();
  if (op->reducer != Reducer::kNone) {
    for (size_t k = 0; k < s.leaf.size(); ++k) {
      if (s.leaf[k].kind == IterKind::kReduce) {
        rpos = k;
        break;
      }
    }
  }
  size_t pivot = std::min(rpos, tpos);
  return emit_at(si, 0, kids_at, tpos, pivot);
}

StmtPtr Lowerer::substitute_stmt(const StmtPtr& s, const std::string& v,
                                 const Expr& r) {
  auto sb = [&](const Expr& e) { return simplify(subst1(e, v, r)); };
  std::vector<StmtPtr> body;
  body.reserve(s->body.size());
  for (const auto& c : s->body) body.push_back(substitute_stmt(c, v, r));
  switch (s->kind) {
    case StmtKind::kFor:
      return make_for(s->var, s->extent, s->fkind, s->thread_tag,
                      make_seq(std::move(body)));
    case StmtKind::kSeq:
      return make_seq(std::move(body));
    case StmtKind::kAlloc:
      return make_alloc(s->buffer, s->scope, s->dtype, s->extents,
                        make_seq(std::move(body)));
    case StmtKind::kStore: {
      std::vector<Expr> idx;
      for (const auto& e : s->indices) idx.push_back(sb(e));
      return make_store(s->buffer, std::move(idx), sb(s->value));
    }
    case StmtKind::kGuard:
      return make_guard(sb(s->value), make_seq(std::move(body)));
    case StmtKind::kBarrier:
      return make_barrier();
    case StmtKind::kCall: {
      std::vector<RegionArg> args = s->call_args;
      for (auto& a : args)
        for (auto& b : a.base) b = sb(b);
      return make_call(s->call_name, std::move(args));
    }
  }
  fail(ErrorCode::kInternal, "bad statement kind");
}

StmtPtr Lowerer::expand_unrolled(const StmtPtr& s) {
  switch (s->kind) {
    case StmtKind::kFor: {
      std::vector<StmtPtr> body;
      for (const auto& c : s->body) body.push_back(expand_unrolled(c));
      StmtPtr inner = make_seq(std::move(body));
      if (s->fkind == ForKind::kUnrolled) {
        std::vector<StmtPtr> copies;
        copies.reserve(s->extent);
        for (int64_t i = 0; i < s->extent; ++i)
          copies.push_back(substitute_stmt(inner, s->var, cst(i)));
        return make_seq(std::move(copies));
      }
      return make_for(s->var, s->extent, s->fkind, s->thread_tag, inner);
    }
    case StmtKind::kSeq: {
      std::vector<StmtPtr> body;
      for (const auto& c : s->body) body.push_back(expand_unrolled(c));
      return make_seq(std::move(body));
    }
    case StmtKind::kAlloc: {
      std::vector<StmtPtr> body;
      for (const auto& c : s->body) body.push_back(expand_unrolled(c));
      return make_alloc(s->buffer, s->scope, s->dtype, s->extents,
                        make_seq(std::move(body)));
    }
    case StmtKind::kGuard: {
      std::vector<StmtPtr> body;
      for (const auto& c : s->body) body.push_back(expand_unrolled(c));
      return make_guard(s->value, make_seq(std::move(body)));
    }
    default:
      return s;
  }
}

// Shared allocations migrate above the outermost thread-bound loop so one
// instance is visible to the whole thread group.
StmtPtr Lowerer::hoist_shared(const StmtPtr& s, bool in_thread,
                              std::vector<StmtPtr>* pending) {
  switch (s->kind) {
    case StmtKind::kFor: {
      bool is_thread = s->fkind == ForKind::kThreadBinding &&
                       s->thread_tag.rfind("threadIdx", 0) == 0;
      std::vector<StmtPtr> collected;
      std::vector<StmtPtr>* sink =
          (is_thread && !in_thread) ? &collected : pending;
      std::vector<StmtPtr> body;
      for (const auto& c : s->body)
        body.push_back(hoist_shared(c, in_thread || is_thread, sink));
      StmtPtr out = make_for(s->var, s->extent, s->fkind, s->thread_tag,
                             make_seq(std::move(body)));
      if (is_thread && !in_thread) {
        for (auto it = collected.rbegin(); it != collected.rend(); ++it)
          out = make_alloc((*it)->buffer, (*it)->scope, (*it)->dtype,
                           (*it)->extents, out);
      }
      return out;
    }
    case StmtKind::kSeq: {
      std::vector<StmtPtr> body;
      for (const auto& c : s->body)
        body.push_back(hoist_shared(c, in_thread, pending));
      return make_seq(std::move(body));
    }
    case StmtKind::kAlloc: {
      std::vector<StmtPtr> body;
      for (const auto& c : s->body)
        body.push_back(hoist_shared(c, in_thread, pending));
      if (s->scope == MemoryScope::kShared && in_thread && pending) {
        pending->push_back(s);  // shape carrier; body spliced in place
        return make_seq(std::move(body));
      }
      return make_alloc(s->buffer, s->scope, s->dtype, s->extents,
                        make_seq(std::move(body)));
    }
    case StmtKind::kGuard: {
      std::vector<StmtPtr> body;
      for (const auto& c : s->body)
        body.push_back(hoist_shared(c, in_thread, pending));
      return make_guard(s->value, make_seq(std::move(body)));
    }
    default:
      return s;
  }
}

void Lowerer::check_target(const StmtPtr& root) {
  if (opts_.target != "vdla") return;
  int64_t vthreads = 1;
  std::map<MemoryScope, int64_t> used;
  walk_stmts(root, [&](const Stmt& s) {
    if (s.kind == StmtKind::kFor && s.fkind == ForKind::kThreadBinding)
      fail(ErrorCode::kLoweringError,
           "thread grid binding " + s.thread_tag + " is not available on vdla");
    if (s.kind == StmtKind::kBarrier)
      fail(ErrorCode::kLoweringError,
           "thread barriers are not available on vdla");
    if (s.kind == StmtKind::kFor && s.fkind == ForKind::kVirtualThread)
      vthreads *= s.extent;
    if (s.kind == StmtKind::kAlloc && is_accel_scope(s.scope)) {
      int64_t n = dtype_bytes(s.dtype);
      for (int64_t e : s.extents) n *= e;
      used[s.scope] += n;
    }
  });
  auto budget = [&](MemoryScope sc) -> int64_t {
    switch (sc) {
      case MemoryScope::kAccelActivation:
        return opts_.accel_activation_bytes;
      case MemoryScope::kAccelWeight:
        return opts_.accel_weight_bytes;
      case MemoryScope::kAccelAccum:
        return opts_.accum_bytes;
      default:
        return 0;
    }
  };
  for (const auto& kv : used) {
    int64_t cap = budget(kv.first) / vthreads;
    if (kv.second > cap)
      fail(ErrorCode::kCapacityError,
           std::string(scope_name(kv.first)) + " needs " +
               std::to_string(kv.second) + " bytes but only " +
               std::to_string(cap) + " are available per virtual thread (" +
               std::to_string(vthreads) + " threads)");
  }
}

LoopProgram Lowerer::run() {
  register_builtin_intrinsics();
  collect_stages();
  infer_scopes();
  check_bind_extents();

  for (int si = static_cast<int>(stages_.size()) - 1; si >= 0; --si) prepare(si);

  std::vector<int> roots;
  for (size_t i = 0; i < stages_.size(); ++i)
    if (info_[i].attach_parent < 0) roots.push_back(static_cast<int>(i));

  StmtPtr rest = nullptr;
  for (auto it = roots.rbegin(); it != roots.rend(); ++it) {
    const Stage& s = *stages_[*it];
    StmtPtr st = emit_stage(*it);
    StmtPtr blk = rest ? make_seq({st, rest}) : st;
    if (!s.is_output)
      blk = make_alloc(s.tensor->name, buffer_scope_.at(s.tensor->name),
                       s.tensor->type.dtype, s.tensor->type.shape, blk);
    rest = blk;
  }
  if (rest == nullptr)
    fail(ErrorCode::kLoweringError, "schedule has no stages");

  std::vector<StmtPtr> pending;
  rest = hoist_shared(rest, false, &pending);
  rest = expand_unrolled(rest);
  check_target(rest);

  LoopProgram prog;
  prog.name = name_;
  prog.root = rest;
  for (const auto& p : placeholder_order_)
    prog.params.push_back(ParamDecl{p, placeholder_types_[p], false});
  for (const auto* st : stages_) {
    if (st->is_output)
      prog.params.push_back(ParamDecl{st->tensor->name, st->tensor->type, true});
  }
  return prog;
}

}  // namespace

LoopProgram lower(const Schedule& sched, const std::string& program_name,
                  const LowerOptions& opts) {
  Lowerer lw(sched, program_name, opts);
  return lw.run();
}

}  // namespace tec
