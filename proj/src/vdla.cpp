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
#include "tec/vdla.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>

#include "tec/error.hpp"
#include "tec/texpr.hpp"

namespace tec {

const char* vdla_op_name(VdlaOp op) {
  switch (op) {
    case VdlaOp::kLoad: return "LOAD";
    case VdlaOp::kStore: return "STORE";
    case VdlaOp::kGemm: return "GEMM";
    case VdlaOp::kAlu: return "ALU";
    case VdlaOp::kPushDep: return "PUSH";
    case VdlaOp::kPopDep: return "POP";
  }
  return "?";
}

const char* vdla_stage_name(VdlaStage s) {
  switch (s) {
    case VdlaStage::kLoadStage: return "load";
    case VdlaStage::kComputeStage: return "compute";
    case VdlaStage::kStoreStage: return "store";
  }
  return "?";
}

VdlaStage stage_of(VdlaOp op, VdlaStage from, VdlaStage to) {
  switch (op) {
    case VdlaOp::kLoad: return VdlaStage::kLoadStage;
    case VdlaOp::kStore: return VdlaStage::kStoreStage;
    case VdlaOp::kGemm:
    case VdlaOp::kAlu: return VdlaStage::kComputeStage;
    case VdlaOp::kPushDep: return from;  // producer enqueues the token
    case VdlaOp::kPopDep: return to;     // consumer blocks on it
  }
  return VdlaStage::kComputeStage;
}

namespace {

VdlaStage instr_stage(const VdlaInstruction& in) {
  return stage_of(in.op, in.from, in.to);
}

// Token queues exist only between compute and its neighbours.
bool legal_queue(VdlaStage f, VdlaStage t) {
  return f != t && (f == VdlaStage::kComputeStage ||
                    t == VdlaStage::kComputeStage);
}

bool is_onchip(MemoryScope sc) { return sc != MemoryScope::kGlobal; }

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

struct Box {
  std::vector<int64_t> lo, hi;  // inclusive
};

bool boxes_overlap(const Box& a, const Box& b) {
  if (a.lo.size() != b.lo.size()) return true;  // never happens per buffer
  for (size_t d = 0; d < a.lo.size(); ++d)
    if (a.hi[d] < b.lo[d] || b.hi[d] < a.lo[d]) return false;
  return true;
}

void grow(Box* box, const std::vector<int64_t>& idx) {
  if (box->lo.empty()) {
    box->lo = idx;
    box->hi = idx;
    return;
  }
  for (size_t d = 0; d < idx.size(); ++d) {
    box->lo[d] = std::min(box->lo[d], idx[d]);
    box->hi[d] = std::max(box->hi[d], idx[d]);
  }
}

bool access_overlap(const VdlaAccess& a, const VdlaAccess& b) {
  if (a.lo.size() != b.lo.size()) return true;
  for (size_t d = 0; d < a.lo.size(); ++d)
    if (a.hi[d] < b.lo[d] || b.hi[d] < a.lo[d]) return false;
  return true;
}

VdlaAccess make_access(const std::string& buffer, bool read, bool write,
                       const Box& box) {
  return VdlaAccess{buffer, read, write, box.lo, box.hi};
}

struct ThreadSeq {
  std::vector<VdlaInstruction> instrs;
};

class StreamBuilder {
 public:
  StreamBuilder(const LoopProgram& p, const PipelineConfig& cfg)
      : p_(p), cfg_(cfg) {}

  InstructionStream run();

 private:
  const LoopProgram& p_;
  const PipelineConfig& cfg_;
  InstructionStream out_;
  std::map<std::string, VdlaBufferDecl> bufs_;
  std::map<MemoryScope, int64_t> base_live_, live_;
  Env env_;
  std::vector<ThreadSeq> threads_;
  ThreadSeq* cur_ = nullptr;
  int cur_thread_ = 0;
  std::vector<std::pair<std::string, Box>> dram_stores_;  // per-thread walk

  const VdlaBufferDecl& buf(const std::string& name) const {
    auto it = bufs_.find(name);
    if (it == bufs_.end())
      fail(ErrorCode::kInternal, "reference to undeclared buffer " + name);
    return it->second;
  }

  int64_t scope_capacity(MemoryScope sc) const {
    switch (sc) {
      case MemoryScope::kAccelActivation: return cfg_.activation_bytes;
      case MemoryScope::kAccelWeight: return cfg_.weight_bytes;
      case MemoryScope::kAccelAccum: return cfg_.accum_bytes;
      default: return -1;
    }
  }

  void declare(const std::string& name, DType dt, std::vector<int64_t> shape,
               MemoryScope sc);
  int64_t flat_of(const VdlaBufferDecl& d, const std::vector<int64_t>& idx,
                  const std::string& what) const;

  void walk(const StmtPtr& s);
  bool try_copy(const StmtPtr& s);
  bool try_alu(const StmtPtr& s);
  void emit_call(const Stmt& s);
  void enter_alloc(const Stmt& s);
  void leave_alloc(const Stmt& s);

  void push_instr(VdlaInstruction in) {
    in.thread = cur_thread_;
    cur_->instrs.push_back(std::move(in));
  }

  bool touch_onchip(const VdlaAccess& a) const {
    return is_onchip(buf(a.buffer).scope);
  }

  std::vector<std::pair<int, int>> hazard_edges(const ThreadSeq& t) const;
  void reduce_edges(const ThreadSeq& t,
                    std::vector<std::pair<int, int>>* edges) const;
  std::vector<VdlaInstruction> materialize(ThreadSeq* tp,
                                           const std::vector<std::pair<int, int>>& edges,
                                           std::vector<int64_t>* edge_ids) const;
  void check_fifo(const std::vector<int64_t>& ids) const;
};

void StreamBuilder::declare(const std::string& name, DType dt,
                            std::vector<int64_t> shape, MemoryScope sc) {
  auto it = bufs_.find(name);
  if (it != bufs_.end()) {
    if (it->second.dtype != dt || it->second.shape != shape ||
        it->second.scope != sc)
      fail(ErrorCode::kLoweringError,
           "buffer " + name + " redeclared with a different layout");
    return;
  }
  bufs_[name] = VdlaBufferDecl{name, dt, std::move(shape), sc};
}

int64_t StreamBuilder::flat_of(const VdlaBufferDecl& d,
                               const std::vector<int64_t>& idx,
                               const std::string& what) const {
  if (idx.size() != d.shape.size())
    fail(ErrorCode::kBoundsError, what + ": rank mismatch on " + d.name);
  int64_t f = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= d.shape[i])
      fail(ErrorCode::kBoundsError,
           what + ": index " + std::to_string(idx[i]) + " outside dim " +
               std::to_string(i) + " of " + d.name);
    f = f * d.shape[i] + idx[i];
  }
  return f;
}

void StreamBuilder::enter_alloc(const Stmt& s) {
  declare(s.buffer, s.dtype, s.extents, s.scope);
  if (!is_onchip(s.scope)) return;
  int64_t cap = scope_capacity(s.scope);
  if (cap < 0)
    fail(ErrorCode::kLoweringError,
         "scope " + std::string(scope_name(s.scope)) +
             " has no accelerator storage");
  int64_t bytes = buf(s.buffer).elems() * dtype_bytes(s.dtype);
  live_[s.scope] += bytes;
  int64_t budget = cap / out_.vthreads;
  if (live_[s.scope] > budget)
    fail(ErrorCode::kCapacityError,
         "live " + std::string(scope_name(s.scope)) + " footprint " +
             std::to_string(live_[s.scope]) + " B exceeds the per-thread budget " +
             std::to_string(budget) + " B (" + std::to_string(out_.vthreads) +
             " virtual threads)");
}

void StreamBuilder::leave_alloc(const Stmt& s) {
  if (!is_onchip(s.scope)) return;
  live_[s.scope] -= buf(s.buffer).elems() * dtype_bytes(s.dtype);
}

void StreamBuilder::walk(const StmtPtr& sp) {
  const Stmt& s = *sp;
  switch (s.kind) {
    case StmtKind::kSeq:
      for (const auto& c : s.body) walk(c);
      return;
    case StmtKind::kAlloc:
      enter_alloc(s);
      for (const auto& c : s.body) walk(c);
      leave_alloc(s);
      return;
    case StmtKind::kGuard:
      if (eval_index(s.value, env_) != 0)
        for (const auto& c : s.body) walk(c);
      return;
    case StmtKind::kBarrier:
      fail(ErrorCode::kLoweringError,
           "barriers have no accelerator encoding");
    case StmtKind::kCall:
      emit_call(s);
      return;
    case StmtKind::kStore:
      if (try_copy(sp)) return;
      if (try_alu(sp)) return;
      fail(ErrorCode::kLoweringError,
           "store to " + s.buffer +
           " touches DRAM-resident data; stage it through an on-chip scope");
    case StmtKind::kFor:
      break;
  }
  if (s.fkind == ForKind::kVirtualThread)
    fail(ErrorCode::kLoweringError,
         "virtual thread loop " + s.var + " must enclose the whole body");
  if (s.fkind == ForKind::kThreadBinding)
    fail(ErrorCode::kLoweringError,
         "thread binding " + s.thread_tag + " is not supported here");
  if (try_copy(sp)) return;
  if (try_alu(sp)) return;
  for (int64_t i = 0; i < s.extent; ++i) {
    env_[s.var] = i;
    for (const auto& c : s.body) walk(c);
  }
  env_.erase(s.var);
}

// Descends a perfect chain of serial loops and guards to a single store.
// Returns the store, or null if the subtree branches before reaching one.
static const Stmt* chain_to_store(const StmtPtr& sp,
                                  std::vector<std::pair<std::string, int64_t>>* vars,
                                  std::vector<Expr>* guards) {
  const Stmt* cur = sp.get();
  while (true) {
    if (cur->kind == StmtKind::kFor) {
      if (cur->fkind == ForKind::kVirtualThread ||
          cur->fkind == ForKind::kThreadBinding)
        return nullptr;
      if (cur->body.size() != 1) return nullptr;
      vars->push_back({cur->var, cur->extent});
      cur = cur->body[0].get();
      continue;
    }
    if (cur->kind == StmtKind::kGuard) {
      if (cur->body.size() != 1) return nullptr;
      guards->push_back(cur->value);
      cur = cur->body[0].get();
      continue;
    }
    if (cur->kind == StmtKind::kSeq && cur->body.size() == 1) {
      cur = cur->body[0].get();
      continue;
    }
    break;
  }
  return cur->kind == StmtKind::kStore ? cur : nullptr;
}

// Enumerates the chain's iteration points that pass every guard.
static void for_points(const std::vector<std::pair<std::string, int64_t>>& vars,
                       const std::vector<Expr>& guards, Env* env,
                       const std::function<void()>& fn, size_t d = 0) {
  if (d == vars.size()) {
    for (const auto& g : guards)
      if (eval_index(g, *env) == 0) return;
    fn();
    return;
  }
  for (int64_t i = 0; i < vars[d].second; ++i) {
    (*env)[vars[d].first] = i;
    for_points(vars, guards, env, fn, d + 1);
  }
  env->erase(vars[d].first);
}

// Linear view of an index expression over the chain variables:
// value = base + sum(coeff[d] * i_d), with enclosing loop bindings folded
// into base. Chains emitted by the scheduler stay in this form, so copies
// and element-wise bodies can skip the per-point expression walk.
struct AffineIndex {
  int64_t base = 0;
  std::vector<int64_t> coeff;
};

using ChainVars = std::vector<std::pair<std::string, int64_t>>;

bool mentions_chain_var(const Expr& e, const ChainVars& vars) {
  if (e->kind == ExprKind::kVar) {
    for (const auto& v : vars)
      if (v.first == e->name) return true;
    return false;
  }
  for (const auto& a : e->args)
    if (mentions_chain_var(a, vars)) return true;
  return false;
}

bool affine_of(const Expr& e, const ChainVars& vars, const Env& outer,
               AffineIndex* out) {
  out->base = 0;
  out->coeff.assign(vars.size(), 0);
  switch (e->kind) {
    case ExprKind::kIntConst:
      out->base = e->ival;
      return true;
    case ExprKind::kVar:
      for (size_t d = 0; d < vars.size(); ++d)
        if (vars[d].first == e->name) {
          out->coeff[d] = 1;
          return true;
        }
      out->base = eval_index(e, outer);
      return true;
    case ExprKind::kAdd:
    case ExprKind::kSub: {
      AffineIndex a, b;
      if (!affine_of(e->args[0], vars, outer, &a) ||
          !affine_of(e->args[1], vars, outer, &b))
        return false;
      int64_t s = e->kind == ExprKind::kAdd ? 1 : -1;
      out->base = a.base + s * b.base;
      for (size_t d = 0; d < vars.size(); ++d)
        out->coeff[d] = a.coeff[d] + s * b.coeff[d];
      return true;
    }
    case ExprKind::kMul: {
      AffineIndex a, b;
      if (!affine_of(e->args[0], vars, outer, &a) ||
          !affine_of(e->args[1], vars, outer, &b))
        return false;
      bool a_const = true, b_const = true;
      for (int64_t c : a.coeff) a_const &= c == 0;
      for (int64_t c : b.coeff) b_const &= c == 0;
      if (!a_const && !b_const) return false;
      const AffineIndex& lin = a_const ? b : a;
      int64_t k = a_const ? a.base : b.base;
      out->base = lin.base * k;
      for (size_t d = 0; d < vars.size(); ++d)
        out->coeff[d] = lin.coeff[d] * k;
      return true;
    }
    default:
      // A subtree that binds no chain variable is a per-instruction
      // constant whatever its shape; anything else is non-linear.
      if (mentions_chain_var(e, vars)) return false;
      out->base = eval_index(e, outer);
      return true;
  }
}

// Inclusive value range of an affine form over the full chain domain.
// Each variable contributes independently, so the extremes sit at corners.
void affine_range(const AffineIndex& ai, const ChainVars& vars, int64_t* lo,
                  int64_t* hi) {
  *lo = ai.base;
  *hi = ai.base;
  for (size_t d = 0; d < vars.size(); ++d) {
    int64_t span = ai.coeff[d] * (vars[d].second - 1);
    if (span < 0)
      *lo += span;
    else
      *hi += span;
  }
}

// Decomposes every index of a multi-dim site, checks the enclosing box
// against the buffer shape, and folds the row-major strides into a single
// flat affine form. Returns false when the site leaves the fast form, in
// which case the caller re-runs the pointwise path for its diagnostics.
bool affine_site(const std::vector<Expr>& indices, const ChainVars& vars,
                 const Env& outer, const VdlaBufferDecl& d, Box* box,
                 AffineIndex* flat) {
  if (indices.size() != d.shape.size()) return false;
  flat->base = 0;
  flat->coeff.assign(vars.size(), 0);
  box->lo.resize(indices.size());
  box->hi.resize(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    AffineIndex ai;
    if (!affine_of(indices[i], vars, outer, &ai)) return false;
    int64_t lo, hi;
    affine_range(ai, vars, &lo, &hi);
    if (lo < 0 || hi >= d.shape[i]) return false;
    box->lo[i] = lo;
    box->hi[i] = hi;
    flat->base = flat->base * d.shape[i] + ai.base;
    for (size_t v = 0; v < vars.size(); ++v)
      flat->coeff[v] = flat->coeff[v] * d.shape[i] + ai.coeff[v];
  }
  return true;
}

bool StreamBuilder::try_copy(const StmtPtr& sp) {
  std::vector<std::pair<std::string, int64_t>> vars;
  std::vector<Expr> guards;
  const Stmt* st = chain_to_store(sp, &vars, &guards);
  if (!st || st->value->kind != ExprKind::kRead) return false;

  const VdlaBufferDecl& dst = buf(st->buffer);
  const VdlaBufferDecl& src = buf(st->value->name);
  if (dst.dtype != src.dtype)
    fail(ErrorCode::kLoweringError,
         "copy " + src.name + " -> " + dst.name + " changes element type");
  bool dst_chip = is_onchip(dst.scope), src_chip = is_onchip(src.scope);
  if (!dst_chip && !src_chip)
    fail(ErrorCode::kLoweringError,
         "DRAM-to-DRAM copy " + src.name + " -> " + dst.name +
             " has no accelerator path");

  VdlaInstruction in;
  Box dbox, sbox;
  int64_t npts = 1;
  for (const auto& v : vars) npts *= v.second;
  AffineIndex dflat, sflat;
  if (npts > 0 && guards.empty() &&
      affine_site(st->indices, vars, env_, dst, &dbox, &dflat) &&
      affine_site(st->value->args, vars, env_, src, &sbox, &sflat)) {
    in.moves.reserve(static_cast<size_t>(npts));
    std::vector<int64_t> ctr(vars.size(), 0);
    int64_t dcur = dflat.base, scur = sflat.base;
    for (int64_t p = 0;;) {
      in.moves.push_back({dcur, scur});
      if (++p == npts) break;
      // Odometer in the enumeration order of for_points, updating the two
      // flat addresses by per-variable strides instead of re-evaluating.
      for (size_t k = vars.size(); k-- > 0;) {
        ++ctr[k];
        dcur += dflat.coeff[k];
        scur += sflat.coeff[k];
        if (ctr[k] < vars[k].second) break;
        dcur -= dflat.coeff[k] * vars[k].second;
        scur -= sflat.coeff[k] * vars[k].second;
        ctr[k] = 0;
      }
    }
  } else if (npts > 0) {
    dbox = Box{};
    sbox = Box{};
    for_points(vars, guards, &env_, [&] {
      std::vector<int64_t> di(st->indices.size()), si(st->value->args.size());
      for (size_t i = 0; i < di.size(); ++i)
        di[i] = eval_index(st->indices[i], env_);
      for (size_t i = 0; i < si.size(); ++i)
        si[i] = eval_index(st->value->args[i], env_);
      in.moves.push_back({flat_of(dst, di, "copy"), flat_of(src, si, "copy")});
      grow(&dbox, di);
      grow(&sbox, si);
    });
  }
  if (in.moves.empty()) return true;  // fully guarded away

  in.op = dst_chip && !src_chip ? VdlaOp::kLoad
          : src_chip && !dst_chip ? VdlaOp::kStore
                                  : VdlaOp::kAlu;  // on-chip shuffle
  in.dst_buffer = dst.name;
  in.src_buffer = src.name;
  in.dst_lo = dbox.lo;
  in.src_lo = sbox.lo;
  for (size_t d = 0; d < dbox.lo.size(); ++d)
    in.dst_ext.push_back(dbox.hi[d] - dbox.lo[d] + 1);
  for (size_t d = 0; d < sbox.lo.size(); ++d)
    in.src_ext.push_back(sbox.hi[d] - sbox.lo[d] + 1);
  int64_t n = static_cast<int64_t>(in.moves.size());
  if (in.op == VdlaOp::kAlu) {
    in.extent = n;
  } else {
    in.bytes = n * dtype_bytes(dst.dtype);
  }

  in.touches.push_back(make_access(dst.name, false, true, dbox));
  in.touches.push_back(make_access(src.name, true, false, sbox));
  if (in.op == VdlaOp::kStore) {
    dram_stores_.push_back({dst.name, dbox});
  } else if (in.op == VdlaOp::kLoad) {
    for (const auto& dsb : dram_stores_)
      if (dsb.first == src.name && boxes_overlap(dsb.second, sbox))
        fail(ErrorCode::kLoweringError,
             "load of " + src.name +
                 " rereads a region stored earlier in the same thread; "
                 "there is no load<->store dependence queue");
  }
  push_instr(std::move(in));
  return true;
}

bool StreamBuilder::try_alu(const StmtPtr& sp) {
  std::vector<std::pair<std::string, int64_t>> vars;
  std::vector<Expr> guards;
  const Stmt* st = chain_to_store(sp, &vars, &guards);
  if (!st) return false;

  const VdlaBufferDecl& dst = buf(st->buffer);
  if (!is_onchip(dst.scope)) return false;
  std::vector<ReadSite> reads;
  collect_reads(st->value, &reads);
  for (const auto& r : reads)
    if (!is_onchip(buf(r.buffer).scope)) return false;

  VdlaInstruction in;
  in.op = VdlaOp::kAlu;
  in.alu_body = sp;
  in.dst_buffer = dst.name;
  Box dbox;
  std::map<std::string, Box> rbox;
  int64_t count = 0;
  int64_t n = 1;
  for (const auto& v : vars) n *= v.second;
  bool fast = n > 0 && guards.empty();
  if (fast) {
    AffineIndex flat;
    fast = affine_site(st->indices, vars, env_, dst, &dbox, &flat);
    for (size_t r = 0; fast && r < reads.size(); ++r) {
      Box sb;
      fast = affine_site(reads[r].indices, vars, env_,
                         buf(reads[r].buffer), &sb, &flat);
      if (fast) {
        grow(&rbox[reads[r].buffer], sb.lo);
        grow(&rbox[reads[r].buffer], sb.hi);
      }
    }
    if (fast) count = n;
  }
  if (!fast && n > 0) {
    dbox = Box{};
    rbox.clear();
    for_points(vars, guards, &env_, [&] {
      std::vector<int64_t> di(st->indices.size());
      for (size_t i = 0; i < di.size(); ++i)
        di[i] = eval_index(st->indices[i], env_);
      flat_of(dst, di, "alu");
      grow(&dbox, di);
      for (const auto& r : reads) {
        std::vector<int64_t> ri(r.indices.size());
        for (size_t i = 0; i < ri.size(); ++i)
          ri[i] = eval_index(r.indices[i], env_);
        flat_of(buf(r.buffer), ri, "alu");
        grow(&rbox[r.buffer], ri);
      }
      ++count;
    });
  }
  if (count == 0) return true;
  in.env = env_;
  in.extent = count;
  in.dst_lo = dbox.lo;
  for (size_t d = 0; d < dbox.lo.size(); ++d)
    in.dst_ext.push_back(dbox.hi[d] - dbox.lo[d] + 1);

  // Zeroing an accumulator region is the MAC array's reset mode: it runs
  // at one 16x16 tile per cycle through the GEMM path, not element by
  // element through the ALU. mac_ops stays 0; a reset does no real work.
  bool zero_fill = st->value->kind == ExprKind::kIntConst
                       ? st->value->ival == 0
                       : st->value->kind == ExprKind::kFloatConst &&
                             st->value->fval == 0.0;
  if (reads.empty() && dst.scope == MemoryScope::kAccelAccum && zero_fill)
    in.op = VdlaOp::kGemm;

  in.touches.push_back(make_access(dst.name, false, true, dbox));
  for (auto& rb : rbox)
    in.touches.push_back(make_access(rb.first, true, false, rb.second));
  push_instr(std::move(in));
  return true;
}

void StreamBuilder::emit_call(const Stmt& s) {
  const Intrinsic* intr = find_intrinsic(s.call_name);
  if (!intr)
    fail(ErrorCode::kInternal, "call of unknown intrinsic " + s.call_name);
  if (intr->instruction != "gemm")
    fail(ErrorCode::kLoweringError,
         "intrinsic " + s.call_name + " has no accelerator opcode");
  const ComputeOpNode* beh = intr->behavior.get();

  VdlaInstruction in;
  in.op = VdlaOp::kGemm;
  in.call_name = s.call_name;
  in.mac_ops = 1;
  for (const auto& a : beh->axis) in.mac_ops *= a.extent;
  for (const auto& a : beh->reduce_axis) in.mac_ops *= a.extent;

  for (const auto& ra : s.call_args) {
    GemmOperand go;
    go.behavior_tensor = ra.behavior_tensor;
    go.buffer = ra.buffer;
    go.axis_dim = ra.axis_dim;
    for (const auto& b : ra.base) go.base.push_back(eval_index(b, env_));

    const VdlaBufferDecl& d = buf(ra.buffer);
    if (!is_onchip(d.scope))
      fail(ErrorCode::kLoweringError,
           "intrinsic operand " + ra.behavior_tensor + " reads DRAM buffer " +
               d.name + " directly");
    // Operand region: the base plus the behavior tensor's span per dim.
    const TensorType* bt = nullptr;
    if (ra.behavior_tensor == beh->name) {
      bt = &beh->out_type;
    } else {
      for (const auto& bin : beh->inputs)
        if (bin->name == ra.behavior_tensor) bt = &bin->type;
    }
    if (!bt)
      fail(ErrorCode::kInternal,
           "operand " + ra.behavior_tensor + " unknown to " + s.call_name);
    Box box{go.base, go.base};
    for (size_t bd = 0; bd < go.axis_dim.size(); ++bd)
      box.hi[go.axis_dim[bd]] += bt->shape[bd] - 1;
    flat_of(d, box.lo, "gemm");
    flat_of(d, box.hi, "gemm");
    // The accumulator operand both reads (reduction fold) and writes.
    bool is_out = ra.behavior_tensor == beh->name;
    in.touches.push_back(make_access(d.name, true, is_out, box));
    in.operands.push_back(std::move(go));
  }
  push_instr(std::move(in));
}

// Cross-stage data hazards within one thread: for every buffer region an
// instruction touches, the latest conflicting access per foreign stage gets
// an ordering edge; a conflicting access on the instruction's own stage
// already orders everything before it. Histories are split per stage and
// direction so each lookup stops at the first hit instead of rescanning
// the whole access log.
std::vector<std::pair<int, int>> StreamBuilder::hazard_edges(
    const ThreadSeq& t) const {
  struct Past {
    int idx;
    const VdlaAccess* acc;
  };
  // [buffer] -> per stage: writes and reads, each newest-last.
  struct Hist {
    std::array<std::vector<Past>, 3> writes, reads;
  };
  std::map<std::string, Hist> hist;
  std::vector<std::pair<int, int>> edges;

  // Newest list entry overlapping `a` with index > floor, else -1.
  auto latest = [](const std::vector<Past>& v, const VdlaAccess& a,
                   int floor) {
    for (size_t i = v.size(); i-- > 0;) {
      if (v[i].idx <= floor) break;
      if (access_overlap(*v[i].acc, a)) return v[i].idx;
    }
    return -1;
  };

  for (int j = 0; j < static_cast<int>(t.instrs.size()); ++j) {
    VdlaStage sj = instr_stage(t.instrs[j]);
    int own = static_cast<int>(sj);
    for (const auto& a : t.instrs[j].touches) {
      if (!touch_onchip(a)) continue;  // DRAM order is the stream's problem
      Hist& h = hist[a.buffer];
      // Latest own-stage conflict: newer foreign conflicts still need
      // edges, older ones are already ordered through it.
      int floor = latest(h.writes[own], a, -1);
      if (a.write) floor = std::max(floor, latest(h.reads[own], a, floor));
      for (int st = 0; st < 3; ++st) {
        if (st == own) continue;
        int f = latest(h.writes[st], a, floor);
        if (a.write) f = std::max(f, latest(h.reads[st], a, floor));
        if (f >= 0) edges.push_back({f, j});
      }
    }
    for (const auto& a : t.instrs[j].touches)
      if (touch_onchip(a)) {
        Hist& h = hist[a.buffer];
        (a.write ? h.writes : h.reads)[static_cast<int>(sj)].push_back(
            {j, &a});
      }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

// Drops token edges already implied by stage order plus the remaining
// edges. Every surviving token is then load-bearing, which makes single
// push/pop deletions observable.
void StreamBuilder::reduce_edges(const ThreadSeq& t,
                                 std::vector<std::pair<int, int>>* edges) const {
  int n = static_cast<int>(t.instrs.size());
  std::vector<int> stage_next(n, -1);
  std::array<int, 3> last{-1, -1, -1};
  for (int i = 0; i < n; ++i) {
    int s = static_cast<int>(instr_stage(t.instrs[i]));
    if (last[s] >= 0) stage_next[last[s]] = i;
    last[s] = i;
  }

  std::vector<std::pair<int, int>> kept = *edges;
  std::sort(kept.begin(), kept.end(), [](auto& a, auto& b) {
    int64_t la = a.second - a.first, lb = b.second - b.first;
    if (la != lb) return la > lb;  // longest first: most likely implied
    return a < b;
  });

  // Live edges as per-source target lists; the edge under test is pulled
  // out before the walk and re-added when it proves load-bearing.
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (const auto& e : kept) adj[static_cast<size_t>(e.first)].push_back(e.second);
  std::vector<int> mark(static_cast<size_t>(n), 0);
  int epoch = 0;
  std::vector<int> stack;
  for (const auto& e : kept) {
    auto& out = adj[static_cast<size_t>(e.first)];
    out.erase(std::find(out.begin(), out.end(), e.second));
    // Reachability e.first -> e.second over stage order and other tokens.
    ++epoch;
    stack.assign(1, e.first);
    bool reach = false;
    while (!stack.empty() && !reach) {
      int x = stack.back();
      stack.pop_back();
      if (x == e.second) { reach = true; break; }
      if (x > e.second || mark[static_cast<size_t>(x)] == epoch) continue;
      mark[static_cast<size_t>(x)] = epoch;
      if (stage_next[x] >= 0) stack.push_back(stage_next[x]);
      for (int y : adj[static_cast<size_t>(x)]) stack.push_back(y);
    }
    if (!reach) out.push_back(e.second);
  }
  edges->clear();
  for (int x = 0; x < n; ++x)
    for (int y : adj[static_cast<size_t>(x)]) edges->push_back({x, y});
  std::sort(edges->begin(), edges->end());
}

std::vector<VdlaInstruction> StreamBuilder::materialize(
    ThreadSeq* tp, const std::vector<std::pair<int, int>>& edges,
    std::vector<int64_t>* edge_ids) const {
  ThreadSeq& t = *tp;
  std::vector<VdlaStage> stg(t.instrs.size());
  for (size_t i = 0; i < t.instrs.size(); ++i) stg[i] = instr_stage(t.instrs[i]);
  std::vector<std::vector<std::pair<int, int64_t>>> pops(t.instrs.size()),
      pushes(t.instrs.size());
  for (size_t e = 0; e < edges.size(); ++e) {
    auto [i, j] = edges[e];
    if (!legal_queue(stg[i], stg[j]))
      fail(ErrorCode::kLoweringError,
           std::string("required ordering between the ") +
               vdla_stage_name(stg[i]) + " and " + vdla_stage_name(stg[j]) +
               " stages has no dependence queue");
    pops[j].push_back({i, static_cast<int64_t>(e)});
    pushes[i].push_back({j, static_cast<int64_t>(e)});
  }
  for (auto& kv : pops) std::sort(kv.begin(), kv.end());
  for (auto& kv : pushes) std::sort(kv.begin(), kv.end());

  std::vector<VdlaInstruction> out;
  out.reserve(t.instrs.size() + 2 * edges.size());
  for (int j = 0; j < static_cast<int>(t.instrs.size()); ++j) {
    int thr = t.instrs[j].thread;
    for (const auto& [i, eid] : pops[j]) {
      VdlaInstruction pop;
      pop.op = VdlaOp::kPopDep;
      pop.thread = thr;
      pop.from = stg[i];
      pop.to = stg[j];
      out.push_back(pop);
      edge_ids->push_back(eid);
    }
    out.push_back(std::move(t.instrs[j]));
    edge_ids->push_back(-1);
    for (const auto& [k, eid] : pushes[j]) {
      VdlaInstruction push;
      push.op = VdlaOp::kPushDep;
      push.thread = thr;
      push.from = stg[j];
      push.to = stg[k];
      out.push_back(push);
      edge_ids->push_back(eid);
    }
  }
  return out;
}

// The hardware pairs the k-th pop on a queue with the k-th push, with one
// queue per (stage pair, thread). Verify the interleaved stream keeps each
// token with its intended consumer.
void StreamBuilder::check_fifo(const std::vector<int64_t>& ids) const {
  std::map<std::tuple<int, int, int>, std::deque<int64_t>> pushed;
  for (size_t i = 0; i < out_.instrs.size(); ++i) {
    const VdlaInstruction& in = out_.instrs[i];
    auto key = std::make_tuple(static_cast<int>(in.from),
                               static_cast<int>(in.to), in.thread);
    if (in.op == VdlaOp::kPushDep) {
      pushed[key].push_back(ids[i]);
    } else if (in.op == VdlaOp::kPopDep) {
      auto& q = pushed[key];
      if (q.empty() || q.front() != ids[i])
        fail(ErrorCode::kLoweringError,
             "virtual threads diverge: dependence tokens would cross in the " +
                 std::string(vdla_stage_name(in.from)) + "->" +
                 vdla_stage_name(in.to) + " queue");
      q.pop_front();
    }
  }
}

InstructionStream StreamBuilder::run() {
  register_builtin_intrinsics();
  out_.name = p_.name;
  for (const auto& prm : p_.params) {
    declare(prm.name, prm.type.dtype, prm.type.shape, MemoryScope::kGlobal);
    out_.params.push_back(prm);
  }

  // Peel wrapper nodes and the leading virtual-thread loops.
  std::vector<std::pair<std::string, int64_t>> vt;
  std::vector<const Stmt*> spine_allocs;
  StmtPtr node = p_.root;
  while (node) {
    if (node->kind == StmtKind::kSeq && node->body.size() == 1) {
      node = node->body[0];
    } else if (node->kind == StmtKind::kAlloc) {
      spine_allocs.push_back(node.get());
      declare(node->buffer, node->dtype, node->extents, node->scope);
      node = node->body.empty() ? nullptr : node->body[0];
    } else if (node->kind == StmtKind::kFor &&
               node->fkind == ForKind::kVirtualThread) {
      vt.push_back({node->var, node->extent});
      node = node->body.empty() ? nullptr : node->body[0];
    } else {
      break;
    }
  }
  if (!node) fail(ErrorCode::kLoweringError, "program has no compute body");

  int64_t v_total = 1;
  for (const auto& a : vt) v_total *= a.second;
  if (v_total < 1)
    fail(ErrorCode::kLoweringError, "virtual thread extent must be positive");
  out_.vthreads = static_cast<int>(v_total);

  for (const Stmt* a : spine_allocs)
    if (is_onchip(a->scope))
      base_live_[a->scope] +=
          buf(a->buffer).elems() * dtype_bytes(a->dtype);

  threads_.resize(out_.vthreads);
  for (int v = 0; v < out_.vthreads; ++v) {
    env_.clear();
    int64_t rem = v;
    for (size_t a = vt.size(); a-- > 0;) {
      env_[vt[a].first] = rem % vt[a].second;
      rem /= vt[a].second;
    }
    live_ = base_live_;
    // Spine allocs count against every thread's budget up front.
    for (const auto& kv : live_) {
      int64_t cap = scope_capacity(kv.first);
      if (cap >= 0 && kv.second > cap / out_.vthreads)
        fail(ErrorCode::kCapacityError,
             "shared " + std::string(scope_name(kv.first)) +
                 " allocation exceeds the per-thread budget");
    }
    cur_ = &threads_[v];
    cur_thread_ = v;
    dram_stores_.clear();
    walk(node);
  }

  std::vector<int64_t> ids;
  std::vector<std::vector<VdlaInstruction>> final_seq(out_.vthreads);
  std::vector<std::vector<int64_t>> final_ids(out_.vthreads);
  for (int v = 0; v < out_.vthreads; ++v) {
    auto edges = hazard_edges(threads_[v]);
    reduce_edges(threads_[v], &edges);
    // Edge ids must be unique across threads for the FIFO check.
    std::vector<int64_t> local;
    final_seq[v] = materialize(&threads_[v], edges, &local);
    for (int64_t& id : local)
      if (id >= 0) id = id * out_.vthreads + v;
    final_ids[v] = std::move(local);
  }

  // Round-robin interleave, one instruction at a time.
  std::vector<size_t> pos(out_.vthreads, 0);
  bool more = true;
  while (more) {
    more = false;
    for (int v = 0; v < out_.vthreads; ++v) {
      if (pos[v] < final_seq[v].size()) {
        out_.instrs.push_back(final_seq[v][pos[v]]);
        ids.push_back(final_ids[v][pos[v]]);
        ++pos[v];
        more = true;
      }
    }
  }
  check_fifo(ids);
  out_.buffers = bufs_;
  return out_;
}

int64_t duration(const VdlaInstruction& in, const PipelineConfig& cfg) {
  switch (in.op) {
    case VdlaOp::kLoad:
    case VdlaOp::kStore:
      return cfg.dram_latency_cycles +
             ceil_div(in.bytes, cfg.dram_bytes_per_cycle);
    case VdlaOp::kGemm:
      // A reset-mode GEMM (alu_body set) zeroes extent elements at one
      // 16x16 tile per cycle; a real GEMM is one tile.
      if (in.alu_body)
        return std::max<int64_t>(
            1, ceil_div(in.extent,
                        static_cast<int64_t>(cfg.mac_rows) * cfg.mac_cols) *
                   cfg.gemm_cycles);
      return cfg.gemm_cycles;
    case VdlaOp::kAlu:
      return in.extent;
    case VdlaOp::kPushDep:
    case VdlaOp::kPopDep:
      return 0;
  }
  return 0;
}

// Discrete-event core: fills per-instruction start cycles and the result.
//
// Each stage is one engine shared by all virtual threads. Instructions of
// one thread execute on their stage in program order, but a thread stalled
// on a POP_DEP does not hold the engine: the engine is free to run the
// next ready instruction of another thread. Without that, the round-robin
// instruction interleave would turn every token wait into a barrier across
// all threads and virtual threads could never overlap memory with compute.
// Token queues are kept per thread so a token is always consumed by the
// thread that produced it. PUSH/POP take zero cycles and only gate the
// datapath instructions around them.
SimResult simulate_impl(const InstructionStream& s, const PipelineConfig& cfg,
                        std::vector<int64_t>* starts) {
  int vthreads = std::max(1, s.vthreads);
  auto sub = [&](int st, int v) { return st * vthreads + v; };
  std::vector<std::vector<size_t>> lane(3 * vthreads);
  for (size_t i = 0; i < s.instrs.size(); ++i) {
    const VdlaInstruction& in = s.instrs[i];
    TEC_CHECK(in.thread >= 0 && in.thread < vthreads,
              "instruction thread id out of range");
    lane[sub(static_cast<int>(instr_stage(in)), in.thread)].push_back(i);
  }

  std::vector<size_t> cursor(3 * vthreads, 0);
  std::vector<int64_t> thr_ready(3 * vthreads, 0);
  std::array<int64_t, 3> free_at{0, 0, 0}, busy{0, 0, 0};
  std::map<std::tuple<int, int, int>, std::deque<int64_t>> queue;
  starts->assign(s.instrs.size(), -1);
  const int64_t kInf = std::numeric_limits<int64_t>::max();

  SimResult r;
  int64_t end_max = 0;
  for (;;) {
    int64_t best = kInf;
    int best_sl = -1;
    for (int st = 0; st < 3; ++st) {
      for (int v = 0; v < vthreads; ++v) {
        int sl = sub(st, v);
        if (cursor[sl] >= lane[sl].size()) continue;
        const VdlaInstruction& in = s.instrs[lane[sl][cursor[sl]]];
        int64_t cand;
        if (in.op == VdlaOp::kPushDep) {
          cand = thr_ready[sl];
        } else if (in.op == VdlaOp::kPopDep) {
          auto& q = queue[{static_cast<int>(in.from),
                           static_cast<int>(in.to), v}];
          if (q.empty()) continue;  // token not produced yet
          cand = std::max(thr_ready[sl], q.front());
        } else {
          cand = std::max(free_at[st], thr_ready[sl]);
        }
        if (cand < best) {
          best = cand;
          best_sl = sl;
        }
      }
    }
    if (best_sl < 0) break;

    int st = best_sl / vthreads;
    int v = best_sl % vthreads;
    size_t gi = lane[best_sl][cursor[best_sl]];
    const VdlaInstruction& in = s.instrs[gi];
    (*starts)[gi] = best;
    if (in.op == VdlaOp::kPushDep) {
      queue[{static_cast<int>(in.from), static_cast<int>(in.to), v}]
          .push_back(best);
      thr_ready[best_sl] = best;
    } else if (in.op == VdlaOp::kPopDep) {
      queue[{static_cast<int>(in.from), static_cast<int>(in.to), v}]
          .pop_front();
      thr_ready[best_sl] = best;
    } else {
      int64_t dur = duration(in, cfg);
      free_at[st] = best + dur;
      thr_ready[best_sl] = best + dur;
      busy[st] += dur;
      end_max = std::max(end_max, best + dur);
      if (in.op == VdlaOp::kLoad || in.op == VdlaOp::kStore)
        r.bytes_moved += in.bytes;
      if (in.op == VdlaOp::kGemm) r.mac_ops += in.mac_ops;
    }
    ++cursor[best_sl];
  }

  bool done = true;
  for (size_t sl = 0; sl < lane.size(); ++sl)
    done = done && cursor[sl] == lane[sl].size();
  if (!done) {
    std::ostringstream os;
    os << "no stage can make progress:";
    for (int st = 0; st < 3; ++st) {
      os << " " << vdla_stage_name(static_cast<VdlaStage>(st)) << "=";
      bool stage_done = true;
      for (int v = 0; v < vthreads && stage_done; ++v)
        stage_done = cursor[sub(st, v)] == lane[sub(st, v)].size();
      if (stage_done) {
        os << "done";
        continue;
      }
      for (int v = 0; v < vthreads; ++v) {
        int sl = sub(st, v);
        if (cursor[sl] == lane[sl].size()) continue;
        const VdlaInstruction& in = s.instrs[lane[sl][cursor[sl]]];
        os << "#" << lane[sl][cursor[sl]] << ":" << vdla_op_name(in.op);
        if (in.op == VdlaOp::kPopDep)
          os << "(" << vdla_stage_name(in.from) << "->"
             << vdla_stage_name(in.to) << " empty)";
        break;
      }
    }
    fail(ErrorCode::kDeadlockError, os.str());
  }

  r.total_cycles = end_max;
  r.busy_load = busy[0];
  r.busy_compute = busy[1];
  r.busy_store = busy[2];
  r.compute_utilization =
      r.total_cycles > 0
          ? static_cast<double>(r.busy_compute) / r.total_cycles
          : 0.0;
  if (r.bytes_moved > 0)
    r.operational_intensity =
        static_cast<double>(r.mac_ops) / r.bytes_moved;
  else if (r.mac_ops > 0)  // pure compute: off the bandwidth roof entirely
    r.operational_intensity = std::numeric_limits<double>::infinity();
  return r;
}

// Functional state for co-simulation: DRAM buffers are shared, on-chip
// buffers exist once per virtual thread.
struct CosimState {
  const InstructionStream* s;
  std::map<std::pair<int, std::string>, std::vector<double>> mem;

  const VdlaBufferDecl& decl(const std::string& name) const {
    auto it = s->buffers.find(name);
    if (it == s->buffers.end())
      fail(ErrorCode::kInternal, "unknown buffer " + name);
    return it->second;
  }

  std::vector<double>& vec(int thread, const std::string& name) {
    const VdlaBufferDecl& d = decl(name);
    int key = is_onchip(d.scope) ? thread : -1;
    auto it = mem.find({key, name});
    if (it == mem.end())
      it = mem.emplace(std::make_pair(key, name),
                       std::vector<double>(d.elems(), 0.0)).first;
    return it->second;
  }

  int64_t flat(const VdlaBufferDecl& d, const std::vector<int64_t>& idx) {
    int64_t f = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
      if (i >= d.shape.size() || idx[i] < 0 || idx[i] >= d.shape[i])
        fail(ErrorCode::kBoundsError,
             "co-simulated access outside " + d.name);
      f = f * d.shape[i] + idx[i];
    }
    return f;
  }

  double load(int thread, const std::string& name,
              const std::vector<int64_t>& idx) {
    return vec(thread, name)[flat(decl(name), idx)];
  }
};

class CosimReader : public BufferReader {
 public:
  CosimReader(CosimState* st, int thread, const Env* env)
      : st_(st), thread_(thread) {
    (void)env;
  }
  int64_t read_int(const std::string& buffer,
                   const std::vector<int64_t>& indices) override {
    return static_cast<int64_t>(st_->load(thread_, buffer, indices));
  }
  float read_float(const std::string& buffer,
                   const std::vector<int64_t>& indices) override {
    return static_cast<float>(st_->load(thread_, buffer, indices));
  }

 private:
  CosimState* st_;
  int thread_;
};

void exec_alu_stmt(const StmtPtr& sp, CosimState* st, int thread, Env* env) {
  const Stmt& s = *sp;
  switch (s.kind) {
    case StmtKind::kFor:
      for (int64_t i = 0; i < s.extent; ++i) {
        (*env)[s.var] = i;
        for (const auto& c : s.body) exec_alu_stmt(c, st, thread, env);
      }
      env->erase(s.var);
      return;
    case StmtKind::kSeq:
      for (const auto& c : s.body) exec_alu_stmt(c, st, thread, env);
      return;
    case StmtKind::kGuard:
      if (eval_index(s.value, *env) != 0)
        for (const auto& c : s.body) exec_alu_stmt(c, st, thread, env);
      return;
    case StmtKind::kStore: {
      const VdlaBufferDecl& d = st->decl(s.buffer);
      std::vector<int64_t> idx(s.indices.size());
      for (size_t i = 0; i < idx.size(); ++i)
        idx[i] = eval_index(s.indices[i], *env);
      CosimReader rd(st, thread, env);
      double v = d.dtype == DType::kF32
                     ? static_cast<double>(eval_float(s.value, *env, &rd))
                     : static_cast<double>(eval_int(s.value, *env, &rd));
      st->vec(thread, s.buffer)[st->flat(d, idx)] = v;
      return;
    }
    default:
      fail(ErrorCode::kInternal, "unexpected statement inside an ALU body");
  }
}

void exec_gemm(const VdlaInstruction& in, CosimState* st) {
  const Intrinsic* intr = find_intrinsic(in.call_name);
  if (!intr)
    fail(ErrorCode::kInternal, "unknown intrinsic " + in.call_name);
  const ComputeOpNode* beh = intr->behavior.get();

  std::map<std::string, const GemmOperand*> ops;
  for (const auto& o : in.operands) ops[o.behavior_tensor] = &o;
  auto idx_of = [&](const GemmOperand& o, const std::vector<int64_t>& bidx) {
    std::vector<int64_t> idx = o.base;
    for (size_t b = 0; b < bidx.size(); ++b) idx[o.axis_dim[b]] += bidx[b];
    return idx;
  };

  class GemmReader : public BufferReader {
   public:
    GemmReader(CosimState* st, int thread,
               std::map<std::string, const GemmOperand*>* ops,
               std::function<std::vector<int64_t>(const GemmOperand&,
                                                  const std::vector<int64_t>&)>
                   map_idx)
        : st_(st), thread_(thread), ops_(ops), map_idx_(std::move(map_idx)) {}
    int64_t read_int(const std::string& t,
                     const std::vector<int64_t>& i) override {
      const GemmOperand& o = *ops_->at(t);
      return static_cast<int64_t>(st_->load(thread_, o.buffer, map_idx_(o, i)));
    }
    float read_float(const std::string& t,
                     const std::vector<int64_t>& i) override {
      const GemmOperand& o = *ops_->at(t);
      return static_cast<float>(st_->load(thread_, o.buffer, map_idx_(o, i)));
    }

   private:
    CosimState* st_;
    int thread_;
    std::map<std::string, const GemmOperand*>* ops_;
    std::function<std::vector<int64_t>(const GemmOperand&,
                                       const std::vector<int64_t>&)>
        map_idx_;
  } reader(st, in.thread, &ops, idx_of);

  const GemmOperand& out = *ops.at(beh->name);
  const VdlaBufferDecl& od = st->decl(out.buffer);
  bool fp = beh->out_type.dtype == DType::kF32;
  int64_t points = 1;
  for (const auto& a : beh->axis) points *= a.extent;
  std::vector<int64_t> j(beh->axis.size(), 0);
  for (int64_t lin = 0; lin < points; ++lin) {
    int64_t rem = lin;
    for (size_t a = beh->axis.size(); a-- > 0;) {
      j[a] = rem % beh->axis[a].extent;
      rem /= beh->axis[a].extent;
    }
    Env benv;
    for (size_t a = 0; a < beh->axis.size(); ++a)
      benv[beh->axis[a].name] = j[a];
    std::vector<int64_t> oidx = idx_of(out, j);
    int64_t of = st->flat(od, oidx);
    auto& ovec = st->vec(in.thread, out.buffer);

    if (beh->reducer == Reducer::kNone) {
      double v = fp ? static_cast<double>(eval_float(beh->body, benv, &reader))
                    : static_cast<double>(eval_int(beh->body, benv, &reader));
      ovec[of] = v;
      continue;
    }
    int64_t rpoints = 1;
    for (const auto& rv : beh->reduce_axis) rpoints *= rv.extent;
    double idv = reducer_identity(beh->reducer, beh->out_type.dtype);
    float accf = static_cast<float>(idv);
    int64_t acci = static_cast<int64_t>(idv);
    for (int64_t rl = 0; rl < rpoints; ++rl) {
      int64_t rrem = rl;
      for (size_t a = beh->reduce_axis.size(); a-- > 0;) {
        benv[beh->reduce_axis[a].name] = rrem % beh->reduce_axis[a].extent;
        rrem /= beh->reduce_axis[a].extent;
      }
      if (fp) {
        float v = eval_float(beh->body, benv, &reader);
        accf = beh->reducer == Reducer::kSum ? accf + v : std::max(accf, v);
      } else {
        int64_t v = eval_int(beh->body, benv, &reader);
        acci = beh->reducer == Reducer::kSum ? acci + v : std::max(acci, v);
      }
    }
    double cur = ovec[of];
    if (fp) {
      float c = static_cast<float>(cur);
      ovec[of] = beh->reducer == Reducer::kSum
                     ? static_cast<double>(c + accf)
                     : static_cast<double>(std::max(c, accf));
    } else {
      int64_t c = static_cast<int64_t>(cur);
      ovec[of] = static_cast<double>(
          beh->reducer == Reducer::kSum ? c + acci : std::max(c, acci));
    }
  }
}

}  // namespace

InstructionStream lower_to_vdla(const LoopProgram& p,
                                const PipelineConfig& cfg) {
  return StreamBuilder(p, cfg).run();
}

SimResult simulate(const InstructionStream& s, const PipelineConfig& cfg) {
  std::vector<int64_t> starts;
  return simulate_impl(s, cfg, &starts);
}

namespace {

// Deterministic stand-in for a value observed mid-transfer.
double garble(double v) { return -v - 13.0; }

void garble_region(CosimState* st, int thread, const std::string& buffer,
                   const VdlaAccess& region) {
  const VdlaBufferDecl& d = st->decl(buffer);
  auto& v = st->vec(thread, buffer);
  std::vector<int64_t> idx = region.lo;
  while (true) {
    int64_t f = st->flat(d, idx);
    v[f] = garble(v[f]);
    bool wrapped = true;
    for (size_t d2 = idx.size(); d2-- > 0;) {
      if (++idx[d2] <= region.hi[d2]) {
        wrapped = false;
        break;
      }
      idx[d2] = region.lo[d2];
    }
    if (wrapped) return;
  }
}

}  // namespace

SimResult cosimulate(const InstructionStream& s, const PipelineConfig& cfg,
                     const std::map<std::string, DenseTensor>& inputs,
                     std::map<std::string, DenseTensor>* outputs) {
  register_builtin_intrinsics();
  std::vector<int64_t> starts;
  SimResult r = simulate_impl(s, cfg, &starts);

  CosimState st;
  st.s = &s;
  for (const auto& prm : s.params) {
    auto& v = st.vec(-1, prm.name);
    if (prm.is_output) continue;
    auto it = inputs.find(prm.name);
    if (it == inputs.end())
      fail(ErrorCode::kIOError, "missing input tensor " + prm.name);
    if (!(it->second.type() == prm.type))
      fail(ErrorCode::kShapeMismatch,
           "input " + prm.name + " has the wrong shape or dtype");
    for (int64_t i = 0; i < it->second.num_elements(); ++i)
      v[i] = it->second.scalar_at(i);
  }

  std::vector<size_t> order;
  std::vector<int64_t> ends(s.instrs.size(), 0);
  for (size_t i = 0; i < s.instrs.size(); ++i) {
    if (s.instrs[i].op == VdlaOp::kPushDep ||
        s.instrs[i].op == VdlaOp::kPopDep)
      continue;
    order.push_back(i);
    ends[i] = starts[i] + duration(s.instrs[i], cfg);
  }

  // The stream only guarantees ordering along each thread's per-stage
  // program order and across the token queues (the k-th pop on a queue
  // joins the k-th push, queues being per thread). Two conflicting
  // accesses not ordered by that partial order race on a single-ported
  // memory, and their value is undefined no matter how the cycle timing
  // happens to fall. Surface the race deterministically by garbling what
  // the reader sees, so a missing dependence token always shows up as a
  // wrong output. Order is tracked with one vector clock per instruction
  // over the (stage, thread) sub-lanes.
  int vthreads = std::max(1, s.vthreads);
  int nlanes = 3 * vthreads;
  auto sub = [&](int st_i, int v) { return st_i * vthreads + v; };
  std::vector<std::vector<size_t>> lane(nlanes);
  std::vector<int> lane_of(s.instrs.size(), 0);
  std::vector<int> lane_pos(s.instrs.size(), 0);
  for (size_t i = 0; i < s.instrs.size(); ++i) {
    int sl = sub(static_cast<int>(instr_stage(s.instrs[i])),
                 s.instrs[i].thread);
    lane_of[i] = sl;
    lane_pos[i] = static_cast<int>(lane[sl].size());
    lane[sl].push_back(i);
  }
  std::map<std::tuple<int, int, int>, std::deque<size_t>> queue_pushes;
  for (int sl = 0; sl < nlanes; ++sl)
    for (size_t i : lane[sl])
      if (s.instrs[i].op == VdlaOp::kPushDep)
        queue_pushes[{static_cast<int>(s.instrs[i].from),
                      static_cast<int>(s.instrs[i].to), s.instrs[i].thread}]
            .push_back(i);
  std::vector<std::vector<int>> vc(s.instrs.size());
  {
    std::vector<size_t> cur(nlanes, 0);
    std::vector<std::vector<int>> now(nlanes, std::vector<int>(nlanes, 0));
    std::vector<bool> done_i(s.instrs.size(), false);
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (int sl = 0; sl < nlanes; ++sl) {
        while (cur[sl] < lane[sl].size()) {
          size_t gi = lane[sl][cur[sl]];
          const VdlaInstruction& in = s.instrs[gi];
          if (in.op == VdlaOp::kPopDep) {
            auto& q = queue_pushes[{static_cast<int>(in.from),
                                    static_cast<int>(in.to), in.thread}];
            if (q.empty() || !done_i[q.front()]) break;
            for (int d = 0; d < nlanes; ++d)
              now[sl][d] = std::max(now[sl][d], vc[q.front()][d]);
            q.pop_front();
          }
          now[sl][sl] = lane_pos[gi] + 1;
          vc[gi] = now[sl];
          done_i[gi] = true;
          ++cur[sl];
          progressed = true;
        }
      }
    }
    // A starved pop would have deadlocked the timing simulation already.
    for (int sl = 0; sl < nlanes; ++sl)
      TEC_CHECK(cur[sl] == lane[sl].size(),
                "token pairing starved during replay");
  }
  auto ordered = [&](size_t i, size_t j) {
    return vc[j][lane_of[i]] >= lane_pos[i] + 1 ||
           vc[i][lane_of[j]] >= lane_pos[j] + 1;
  };

  struct Use {
    size_t gi;
    const VdlaAccess* acc;
  };
  std::map<std::pair<int, std::string>, std::vector<Use>> uses;
  for (size_t gi : order) {
    const VdlaInstruction& in = s.instrs[gi];
    for (const auto& a : in.touches) {
      int key = is_onchip(st.decl(a.buffer).scope) ? in.thread : -1;
      uses[{key, a.buffer}].push_back({gi, &a});
    }
  }
  std::map<size_t, std::vector<std::pair<std::string, VdlaAccess>>> poison;
  std::vector<std::tuple<int, std::string, VdlaAccess>> waw_poison;
  for (auto& [key, list] : uses) {
    for (size_t x = 0; x < list.size(); ++x) {
      for (size_t y = x + 1; y < list.size(); ++y) {
        const Use& p = list[x];
        const Use& u = list[y];
        if (p.gi == u.gi) continue;
        if (!(p.acc->write || u.acc->write)) continue;
        if (!access_overlap(*p.acc, *u.acc)) continue;
        if (ordered(p.gi, u.gi)) continue;
        if (u.acc->read) poison[u.gi].push_back({key.second, *p.acc});
        if (p.acc->read) poison[p.gi].push_back({key.second, *u.acc});
        if (!u.acc->read && !p.acc->read)  // write-write: final value undefined
          waw_poison.push_back({key.first, key.second, *u.acc});
      }
    }
  }

  // Writes land when an instruction completes; replay in that order.
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (ends[a] != ends[b]) return ends[a] < ends[b];
    return a < b;
  });

  for (size_t gi : order) {
    const VdlaInstruction& in = s.instrs[gi];
    auto pit = poison.find(gi);
    if (pit != poison.end())
      for (const auto& [buffer, region] : pit->second)
        garble_region(&st, in.thread, buffer, region);
    if (!in.moves.empty()) {
      auto& dv = st.vec(in.thread, in.dst_buffer);
      auto& sv = st.vec(in.thread, in.src_buffer);
      for (const auto& mv : in.moves) dv[mv.first] = sv[mv.second];
    } else if (in.op == VdlaOp::kGemm && !in.alu_body) {
      exec_gemm(in, &st);
    } else if (in.alu_body) {  // ALU nest or reset-mode GEMM fill
      Env env = in.env;
      exec_alu_stmt(in.alu_body, &st, in.thread, &env);
    }
  }
  for (const auto& [thread, buffer, region] : waw_poison)
    garble_region(&st, thread, buffer, region);

  if (outputs) {
    outputs->clear();
    for (const auto& prm : s.params) {
      if (!prm.is_output) continue;
      DenseTensor t(prm.type);
      auto& v = st.vec(-1, prm.name);
      for (int64_t i = 0; i < t.num_elements(); ++i) t.set_scalar(i, v[i]);
      outputs->emplace(prm.name, std::move(t));
    }
  }
  return r;
}

std::vector<size_t> sync_positions(const InstructionStream& s) {
  std::vector<size_t> out;
  for (size_t i = 0; i < s.instrs.size(); ++i)
    if (s.instrs[i].op == VdlaOp::kPushDep ||
        s.instrs[i].op == VdlaOp::kPopDep)
      out.push_back(i);
  return out;
}

InstructionStream drop_instruction(const InstructionStream& s, size_t pos) {
  TEC_CHECK(pos < s.instrs.size(), "instruction index out of range");
  InstructionStream out = s;
  out.instrs.erase(out.instrs.begin() + static_cast<int64_t>(pos));
  return out;
}

static void print_region(std::ostringstream& os, const std::string& buffer,
                         const std::vector<int64_t>& lo,
                         const std::vector<int64_t>& ext) {
  os << buffer << "[";
  for (size_t d = 0; d < lo.size(); ++d) {
    if (d) os << ",";
    os << lo[d] << ":" << lo[d] + ext[d];
  }
  os << "]";
}

std::string print_stream(const InstructionStream& s) {
  std::ostringstream os;
  os << "stream " << s.name << " vthreads=" << s.vthreads << "\n";
  for (const auto& in : s.instrs) {
    os << "t" << in.thread << " " << vdla_op_name(in.op);
    switch (in.op) {
      case VdlaOp::kLoad:
      case VdlaOp::kStore:
        os << " ";
        print_region(os, in.dst_buffer, in.dst_lo, in.dst_ext);
        os << " <- ";
        print_region(os, in.src_buffer, in.src_lo, in.src_ext);
        os << " bytes=" << in.bytes;
        break;
      case VdlaOp::kGemm:
        if (in.alu_body) {
          os << " reset ";
          print_region(os, in.dst_buffer, in.dst_lo, in.dst_ext);
          os << " extent=" << in.extent;
          break;
        }
        os << " " << in.call_name;
        for (const auto& o : in.operands) {
          os << " " << o.behavior_tensor << "=" << o.buffer << "[";
          for (size_t d = 0; d < o.base.size(); ++d) {
            if (d) os << ",";
            os << o.base[d];
          }
          os << "]<";
          for (size_t d = 0; d < o.axis_dim.size(); ++d) {
            if (d) os << ",";
            os << o.axis_dim[d];
          }
          os << ">";
        }
        os << " macs=" << in.mac_ops;
        break;
      case VdlaOp::kAlu:
        if (!in.moves.empty()) {
          os << " copy ";
          print_region(os, in.dst_buffer, in.dst_lo, in.dst_ext);
          os << " <- " << in.src_buffer;
        } else {
          os << " ";
          print_region(os, in.dst_buffer, in.dst_lo, in.dst_ext);
        }
        os << " extent=" << in.extent;
        break;
      case VdlaOp::kPushDep:
      case VdlaOp::kPopDep:
        os << " " << vdla_stage_name(in.from) << "->"
           << vdla_stage_name(in.to);
        break;
    }
    os << "\n";
  }
  return os.str();
}

std::vector<RooflinePoint> roofline_report(
    const std::vector<std::pair<std::string, SimResult>>& results,
    const PipelineConfig& cfg) {
  if (results.empty())
    fail(ErrorCode::kNotEnoughData, "no simulation results to report");
  std::vector<RooflinePoint> pts;
  for (const auto& [name, r] : results) {
    RooflinePoint p;
    p.workload = name;
    p.intensity = r.operational_intensity;
    p.gops = r.gops(cfg);
    double mem_roof = p.intensity * 2.0 * cfg.dram_bytes_per_cycle *
                      cfg.clock_hz() / 1e9;
    p.memory_bound = mem_roof < cfg.peak_gops();
    p.bound_gops = std::min(mem_roof, cfg.peak_gops());
    pts.push_back(p);
  }
  return pts;
}

std::string roofline_csv(const std::vector<RooflinePoint>& pts) {
  std::ostringstream os;
  os << "workload,intensity,gops,bound\n";
  for (const auto& p : pts)
    os << p.workload << "," << p.intensity << "," << p.gops << ","
       << (p.memory_bound ? "memory" : "compute") << "\n";
  return os.str();
}

}  // namespace tec
