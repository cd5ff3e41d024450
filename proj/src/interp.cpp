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
#include "tec/interp.hpp"

#include <algorithm>
#include <condition_variable>
#include <exception>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

#include "tec/error.hpp"
#include "tec/texpr.hpp"

namespace tec {
namespace {

// ---------------------------------------------------------------------------
// Buffer storage: doubles hold f32 values (already rounded on store) and
// integer values exactly.
// ---------------------------------------------------------------------------

struct BufStore {
  std::string name;
  DType dt = DType::kF32;
  std::vector<int64_t> shape;
  std::vector<double> data;

  int64_t flat(const std::vector<int64_t>& idx) const {
    if (idx.size() != shape.size())
      fail(ErrorCode::kBoundsError,
           name + ": rank " + std::to_string(idx.size()) + " access on rank " +
               std::to_string(shape.size()) + " buffer");
    int64_t f = 0;
    for (size_t d = 0; d < shape.size(); ++d) {
      if (idx[d] < 0 || idx[d] >= shape[d])
        fail(ErrorCode::kBoundsError,
             name + ": index " + std::to_string(idx[d]) + " out of [0, " +
                 std::to_string(shape[d]) + ") in dim " + std::to_string(d));
      f = f * shape[d] + idx[d];
    }
    return f;
  }
};
using BufPtr = std::shared_ptr<BufStore>;

// ---------------------------------------------------------------------------
// Deterministic thread-group scheduler: one runnable thread at a time,
// rotation order reshuffled per barrier interval when seeded.
// ---------------------------------------------------------------------------

struct GroupAborted {};

class Baton {
 public:
  Baton(int n, uint64_t seed) : n_(n), seeded_(seed != 0), rng_(seed) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    if (seeded_) std::shuffle(order_.begin(), order_.end(), rng_);
    arrived_.assign(n, false);
    done_.assign(n, false);
    active_ = order_[0];
  }

  void wait_turn(int me) {
    std::unique_lock<std::mutex> l(m_);
    cv_.wait(l, [&] { return abort_ || active_ == me; });
    if (abort_) throw GroupAborted{};
  }

  void at_barrier(int me) {
    std::unique_lock<std::mutex> l(m_);
    arrived_[me] = true;
    advance_locked();
    cv_.notify_all();
    cv_.wait(l, [&] { return abort_ || (active_ == me && !arrived_[me]); });
    if (abort_) throw GroupAborted{};
  }

  void at_done(int me) {
    std::unique_lock<std::mutex> l(m_);
    done_[me] = true;
    if (active_ == me) advance_locked();
    cv_.notify_all();
  }

  void abort() {
    std::unique_lock<std::mutex> l(m_);
    abort_ = true;
    cv_.notify_all();
  }

  int64_t interval() const { return gen_; }

 private:
  void advance_locked() {
    // Next unarrived, undone thread in the rotation.
    for (int i : order_) {
      if (!done_[i] && !arrived_[i]) {
        active_ = i;
        return;
      }
    }
    // Everyone alive reached the barrier: open the next interval.
    bool any = false;
    for (int i = 0; i < n_; ++i) any = any || !done_[i];
    if (!any) return;
    ++gen_;
    arrived_.assign(n_, false);
    if (seeded_) std::shuffle(order_.begin(), order_.end(), rng_);
    for (int i : order_) {
      if (!done_[i]) {
        active_ = i;
        return;
      }
    }
  }

  int n_;
  bool seeded_;
  std::mt19937_64 rng_;
  std::vector<int> order_;
  std::vector<bool> arrived_, done_;
  int active_ = 0;
  int64_t gen_ = 0;
  bool abort_ = false;
  std::mutex m_;
  std::condition_variable cv_;
};

// Per-location access cell: first writer plus up to two distinct readers
// within the current interval is enough to witness any conflict.
struct Cell {
  int64_t gen = -1;
  int writer = -1;
  int r1 = -1, r2 = -1;
};

struct Machine {
  InterpOptions opts;
  int64_t stores = 0;
  int64_t loop_iters = 0;
  std::map<std::pair<const BufStore*, int64_t>, Cell> cells;
  bool race_found = false;
  std::string race_buffer, race_detail;
  uint64_t group_count = 0;

  void record(const BufStore* b, int64_t flat, int thread, int64_t gen,
              bool write) {
    if (race_found) return;
    Cell& c = cells[{b, flat}];
    if (c.gen != gen) {
      c.gen = gen;
      c.writer = write ? thread : -1;
      c.r1 = write ? -1 : thread;
      c.r2 = -1;
      return;
    }
    auto flag = [&](const char* kind) {
      race_found = true;
      race_buffer = b->name;
      race_detail = std::string(kind) + " conflict on " + b->name + "[" +
                    std::to_string(flat) + "] in barrier interval " +
                    std::to_string(gen);
    };
    if (write) {
      if (c.writer >= 0 && c.writer != thread) return flag("write-write");
      if ((c.r1 >= 0 && c.r1 != thread) || (c.r2 >= 0 && c.r2 != thread))
        return flag("read-write");
      c.writer = thread;
    } else {
      if (c.writer >= 0 && c.writer != thread) return flag("write-read");
      if (c.r1 < 0 || c.r1 == thread) c.r1 = thread;
      else if (c.r2 < 0 || c.r2 == thread) c.r2 = thread;
    }
  }
};

class Runner;

// Evaluator hook resolving reads against the runner's buffer scope.
class RunnerReader : public BufferReader {
 public:
  explicit RunnerReader(Runner* r) : r_(r) {}
  int64_t read_int(const std::string& buffer,
                   const std::vector<int64_t>& indices) override;
  float read_float(const std::string& buffer,
                   const std::vector<int64_t>& indices) override;

 private:
  Runner* r_;
};

class Runner {
 public:
  Runner(Machine* mc, std::vector<std::map<std::string, BufPtr>> frames)
      : mc_(mc), frames_(std::move(frames)) {}

  Machine* machine() { return mc_; }

  BufPtr find(const std::string& name) {
    for (auto it = frames_.rbegin(); it != frames_.rend(); ++it) {
      auto f = it->find(name);
      if (f != it->end()) return f->second;
    }
    fail(ErrorCode::kBoundsError, "access to unknown buffer " + name);
  }

  double load(const std::string& name, const std::vector<int64_t>& idx) {
    BufPtr b = find(name);
    int64_t f = b->flat(idx);
    if (mc_->opts.log_accesses && in_group())
      mc_->record(b.get(), f, thread_id_, baton_->interval(), false);
    return b->data[f];
  }

  bool in_group() const { return baton_ != nullptr; }

  void exec(const StmtPtr& s) {
    switch (s->kind) {
      case StmtKind::kSeq:
        for (const auto& c : s->body) exec(c);
        return;
      case StmtKind::kFor:
        return exec_for(s);
      case StmtKind::kAlloc: {
        auto b = std::make_shared<BufStore>();
        b->name = s->buffer;
        b->dt = s->dtype;
        b->shape = s->extents;
        int64_t n = 1;
        for (int64_t e : s->extents) n *= e;
        b->data.assign(n, 0.0);
        frames_.push_back({{s->buffer, b}});
        for (const auto& c : s->body) exec(c);
        frames_.pop_back();
        return;
      }
      case StmtKind::kStore: {
        std::vector<int64_t> idx(s->indices.size());
        for (size_t i = 0; i < idx.size(); ++i)
          idx[i] = eval_index(s->indices[i], env_);
        BufPtr b = find(s->buffer);
        int64_t f = b->flat(idx);
        RunnerReader rd(this);
        double v = b->dt == DType::kF32
                       ? static_cast<double>(eval_float(s->value, env_, &rd))
                       : static_cast<double>(eval_int(s->value, env_, &rd));
        if (mc_->opts.log_accesses && in_group())
          mc_->record(b.get(), f, thread_id_, baton_->interval(), true);
        b->data[f] = v;
        ++mc_->stores;
        return;
      }
      case StmtKind::kGuard: {
        if (eval_index(s->value, env_) != 0)
          for (const auto& c : s->body) exec(c);
        return;
      }
      case StmtKind::kBarrier: {
        if (!in_group())
          fail(ErrorCode::kInternal, "barrier outside a thread group");
        baton_->at_barrier(thread_id_);
        return;
      }
      case StmtKind::kCall:
        return exec_call(s);
    }
  }

  Env env_;
  int thread_id_ = -1;
  Baton* baton_ = nullptr;
  std::map<std::string, int64_t> coords_;  // thread tag -> coordinate

 private:
  void exec_for(const StmtPtr& s) {
    bool is_thread = s->fkind == ForKind::kThreadBinding;
    bool is_tidx = is_thread && s->thread_tag.rfind("threadIdx", 0) == 0;
    if (is_tidx && in_group()) {
      // Inside a running group each thread binds its own coordinate.
      env_[s->var] = coords_.at(s->thread_tag);
      ++mc_->loop_iters;
      for (const auto& c : s->body) exec(c);
      env_.erase(s->var);
      return;
    }
    if (is_tidx) return launch_group(s);
    // blockIdx, vthread and every plain loop kind run serially.
    for (int64_t i = 0; i < s->extent; ++i) {
      env_[s->var] = i;
      ++mc_->loop_iters;
      for (const auto& c : s->body) exec(c);
    }
    env_.erase(s->var);
  }

  void launch_group(const StmtPtr& s) {
    // Thread space: every threadIdx tag in the subtree, y-major.
    std::map<std::string, int64_t> dims;
    walk_stmts(s, [&](const Stmt& n) {
      if (n.kind == StmtKind::kFor && n.fkind == ForKind::kThreadBinding) {
        if (n.thread_tag.rfind("blockIdx", 0) == 0)
          fail(ErrorCode::kInternal, "block binding nested inside threads");
        if (!dims.count(n.thread_tag)) dims[n.thread_tag] = n.extent;
      }
    });
    std::vector<std::pair<std::string, int64_t>> axes;  // y before x
    for (const char* tag : {"threadIdx.y", "threadIdx.x"}) {
      auto it = dims.find(tag);
      if (it != dims.end()) axes.push_back(*it);
    }
    int64_t total = 1;
    for (const auto& a : axes) total *= a.second;

    uint64_t gseed = mc_->opts.seed == 0
                         ? 0
                         : mc_->opts.seed * 0x9e3779b97f4a7c15ull +
                               ++mc_->group_count;
    Baton baton(static_cast<int>(total), gseed);
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(total);

    for (int64_t t = 0; t < total; ++t) {
      threads.emplace_back([&, t] {
        Runner r(mc_, frames_);
        r.env_ = env_;
        r.thread_id_ = static_cast<int>(t);
        r.baton_ = &baton;
        int64_t rem = t;
        for (size_t a = axes.size(); a-- > 0;) {
          r.coords_[axes[a].first] = rem % axes[a].second;
          rem /= axes[a].second;
        }
        try {
          baton.wait_turn(static_cast<int>(t));
          r.exec(s);
          baton.at_done(static_cast<int>(t));
        } catch (GroupAborted&) {
        } catch (...) {
          errors[t] = std::current_exception();
          baton.abort();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // Intrinsic call: execute the behavior op over the bound buffer regions.
  void exec_call(const StmtPtr& s) {
    const Intrinsic* intr = find_intrinsic(s->call_name);
    if (!intr)
      fail(ErrorCode::kInternal, "call of unknown intrinsic " + s->call_name);
    const ComputeOpNode* beh = intr->behavior.get();

    struct Operand {
      BufPtr buf;
      std::vector<int64_t> base;
      std::vector<int> axis_dim;
    };
    std::map<std::string, Operand> ops;
    for (const auto& a : s->call_args) {
      Operand o;
      o.buf = find(a.buffer);
      o.base.resize(a.base.size());
      for (size_t d = 0; d < a.base.size(); ++d)
        o.base[d] = eval_index(a.base[d], env_);
      o.axis_dim = a.axis_dim;
      ops[a.behavior_tensor] = std::move(o);
    }
    auto idx_of = [&](const Operand& o, const std::vector<int64_t>& bidx) {
      std::vector<int64_t> idx = o.base;
      for (size_t b = 0; b < bidx.size(); ++b) idx[o.axis_dim[b]] += bidx[b];
      return idx;
    };

    // Behavior reads resolve through the operand map.
    class CallReader : public BufferReader {
     public:
      CallReader(Runner* r, std::map<std::string, Operand>* ops,
                 decltype(idx_of)* map_idx)
          : r_(r), ops_(ops), map_idx_(map_idx) {}
      int64_t read_int(const std::string& t,
                       const std::vector<int64_t>& i) override {
        const Operand& o = ops_->at(t);
        return static_cast<int64_t>(r_->load(o.buf->name, (*map_idx_)(o, i)));
      }
      float read_float(const std::string& t,
                       const std::vector<int64_t>& i) override {
        const Operand& o = ops_->at(t);
        return static_cast<float>(r_->load(o.buf->name, (*map_idx_)(o, i)));
      }

     private:
      Runner* r_;
      std::map<std::string, Operand>* ops_;
      decltype(idx_of)* map_idx_;
    } reader(this, &ops, &idx_of);

    const Operand& out = ops.at(beh->name);
    bool fp = beh->out_type.dtype == DType::kF32;
    std::vector<int64_t> j(beh->axis.size(), 0);
    int64_t points = 1;
    for (const auto& a : beh->axis) points *= a.extent;
    for (int64_t lin = 0; lin < points; ++lin) {
      int64_t rem = lin;
      for (size_t a = beh->axis.size(); a-- > 0;) {
        j[a] = rem % beh->axis[a].extent;
        rem /= beh->axis[a].extent;
      }
      Env benv;
      for (size_t a = 0; a < beh->axis.size(); ++a) benv[beh->axis[a].name] = j[a];

      std::vector<int64_t> oidx = idx_of(out, j);
      int64_t of = out.buf->flat(oidx);
      if (beh->reducer == Reducer::kNone) {
        double v = fp ? static_cast<double>(eval_float(beh->body, benv, &reader))
                      : static_cast<double>(eval_int(beh->body, benv, &reader));
        if (mc_->opts.log_accesses && in_group())
          mc_->record(out.buf.get(), of, thread_id_, baton_->interval(), true);
        out.buf->data[of] = v;
        ++mc_->stores;
        continue;
      }
      // Reduce over the behavior's reduce axes in declaration order,
      // then fold once into the destination (call sites accumulate).
      int64_t rpoints = 1;
      for (const auto& rv : beh->reduce_axis) rpoints *= rv.extent;
      double accf = reducer_identity(beh->reducer, beh->out_type.dtype);
      float accf32 = static_cast<float>(accf);
      int64_t acci = static_cast<int64_t>(accf);
      for (int64_t rl = 0; rl < rpoints; ++rl) {
        int64_t rrem = rl;
        for (size_t a = beh->reduce_axis.size(); a-- > 0;) {
          benv[beh->reduce_axis[a].name] = rrem % beh->reduce_axis[a].extent;
          rrem /= beh->reduce_axis[a].extent;
        }
        if (fp) {
          float v = eval_float(beh->body, benv, &reader);
          accf32 = beh->reducer == Reducer::kSum ? accf32 + v
                                                 : std::max(accf32, v);
        } else {
          int64_t v = eval_int(beh->body, benv, &reader);
          acci = beh->reducer == Reducer::kSum ? acci + v : std::max(acci, v);
        }
      }
      double cur = load(out.buf->name, oidx);
      double nv;
      if (fp) {
        float c = static_cast<float>(cur);
        nv = beh->reducer == Reducer::kSum
                 ? static_cast<double>(c + accf32)
                 : static_cast<double>(std::max(c, accf32));
      } else {
        int64_t c = static_cast<int64_t>(cur);
        nv = static_cast<double>(beh->reducer == Reducer::kSum
                                     ? c + acci
                                     : std::max(c, acci));
      }
      if (mc_->opts.log_accesses && in_group())
        mc_->record(out.buf.get(), of, thread_id_, baton_->interval(), true);
      out.buf->data[of] = nv;
      ++mc_->stores;
      mc_->loop_iters += rpoints;
    }
  }

  Machine* mc_;
  std::vector<std::map<std::string, BufPtr>> frames_;
};

int64_t RunnerReader::read_int(const std::string& buffer,
                               const std::vector<int64_t>& indices) {
  return static_cast<int64_t>(r_->load(buffer, indices));
}
float RunnerReader::read_float(const std::string& buffer,
                               const std::vector<int64_t>& indices) {
  return static_cast<float>(r_->load(buffer, indices));
}

}  // namespace

InterpResult interpret(const LoopProgram& p,
                       const std::map<std::string, DenseTensor>& inputs,
                       const InterpOptions& opts) {
  register_builtin_intrinsics();
  Machine mc;
  mc.opts = opts;

  std::map<std::string, BufPtr> globals;
  for (const auto& prm : p.params) {
    auto b = std::make_shared<BufStore>();
    b->name = prm.name;
    b->dt = prm.type.dtype;
    b->shape = prm.type.shape;
    b->data.assign(prm.type.num_elements(), 0.0);
    if (!prm.is_output) {
      auto it = inputs.find(prm.name);
      if (it == inputs.end())
        fail(ErrorCode::kIOError, "missing input tensor " + prm.name);
      if (!(it->second.type() == prm.type))
        fail(ErrorCode::kShapeMismatch,
             "input " + prm.name + " has type " + it->second.type().str() +
                 ", expected " + prm.type.str());
      for (int64_t i = 0; i < it->second.num_elements(); ++i)
        b->data[i] = it->second.scalar_at(i);
    }
    globals[prm.name] = b;
  }

  Runner r(&mc, {globals});
  r.exec(p.root);

  InterpResult res;
  res.stores = mc.stores;
  res.loop_iters = mc.loop_iters;
  res.race_found = mc.race_found;
  res.race_buffer = mc.race_buffer;
  res.race_detail = mc.race_detail;
  for (const auto& prm : p.params) {
    if (!prm.is_output) continue;
    DenseTensor t(prm.type);
    const BufPtr& b = globals.at(prm.name);
    for (int64_t i = 0; i < t.num_elements(); ++i) t.set_scalar(i, b->data[i]);
    res.outputs.emplace(prm.name, std::move(t));
  }
  return res;
}

RaceReport race_check(const LoopProgram& p,
                      const std::map<std::string, DenseTensor>& inputs,
                      int serializations, uint64_t seed) {
  RaceReport rep;
  InterpOptions base;
  base.log_accesses = true;
  InterpResult first = interpret(p, inputs, base);
  if (first.race_found) {
    rep.racy = true;
    rep.buffer = first.race_buffer;
    rep.detail = first.race_detail;
    return rep;
  }
  std::mt19937_64 rng(seed ? seed : 1);
  for (int i = 0; i < serializations; ++i) {
    InterpOptions o;
    o.seed = rng() | 1;
    InterpResult run = interpret(p, inputs, o);
    for (const auto& kv : first.outputs) {
      const DenseTensor& a = kv.second;
      const DenseTensor& b = run.outputs.at(kv.first);
      if (!a.same_values(b, 0.0)) {
        rep.racy = true;
        rep.buffer = kv.first;
        rep.detail = "output " + kv.first +
                     " differs between thread serializations (order " +
                     std::to_string(i) + ")";
        return rep;
      }
    }
  }
  return rep;
}

namespace {

StmtPtr strip_barrier(const StmtPtr& s, int* counter, int target) {
  std::vector<StmtPtr> body;
  for (const auto& c : s->body) {
    if (c->kind == StmtKind::kBarrier && (*counter)++ == target) continue;
    body.push_back(strip_barrier(c, counter, target));
  }
  switch (s->kind) {
    case StmtKind::kFor:
      return make_for(s->var, s->extent, s->fkind, s->thread_tag,
                      make_seq(std::move(body)));
    case StmtKind::kSeq:
      return make_seq(std::move(body));
    case StmtKind::kAlloc:
      return make_alloc(s->buffer, s->scope, s->dtype, s->extents,
                        make_seq(std::move(body)));
    case StmtKind::kGuard:
      return make_guard(s->value, make_seq(std::move(body)));
    default:
      return s;
  }
}

}  // namespace

int count_barriers(const LoopProgram& p) {
  int n = 0;
  walk_stmts(p.root, [&](const Stmt& s) {
    if (s.kind == StmtKind::kBarrier) ++n;
  });
  return n;
}

LoopProgram remove_barrier(const LoopProgram& p, int index) {
  LoopProgram out = p;
  int counter = 0;
  out.root = strip_barrier(p.root, &counter, index);
  return out;
}

}  // namespace tec
