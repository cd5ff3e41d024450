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
#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tec/autotune.hpp"
#include "tec/dtype.hpp"
#include "tec/error.hpp"
#include "tec/texpr.hpp"

namespace tec {

namespace {

struct LoopInfo {
  std::string var;
  int64_t extent;
  ForKind kind;
};

struct Extractor {
  std::vector<LoopInfo> loops;
  std::map<std::string, int> slot_of;  // buffer -> feature slot
  std::map<std::string, int> bytes_of; // buffer -> element size
  // [buffer][level] accumulated access executions / distinct elements /
  // touched bytes.
  std::array<std::array<double, kFeatureLevels>, kFeatureBuffers> acc{};
  std::array<std::array<double, kFeatureLevels>, kFeatureBuffers> dist{};
  std::array<std::array<double, kFeatureLevels>, kFeatureBuffers> touched{};
  std::array<std::array<double, 4>, kFeatureLevels> ann{};

  int slot(const std::string& buffer) {
    auto it = slot_of.find(buffer);
    if (it != slot_of.end()) return it->second;
    int s = std::min((int)slot_of.size(), kFeatureBuffers - 1);
    slot_of.emplace(buffer, s);
    return s;
  }

  int elem_bytes(const std::string& buffer) const {
    auto it = bytes_of.find(buffer);
    return it == bytes_of.end() ? 4 : it->second;
  }

  // Distinct elements one access can touch while the loops at `level` and
  // deeper run and everything outer stays fixed: interval-width box bound.
  double distinct_at(const std::vector<Expr>& idx,
                     const std::vector<int64_t>& region_ext,
                     size_t level) const {
    std::map<std::string, Interval> env;
    for (size_t l = 0; l < loops.size(); ++l)
      env[loops[l].var] =
          l < level ? Interval{0, 0} : Interval{0, loops[l].extent - 1};
    double vol = 1.0;
    for (size_t d = 0; d < idx.size(); ++d) {
      Interval iv;
      try {
        iv = interval_of(idx[d], env);
      } catch (const Error&) {
        iv = Interval{0, loops.empty() ? 0 : (int64_t)1 << 20};
      }
      double width = (double)(iv.hi - iv.lo + 1);
      if (d < region_ext.size() && region_ext[d] > 1)
        width += (double)(region_ext[d] - 1);
      vol *= std::max(1.0, width);
    }
    return vol;
  }

  // One access of `buffer` at the current loop depth; region_ext widens the
  // touched box for intrinsic-call regions (scalar accesses pass {}).
  void record(const std::string& buffer, const std::vector<Expr>& idx,
              const std::vector<int64_t>& region_ext) {
    int b = slot(buffer);
    int eb = elem_bytes(buffer);
    double execs = 1.0;
    for (size_t l = loops.size(); l-- > 0;) {
      execs *= (double)loops[l].extent;
      int lv = std::min((int)l, kFeatureLevels - 1);
      double d = distinct_at(idx, region_ext, l);
      acc[b][lv] += execs;
      dist[b][lv] += d;
      touched[b][lv] += d * (double)eb;
    }
  }

  void scan_expr(const Expr& e) {
    if (!e) return;
    if (e->kind == ExprKind::kRead) record(e->name, e->args, {});
    for (const auto& a : e->args) scan_expr(a);
  }

  void scan(const StmtPtr& s) {
    if (!s) return;
    switch (s->kind) {
      case StmtKind::kFor: {
        int lv = std::min((int)loops.size(), kFeatureLevels - 1);
        switch (s->fkind) {
          case ForKind::kVectorized: ann[lv][0] += 1; break;
          case ForKind::kUnrolled: ann[lv][1] += 1; break;
          case ForKind::kParallel: ann[lv][2] += 1; break;
          case ForKind::kVirtualThread: ann[lv][3] += 1; break;
          default: break;
        }
        loops.push_back({s->var, std::max<int64_t>(1, s->extent), s->fkind});
        for (const auto& c : s->body) scan(c);
        loops.pop_back();
        break;
      }
      case StmtKind::kAlloc:
        bytes_of[s->buffer] = dtype_bytes(s->dtype);
        for (const auto& c : s->body) scan(c);
        break;
      case StmtKind::kStore:
        record(s->buffer, s->indices, {});
        scan_expr(s->value);
        break;
      case StmtKind::kGuard:
        scan_expr(s->value);
        for (const auto& c : s->body) scan(c);
        break;
      case StmtKind::kCall: {
        const Intrinsic* intr = find_intrinsic(s->call_name);
        for (const auto& arg : s->call_args) {
          std::vector<int64_t> ext(arg.base.size(), 1);
          if (intr != nullptr) {
            // Widen by the behavior tensor's extent along each bound dim.
            const TensorType* t = nullptr;
            if (intr->behavior->name == arg.behavior_tensor) {
              t = &intr->behavior->out_type;
            } else {
              for (const auto& in : intr->behavior->inputs)
                if (in->name == arg.behavior_tensor) t = &in->type;
            }
            if (t != nullptr)
              for (size_t d = 0;
                   d < arg.axis_dim.size() && d < t->shape.size(); ++d) {
                int ad = arg.axis_dim[d];
                if (ad >= 0 && ad < (int)ext.size()) ext[ad] = t->shape[d];
              }
          }
          record(arg.buffer, arg.base, ext);
          for (const auto& beexpr : arg.base) scan_expr(beexpr);
        }
        break;
      }
      case StmtKind::kSeq:
        for (const auto& c : s->body) scan(c);
        break;
      default:
        break;
    }
  }
};

}  // namespace

FeatureVector extract_features(const LoopProgram& p) {
  Extractor ex;
  for (const auto& par : p.params)
    ex.bytes_of[par.name] = dtype_bytes(par.type.dtype);
  ex.scan(p.root);

  FeatureVector f(kFeatureDim, 0.0);
  for (int b = 0; b < kFeatureBuffers; ++b)
    for (int l = 0; l < kFeatureLevels; ++l) {
      size_t base = (size_t)(b * kFeatureLevels + l) * 3;
      double a = ex.acc[b][l], d = ex.dist[b][l];
      f[base] = a;
      f[base + 1] = a > 0.0 ? a / std::max(1.0, d) : 0.0;
      f[base + 2] = ex.touched[b][l];
    }
  size_t aoff = (size_t)kFeatureBuffers * kFeatureLevels * 3;
  for (int l = 0; l < kFeatureLevels; ++l)
    for (int k = 0; k < 4; ++k) f[aoff + (size_t)l * 4 + (size_t)k] = ex.ann[l][k];
  return f;
}

int64_t interp_cost_proxy(const LoopProgram& p) {
  int64_t stores = 0, iters = 0;
  std::function<void(const StmtPtr&, int64_t)> walk =
      [&](const StmtPtr& s, int64_t mult) {
        if (!s) return;
        switch (s->kind) {
          case StmtKind::kFor:
            iters += mult * s->extent;
            for (const auto& c : s->body) walk(c, mult * s->extent);
            break;
          case StmtKind::kStore:
          case StmtKind::kCall:
            stores += mult;
            break;
          case StmtKind::kSeq:
          case StmtKind::kAlloc:
          case StmtKind::kGuard:
            for (const auto& c : s->body) walk(c, mult);
            break;
          default:
            break;
        }
      };
  walk(p.root, 1);
  return stores + iters;
}

}  // namespace tec
