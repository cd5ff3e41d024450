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
#include "tec/loop_ir.hpp"

#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "tec/texpr.hpp"

namespace tec {

const char* for_kind_name(ForKind k) {
  switch (k) {
    case ForKind::kSerial:
      return "serial";
    case ForKind::kUnrolled:
      return "unrolled";
    case ForKind::kVectorized:
      return "vectorized";
    case ForKind::kParallel:
      return "parallel";
    case ForKind::kThreadBinding:
      return "thread_binding";
    case ForKind::kVirtualThread:
      return "vthread";
  }
  return "?";
}

namespace {
ForKind for_kind_from_name(const std::string& s) {
  for (ForKind k : {ForKind::kSerial, ForKind::kUnrolled, ForKind::kVectorized,
                    ForKind::kParallel, ForKind::kThreadBinding,
                    ForKind::kVirtualThread})
    if (s == for_kind_name(k)) return k;
  fail(ErrorCode::kIOError, "unknown loop kind '" + s + "'");
}
}  // namespace

StmtPtr make_for(std::string var, int64_t extent, ForKind kind,
                 std::string thread_tag, StmtPtr body) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::kFor;
  s->var = std::move(var);
  s->extent = extent;
  s->fkind = kind;
  s->thread_tag = std::move(thread_tag);
  s->body = {std::move(body)};
  return s;
}

StmtPtr make_seq(std::vector<StmtPtr> stmts) {
  if (stmts.size() == 1) return stmts[0];
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::kSeq;
  s->body = std::move(stmts);
  return s;
}

StmtPtr make_alloc(std::string buffer, MemoryScope scope, DType dtype,
                   std::vector<int64_t> extents, StmtPtr body) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::kAlloc;
  s->buffer = std::move(buffer);
  s->scope = scope;
  s->dtype = dtype;
  s->extents = std::move(extents);
  s->body = {std::move(body)};
  return s;
}

StmtPtr make_store(std::string buffer, std::vector<Expr> indices, Expr value) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::kStore;
  s->buffer = std::move(buffer);
  s->indices = std::move(indices);
  s->value = std::move(value);
  return s;
}

StmtPtr make_guard(Expr cond, StmtPtr body) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::kGuard;
  s->value = std::move(cond);
  s->body = {std::move(body)};
  return s;
}

StmtPtr make_barrier() {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::kBarrier;
  return s;
}

StmtPtr make_call(std::string name, std::vector<RegionArg> args) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::kCall;
  s->call_name = std::move(name);
  s->call_args = std::move(args);
  return s;
}

namespace {

void print_rec(const StmtPtr& s, int indent, std::ostringstream& os) {
  std::string pad(indent * 2, ' ');
  switch (s->kind) {
    case StmtKind::kSeq:
      for (const auto& c : s->body) print_rec(c, indent, os);
      return;
    case StmtKind::kFor: {
      os << pad;
      if (s->fkind == ForKind::kThreadBinding ||
          s->fkind == ForKind::kVirtualThread) {
        os << "for (" << s->var << ", 0, " << s->extent << ") bind("
           << s->thread_tag << ") {\n";
      } else if (s->fkind != ForKind::kSerial) {
        os << for_kind_name(s->fkind) << " for (" << s->var << ", 0, "
           << s->extent << ") {\n";
      } else {
        os << "for (" << s->var << ", 0, " << s->extent << ") {\n";
      }
      print_rec(s->body[0], indent + 1, os);
      os << pad << "}\n";
      return;
    }
    case StmtKind::kAlloc: {
      os << pad << "alloc " << s->buffer << ": " << dtype_name(s->dtype) << '[';
      for (size_t i = 0; i < s->extents.size(); ++i) {
        if (i) os << ", ";
        os << s->extents[i];
      }
      os << "] @" << scope_name(s->scope) << " {\n";
      print_rec(s->body[0], indent + 1, os);
      os << pad << "}\n";
      return;
    }
    case StmtKind::kStore: {
      os << pad << s->buffer << '[';
      for (size_t i = 0; i < s->indices.size(); ++i) {
        if (i) os << ", ";
        os << expr_str(s->indices[i]);
      }
      os << "] = " << expr_str(s->value) << "\n";
      return;
    }
    case StmtKind::kGuard:
      os << pad << "if " << expr_str(s->value) << " {\n";
      print_rec(s->body[0], indent + 1, os);
      os << pad << "}\n";
      return;
    case StmtKind::kBarrier:
      os << pad << "barrier\n";
      return;
    case StmtKind::kCall: {
      os << pad << s->call_name << '(';
      for (size_t i = 0; i < s->call_args.size(); ++i) {
        const RegionArg& a = s->call_args[i];
        if (i) os << ", ";
        os << a.behavior_tensor << '=' << a.buffer << "[";
        for (size_t d = 0; d < a.base.size(); ++d) {
          if (d) os << ", ";
          os << expr_str(a.base[d]);
        }
        os << "]<";
        for (size_t d = 0; d < a.axis_dim.size(); ++d) {
          if (d) os << ',';
          os << a.axis_dim[d];
        }
        os << '>';
      }
      os << ")\n";
      return;
    }
  }
}

}  // namespace

std::string print_stmt(const StmtPtr& s, int indent) {
  std::ostringstream os;
  print_rec(s, indent, os);
  return os.str();
}

std::string print_program(const LoopProgram& p) {
  std::ostringstream os;
  os << "program " << p.name << '(';
  bool first = true;
  for (const auto& prm : p.params) {
    if (prm.is_output) continue;
    if (!first) os << ", ";
    first = false;
    os << prm.name << ": " << prm.type.str();
  }
  os << ") -> (";
  first = true;
  for (const auto& prm : p.params) {
    if (!prm.is_output) continue;
    if (!first) os << ", ";
    first = false;
    os << prm.name << ": " << prm.type.str();
  }
  os << ") {\n";
  os << print_stmt(p.root, 1);
  os << "}\n";
  return os.str();
}

namespace {

nlohmann::json stmt_to_json(const StmtPtr& s) {
  nlohmann::json j;
  switch (s->kind) {
    case StmtKind::kSeq: {
      j["s"] = "seq";
      nlohmann::json b = nlohmann::json::array();
      for (const auto& c : s->body) b.push_back(stmt_to_json(c));
      j["body"] = std::move(b);
      return j;
    }
    case StmtKind::kFor:
      j["s"] = "for";
      j["var"] = s->var;
      j["extent"] = s->extent;
      j["kind"] = for_kind_name(s->fkind);
      if (!s->thread_tag.empty()) j["tag"] = s->thread_tag;
      j["body"] = stmt_to_json(s->body[0]);
      return j;
    case StmtKind::kAlloc:
      j["s"] = "alloc";
      j["buffer"] = s->buffer;
      j["scope"] = scope_name(s->scope);
      j["dtype"] = dtype_name(s->dtype);
      j["extents"] = s->extents;
      j["body"] = stmt_to_json(s->body[0]);
      return j;
    case StmtKind::kStore: {
      j["s"] = "store";
      j["buffer"] = s->buffer;
      nlohmann::json idx = nlohmann::json::array();
      for (const auto& e : s->indices) idx.push_back(expr_to_json(e));
      j["indices"] = std::move(idx);
      j["value"] = expr_to_json(s->value);
      return j;
    }
    case StmtKind::kGuard:
      j["s"] = "guard";
      j["cond"] = expr_to_json(s->value);
      j["body"] = stmt_to_json(s->body[0]);
      return j;
    case StmtKind::kBarrier:
      j["s"] = "barrier";
      return j;
    case StmtKind::kCall: {
      j["s"] = "call";
      j["name"] = s->call_name;
      nlohmann::json args = nlohmann::json::array();
      for (const auto& a : s->call_args) {
        nlohmann::json aj;
        aj["tensor"] = a.behavior_tensor;
        aj["buffer"] = a.buffer;
        nlohmann::json base = nlohmann::json::array();
        for (const auto& e : a.base) base.push_back(expr_to_json(e));
        aj["base"] = std::move(base);
        aj["axis_dim"] = a.axis_dim;
        args.push_back(std::move(aj));
      }
      j["args"] = std::move(args);
      return j;
    }
  }
  return j;
}

StmtPtr stmt_from_json(const nlohmann::json& j) {
  const std::string s = j.at("s").get<std::string>();
  if (s == "seq") {
    std::vector<StmtPtr> body;
    for (const auto& c : j.at("body")) body.push_back(stmt_from_json(c));
    return make_seq(std::move(body));
  }
  if (s == "for") {
    return make_for(j.at("var").get<std::string>(), j.at("extent").get<int64_t>(),
                    for_kind_from_name(j.at("kind").get<std::string>()),
                    j.contains("tag") ? j.at("tag").get<std::string>() : "",
                    stmt_from_json(j.at("body")));
  }
  if (s == "alloc") {
    return make_alloc(j.at("buffer").get<std::string>(),
                      scope_from_name(j.at("scope").get<std::string>()),
                      dtype_from_name(j.at("dtype").get<std::string>()),
                      j.at("extents").get<std::vector<int64_t>>(),
                      stmt_from_json(j.at("body")));
  }
  if (s == "store") {
    std::vector<Expr> idx;
    for (const auto& e : j.at("indices")) idx.push_back(expr_from_json(e));
    return make_store(j.at("buffer").get<std::string>(), std::move(idx),
                      expr_from_json(j.at("value")));
  }
  if (s == "guard")
    return make_guard(expr_from_json(j.at("cond")), stmt_from_json(j.at("body")));
  if (s == "barrier") return make_barrier();
  if (s == "call") {
    std::vector<RegionArg> args;
    for (const auto& aj : j.at("args")) {
      RegionArg a;
      a.behavior_tensor = aj.at("tensor").get<std::string>();
      a.buffer = aj.at("buffer").get<std::string>();
      for (const auto& e : aj.at("base")) a.base.push_back(expr_from_json(e));
      a.axis_dim = aj.at("axis_dim").get<std::vector<int>>();
      args.push_back(std::move(a));
    }
    return make_call(j.at("name").get<std::string>(), std::move(args));
  }
  fail(ErrorCode::kIOError, "unknown statement kind '" + s + "'");
}

}  // namespace

nlohmann::json program_to_json(const LoopProgram& p) {
  nlohmann::json j;
  j["name"] = p.name;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& prm : p.params) {
    params.push_back({{"name", prm.name},
                      {"shape", prm.type.shape},
                      {"dtype", dtype_name(prm.type.dtype)},
                      {"output", prm.is_output}});
  }
  j["params"] = std::move(params);
  j["root"] = stmt_to_json(p.root);
  return j;
}

LoopProgram program_from_json(const nlohmann::json& j) {
  LoopProgram p;
  p.name = j.at("name").get<std::string>();
  for (const auto& pj : j.at("params")) {
    ParamDecl d;
    d.name = pj.at("name").get<std::string>();
    d.type = TensorType(pj.at("shape").get<std::vector<int64_t>>(),
                        dtype_from_name(pj.at("dtype").get<std::string>()));
    d.is_output = pj.at("output").get<bool>();
    p.params.push_back(std::move(d));
  }
  p.root = stmt_from_json(j.at("root"));
  return p;
}

void walk_stmts(const StmtPtr& s, const std::function<void(const Stmt&)>& fn) {
  fn(*s);
  for (const auto& c : s->body) walk_stmts(c, fn);
}

namespace {

int64_t arith_nodes(const Expr& e) {
  if (!e) return 0;
  int64_t n = 0;
  switch (e->kind) {
    case ExprKind::kAdd:
    case ExprKind::kSub:
    case ExprKind::kMul:
    case ExprKind::kDiv:
    case ExprKind::kFloorDiv:
    case ExprKind::kMod:
    case ExprKind::kMin:
    case ExprKind::kMax:
    case ExprKind::kExp:
    case ExprKind::kSqrt:
      n = 1;
      break;
    default:
      break;
  }
  for (const auto& arg : e->args) n += arith_nodes(arg);
  return n;
}

// Static profile of one store or call site, computed once and scaled by how
// often the site executes.
struct SiteProfile {
  bool is_copy = false;
  std::string copy_src;
  int64_t ops_per_exec = 0;
  std::vector<std::string> direct_reads;   // non-copy only
  std::vector<std::string> direct_writes;  // non-copy only
};

struct CountWalker {
  const LoopProgram& p;
  std::map<std::string, std::pair<DType, int64_t>> buffers;  // dtype, elems
  std::map<std::string, MemoryScope> scopes;
  std::map<const Stmt*, SiteProfile> sites;
  std::map<const Stmt*, int64_t> execs;
  Env env;

  explicit CountWalker(const LoopProgram& prog) : p(prog) {
    for (const auto& prm : p.params) {
      buffers[prm.name] = {prm.type.dtype, prm.type.num_elements()};
      scopes[prm.name] = MemoryScope::kGlobal;
    }
  }

  bool in_dram(const std::string& name) const {
    auto it = scopes.find(name);
    return it == scopes.end() || it->second == MemoryScope::kGlobal;
  }

  const SiteProfile& profile(const Stmt& s) {
    auto it = sites.find(&s);
    if (it != sites.end()) return it->second;
    SiteProfile prof;
    if (s.kind == StmtKind::kStore) {
      if (s.value && s.value->kind == ExprKind::kRead) {
        prof.is_copy = true;
        prof.copy_src = s.value->name;
      } else {
        prof.ops_per_exec = arith_nodes(s.value);
        prof.direct_writes.push_back(s.buffer);
        std::vector<ReadSite> reads;
        collect_reads(s.value, &reads);
        for (const auto& r : reads)
          if (r.buffer != s.buffer)  // accumulator self-reads are free
            prof.direct_reads.push_back(r.buffer);
      }
    } else {  // kCall
      const Intrinsic* intr = find_intrinsic(s.call_name);
      TEC_CHECK(intr != nullptr, "call of unregistered intrinsic");
      const ComputeOpNode* beh = intr->behavior.get();
      int64_t points = 1;
      for (const auto& a : beh->axis) points *= a.extent;
      for (const auto& a : beh->reduce_axis) points *= a.extent;
      // The reduction fold is an arithmetic op the body does not spell out.
      int64_t fold = beh->reducer != Reducer::kNone ? 1 : 0;
      prof.ops_per_exec = points * (arith_nodes(beh->body) + fold);
      for (const auto& ra : s.call_args) {
        if (ra.behavior_tensor == beh->name)
          prof.direct_writes.push_back(ra.buffer);
        else
          prof.direct_reads.push_back(ra.buffer);
      }
    }
    return sites.emplace(&s, std::move(prof)).first->second;
  }

  void walk(const Stmt& s) {
    switch (s.kind) {
      case StmtKind::kSeq:
        for (const auto& c : s.body) walk(*c);
        return;
      case StmtKind::kAlloc:
        buffers[s.buffer] = {
            s.dtype,
            std::accumulate(s.extents.begin(), s.extents.end(), int64_t{1},
                            std::multiplies<int64_t>())};
        scopes[s.buffer] = s.scope;
        for (const auto& c : s.body) walk(*c);
        return;
      case StmtKind::kGuard:
        if (eval_index(s.value, env) != 0)
          for (const auto& c : s.body) walk(*c);
        return;
      case StmtKind::kBarrier:
        return;
      case StmtKind::kFor:
        for (int64_t i = 0; i < s.extent; ++i) {
          env[s.var] = i;
          for (const auto& c : s.body) walk(*c);
        }
        env.erase(s.var);
        return;
      case StmtKind::kStore:
      case StmtKind::kCall:
        profile(s);
        ++execs[&s];
        return;
    }
  }
};

}  // namespace

FlopByteCount count_flops_and_bytes(const LoopProgram& p) {
  register_builtin_intrinsics();
  CountWalker w(p);
  if (p.root) w.walk(*p.root);

  FlopByteCount out;
  std::set<std::string> direct_read, direct_write;
  for (const auto& [stmt, n] : w.execs) {
    const SiteProfile& prof = w.sites.at(stmt);
    if (prof.is_copy) {
      // DMA-style transfers are charged per element actually copied.
      int64_t src_b =
          n * dtype_bytes(w.buffers.at(prof.copy_src).first);
      int64_t dst_b = n * dtype_bytes(w.buffers.at(stmt->buffer).first);
      if (w.in_dram(prof.copy_src)) out.bytes_loaded += src_b;
      if (w.in_dram(stmt->buffer)) out.bytes_stored += dst_b;
      continue;
    }
    out.mul_add_ops += n * prof.ops_per_exec;
    for (const auto& b : prof.direct_reads) direct_read.insert(b);
    for (const auto& b : prof.direct_writes) direct_write.insert(b);
  }

  // Compute that touches DRAM directly streams each such operand once.
  for (const auto& b : direct_read) {
    if (!w.in_dram(b) || direct_write.count(b)) continue;
    const auto& [dt, elems] = w.buffers.at(b);
    out.bytes_loaded += elems * dtype_bytes(dt);
  }
  for (const auto& b : direct_write) {
    if (!w.in_dram(b)) continue;
    const auto& [dt, elems] = w.buffers.at(b);
    out.bytes_stored += elems * dtype_bytes(dt);
  }
  return out;
}

}  // namespace tec
