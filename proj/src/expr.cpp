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
#include "tec/expr.hpp"

#include <cmath>
#include <sstream>

namespace tec {

Expr make_expr(ExprKind kind, std::vector<Expr> args) {
  auto n = std::make_shared<ExprNode>();
  n->kind = kind;
  n->args = std::move(args);
  return n;
}

Expr read(const std::string& buffer, std::vector<Expr> indices) {
  auto n = std::make_shared<ExprNode>();
  n->kind = ExprKind::kRead;
  n->name = buffer;
  n->args = std::move(indices);
  return n;
}

int64_t eval_index(const Expr& e, const Env& env) {
  switch (e->kind) {
    case ExprKind::kIntConst:
      return e->ival;
    case ExprKind::kVar: {
      auto it = env.find(e->name);
      if (it == env.end())
        fail(ErrorCode::kInternal, "unbound var " + e->name);
      return it->second;
    }
    case ExprKind::kAdd:
      return eval_index(e->args[0], env) + eval_index(e->args[1], env);
    case ExprKind::kSub:
      return eval_index(e->args[0], env) - eval_index(e->args[1], env);
    case ExprKind::kMul:
      return eval_index(e->args[0], env) * eval_index(e->args[1], env);
    case ExprKind::kFloorDiv:
      return floordiv_val(eval_index(e->args[0], env),
                          eval_index(e->args[1], env));
    case ExprKind::kMod:
      return floormod_val(eval_index(e->args[0], env),
                          eval_index(e->args[1], env));
    case ExprKind::kMin:
      return std::min(eval_index(e->args[0], env), eval_index(e->args[1], env));
    case ExprKind::kMax:
      return std::max(eval_index(e->args[0], env), eval_index(e->args[1], env));
    case ExprKind::kSelect:
      return eval_index(e->args[0], env) != 0 ? eval_index(e->args[1], env)
                                              : eval_index(e->args[2], env);
    case ExprKind::kLT:
      return eval_index(e->args[0], env) < eval_index(e->args[1], env) ? 1 : 0;
    case ExprKind::kLE:
      return eval_index(e->args[0], env) <= eval_index(e->args[1], env) ? 1 : 0;
    case ExprKind::kEQ:
      return eval_index(e->args[0], env) == eval_index(e->args[1], env) ? 1 : 0;
    case ExprKind::kAnd:
      return (eval_index(e->args[0], env) != 0 &&
              eval_index(e->args[1], env) != 0)
                 ? 1
                 : 0;
    default:
      fail(ErrorCode::kInternal,
           "expression is not index arithmetic: " + expr_str(e));
  }
}

namespace {

std::vector<int64_t> eval_indices(const std::vector<Expr>& idx, const Env& env) {
  std::vector<int64_t> out;
  out.reserve(idx.size());
  for (const auto& e : idx) out.push_back(eval_index(e, env));
  return out;
}

}  // namespace

int64_t eval_int(const Expr& e, const Env& env, BufferReader* reader) {
  switch (e->kind) {
    case ExprKind::kRead:
      return reader->read_int(e->name, eval_indices(e->args, env));
    case ExprKind::kAdd:
      return eval_int(e->args[0], env, reader) +
             eval_int(e->args[1], env, reader);
    case ExprKind::kSub:
      return eval_int(e->args[0], env, reader) -
             eval_int(e->args[1], env, reader);
    case ExprKind::kMul:
      return eval_int(e->args[0], env, reader) *
             eval_int(e->args[1], env, reader);
    case ExprKind::kMin:
      return std::min(eval_int(e->args[0], env, reader),
                      eval_int(e->args[1], env, reader));
    case ExprKind::kMax:
      return std::max(eval_int(e->args[0], env, reader),
                      eval_int(e->args[1], env, reader));
    case ExprKind::kSelect:
      return eval_index(e->args[0], env) != 0
                 ? eval_int(e->args[1], env, reader)
                 : eval_int(e->args[2], env, reader);
    case ExprKind::kDiv:
    case ExprKind::kExp:
    case ExprKind::kSqrt:
    case ExprKind::kFloatConst:
      fail(ErrorCode::kInternal,
           "float-only op in integer element expression: " + expr_str(e));
    default:
      return eval_index(e, env);
  }
}

float eval_float(const Expr& e, const Env& env, BufferReader* reader) {
  switch (e->kind) {
    case ExprKind::kFloatConst:
      return static_cast<float>(e->fval);
    case ExprKind::kIntConst:
      return static_cast<float>(e->ival);
    case ExprKind::kRead:
      return reader->read_float(e->name, eval_indices(e->args, env));
    case ExprKind::kAdd:
      return eval_float(e->args[0], env, reader) +
             eval_float(e->args[1], env, reader);
    case ExprKind::kSub:
      return eval_float(e->args[0], env, reader) -
             eval_float(e->args[1], env, reader);
    case ExprKind::kMul:
      return eval_float(e->args[0], env, reader) *
             eval_float(e->args[1], env, reader);
    case ExprKind::kDiv:
      return eval_float(e->args[0], env, reader) /
             eval_float(e->args[1], env, reader);
    case ExprKind::kMin:
      return std::min(eval_float(e->args[0], env, reader),
                      eval_float(e->args[1], env, reader));
    case ExprKind::kMax:
      return std::max(eval_float(e->args[0], env, reader),
                      eval_float(e->args[1], env, reader));
    case ExprKind::kExp:
      return std::exp(eval_float(e->args[0], env, reader));
    case ExprKind::kSqrt:
      return std::sqrt(eval_float(e->args[0], env, reader));
    case ExprKind::kSelect:
      // Select conditions are index arithmetic (loop vars, extents).
      return eval_index(e->args[0], env) != 0
                 ? eval_float(e->args[1], env, reader)
                 : eval_float(e->args[2], env, reader);
    default:
      return static_cast<float>(eval_index(e, env));
  }
}

namespace {

const char* infix_symbol(ExprKind k) {
  switch (k) {
    case ExprKind::kAdd:
      return " + ";
    case ExprKind::kSub:
      return " - ";
    case ExprKind::kMul:
      return "*";
    case ExprKind::kDiv:
      return "/";
    case ExprKind::kFloorDiv:
      return " // ";
    case ExprKind::kMod:
      return " % ";
    case ExprKind::kLT:
      return " < ";
    case ExprKind::kLE:
      return " <= ";
    case ExprKind::kEQ:
      return " == ";
    case ExprKind::kAnd:
      return " && ";
    default:
      return nullptr;
  }
}

void print_expr(const Expr& e, std::ostream& os) {
  switch (e->kind) {
    case ExprKind::kIntConst:
      os << e->ival;
      return;
    case ExprKind::kFloatConst: {
      std::ostringstream tmp;
      tmp << e->fval;
      os << tmp.str();
      if (tmp.str().find_first_of(".e") == std::string::npos) os << ".0";
      os << 'f';
      return;
    }
    case ExprKind::kVar:
      os << e->name;
      return;
    case ExprKind::kRead: {
      os << e->name << '[';
      for (size_t i = 0; i < e->args.size(); ++i) {
        if (i) os << ", ";
        print_expr(e->args[i], os);
      }
      os << ']';
      return;
    }
    case ExprKind::kMin:
    case ExprKind::kMax:
      os << (e->kind == ExprKind::kMin ? "min(" : "max(");
      print_expr(e->args[0], os);
      os << ", ";
      print_expr(e->args[1], os);
      os << ')';
      return;
    case ExprKind::kExp:
    case ExprKind::kSqrt:
      os << (e->kind == ExprKind::kExp ? "exp(" : "sqrt(");
      print_expr(e->args[0], os);
      os << ')';
      return;
    case ExprKind::kSelect:
      os << "select(";
      print_expr(e->args[0], os);
      os << ", ";
      print_expr(e->args[1], os);
      os << ", ";
      print_expr(e->args[2], os);
      os << ')';
      return;
    default: {
      const char* sym = infix_symbol(e->kind);
      os << '(';
      print_expr(e->args[0], os);
      os << sym;
      print_expr(e->args[1], os);
      os << ')';
      return;
    }
  }
}

}  // namespace

std::string expr_str(const Expr& e) {
  std::ostringstream os;
  print_expr(e, os);
  return os.str();
}

Expr substitute(const Expr& e, const std::map<std::string, Expr>& repl) {
  if (e->kind == ExprKind::kVar) {
    auto it = repl.find(e->name);
    return it != repl.end() ? it->second : e;
  }
  if (e->args.empty()) return e;
  std::vector<Expr> args;
  args.reserve(e->args.size());
  bool changed = false;
  for (const auto& a : e->args) {
    Expr s = substitute(a, repl);
    changed |= (s != a);
    args.push_back(s);
  }
  if (!changed) return e;
  auto n = std::make_shared<ExprNode>(*e);
  n->args = std::move(args);
  return n;
}

namespace {

// Affine accumulator with a list of non-affine residual terms. Each
// residual carries an integer multiplier.
struct AffAcc {
  std::map<std::string, int64_t> coeff;
  int64_t base = 0;
  std::vector<std::pair<Expr, int64_t>> residual;
};

void acc_expr(const Expr& e, int64_t scale, AffAcc* acc);

Expr rebuild_affine(const AffAcc& acc) {
  Expr out = nullptr;
  auto append = [&](Expr term) {
    out = out ? add(out, term) : term;
  };
  for (const auto& [v, c] : acc.coeff) {
    if (c == 0) continue;
    if (c == 1)
      append(var(v));
    else
      append(mul(var(v), cst(c)));
  }
  for (const auto& [t, c] : acc.residual) {
    if (c == 0) continue;
    if (c == 1)
      append(t);
    else
      append(mul(t, cst(c)));
  }
  if (acc.base != 0 || out == nullptr) append(cst(acc.base));
  return out;
}

void acc_expr(const Expr& e, int64_t scale, AffAcc* acc) {
  if (scale == 0) return;
  switch (e->kind) {
    case ExprKind::kIntConst:
      acc->base += scale * e->ival;
      return;
    case ExprKind::kVar:
      acc->coeff[e->name] += scale;
      return;
    case ExprKind::kAdd:
      acc_expr(e->args[0], scale, acc);
      acc_expr(e->args[1], scale, acc);
      return;
    case ExprKind::kSub:
      acc_expr(e->args[0], scale, acc);
      acc_expr(e->args[1], -scale, acc);
      return;
    case ExprKind::kMul: {
      const Expr& a = e->args[0];
      const Expr& b = e->args[1];
      if (b->kind == ExprKind::kIntConst) {
        acc_expr(a, scale * b->ival, acc);
        return;
      }
      if (a->kind == ExprKind::kIntConst) {
        acc_expr(b, scale * a->ival, acc);
        return;
      }
      acc->residual.emplace_back(e, scale);
      return;
    }
    default:
      acc->residual.emplace_back(e, scale);
      return;
  }
}

bool is_integer_node(const Expr& e) {
  switch (e->kind) {
    case ExprKind::kIntConst:
    case ExprKind::kVar:
    case ExprKind::kAdd:
    case ExprKind::kSub:
    case ExprKind::kMul:
    case ExprKind::kFloorDiv:
    case ExprKind::kMod:
      return true;
    default:
      return false;
  }
}

}  // namespace

Expr simplify(const Expr& e) {
  // Simplify children first.
  Expr cur = e;
  if (!e->args.empty()) {
    std::vector<Expr> args;
    args.reserve(e->args.size());
    bool changed = false;
    for (const auto& a : e->args) {
      Expr s = simplify(a);
      changed |= (s != a);
      args.push_back(s);
    }
    if (changed) {
      auto n = std::make_shared<ExprNode>(*e);
      n->args = std::move(args);
      cur = n;
    }
  }

  switch (cur->kind) {
    case ExprKind::kAdd:
    case ExprKind::kSub: {
      AffAcc acc;
      acc_expr(cur, 1, &acc);
      // Residuals were already simplified as children; just rebuild.
      return rebuild_affine(acc);
    }
    case ExprKind::kMul: {
      const Expr& a = cur->args[0];
      const Expr& b = cur->args[1];
      if (is_const_int(a, 0) || is_const_int(b, 0)) return cst(0);
      if (is_const_int(a, 1)) return b;
      if (is_const_int(b, 1)) return a;
      if (a->kind == ExprKind::kIntConst && b->kind == ExprKind::kIntConst)
        return cst(a->ival * b->ival);
      if (a->kind == ExprKind::kIntConst || b->kind == ExprKind::kIntConst) {
        AffAcc acc;
        acc_expr(cur, 1, &acc);
        return rebuild_affine(acc);
      }
      return cur;
    }
    case ExprKind::kFloorDiv:
    case ExprKind::kMod: {
      const Expr& a = cur->args[0];
      const Expr& b = cur->args[1];
      if (is_const_int(b, 1))
        return cur->kind == ExprKind::kFloorDiv ? a : cst(0);
      if (a->kind == ExprKind::kIntConst && b->kind == ExprKind::kIntConst &&
          b->ival != 0) {
        return cst(cur->kind == ExprKind::kFloorDiv
                       ? floordiv_val(a->ival, b->ival)
                       : floormod_val(a->ival, b->ival));
      }
      return cur;
    }
    case ExprKind::kMin:
    case ExprKind::kMax: {
      const Expr& a = cur->args[0];
      const Expr& b = cur->args[1];
      if (a->kind == ExprKind::kIntConst && b->kind == ExprKind::kIntConst)
        return cst(cur->kind == ExprKind::kMin ? std::min(a->ival, b->ival)
                                               : std::max(a->ival, b->ival));
      return cur;
    }
    case ExprKind::kLT:
    case ExprKind::kLE:
    case ExprKind::kEQ: {
      const Expr& a = cur->args[0];
      const Expr& b = cur->args[1];
      if (a->kind == ExprKind::kIntConst && b->kind == ExprKind::kIntConst) {
        Env empty;
        return cst(eval_index(cur, empty));
      }
      return cur;
    }
    case ExprKind::kAnd: {
      if (is_const_int(cur->args[0], 1)) return cur->args[1];
      if (is_const_int(cur->args[1], 1)) return cur->args[0];
      if (is_const_int(cur->args[0], 0) || is_const_int(cur->args[1], 0))
        return cst(0);
      return cur;
    }
    case ExprKind::kSelect: {
      if (cur->args[0]->kind == ExprKind::kIntConst)
        return cur->args[0]->ival != 0 ? cur->args[1] : cur->args[2];
      return cur;
    }
    default:
      return cur;
  }
}

void collect_vars(const Expr& e, std::set<std::string>* out) {
  if (e->kind == ExprKind::kVar) out->insert(e->name);
  for (const auto& a : e->args) collect_vars(a, out);
}

void collect_reads(const Expr& e, std::vector<ReadSite>* out) {
  if (e->kind == ExprKind::kRead) out->push_back({e->name, e->args});
  for (const auto& a : e->args) collect_reads(a, out);
}

std::optional<AffineExpr> as_affine(const Expr& e) {
  if (!is_integer_node(e) && e->kind != ExprKind::kIntConst) {
    if (e->kind != ExprKind::kAdd && e->kind != ExprKind::kSub &&
        e->kind != ExprKind::kMul && e->kind != ExprKind::kVar &&
        e->kind != ExprKind::kIntConst)
      return std::nullopt;
  }
  AffAcc acc;
  acc_expr(e, 1, &acc);
  if (!acc.residual.empty()) return std::nullopt;
  AffineExpr out;
  for (const auto& [v, c] : acc.coeff)
    if (c != 0) out.coeff[v] = c;
  out.base = acc.base;
  return out;
}

nlohmann::json expr_to_json(const Expr& e) {
  nlohmann::json j;
  switch (e->kind) {
    case ExprKind::kIntConst:
      return nlohmann::json{{"k", "int"}, {"v", e->ival}};
    case ExprKind::kFloatConst:
      return nlohmann::json{{"k", "float"}, {"v", e->fval}};
    case ExprKind::kVar:
      return nlohmann::json{{"k", "var"}, {"n", e->name}};
    default:
      break;
  }
  static const std::map<ExprKind, std::string> kNames = {
      {ExprKind::kAdd, "add"},     {ExprKind::kSub, "sub"},
      {ExprKind::kMul, "mul"},     {ExprKind::kDiv, "div"},
      {ExprKind::kFloorDiv, "floordiv"}, {ExprKind::kMod, "mod"},
      {ExprKind::kMin, "min"},     {ExprKind::kMax, "max"},
      {ExprKind::kExp, "exp"},     {ExprKind::kSqrt, "sqrt"},
      {ExprKind::kSelect, "select"}, {ExprKind::kLT, "lt"},
      {ExprKind::kLE, "le"},       {ExprKind::kEQ, "eq"},
      {ExprKind::kAnd, "and"},     {ExprKind::kRead, "read"}};
  j["k"] = kNames.at(e->kind);
  if (e->kind == ExprKind::kRead) j["n"] = e->name;
  nlohmann::json args = nlohmann::json::array();
  for (const auto& a : e->args) args.push_back(expr_to_json(a));
  j["a"] = std::move(args);
  return j;
}

Expr expr_from_json(const nlohmann::json& j) {
  const std::string k = j.at("k").get<std::string>();
  if (k == "int") return cst(j.at("v").get<int64_t>());
  if (k == "float") return cstf(j.at("v").get<double>());
  if (k == "var") return var(j.at("n").get<std::string>());
  static const std::map<std::string, ExprKind> kKinds = {
      {"add", ExprKind::kAdd},     {"sub", ExprKind::kSub},
      {"mul", ExprKind::kMul},     {"div", ExprKind::kDiv},
      {"floordiv", ExprKind::kFloorDiv}, {"mod", ExprKind::kMod},
      {"min", ExprKind::kMin},     {"max", ExprKind::kMax},
      {"exp", ExprKind::kExp},     {"sqrt", ExprKind::kSqrt},
      {"select", ExprKind::kSelect}, {"lt", ExprKind::kLT},
      {"le", ExprKind::kLE},       {"eq", ExprKind::kEQ},
      {"and", ExprKind::kAnd},     {"read", ExprKind::kRead}};
  auto it = kKinds.find(k);
  if (it == kKinds.end())
    fail(ErrorCode::kIOError, "unknown expression kind '" + k + "'");
  std::vector<Expr> args;
  for (const auto& a : j.at("a")) args.push_back(expr_from_json(a));
  if (it->second == ExprKind::kRead)
    return read(j.at("n").get<std::string>(), std::move(args));
  return make_expr(it->second, std::move(args));
}

}  // namespace tec
