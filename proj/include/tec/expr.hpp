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
#ifndef TEC_EXPR_HPP_
#define TEC_EXPR_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tec/error.hpp"
#include "vendor/json.hpp"

namespace tec {

/*!
 * \brief One scalar expression language shared by element formulas,
 *        loop bounds, buffer indices and guards.
 *
 * Integer-valued nodes (constants, loop vars, floordiv/mod, comparisons)
 * and float-valued nodes (float consts, exp/sqrt) live in the same tree;
 * the evaluator picks integer or float semantics from context.
 */
enum class ExprKind {
  kIntConst,
  kFloatConst,
  kVar,
  kAdd,
  kSub,
  kMul,
  kDiv,       // float division
  kFloorDiv,  // integer, rounds toward -inf
  kMod,       // integer, sign follows floor division
  kMin,
  kMax,
  kExp,
  kSqrt,
  kSelect,  // args: cond, then, else
  kLT,
  kLE,
  kEQ,
  kAnd,
  kRead,  // name = buffer, args = multi-dim indices
};

struct ExprNode;
using Expr = std::shared_ptr<const ExprNode>;

struct ExprNode {
  ExprKind kind;
  int64_t ival = 0;   // kIntConst
  double fval = 0.0;  // kFloatConst
  std::string name;   // kVar, kRead
  std::vector<Expr> args;
};

Expr make_expr(ExprKind kind, std::vector<Expr> args);

inline Expr cst(int64_t v) {
  auto n = std::make_shared<ExprNode>();
  n->kind = ExprKind::kIntConst;
  n->ival = v;
  return n;
}
inline Expr cstf(double v) {
  auto n = std::make_shared<ExprNode>();
  n->kind = ExprKind::kFloatConst;
  n->fval = v;
  return n;
}
inline Expr var(const std::string& name) {
  auto n = std::make_shared<ExprNode>();
  n->kind = ExprKind::kVar;
  n->name = name;
  return n;
}
Expr read(const std::string& buffer, std::vector<Expr> indices);

inline Expr add(Expr a, Expr b) { return make_expr(ExprKind::kAdd, {a, b}); }
inline Expr sub(Expr a, Expr b) { return make_expr(ExprKind::kSub, {a, b}); }
inline Expr mul(Expr a, Expr b) { return make_expr(ExprKind::kMul, {a, b}); }
inline Expr fdiv(Expr a, Expr b) { return make_expr(ExprKind::kDiv, {a, b}); }
inline Expr floordiv(Expr a, Expr b) {
  return make_expr(ExprKind::kFloorDiv, {a, b});
}
inline Expr mod(Expr a, Expr b) { return make_expr(ExprKind::kMod, {a, b}); }
inline Expr vmin(Expr a, Expr b) { return make_expr(ExprKind::kMin, {a, b}); }
inline Expr vmax(Expr a, Expr b) { return make_expr(ExprKind::kMax, {a, b}); }
inline Expr vexp(Expr a) { return make_expr(ExprKind::kExp, {a}); }
inline Expr vsqrt(Expr a) { return make_expr(ExprKind::kSqrt, {a}); }
inline Expr select(Expr c, Expr t, Expr f) {
  return make_expr(ExprKind::kSelect, {c, t, f});
}
inline Expr lt(Expr a, Expr b) { return make_expr(ExprKind::kLT, {a, b}); }
inline Expr le(Expr a, Expr b) { return make_expr(ExprKind::kLE, {a, b}); }
inline Expr eq(Expr a, Expr b) { return make_expr(ExprKind::kEQ, {a, b}); }
inline Expr land(Expr a, Expr b) { return make_expr(ExprKind::kAnd, {a, b}); }

inline bool is_const_int(const Expr& e, int64_t v) {
  return e->kind == ExprKind::kIntConst && e->ival == v;
}

// Floor division / modulo with the usual non-negative remainder.
inline int64_t floordiv_val(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}
inline int64_t floormod_val(int64_t a, int64_t b) {
  return a - floordiv_val(a, b) * b;
}

/*! \brief Buffer access hook for evaluators. */
class BufferReader {
 public:
  virtual ~BufferReader() = default;
  virtual int64_t read_int(const std::string& buffer,
                           const std::vector<int64_t>& indices) = 0;
  virtual float read_float(const std::string& buffer,
                           const std::vector<int64_t>& indices) = 0;
};

using Env = std::map<std::string, int64_t>;

// Pure index arithmetic; reads and float constants are rejected.
int64_t eval_index(const Expr& e, const Env& env);

// Integer element semantics: every op in int64, reads come from `reader`.
int64_t eval_int(const Expr& e, const Env& env, BufferReader* reader);

// f32 element semantics: every intermediate rounds to float, so results
// are bit-stable across evaluators that share an accumulation order.
float eval_float(const Expr& e, const Env& env, BufferReader* reader);

std::string expr_str(const Expr& e);

Expr substitute(const Expr& e, const std::map<std::string, Expr>& repl);

// Constant folding plus affine canonicalization: sums of scaled vars are
// collected so rebasing differences like (m*16 + mi) - m*16 cancel.
Expr simplify(const Expr& e);

void collect_vars(const Expr& e, std::set<std::string>* out);
struct ReadSite {
  std::string buffer;
  std::vector<Expr> indices;
};
void collect_reads(const Expr& e, std::vector<ReadSite>* out);

// Pure affine view: sum of coeff*var plus base. Fails on any other node.
struct AffineExpr {
  std::map<std::string, int64_t> coeff;
  int64_t base = 0;
};
std::optional<AffineExpr> as_affine(const Expr& e);

nlohmann::json expr_to_json(const Expr& e);
Expr expr_from_json(const nlohmann::json& j);

}  // namespace tec

#endif  // TEC_EXPR_HPP_
