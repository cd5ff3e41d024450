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
#ifndef TEC_LOOP_IR_HPP_
#define TEC_LOOP_IR_HPP_

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tec/expr.hpp"
#include "tec/scope.hpp"
#include "tec/tensor.hpp"

namespace tec {

enum class ForKind {
  kSerial,
  kUnrolled,
  kVectorized,
  kParallel,
  kThreadBinding,   // thread_tag holds blockIdx.* / threadIdx.*
  kVirtualThread,   // thread_tag == "vthread"
};

const char* for_kind_name(ForKind k);

enum class StmtKind { kFor, kSeq, kAlloc, kStore, kGuard, kBarrier, kCall };

struct Stmt;
using StmtPtr = std::shared_ptr<const Stmt>;

/*! \brief Operand binding of an intrinsic call site. */
struct RegionArg {
  std::string behavior_tensor;  // tensor name inside the intrinsic behavior
  std::string buffer;           // concrete buffer at the call site
  std::vector<Expr> base;       // origin, one entry per buffer dimension
  std::vector<int> axis_dim;    // behavior dim d reads buffer dim axis_dim[d]
};

struct Stmt {
  StmtKind kind;

  // kFor
  std::string var;
  int64_t extent = 0;
  ForKind fkind = ForKind::kSerial;
  std::string thread_tag;

  // kAlloc (buffer decl) and kStore (destination)
  std::string buffer;
  MemoryScope scope = MemoryScope::kGlobal;
  DType dtype = DType::kF32;
  std::vector<int64_t> extents;

  // kStore: indices/value. kGuard: value holds the condition.
  std::vector<Expr> indices;
  Expr value;

  // kCall
  std::string call_name;
  std::vector<RegionArg> call_args;

  // kSeq: all children; kFor/kAlloc/kGuard: body.front()
  std::vector<StmtPtr> body;
};

StmtPtr make_for(std::string var, int64_t extent, ForKind kind,
                 std::string thread_tag, StmtPtr body);
StmtPtr make_seq(std::vector<StmtPtr> stmts);
StmtPtr make_alloc(std::string buffer, MemoryScope scope, DType dtype,
                   std::vector<int64_t> extents, StmtPtr body);
StmtPtr make_store(std::string buffer, std::vector<Expr> indices, Expr value);
StmtPtr make_guard(Expr cond, StmtPtr body);
StmtPtr make_barrier();
StmtPtr make_call(std::string name, std::vector<RegionArg> args);

struct ParamDecl {
  std::string name;
  TensorType type;
  bool is_output = false;
};

/*!
 * \brief An imperative loop-nest program over named buffers.
 *
 * Parameters are Global buffers; internal buffers are introduced by
 * Alloc nodes. All extents are static.
 */
struct LoopProgram {
  std::string name;
  std::vector<ParamDecl> params;
  StmtPtr root;

  const ParamDecl* find_param(const std::string& n) const {
    for (const auto& p : params)
      if (p.name == n) return &p;
    return nullptr;
  }
};

std::string print_program(const LoopProgram& p);
std::string print_stmt(const StmtPtr& s, int indent = 0);

nlohmann::json program_to_json(const LoopProgram& p);
LoopProgram program_from_json(const nlohmann::json& j);

/*!
 * \brief Exact static operation and DRAM-traffic counts.
 *
 * Arithmetic is counted per executed store (guards evaluated, loops
 * enumerated); intrinsic calls contribute their behavior's counts. Bytes
 * follow DMA accounting: a copy store (value is a single read) touching a
 * Global buffer is charged per executed element, while Global buffers read
 * or written directly by compute bodies are charged one full pass each --
 * reads of a buffer the same body also writes are accumulator traffic and
 * are not charged.
 */
struct FlopByteCount {
  int64_t mul_add_ops = 0;
  int64_t bytes_loaded = 0;
  int64_t bytes_stored = 0;
};

FlopByteCount count_flops_and_bytes(const LoopProgram& p);

// Pre-order traversal over every statement.
void walk_stmts(const StmtPtr& s, const std::function<void(const Stmt&)>& fn);

}  // namespace tec

#endif  // TEC_LOOP_IR_HPP_
