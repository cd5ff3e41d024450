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
#ifndef TEC_TEXPR_HPP_
#define TEC_TEXPR_HPP_

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tec/expr.hpp"
#include "tec/scope.hpp"
#include "tec/tensor.hpp"

namespace tec {

/*! \brief Named iteration domain [0, extent). */
struct IterDecl {
  std::string name;
  int64_t extent = 0;
};

enum class Reducer { kNone, kSum, kMax };

const char* reducer_name(Reducer r);
Reducer reducer_from_name(const std::string& s);

struct TensorNode;
using Tensor = std::shared_ptr<const TensorNode>;

/*!
 * \brief Declarative definition of one output tensor: per-element index
 *        formula, optionally wrapped in a reduction over reduce_axis.
 *
 * The body reads producers by tensor name; `inputs` resolves those names.
 * Reduction bodies accumulate in declaration order of the reduce axes.
 */
struct ComputeOpNode {
  std::string name;
  TensorType out_type;
  std::vector<IterDecl> axis;         // one per output dimension
  std::vector<IterDecl> reduce_axis;  // empty unless reducer != kNone
  Reducer reducer = Reducer::kNone;
  Expr body;
  std::vector<Tensor> inputs;

  const Tensor& input(const std::string& tensor_name) const;
};
using ComputeOp = std::shared_ptr<const ComputeOpNode>;

/*! \brief A tensor value: either a placeholder or the result of an op. */
struct TensorNode {
  std::string name;
  TensorType type;
  ComputeOp op;  // null for placeholders
};

Tensor placeholder(const std::string& name, TensorType type);

Tensor compute(const std::string& name, TensorType out_type,
               std::vector<IterDecl> axis, Expr body,
               std::vector<Tensor> inputs,
               std::vector<IterDecl> reduce_axis = {},
               Reducer reducer = Reducer::kNone);

// Reduction identity for the declared output dtype.
double reducer_identity(Reducer r, DType dtype);

/*!
 * \brief Direct loop-nest evaluation of a tensor and its producer chain.
 *
 * Placeholders take values from `feeds`. This is the semantics oracle:
 * no scheduling, loops in declaration order.
 */
DenseTensor evaluate_reference(const Tensor& out,
                               const std::map<std::string, DenseTensor>& feeds);

nlohmann::json compute_op_to_json(const ComputeOp& op);

/*!
 * \brief Hardware intrinsic: a behavior op plus operand scope contract.
 *
 * The behavior op is a ComputeOp whose inputs are placeholders; a call
 * site with reducer != kNone accumulates into its destination.
 */
struct Intrinsic {
  std::string name;
  ComputeOp behavior;
  std::map<std::string, MemoryScope> operand_scope;  // by behavior tensor name
  bool scope_checked = false;  // true for accelerator intrinsics
  std::string instruction;     // opcode mnemonic on the target
};

void declare_intrinsic(Intrinsic intr);
const Intrinsic* find_intrinsic(const std::string& name);

// Registers the built-in intrinsics (idempotent): an 8x8x8 f32 block
// matmul and the accelerator's 16x16 i8 matvec-accumulate.
void register_builtin_intrinsics();

}  // namespace tec

#endif  // TEC_TEXPR_HPP_
