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
#ifndef TEC_OPS_HPP_
#define TEC_OPS_HPP_

#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "tec/texpr.hpp"

namespace tec {

/*!
 * \brief Fusion class of an operator.
 *
 * Injective: pure per-element index remap, fuses with neighbors.
 * Reduction: absorbs injective producer chains, never fuses downstream.
 * ComplexOutFusable: heavy op that absorbs elementwise ops on its output.
 * Opaque: never fuses.
 */
enum class OpPattern { kInjective, kReduction, kComplexOutFusable, kOpaque };

const char* op_pattern_name(OpPattern p);

using AttrValue =
    std::variant<int64_t, double, std::string, std::vector<int64_t>>;
using AttrMap = std::map<std::string, AttrValue>;

int64_t attr_int(const AttrMap& attrs, const std::string& key, int64_t dflt);
double attr_double(const AttrMap& attrs, const std::string& key, double dflt);
std::string attr_str(const AttrMap& attrs, const std::string& key,
                     const std::string& dflt);
std::vector<int64_t> attr_ints(const AttrMap& attrs, const std::string& key,
                               std::vector<int64_t> dflt);

struct OperatorDef {
  std::string name;
  OpPattern pattern = OpPattern::kInjective;
  int arity = 1;

  std::function<TensorType(const std::vector<TensorType>&, const AttrMap&)>
      infer_type;

  // Builds the index-formula definition; unset for natively evaluated ops.
  std::function<Tensor(const std::string& out_name,
                       const std::vector<Tensor>& inputs, const AttrMap&)>
      make_compute;

  // Direct evaluation for ops outside the expression language (sort).
  std::function<DenseTensor(const std::vector<DenseTensor>&, const AttrMap&)>
      native_eval;
};

/*! \brief Look up an operator; throws UnknownOperator if absent. */
const OperatorDef& op_def(const std::string& name);
bool has_op(const std::string& name);
std::vector<std::string> op_names();

// Evaluate one operator application on concrete tensors.
DenseTensor eval_operator(const std::string& op,
                          const std::vector<DenseTensor>& inputs,
                          const AttrMap& attrs);

}  // namespace tec

#endif  // TEC_OPS_HPP_
