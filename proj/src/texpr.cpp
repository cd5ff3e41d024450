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
#include "tec/texpr.hpp"

#include <cmath>
#include <limits>
#include <mutex>
#include <set>

namespace tec {

const char* reducer_name(Reducer r) {
  switch (r) {
    case Reducer::kNone:
      return "none";
    case Reducer::kSum:
      return "sum";
    case Reducer::kMax:
      return "max";
  }
  return "?";
}

Reducer reducer_from_name(const std::string& s) {
  if (s == "none") return Reducer::kNone;
  if (s == "sum") return Reducer::kSum;
  if (s == "max") return Reducer::kMax;
  fail(ErrorCode::kIOError, "unknown reducer '" + s + "'");
}

const Tensor& ComputeOpNode::input(const std::string& tensor_name) const {
  for (const auto& t : inputs)
    if (t->name == tensor_name) return t;
  fail(ErrorCode::kInternal,
       "op " + name + " has no input named " + tensor_name);
}

Tensor placeholder(const std::string& name, TensorType type) {
  type.validate();
  auto n = std::make_shared<TensorNode>();
  n->name = name;
  n->type = std::move(type);
  return n;
}

Tensor compute(const std::string& name, TensorType out_type,
               std::vector<IterDecl> axis, Expr body,
               std::vector<Tensor> inputs, std::vector<IterDecl> reduce_axis,
               Reducer reducer) {
  out_type.validate();
  if (static_cast<int>(axis.size()) != out_type.rank())
    fail(ErrorCode::kShapeMismatch,
         "op " + name + " declares " + std::to_string(axis.size()) +
             " axes for a rank-" + std::to_string(out_type.rank()) +
             " output");
  for (size_t d = 0; d < axis.size(); ++d) {
    if (axis[d].extent != out_type.shape[d])
      fail(ErrorCode::kShapeMismatch,
           "op " + name + " axis " + axis[d].name + " extent " +
               std::to_string(axis[d].extent) + " != output dim " +
               std::to_string(out_type.shape[d]));
  }
  if ((reducer == Reducer::kNone) != reduce_axis.empty())
    fail(ErrorCode::kShapeMismatch,
         "op " + name + ": reducer and reduce axes must come together");
  std::set<std::string> seen;
  for (const auto& a : axis)
    if (!seen.insert(a.name).second)
      fail(ErrorCode::kShapeMismatch, "duplicate axis name " + a.name);
  for (const auto& a : reduce_axis)
    if (!seen.insert(a.name).second)
      fail(ErrorCode::kShapeMismatch, "duplicate axis name " + a.name);

  // Every read in the body must resolve to a declared input.
  std::vector<ReadSite> reads;
  collect_reads(body, &reads);
  for (const auto& r : reads) {
    bool found = false;
    for (const auto& t : inputs) {
      if (t->name == r.buffer) {
        if (static_cast<int>(r.indices.size()) != t->type.rank())
          fail(ErrorCode::kShapeMismatch,
               "read of " + r.buffer + " uses " +
                   std::to_string(r.indices.size()) + " indices, rank is " +
                   std::to_string(t->type.rank()));
        found = true;
        break;
      }
    }
    if (!found)
      fail(ErrorCode::kShapeMismatch,
           "op " + name + " reads undeclared tensor " + r.buffer);
  }

  auto op = std::make_shared<ComputeOpNode>();
  op->name = name;
  op->out_type = out_type;
  op->axis = std::move(axis);
  op->reduce_axis = std::move(reduce_axis);
  op->reducer = reducer;
  op->body = std::move(body);
  op->inputs = std::move(inputs);

  auto t = std::make_shared<TensorNode>();
  t->name = name;
  t->type = std::move(out_type);
  t->op = op;
  return t;
}

double reducer_identity(Reducer r, DType dtype) {
  if (r == Reducer::kSum) return 0.0;
  if (r == Reducer::kMax) {
    if (dtype == DType::kF32)
      return -std::numeric_limits<float>::infinity();
    return static_cast<double>(dtype_min(dtype));
  }
  return 0.0;
}

namespace {

class MapReader : public BufferReader {
 public:
  explicit MapReader(const std::map<std::string, DenseTensor>* store)
      : store_(store) {}

  const DenseTensor& tensor(const std::string& name) {
    auto it = store_->find(name);
    if (it == store_->end())
      fail(ErrorCode::kInternal, "tensor " + name + " not materialized");
    return it->second;
  }

  int64_t flat(const DenseTensor& t, const std::vector<int64_t>& idx) {
    const auto& shape = t.shape();
    int64_t f = 0;
    for (size_t d = 0; d < idx.size(); ++d) {
      if (idx[d] < 0 || idx[d] >= shape[d])
        fail(ErrorCode::kBoundsError,
             "index " + std::to_string(idx[d]) + " outside dim " +
                 std::to_string(shape[d]));
      f = f * shape[d] + idx[d];
    }
    return f;
  }

  int64_t read_int(const std::string& name,
                   const std::vector<int64_t>& idx) override {
    const DenseTensor& t = tensor(name);
    return t.i_at(flat(t, idx));
  }

  float read_float(const std::string& name,
                   const std::vector<int64_t>& idx) override {
    const DenseTensor& t = tensor(name);
    int64_t f = flat(t, idx);
    return t.is_float() ? t.f_at(f) : static_cast<float>(t.i_at(f));
  }

 private:
  const std::map<std::string, DenseTensor>* store_;
};

void eval_op(const ComputeOp& op, std::map<std::string, DenseTensor>* store) {
  MapReader reader(store);
  DenseTensor out(op->out_type);
  const bool flt = out.is_float();
  const int rank = out.type().rank();

  // Output coordinates iterate in declaration order, outermost first.
  std::vector<int64_t> coord(rank, 0);
  Env env;
  int64_t flat = 0;
  const int64_t total = out.num_elements();
  for (flat = 0; flat < total; ++flat) {
    int64_t rem = flat;
    for (int d = rank - 1; d >= 0; --d) {
      coord[d] = rem % op->out_type.shape[d];
      rem /= op->out_type.shape[d];
    }
    for (int d = 0; d < rank; ++d) env[op->axis[d].name] = coord[d];

    if (op->reducer == Reducer::kNone) {
      if (flt)
        out.set_f(flat, eval_float(op->body, env, &reader));
      else
        out.set_i(flat, eval_int(op->body, env, &reader));
      continue;
    }

    // Reduction: nested loops over reduce axes in declaration order.
    const int nred = static_cast<int>(op->reduce_axis.size());
    std::vector<int64_t> rcoord(nred, 0);
    float facc = static_cast<float>(reducer_identity(op->reducer, out.dtype()));
    int64_t iacc = static_cast<int64_t>(reducer_identity(op->reducer, out.dtype()));
    bool done = false;
    while (!done) {
      for (int d = 0; d < nred; ++d) env[op->reduce_axis[d].name] = rcoord[d];
      if (flt) {
        float v = eval_float(op->body, env, &reader);
        facc = op->reducer == Reducer::kSum ? facc + v : std::max(facc, v);
      } else {
        int64_t v = eval_int(op->body, env, &reader);
        iacc = op->reducer == Reducer::kSum ? iacc + v : std::max(iacc, v);
      }
      // Odometer increment, innermost (last declared) axis fastest.
      int d = nred - 1;
      while (d >= 0) {
        if (++rcoord[d] < op->reduce_axis[d].extent) break;
        rcoord[d] = 0;
        --d;
      }
      done = (d < 0);
    }
    if (flt)
      out.set_f(flat, facc);
    else
      out.set_i(flat, iacc);
  }
  (*store)[op->name] = std::move(out);
}

void materialize(const Tensor& t, const std::map<std::string, DenseTensor>& feeds,
                 std::map<std::string, DenseTensor>* store) {
  if (store->count(t->name)) return;
  if (!t->op) {
    auto it = feeds.find(t->name);
    if (it == feeds.end())
      fail(ErrorCode::kIOError, "no value supplied for input " + t->name);
    if (it->second.type() != t->type)
      fail(ErrorCode::kShapeMismatch,
           "input " + t->name + " is " + it->second.type().str() +
               ", expected " + t->type.str());
    (*store)[t->name] = it->second;
    return;
  }
  for (const auto& in : t->op->inputs) materialize(in, feeds, store);
  eval_op(t->op, store);
}

}  // namespace

DenseTensor evaluate_reference(const Tensor& out,
                               const std::map<std::string, DenseTensor>& feeds) {
  std::map<std::string, DenseTensor> store;
  materialize(out, feeds, &store);
  return store.at(out->name);
}

nlohmann::json compute_op_to_json(const ComputeOp& op) {
  nlohmann::json j;
  j["name"] = op->name;
  j["shape"] = op->out_type.shape;
  j["dtype"] = dtype_name(op->out_type.dtype);
  auto decls = [](const std::vector<IterDecl>& ds) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& d : ds) a.push_back({{"name", d.name}, {"extent", d.extent}});
    return a;
  };
  j["axis"] = decls(op->axis);
  j["reduce_axis"] = decls(op->reduce_axis);
  j["reducer"] = reducer_name(op->reducer);
  j["body"] = expr_to_json(op->body);
  nlohmann::json ins = nlohmann::json::array();
  for (const auto& t : op->inputs) {
    ins.push_back({{"name", t->name},
                   {"shape", t->type.shape},
                   {"dtype", dtype_name(t->type.dtype)}});
  }
  j["inputs"] = std::move(ins);
  return j;
}

namespace {

std::map<std::string, Intrinsic>& intrinsic_registry() {
  static std::map<std::string, Intrinsic> reg;
  return reg;
}

}  // namespace

void declare_intrinsic(Intrinsic intr) {
  auto& reg = intrinsic_registry();
  if (reg.count(intr.name))
    fail(ErrorCode::kDuplicateIntrinsic,
         "intrinsic '" + intr.name + "' is already declared");
  reg.emplace(intr.name, std::move(intr));
}

const Intrinsic* find_intrinsic(const std::string& name) {
  auto& reg = intrinsic_registry();
  auto it = reg.find(name);
  return it == reg.end() ? nullptr : &it->second;
}

void register_builtin_intrinsics() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    {
      // 8x8x8 f32 block matmul-accumulate, usable in any scope.
      Tensor a = placeholder("xa", TensorType({8, 8}, DType::kF32));
      Tensor b = placeholder("xb", TensorType({8, 8}, DType::kF32));
      Tensor c = compute(
          "xc", TensorType({8, 8}, DType::kF32),
          {{"i", 8}, {"j", 8}},
          mul(read("xa", {var("i"), var("k")}), read("xb", {var("k"), var("j")})),
          {a, b}, {{"k", 8}}, Reducer::kSum);
      Intrinsic intr;
      intr.name = "gemm8x8";
      intr.behavior = c->op;
      intr.scope_checked = false;
      intr.instruction = "gemm";
      declare_intrinsic(std::move(intr));
    }
    {
      // Accelerator GEMM core: 16-wide matvec, i8 operands, i32 accumulate.
      Tensor x = placeholder("gx", TensorType({16}, DType::kI8));
      Tensor w = placeholder("gw", TensorType({16, 16}, DType::kI8));
      Tensor o = compute(
          "go", TensorType({16}, DType::kI32), {{"j", 16}},
          mul(read("gx", {var("k")}), read("gw", {var("j"), var("k")})),
          {x, w}, {{"k", 16}}, Reducer::kSum);
      Intrinsic intr;
      intr.name = "vdla.gemm";
      intr.behavior = o->op;
      intr.operand_scope = {{"gx", MemoryScope::kAccelActivation},
                           {"gw", MemoryScope::kAccelWeight},
                           {"go", MemoryScope::kAccelAccum}};
      intr.scope_checked = true;
      intr.instruction = "gemm";
      declare_intrinsic(std::move(intr));
    }
  });
}

}  // namespace tec
