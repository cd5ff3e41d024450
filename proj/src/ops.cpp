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
#include "tec/ops.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

namespace tec {

const char* op_pattern_name(OpPattern p) {
  switch (p) {
    case OpPattern::kInjective:
      return "injective";
    case OpPattern::kReduction:
      return "reduction";
    case OpPattern::kComplexOutFusable:
      return "complex_out_fusable";
    case OpPattern::kOpaque:
      return "opaque";
  }
  return "?";
}

namespace {

template <typename T>
const T* attr_get(const AttrMap& attrs, const std::string& key) {
  auto it = attrs.find(key);
  if (it == attrs.end()) return nullptr;
  const T* v = std::get_if<T>(&it->second);
  if (!v) fail(ErrorCode::kShapeMismatch, "attr '" + key + "' has wrong type");
  return v;
}

}  // namespace

int64_t attr_int(const AttrMap& attrs, const std::string& key, int64_t dflt) {
  const int64_t* v = attr_get<int64_t>(attrs, key);
  return v ? *v : dflt;
}
double attr_double(const AttrMap& attrs, const std::string& key, double dflt) {
  if (const double* v = attr_get<double>(attrs, key)) return *v;
  if (const int64_t* v = attr_get<int64_t>(attrs, key))
    return static_cast<double>(*v);
  return dflt;
}
std::string attr_str(const AttrMap& attrs, const std::string& key,
                     const std::string& dflt) {
  const std::string* v = attr_get<std::string>(attrs, key);
  return v ? *v : dflt;
}
std::vector<int64_t> attr_ints(const AttrMap& attrs, const std::string& key,
                               std::vector<int64_t> dflt) {
  const std::vector<int64_t>* v = attr_get<std::vector<int64_t>>(attrs, key);
  return v ? *v : dflt;
}

namespace {

void expect_arity(const std::string& op, const std::vector<TensorType>& ins,
                  size_t n) {
  if (ins.size() != n)
    fail(ErrorCode::kShapeMismatch,
         op + " expects " + std::to_string(n) + " inputs, got " +
             std::to_string(ins.size()));
}

void expect_same(const std::string& op, const TensorType& a,
                 const TensorType& b) {
  if (a != b)
    fail(ErrorCode::kShapeMismatch,
         op + " operand types differ: " + a.str() + " vs " + b.str());
}

std::vector<IterDecl> axes_for(const TensorType& t, const char* prefix) {
  std::vector<IterDecl> axis;
  for (int d = 0; d < t.rank(); ++d)
    axis.push_back({std::string(prefix) + std::to_string(d), t.shape[d]});
  return axis;
}

std::vector<Expr> axis_vars(const std::vector<IterDecl>& axis) {
  std::vector<Expr> vs;
  for (const auto& a : axis) vs.push_back(var(a.name));
  return vs;
}

Tensor binary_elemwise(const std::string& out_name,
                       const std::vector<Tensor>& ins, ExprKind kind) {
  auto axis = axes_for(ins[0]->type, "i");
  Expr body = make_expr(kind, {read(ins[0]->name, axis_vars(axis)),
                               read(ins[1]->name, axis_vars(axis))});
  return compute(out_name, ins[0]->type, std::move(axis), body, ins);
}

Tensor unary_map(const std::string& out_name, const std::vector<Tensor>& ins,
                 const std::function<Expr(Expr)>& fn,
                 TensorType out_type) {
  auto axis = axes_for(ins[0]->type, "i");
  Expr body = fn(read(ins[0]->name, axis_vars(axis)));
  return compute(out_name, std::move(out_type), std::move(axis), body, ins);
}

// conv2d / depthwise share the sliding-window index math. Data is NCHW,
// weights OIHW. A select() guards reads only when padding is nonzero.
Tensor make_conv(const std::string& out_name, const std::vector<Tensor>& ins,
                 const AttrMap& attrs, bool depthwise) {
  const TensorType& dt = ins[0]->type;
  const TensorType& wt = ins[1]->type;
  auto strides = attr_ints(attrs, "strides", {1, 1});
  auto padding = attr_ints(attrs, "padding", {0, 0});
  const int64_t N = dt.shape[0], C = dt.shape[1], H = dt.shape[2],
                W = dt.shape[3];
  const int64_t O = wt.shape[0], KH = wt.shape[2], KW = wt.shape[3];
  const int64_t sh = strides[0], sw = strides[1], ph = padding[0],
                pw = padding[1];
  const int64_t OH = (H + 2 * ph - KH) / sh + 1;
  const int64_t OW = (W + 2 * pw - KW) / sw + 1;
  DType out_dtype = dt.dtype == DType::kI8 ? DType::kI32 : dt.dtype;
  TensorType out_type({N, O, OH, OW}, out_dtype);

  std::vector<IterDecl> axis = {
      {"n", N}, {"oc", O}, {"oh", OH}, {"ow", OW}};
  std::vector<IterDecl> raxis;
  if (!depthwise) raxis.push_back({"ic", C});
  raxis.push_back({"rh", KH});
  raxis.push_back({"rw", KW});

  Expr h = sub(add(mul(var("oh"), cst(sh)), var("rh")), cst(ph));
  Expr w = sub(add(mul(var("ow"), cst(sw)), var("rw")), cst(pw));
  Expr ic = depthwise ? var("oc") : var("ic");
  Expr data = read(ins[0]->name, {var("n"), ic, h, w});
  if (ph != 0 || pw != 0) {
    Expr in_h = land(le(cst(0), h), lt(h, cst(H)));
    Expr in_w = land(le(cst(0), w), lt(w, cst(W)));
    // Clamp the read so guarded-off lanes still index in bounds.
    Expr hc = vmax(vmin(h, cst(H - 1)), cst(0));
    Expr wc = vmax(vmin(w, cst(W - 1)), cst(0));
    data = select(land(in_h, in_w),
                  read(ins[0]->name, {var("n"), ic, hc, wc}), cst(0));
  }
  Expr wgt = depthwise
                 ? read(ins[1]->name, {var("oc"), cst(0), var("rh"), var("rw")})
                 : read(ins[1]->name, {var("oc"), var("ic"), var("rh"), var("rw")});
  return compute(out_name, out_type, std::move(axis), mul(data, wgt), ins,
                 std::move(raxis), Reducer::kSum);
}

TensorType infer_conv(const std::vector<TensorType>& ins, const AttrMap& attrs,
                      bool depthwise, const std::string& opname) {
  expect_arity(opname, ins, 2);
  const TensorType& dt = ins[0];
  const TensorType& wt = ins[1];
  if (dt.rank() != 4 || wt.rank() != 4)
    fail(ErrorCode::kShapeMismatch, opname + " wants NCHW data, OIHW weights");
  if (dt.dtype != wt.dtype)
    fail(ErrorCode::kShapeMismatch, opname + " operand dtypes differ");
  auto strides = attr_ints(attrs, "strides", {1, 1});
  auto padding = attr_ints(attrs, "padding", {0, 0});
  if (strides.size() != 2 || padding.size() != 2)
    fail(ErrorCode::kShapeMismatch, opname + " strides/padding must be pairs");
  const int64_t C = dt.shape[1];
  if (depthwise) {
    if (wt.shape[0] != C || wt.shape[1] != 1)
      fail(ErrorCode::kShapeMismatch,
           opname + " weights must be [C,1,kh,kw] with C=" + std::to_string(C));
  } else if (wt.shape[1] != C) {
    fail(ErrorCode::kShapeMismatch,
         opname + ": weight input-channel dim " + std::to_string(wt.shape[1]) +
             " != data channels " + std::to_string(C));
  }
  const int64_t OH = (dt.shape[2] + 2 * padding[0] - wt.shape[2]) / strides[0] + 1;
  const int64_t OW = (dt.shape[3] + 2 * padding[1] - wt.shape[3]) / strides[1] + 1;
  if (OH <= 0 || OW <= 0)
    fail(ErrorCode::kShapeMismatch, opname + ": window larger than input");
  DType out_dtype = dt.dtype == DType::kI8 ? DType::kI32 : dt.dtype;
  return TensorType({dt.shape[0], wt.shape[0], OH, OW}, out_dtype);
}

constexpr int64_t kTile = 4;  // layout_transform block edge

void register_ops(std::map<std::string, OperatorDef>* reg) {
  auto put = [reg](OperatorDef def) { (*reg)[def.name] = std::move(def); };

  auto same_binary_infer = [](const std::string& opname) {
    return [opname](const std::vector<TensorType>& ins, const AttrMap&) {
      expect_arity(opname, ins, 2);
      expect_same(opname, ins[0], ins[1]);
      return ins[0];
    };
  };
  auto same_unary_infer = [](const std::string& opname, bool float_only) {
    return [opname, float_only](const std::vector<TensorType>& ins,
                                const AttrMap&) {
      expect_arity(opname, ins, 1);
      if (float_only && ins[0].dtype != DType::kF32)
        fail(ErrorCode::kShapeMismatch, opname + " requires f32 input");
      return ins[0];
    };
  };

  put({.name = "add",
       .pattern = OpPattern::kInjective,
       .arity = 2,
       .infer_type = same_binary_infer("add"),
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap&) {
         return binary_elemwise(n, ins, ExprKind::kAdd);
       }});
  put({.name = "mul",
       .pattern = OpPattern::kInjective,
       .arity = 2,
       .infer_type = same_binary_infer("mul"),
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap&) {
         return binary_elemwise(n, ins, ExprKind::kMul);
       }});
  put({.name = "exp",
       .pattern = OpPattern::kInjective,
       .arity = 1,
       .infer_type = same_unary_infer("exp", true),
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap&) {
         return unary_map(n, ins, [](Expr x) { return vexp(x); },
                          ins[0]->type);
       }});
  put({.name = "sqrt",
       .pattern = OpPattern::kInjective,
       .arity = 1,
       .infer_type = same_unary_infer("sqrt", true),
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap&) {
         return unary_map(n, ins, [](Expr x) { return vsqrt(x); },
                          ins[0]->type);
       }});
  put({.name = "relu",
       .pattern = OpPattern::kInjective,
       .arity = 1,
       .infer_type = same_unary_infer("relu", false),
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap&) {
         Expr zero = ins[0]->type.dtype == DType::kF32 ? cstf(0.0) : cst(0);
         return unary_map(n, ins, [&](Expr x) { return vmax(x, zero); },
                          ins[0]->type);
       }});
  put({.name = "scale",
       .pattern = OpPattern::kInjective,
       .arity = 1,
       .infer_type =
           [](const std::vector<TensorType>& ins, const AttrMap& attrs) {
             expect_arity("scale", ins, 1);
             double c = attr_double(attrs, "scale", 1.0);
             if (ins[0].dtype != DType::kF32 &&
                 c != std::floor(c))
               fail(ErrorCode::kShapeMismatch,
                    "integer scale requires an integral factor");
             return ins[0];
           },
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap& attrs) {
         double c = attr_double(attrs, "scale", 1.0);
         Expr k = ins[0]->type.dtype == DType::kF32
                      ? cstf(c)
                      : cst(static_cast<int64_t>(c));
         return unary_map(n, ins, [&](Expr x) { return mul(x, k); },
                          ins[0]->type);
       }});
  put({.name = "bias_add",
       .pattern = OpPattern::kInjective,
       .arity = 2,
       .infer_type =
           [](const std::vector<TensorType>& ins, const AttrMap& attrs) {
             expect_arity("bias_add", ins, 2);
             int64_t ax = attr_int(attrs, "axis", ins[0].rank() >= 2 ? 1 : 0);
             if (ax < 0 || ax >= ins[0].rank())
               fail(ErrorCode::kShapeMismatch, "bias_add axis out of range");
             if (ins[1].rank() != 1 || ins[1].shape[0] != ins[0].shape[ax])
               fail(ErrorCode::kShapeMismatch,
                    "bias must be rank-1 matching dim " + std::to_string(ax));
             if (ins[0].dtype != ins[1].dtype)
               fail(ErrorCode::kShapeMismatch, "bias dtype differs from data");
             return ins[0];
           },
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap& attrs) {
         int64_t ax = attr_int(attrs, "axis", ins[0]->type.rank() >= 2 ? 1 : 0);
         auto axis = axes_for(ins[0]->type, "i");
         Expr body = add(read(ins[0]->name, axis_vars(axis)),
                         read(ins[1]->name, {var(axis[ax].name)}));
         return compute(n, ins[0]->type, std::move(axis), body, ins);
       }});
  put({.name = "sum",
       .pattern = OpPattern::kReduction,
       .arity = 1,
       .infer_type =
           [](const std::vector<TensorType>& ins, const AttrMap& attrs) {
             expect_arity("sum", ins, 1);
             int64_t ax = attr_int(attrs, "axis", ins[0].rank() - 1);
             if (ax < 0 || ax >= ins[0].rank())
               fail(ErrorCode::kShapeMismatch, "sum axis out of range");
             std::vector<int64_t> shape;
             for (int d = 0; d < ins[0].rank(); ++d)
               if (d != ax) shape.push_back(ins[0].shape[d]);
             if (shape.empty()) shape.push_back(1);
             return TensorType(shape, ins[0].dtype);
           },
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap& attrs) {
         const TensorType& it = ins[0]->type;
         int64_t ax = attr_int(attrs, "axis", it.rank() - 1);
         std::vector<int64_t> shape;
         for (int d = 0; d < it.rank(); ++d)
           if (d != ax) shape.push_back(it.shape[d]);
         if (shape.empty()) shape.push_back(1);
         TensorType out_type(shape, it.dtype);
         std::vector<IterDecl> axis = axes_for(out_type, "i");
         std::vector<Expr> idx;
         int pos = 0;
         for (int d = 0; d < it.rank(); ++d) {
           if (d == ax)
             idx.push_back(var("r"));
           else
             idx.push_back(var(axis[pos++].name));
         }
         // Rank-1 input reduced to shape {1}: the single output axis is
         // a dummy that the body never reads.
         return compute(n, out_type, std::move(axis),
                        read(ins[0]->name, idx), ins,
                        {{"r", it.shape[ax]}}, Reducer::kSum);
       }});
  put({.name = "matmul",
       .pattern = OpPattern::kComplexOutFusable,
       .arity = 2,
       .infer_type =
           [](const std::vector<TensorType>& ins, const AttrMap&) {
             expect_arity("matmul", ins, 2);
             if (ins[0].rank() != 2 || ins[1].rank() != 2 ||
                 ins[0].shape[1] != ins[1].shape[0])
               fail(ErrorCode::kShapeMismatch,
                    "matmul wants [M,K]x[K,N], got " + ins[0].str() + " x " +
                        ins[1].str());
             if (ins[0].dtype != ins[1].dtype)
               fail(ErrorCode::kShapeMismatch, "matmul operand dtypes differ");
             DType out = ins[0].dtype == DType::kI8 ? DType::kI32 : ins[0].dtype;
             return TensorType({ins[0].shape[0], ins[1].shape[1]}, out);
           },
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap&) {
         const int64_t M = ins[0]->type.shape[0];
         const int64_t K = ins[0]->type.shape[1];
         const int64_t N = ins[1]->type.shape[1];
         DType out =
             ins[0]->type.dtype == DType::kI8 ? DType::kI32 : ins[0]->type.dtype;
         return compute(n, TensorType({M, N}, out), {{"y", M}, {"x", N}},
                        mul(read(ins[0]->name, {var("y"), var("k")}),
                            read(ins[1]->name, {var("k"), var("x")})),
                        ins, {{"k", K}}, Reducer::kSum);
       }});
  put({.name = "conv2d",
       .pattern = OpPattern::kComplexOutFusable,
       .arity = 2,
       .infer_type =
           [](const std::vector<TensorType>& ins, const AttrMap& attrs) {
             return infer_conv(ins, attrs, false, "conv2d");
           },
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap& attrs) {
         return make_conv(n, ins, attrs, false);
       }});
  put({.name = "depthwise_conv2d",
       .pattern = OpPattern::kComplexOutFusable,
       .arity = 2,
       .infer_type =
           [](const std::vector<TensorType>& ins, const AttrMap& attrs) {
             return infer_conv(ins, attrs, true, "depthwise_conv2d");
           },
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap& attrs) {
         return make_conv(n, ins, attrs, true);
       }});
  put({.name = "sort",
       .pattern = OpPattern::kOpaque,
       .arity = 1,
       .infer_type =
           [](const std::vector<TensorType>& ins, const AttrMap&) {
             expect_arity("sort", ins, 1);
             return ins[0];
           },
       .native_eval = [](const std::vector<DenseTensor>& ins, const AttrMap&) {
         // Ascending sort along the innermost axis.
         DenseTensor out = ins[0];
         const int64_t inner = out.shape().back();
         const int64_t rows = out.num_elements() / inner;
         for (int64_t r = 0; r < rows; ++r) {
           if (out.is_float()) {
             auto* p = out.f_data().data() + r * inner;
             std::sort(p, p + inner);
           } else {
             auto* p = out.i_data().data() + r * inner;
             std::sort(p, p + inner);
           }
         }
         return out;
       }});
  put({.name = "layout_transform",
       .pattern = OpPattern::kInjective,
       .arity = 1,
       .infer_type =
           [](const std::vector<TensorType>& ins, const AttrMap& attrs) {
             expect_arity("layout_transform", ins, 1);
             std::string src = attr_str(attrs, "src_layout", "row_major");
             std::string dst = attr_str(attrs, "dst_layout", "row_major");
             if (src == "row_major" && dst == "tiled4x4") {
               if (ins[0].rank() != 2)
                 fail(ErrorCode::kShapeMismatch,
                      "tiled4x4 layout applies to rank-2 tensors");
               int64_t H = ins[0].shape[0], W = ins[0].shape[1];
               return TensorType({(H + kTile - 1) / kTile,
                                  (W + kTile - 1) / kTile, kTile, kTile},
                                 ins[0].dtype);
             }
             if (src == "tiled4x4" && dst == "row_major") {
               if (ins[0].rank() != 4)
                 fail(ErrorCode::kShapeMismatch,
                      "tiled4x4 source must be rank-4");
               int64_t H = attr_int(attrs, "height", 0);
               int64_t W = attr_int(attrs, "width", 0);
               if (H <= 0 || W <= 0)
                 fail(ErrorCode::kShapeMismatch,
                      "tiled4x4 -> row_major needs height/width attrs");
               return TensorType({H, W}, ins[0].dtype);
             }
             if (src == dst) return ins[0];
             fail(ErrorCode::kShapeMismatch,
                  "unsupported layout pair " + src + " -> " + dst);
           },
       .make_compute = [](const std::string& n, const std::vector<Tensor>& ins,
                          const AttrMap& attrs) -> Tensor {
         std::string src = attr_str(attrs, "src_layout", "row_major");
         std::string dst = attr_str(attrs, "dst_layout", "row_major");
         const TensorType& it = ins[0]->type;
         if (src == "row_major" && dst == "tiled4x4") {
           int64_t H = it.shape[0], W = it.shape[1];
           TensorType out({(H + kTile - 1) / kTile, (W + kTile - 1) / kTile,
                           kTile, kTile},
                          it.dtype);
           std::vector<IterDecl> axis = {{"to", out.shape[0]},
                                         {"tp", out.shape[1]},
                                         {"ti", kTile},
                                         {"tj", kTile}};
           Expr h = add(mul(var("to"), cst(kTile)), var("ti"));
           Expr w = add(mul(var("tp"), cst(kTile)), var("tj"));
           Expr in_range = land(lt(h, cst(H)), lt(w, cst(W)));
           Expr hc = vmin(h, cst(H - 1));
           Expr wc = vmin(w, cst(W - 1));
           Expr zero = it.dtype == DType::kF32 ? cstf(0.0) : cst(0);
           // Out-of-range tile lanes pad with zero.
           Expr body = select(in_range, read(ins[0]->name, {hc, wc}), zero);
           return compute(n, out, std::move(axis), body, ins);
         }
         if (src == "tiled4x4" && dst == "row_major") {
           int64_t H = attr_int(attrs, "height", 0);
           int64_t W = attr_int(attrs, "width", 0);
           TensorType out({H, W}, it.dtype);
           std::vector<IterDecl> axis = {{"h", H}, {"w", W}};
           Expr body = read(ins[0]->name,
                            {floordiv(var("h"), cst(kTile)),
                             floordiv(var("w"), cst(kTile)),
                             mod(var("h"), cst(kTile)),
                             mod(var("w"), cst(kTile))});
           return compute(n, out, std::move(axis), body, ins);
         }
         // Identity.
         return unary_map(n, ins, [](Expr x) { return x; }, it);
       }});
}

std::map<std::string, OperatorDef>& op_registry() {
  static std::map<std::string, OperatorDef> reg;
  static std::once_flag flag;
  std::call_once(flag, [] { register_ops(&reg); });
  return reg;
}

}  // namespace

const OperatorDef& op_def(const std::string& name) {
  auto& reg = op_registry();
  auto it = reg.find(name);
  if (it == reg.end())
    fail(ErrorCode::kUnknownOperator, "no operator named '" + name + "'");
  return it->second;
}

bool has_op(const std::string& name) { return op_registry().count(name) > 0; }

std::vector<std::string> op_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : op_registry()) out.push_back(k);
  return out;
}

DenseTensor eval_operator(const std::string& op,
                          const std::vector<DenseTensor>& inputs,
                          const AttrMap& attrs) {
  const OperatorDef& def = op_def(op);
  if (def.native_eval) return def.native_eval(inputs, attrs);
  std::vector<Tensor> phs;
  std::map<std::string, DenseTensor> feeds;
  for (size_t i = 0; i < inputs.size(); ++i) {
    std::string nm = "in" + std::to_string(i);
    phs.push_back(placeholder(nm, inputs[i].type()));
    feeds.emplace(nm, inputs[i]);
  }
  Tensor out = def.make_compute("out", phs, attrs);
  return evaluate_reference(out, feeds);
}

}  // namespace tec
