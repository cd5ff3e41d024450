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
#include <map>
#include <string>
#include <vector>

#include "tec/error.hpp"
#include "tec/interp.hpp"
#include "tec/lower.hpp"
#include "tec/ops.hpp"
#include "tec/schedule.hpp"
#include "tec/texpr.hpp"
#include "tests/test_util.hpp"
#include "vendor/doctest.h"

using namespace tec;
using tec_test::rand_tensor;
using tec_test::tensor_f32;
using tec_test::tensor_int;

namespace {

Tensor matmul_tensor(const std::string& name, const Tensor& a,
                     const Tensor& b) {
  return op_def("matmul").make_compute(name, {a, b}, {});
}

std::map<std::string, DenseTensor> run_program(
    const Schedule& s, const std::map<std::string, DenseTensor>& feeds,
    const std::string& target = "interp") {
  LowerOptions opts;
  opts.target = target;
  LoopProgram p = lower(s, "prog", opts);
  return interpret(p, feeds).outputs;
}

}  // namespace

TEST_CASE("plain matmul lowers to loops that reproduce the frozen product") {
  Tensor a = placeholder("A", TensorType{{2, 2}, DType::kF32});
  Tensor b = placeholder("B", TensorType{{2, 2}, DType::kF32});
  Tensor c = matmul_tensor("C", a, b);
  Schedule s = Schedule::create({c});

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", tensor_f32({2, 2}, {1, 2, 3, 4}));
  feeds.emplace("B", tensor_f32({2, 2}, {5, 6, 7, 8}));
  auto out = run_program(s, feeds);

  // Independent hand calculation: [[1,2],[3,4]] x [[5,6],[7,8]].
  const float expect[4] = {19, 22, 43, 50};
  for (int i = 0; i < 4; ++i) CHECK(out.at("C").f_at(i) == expect[i]);
}

TEST_CASE("non-dividing split guards the tail iterations") {
  Tensor a = placeholder("A", TensorType{{10}, DType::kF32});
  Tensor b = placeholder("B", TensorType{{10}, DType::kF32});
  Tensor c = op_def("add").make_compute("C", {a, b}, {});
  Schedule s = Schedule::create({c});
  auto oi = s.split("C", "i0", 4);  // 10 = 2*4 + 2
  (void)oi;

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 11));
  feeds.emplace("B", rand_tensor(b->type, 12));
  auto out = run_program(s, feeds);
  DenseTensor want = evaluate_reference(c, feeds);
  CHECK(out.at("C").same_values(want, 0.0));
}

TEST_CASE("tile plus reorder keeps matmul exact") {
  Tensor a = placeholder("A", TensorType{{7, 5}, DType::kF32});
  Tensor b = placeholder("B", TensorType{{5, 9}, DType::kF32});
  Tensor c = matmul_tensor("C", a, b);
  Schedule s = Schedule::create({c});
  auto t = s.tile("C", "y", "x", 4, 3);
  auto ks = s.split("C", "k", 2);
  s.reorder("C", {t[0], t[1], ks.first, t[2], ks.second, t[3]});

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 21));
  feeds.emplace("B", rand_tensor(b->type, 22));
  auto out = run_program(s, feeds);
  // Reduce iterations still run in ascending k order per element, so the
  // float accumulation order matches the reference exactly.
  DenseTensor want = evaluate_reference(c, feeds);
  CHECK(out.at("C").same_values(want, 0.0));
}

TEST_CASE("split reduction initializes before the first reduce loop") {
  Tensor a = placeholder("A", TensorType{{3, 8}, DType::kF32});
  Tensor b = placeholder("B", TensorType{{8, 3}, DType::kF32});
  Tensor c = matmul_tensor("C", a, b);
  Schedule s = Schedule::create({c});
  s.split("C", "k", 4);
  LoopProgram p = lower(s, "prog");
  std::string text = print_program(p);
  // The init store must appear before the k.outer loop, not inside it.
  auto init_pos = text.find("C[C.y, C.x] = 0");
  auto ko_pos = text.find("for (C.k.outer");
  REQUIRE(init_pos != std::string::npos);
  REQUIRE(ko_pos != std::string::npos);
  CHECK(init_pos < ko_pos);

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 31));
  feeds.emplace("B", rand_tensor(b->type, 32));
  auto out = interpret(p, feeds).outputs;
  CHECK(out.at("C").same_values(evaluate_reference(c, feeds), 0.0));
}

TEST_CASE("unrolled loops expand to straight-line stores") {
  Tensor a = placeholder("A", TensorType{{6}, DType::kF32});
  Tensor c = op_def("relu").make_compute("C", {a}, {});
  Schedule s = Schedule::create({c});
  auto oi = s.split("C", "i0", 3);
  s.unroll("C", oi.second);
  LoopProgram p = lower(s, "prog");
  std::string text = print_program(p);
  CHECK(text.find("unrolled") == std::string::npos);

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", tensor_f32({6}, {-2, 1, -0.5f, 3, 0, -4}));
  auto out = interpret(p, feeds).outputs;
  const float expect[6] = {0, 1, 0, 3, 0, 0};
  for (int i = 0; i < 6; ++i) CHECK(out.at("C").f_at(i) == expect[i]);
}

TEST_CASE("cache_read into local with compute_at shrinks to the tile") {
  Tensor a = placeholder("A", TensorType{{8, 6}, DType::kF32});
  Tensor b = placeholder("B", TensorType{{6, 8}, DType::kF32});
  Tensor c = matmul_tensor("C", a, b);
  Schedule s = Schedule::create({c});
  auto t = s.tile("C", "y", "x", 4, 4);
  Tensor cache = s.cache_read("A", MemoryScope::kLocal, {"C"});
  s.compute_at(cache->name, "C", t[1]);

  LoopProgram p = lower(s, "prog");
  std::string text = print_program(p);
  // The staged block covers one 4-row tile across all of k: 4x6.
  CHECK(text.find("A.local: f32[4, 6]") != std::string::npos);

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 41));
  feeds.emplace("B", rand_tensor(b->type, 42));
  auto out = interpret(p, feeds).outputs;
  CHECK(out.at("C").same_values(evaluate_reference(c, feeds), 0.0));
}

TEST_CASE("cache_read tile with a ragged edge stays in bounds") {
  Tensor a = placeholder("A", TensorType{{10, 6}, DType::kF32});
  Tensor b = placeholder("B", TensorType{{6, 7}, DType::kF32});
  Tensor c = matmul_tensor("C", a, b);
  Schedule s = Schedule::create({c});
  auto t = s.tile("C", "y", "x", 4, 4);  // 10 and 7 both ragged
  Tensor cache = s.cache_read("A", MemoryScope::kLocal, {"C"});
  s.compute_at(cache->name, "C", t[1]);

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 51));
  feeds.emplace("B", rand_tensor(b->type, 52));
  auto out = run_program(s, feeds);
  CHECK(out.at("C").same_values(evaluate_reference(c, feeds), 0.0));
}

TEST_CASE("attached producer computes per consumer tile") {
  Tensor a = placeholder("A", TensorType{{9}, DType::kF32});
  Tensor r = op_def("relu").make_compute("R", {a}, {});
  Tensor c = op_def("scale").make_compute("C", {r}, {{"scale", 2.0}});
  Schedule s = Schedule::create({c});
  auto oi = s.split("C", "i0", 4);
  s.compute_at("R", "C", oi.first);

  LoopProgram p = lower(s, "prog");
  std::string text = print_program(p);
  CHECK(text.find("R: f32[4]") != std::string::npos);

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 61));
  auto out = interpret(p, feeds).outputs;
  CHECK(out.at("C").same_values(evaluate_reference(c, feeds), 0.0));
}

TEST_CASE("two reduce axes reorder within float tolerance") {
  Tensor d = placeholder("D", TensorType{{1, 2, 6, 6}, DType::kF32});
  Tensor w = placeholder("W", TensorType{{3, 2, 3, 3}, DType::kF32});
  Tensor c = op_def("conv2d").make_compute("C", {d, w}, {});
  Schedule s = Schedule::create({c});
  s.reorder("C", {"rw", "rh", "ic"});  // reduce order reversed

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("D", rand_tensor(d->type, 71));
  feeds.emplace("W", rand_tensor(w->type, 72));
  auto out = run_program(s, feeds);
  CHECK(out.at("C").same_values(evaluate_reference(c, feeds), 1e-5));
}

TEST_CASE("thread-bound matmul with cooperative shared staging") {
  Tensor a = placeholder("A", TensorType{{16, 12}, DType::kF32});
  Tensor b = placeholder("B", TensorType{{12, 16}, DType::kF32});
  Tensor c = matmul_tensor("C", a, b);
  Schedule s = Schedule::create({c});
  auto t = s.tile("C", "y", "x", 8, 8);
  s.bind("C", t[0], "blockIdx.y");
  s.bind("C", t[1], "blockIdx.x");
  s.bind("C", t[2], "threadIdx.y");
  s.bind("C", t[3], "threadIdx.x");
  auto kp = s.split("C", "k", 4);
  Tensor cache = s.cache_read("A", MemoryScope::kShared, {"C"});
  // Refill the staged tile once per reduction tile so both barriers matter:
  // the first keeps a refill from clobbering data a lagging thread still
  // reads, the second keeps readers behind the fill.
  s.compute_at(cache->name, "C", kp.first);

  LoopProgram p = lower(s, "prog");
  CHECK(count_barriers(p) == 2);
  std::string text = print_program(p);
  // The shared allocation must sit above the thread loops.
  auto alloc_pos = text.find("alloc A.shared");
  auto tloop_pos = text.find("bind(threadIdx.y)");
  REQUIRE(alloc_pos != std::string::npos);
  REQUIRE(tloop_pos != std::string::npos);
  CHECK(alloc_pos < tloop_pos);

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 81));
  feeds.emplace("B", rand_tensor(b->type, 82));
  auto out = interpret(p, feeds).outputs;
  CHECK(out.at("C").same_values(evaluate_reference(c, feeds), 0.0));

  SUBCASE("clean under randomized thread serializations") {
    RaceReport rep = race_check(p, feeds, 8, 7);
    CHECK_FALSE(rep.racy);
  }
  SUBCASE("deleting either barrier is flagged as a race") {
    for (int bi = 0; bi < 2; ++bi) {
      LoopProgram broken = remove_barrier(p, bi);
      RaceReport rep = race_check(broken, feeds, 8, 7);
      CHECK(rep.racy);
      CHECK(rep.buffer == "A.shared");
    }
  }
}

TEST_CASE("virtual threads split the outer loop without changing results") {
  Tensor a = placeholder("A", TensorType{{8, 4}, DType::kF32});
  Tensor c = op_def("relu").make_compute("C", {a}, {});
  Schedule s = Schedule::create({c});
  s.virtual_thread("C", "i0", 2);

  LoopProgram p = lower(s, "prog");
  std::string text = print_program(p);
  CHECK(text.find("bind(vthread)") != std::string::npos);

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 91));
  auto out = interpret(p, feeds).outputs;
  CHECK(out.at("C").same_values(evaluate_reference(c, feeds), 0.0));
}

TEST_CASE("tensorized matmul calls the accelerator intrinsic") {
  register_builtin_intrinsics();
  Tensor a = placeholder("A", TensorType{{16, 16}, DType::kI8});
  Tensor b = placeholder("B", TensorType{{16, 16}, DType::kI8});
  Tensor acc = matmul_tensor("Acc", a, b);
  // Copy stage so the accumulator can live in accelerator scope.
  Tensor out = compute(
      "Out", TensorType{{16, 16}, DType::kI32},
      {{"m", 16}, {"n", 16}}, read("Acc", {var("m"), var("n")}), {acc});
  Schedule s = Schedule::create({out});
  s.set_scope("Acc", MemoryScope::kAccelAccum);
  Tensor as = s.cache_read("A", MemoryScope::kAccelActivation, {"Acc"});
  Tensor ws = s.cache_read("B", MemoryScope::kAccelWeight, {"Acc"});
  (void)as;
  (void)ws;
  s.tensorize("Acc", "x", "vdla.gemm");

  LowerOptions opts;
  opts.target = "vdla";
  LoopProgram p = lower(s, "prog", opts);
  std::string text = print_program(p);
  CHECK(text.find("vdla.gemm") != std::string::npos);

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 101));
  feeds.emplace("B", rand_tensor(b->type, 102));
  auto got = interpret(p, feeds).outputs;
  CHECK(got.at("Out").same_values(evaluate_reference(out, feeds), 0.0));
}

TEST_CASE("tensorize refuses a mismatched tile extent") {
  register_builtin_intrinsics();
  Tensor a = placeholder("A", TensorType{{8, 16}, DType::kI8});
  Tensor b = placeholder("B", TensorType{{16, 8}, DType::kI8});
  Tensor acc = matmul_tensor("Acc", a, b);  // N = 8, intrinsic wants 16
  Tensor out = compute(
      "Out", TensorType{{8, 8}, DType::kI32},
      {{"m", 8}, {"n", 8}}, read("Acc", {var("m"), var("n")}), {acc});
  Schedule s = Schedule::create({out});
  s.set_scope("Acc", MemoryScope::kAccelAccum);
  s.cache_read("A", MemoryScope::kAccelActivation, {"Acc"});
  s.cache_read("B", MemoryScope::kAccelWeight, {"Acc"});
  s.tensorize("Acc", "x", "vdla.gemm");
  CHECK_THROWS_WITH_AS(lower(s, "prog"),
                       doctest::Contains("extent 8 != intrinsic axis"),
                       Error);
}

TEST_CASE("tensorize refuses wrongly scoped operands") {
  register_builtin_intrinsics();
  Tensor a = placeholder("A", TensorType{{16, 16}, DType::kI8});
  Tensor b = placeholder("B", TensorType{{16, 16}, DType::kI8});
  Tensor acc = matmul_tensor("Acc", a, b);
  Tensor out = compute(
      "Out", TensorType{{16, 16}, DType::kI32},
      {{"m", 16}, {"n", 16}}, read("Acc", {var("m"), var("n")}), {acc});
  Schedule s = Schedule::create({out});
  s.set_scope("Acc", MemoryScope::kAccelAccum);
  // Weight cache missing: B stays in global memory.
  s.cache_read("A", MemoryScope::kAccelActivation, {"Acc"});
  s.tensorize("Acc", "x", "vdla.gemm");
  try {
    lower(s, "prog");
    FAIL("expected a tensorize error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTensorizeMismatch);
    CHECK(std::string(e.what()).find("accel.weight") != std::string::npos);
  }
}

TEST_CASE("accelerator capacity budgets reject oversized buffers") {
  Tensor a = placeholder("A", TensorType{{256, 40}, DType::kF32});
  Tensor c = op_def("relu").make_compute("C", {a}, {});
  Schedule s = Schedule::create({c});
  Tensor cache = s.cache_read("A", MemoryScope::kAccelActivation, {"C"});
  (void)cache;  // 256*40*4 = 40960 bytes > 32768
  LowerOptions opts;
  opts.target = "vdla";
  try {
    lower(s, "prog", opts);
    FAIL("expected a capacity error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCapacityError);
  }
}

TEST_CASE("thread bindings are rejected for the accelerator target") {
  Tensor a = placeholder("A", TensorType{{8}, DType::kF32});
  Tensor c = op_def("relu").make_compute("C", {a}, {});
  Schedule s = Schedule::create({c});
  s.bind("C", "i0", "threadIdx.x");
  LowerOptions opts;
  opts.target = "vdla";
  try {
    lower(s, "prog", opts);
    FAIL("expected a lowering error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kLoweringError);
  }
}

TEST_CASE("interp cost counts stores and loop entries") {
  Tensor a = placeholder("A", TensorType{{4}, DType::kF32});
  Tensor c = op_def("relu").make_compute("C", {a}, {});
  Schedule s = Schedule::create({c});
  LoopProgram p = lower(s, "prog");
  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(a->type, 111));
  InterpResult res = interpret(p, feeds);
  CHECK(res.stores == 4);
  CHECK(res.loop_iters == 4);
  CHECK(res.cost() == 8);
}
