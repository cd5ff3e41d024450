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
#include "tec/vdla.hpp"
#include "tests/test_util.hpp"
#include "vendor/doctest.h"

using namespace tec;
using tec_test::rand_tensor;

namespace {

VdlaInstruction load_instr(int64_t bytes) {
  VdlaInstruction in;
  in.op = VdlaOp::kLoad;
  in.bytes = bytes;
  return in;
}

VdlaInstruction gemm_instr(int64_t macs) {
  VdlaInstruction in;
  in.op = VdlaOp::kGemm;
  in.mac_ops = macs;
  return in;
}

VdlaInstruction sync_instr(VdlaOp op, VdlaStage from, VdlaStage to) {
  VdlaInstruction in;
  in.op = op;
  in.from = from;
  in.to = to;
  return in;
}

// Stage one input row through the activation buffer, multiply by an
// all-zero resident weight tile, and copy the accumulator out. Lowers to
// the smallest possible pipeline round trip.
LoopProgram tiny_gemm_program(int64_t rows) {
  LoopProgram p;
  p.name = "tiny";
  bool threaded = rows > 1;
  std::vector<int64_t> ashape = threaded ? std::vector<int64_t>{rows, 16}
                                         : std::vector<int64_t>{16};
  std::vector<int64_t> cshape = threaded ? std::vector<int64_t>{rows, 16}
                                         : std::vector<int64_t>{16};
  p.params.push_back({"A", TensorType{ashape, DType::kI8}, false});
  p.params.push_back({"C", TensorType{cshape, DType::kI32}, true});

  std::vector<Expr> aidx =
      threaded ? std::vector<Expr>{var("v"), var("c0")}
               : std::vector<Expr>{var("c0")};
  std::vector<Expr> cidx =
      threaded ? std::vector<Expr>{var("v"), var("c1")}
               : std::vector<Expr>{var("c1")};
  StmtPtr fill = make_for("c0", 16, ForKind::kSerial, "",
                          make_store("abuf", {var("c0")}, read("A", aidx)));
  RegionArg go{"go", "acc", {cst(0)}, {0}};
  RegionArg gx{"gx", "abuf", {cst(0)}, {0}};
  RegionArg gw{"gw", "wbuf", {cst(0), cst(0)}, {0, 1}};
  StmtPtr call = make_call("vdla.gemm", {go, gx, gw});
  StmtPtr out = make_for("c1", 16, ForKind::kSerial, "",
                         make_store("C", cidx, read("acc", {var("c1")})));

  StmtPtr body = make_seq({fill, call, out});
  body = make_alloc("acc", MemoryScope::kAccelAccum, DType::kI32, {16}, body);
  body = make_alloc("wbuf", MemoryScope::kAccelWeight, DType::kI8, {16, 16},
                    body);
  body = make_alloc("abuf", MemoryScope::kAccelActivation, DType::kI8, {16},
                    body);
  if (threaded)
    body = make_for("v", rows, ForKind::kVirtualThread, "vthread", body);
  p.root = body;
  return p;
}

// The reference double-buffered accelerator matmul: 64x32 by 32x32 in i8,
// 16x16 output tiles, operand tiles refilled every 16-step reduction slice.
Schedule tiled_matmul_schedule(bool two_threads) {
  register_builtin_intrinsics();
  Tensor a = placeholder("A", TensorType{{64, 32}, DType::kI8});
  Tensor b = placeholder("B", TensorType{{32, 32}, DType::kI8});
  Tensor acc = op_def("matmul").make_compute("Acc", {a, b}, {});
  Tensor out = compute("Out", TensorType{{64, 32}, DType::kI32},
                       {{"m", 64}, {"n", 32}},
                       read("Acc", {var("m"), var("n")}), {acc});
  Schedule s = Schedule::create({out});
  auto t = s.tile("Out", "m", "n", 16, 16);
  if (two_threads) s.virtual_thread("Out", t[0], 2);
  s.set_scope("Acc", MemoryScope::kAccelAccum);
  s.compute_at("Acc", "Out", t[1]);
  auto kp = s.split("Acc", "k", 16);
  Tensor as = s.cache_read("A", MemoryScope::kAccelActivation, {"Acc"});
  Tensor ws = s.cache_read("B", MemoryScope::kAccelWeight, {"Acc"});
  // Reduction slices outermost, so each operand tile is fetched once per
  // slice instead of once per output row.
  s.reorder("Acc", {kp.first, "y", "x", kp.second});
  s.compute_at(as->name, "Acc", kp.first);
  s.compute_at(ws->name, "Acc", kp.first);
  s.tensorize("Acc", "x", "vdla.gemm");
  return s;
}

std::map<std::string, DenseTensor> matmul_feeds() {
  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(TensorType{{64, 32}, DType::kI8}, 11));
  feeds.emplace("B", rand_tensor(TensorType{{32, 32}, DType::kI8}, 12));
  return feeds;
}

}  // namespace

TEST_CASE("a single dram load costs the latency plus the streaming time") {
  InstructionStream s;
  s.name = "one_load";
  s.instrs.push_back(load_instr(256));
  SimResult r = simulate(s);
  CHECK(r.total_cycles == 116);  // 100 latency + 256/16 streaming
  CHECK(r.busy_load == 116);
  CHECK(r.busy_compute == 0);
  CHECK(r.bytes_moved == 256);
  CHECK(r.compute_utilization == doctest::Approx(0.0));
}

TEST_CASE("a gemm gated on a load finishes one cycle after it") {
  InstructionStream s;
  s.name = "load_gemm";
  s.instrs.push_back(load_instr(256));
  s.instrs.push_back(sync_instr(VdlaOp::kPushDep, VdlaStage::kLoadStage,
                                VdlaStage::kComputeStage));
  s.instrs.push_back(sync_instr(VdlaOp::kPopDep, VdlaStage::kLoadStage,
                                VdlaStage::kComputeStage));
  s.instrs.push_back(gemm_instr(256));
  SimResult r = simulate(s);
  CHECK(r.total_cycles == 117);
  CHECK(r.busy_compute == 1);
  CHECK(r.mac_ops == 256);
}

TEST_CASE("a pop with no matching push deadlocks with a stage snapshot") {
  InstructionStream s;
  s.name = "stuck";
  s.instrs.push_back(sync_instr(VdlaOp::kPopDep, VdlaStage::kLoadStage,
                                VdlaStage::kComputeStage));
  s.instrs.push_back(gemm_instr(256));
  try {
    simulate(s);
    FAIL("expected a deadlock");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDeadlockError);
    CHECK(std::string(e.what()).find("compute") != std::string::npos);
  }
}

TEST_CASE("a saturated compute stream reaches the 102.4 GOPS peak") {
  InstructionStream s;
  s.name = "macs";
  for (int i = 0; i < 1000; ++i) s.instrs.push_back(gemm_instr(256));
  PipelineConfig cfg;
  SimResult r = simulate(s, cfg);
  CHECK(r.total_cycles == 1000);
  CHECK(r.compute_utilization == doctest::Approx(1.0));
  CHECK(r.gops(cfg) == doctest::Approx(102.4).epsilon(1e-9));

  auto pts = roofline_report({{"macs", r}}, cfg);
  REQUIRE(pts.size() == 1);
  CHECK_FALSE(pts[0].memory_bound);
  CHECK(pts[0].bound_gops == doctest::Approx(102.4));
}

TEST_CASE("a pure load stream does no work and sits on the bandwidth roof") {
  InstructionStream s;
  s.name = "loads";
  for (int i = 0; i < 10; ++i) s.instrs.push_back(load_instr(256));
  PipelineConfig cfg;
  SimResult r = simulate(s, cfg);
  CHECK(r.total_cycles == 1160);
  CHECK(r.mac_ops == 0);
  CHECK(r.gops(cfg) == doctest::Approx(0.0));

  auto pts = roofline_report({{"loads", r}}, cfg);
  CHECK(pts[0].memory_bound);
  CHECK(pts[0].gops == doctest::Approx(0.0));
  std::string csv = roofline_csv(pts);
  CHECK(csv.find("workload,intensity,gops,bound") == 0);
  CHECK(csv.find("loads,0,0,memory") != std::string::npos);
}

TEST_CASE("one pipeline round trip lowers to three instructions plus four tokens") {
  LoopProgram p = tiny_gemm_program(1);
  InstructionStream s = lower_to_vdla(p);
  REQUIRE(s.instrs.size() == 7);
  const VdlaOp want[7] = {VdlaOp::kLoad,    VdlaOp::kPushDep,
                          VdlaOp::kPopDep,  VdlaOp::kGemm,
                          VdlaOp::kPushDep, VdlaOp::kPopDep,
                          VdlaOp::kStore};
  for (int i = 0; i < 7; ++i) CHECK(s.instrs[i].op == want[i]);
  CHECK(s.instrs[1].from == VdlaStage::kLoadStage);
  CHECK(s.instrs[1].to == VdlaStage::kComputeStage);
  CHECK(s.instrs[5].from == VdlaStage::kComputeStage);
  CHECK(s.instrs[5].to == VdlaStage::kStoreStage);

  // 16 B in (101), one gemm (1), 64 B out (104), fully serialized.
  SimResult r = simulate(s);
  CHECK(r.total_cycles == 206);
  CHECK(r.bytes_moved == 80);

  std::string text = print_stream(s);
  CHECK(text.find("t0 LOAD") != std::string::npos);
  CHECK(text.find("PUSH load->compute") != std::string::npos);
  CHECK(text.find("POP compute->store") != std::string::npos);
}

TEST_CASE("two virtual threads interleave round-robin") {
  LoopProgram p = tiny_gemm_program(2);
  InstructionStream s = lower_to_vdla(p);
  CHECK(s.vthreads == 2);
  REQUIRE(s.instrs.size() == 14);
  for (int i = 0; i < 14; ++i) {
    CHECK(s.instrs[i].thread == i % 2);
    CHECK(s.instrs[i].op == s.instrs[i ^ 1].op);  // pairwise identical
  }

  // The second thread's load overlaps the first thread's compute and
  // store, so two tiles finish in less than twice the one-tile time.
  SimResult one = simulate(lower_to_vdla(tiny_gemm_program(1)));
  SimResult two = simulate(s);
  CHECK(two.total_cycles < 2 * one.total_cycles);

  std::map<std::string, DenseTensor> feeds;
  feeds.emplace("A", rand_tensor(TensorType{{2, 16}, DType::kI8}, 21));
  std::map<std::string, DenseTensor> got;
  cosimulate(s, PipelineConfig{}, feeds, &got);
  auto want = interpret(p, feeds).outputs;
  CHECK(got.at("C").same_values(want.at("C"), 0.0));
}

TEST_CASE("tensorized matmul co-simulates exactly like the interpreter") {
  Schedule s = tiled_matmul_schedule(false);
  LowerOptions opts;
  opts.target = "vdla";
  LoopProgram p = lower(s, "mm", opts);
  auto feeds = matmul_feeds();

  InstructionStream stream = lower_to_vdla(p);
  std::map<std::string, DenseTensor> got;
  SimResult r = cosimulate(stream, PipelineConfig{}, feeds, &got);
  auto want = interpret(p, feeds).outputs;
  CHECK(got.at("Out").same_values(want.at("Out"), 0.0));
  CHECK(r.mac_ops == 64 * 32 * 32);  // one mac per output-reduction point

  // Simulated traffic equals the static byte count of the loop program.
  FlopByteCount fb = count_flops_and_bytes(p);
  CHECK(r.bytes_moved == fb.bytes_loaded + fb.bytes_stored);
}

TEST_CASE("virtual threads raise utilization and cut cycles on the tiled matmul") {
  LowerOptions opts;
  opts.target = "vdla";
  LoopProgram p1 = lower(tiled_matmul_schedule(false), "mm1", opts);
  LoopProgram p2 = lower(tiled_matmul_schedule(true), "mm2", opts);
  SimResult r1 = simulate(lower_to_vdla(p1));
  SimResult r2 = simulate(lower_to_vdla(p2));
  CHECK(r2.total_cycles < r1.total_cycles);
  CHECK(r2.compute_utilization > r1.compute_utilization);

  auto feeds = matmul_feeds();
  std::map<std::string, DenseTensor> got;
  cosimulate(lower_to_vdla(p2), PipelineConfig{}, feeds, &got);
  CHECK(got.at("Out").same_values(interpret(p1, feeds).outputs.at("Out"), 0.0));
}

TEST_CASE("deleting any one dependence token deadlocks or corrupts the output") {
  LowerOptions opts;
  opts.target = "vdla";
  LoopProgram p = lower(tiled_matmul_schedule(true), "mm", opts);
  InstructionStream stream = lower_to_vdla(p);
  auto feeds = matmul_feeds();
  std::map<std::string, DenseTensor> clean;
  cosimulate(stream, PipelineConfig{}, feeds, &clean);

  std::vector<size_t> syncs = sync_positions(stream);
  REQUIRE(syncs.size() >= 8);
  int flagged = 0;
  for (size_t pos : syncs) {
    InstructionStream broken = drop_instruction(stream, pos);
    try {
      std::map<std::string, DenseTensor> got;
      cosimulate(broken, PipelineConfig{}, feeds, &got);
      if (!got.at("Out").same_values(clean.at("Out"), 0.0)) ++flagged;
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kDeadlockError);
      ++flagged;
    }
  }
  CHECK(flagged == static_cast<int>(syncs.size()));
}

TEST_CASE("compute on dram-resident buffers cannot be lowered") {
  LoopProgram p;
  p.name = "bad";
  p.params.push_back({"A", TensorType{{16}, DType::kI32}, false});
  p.params.push_back({"B", TensorType{{16}, DType::kI32}, false});
  p.params.push_back({"C", TensorType{{16}, DType::kI32}, true});
  p.root = make_for(
      "i", 16, ForKind::kSerial, "",
      make_store("C", {var("i")},
                 add(read("A", {var("i")}), read("B", {var("i")}))));
  CHECK_THROWS_WITH_AS(lower_to_vdla(p), doctest::Contains("on-chip"), Error);
}

TEST_CASE("a load that rereads this thread's own store is rejected") {
  LoopProgram p;
  p.name = "roundtrip";
  p.params.push_back({"C", TensorType{{16}, DType::kI32}, true});
  StmtPtr spill = make_for("i", 16, ForKind::kSerial, "",
                           make_store("C", {var("i")}, read("acc", {var("i")})));
  StmtPtr refill = make_for("j", 16, ForKind::kSerial, "",
                            make_store("acc", {var("j")}, read("C", {var("j")})));
  p.root = make_alloc("acc", MemoryScope::kAccelAccum, DType::kI32, {16},
                      make_seq({spill, refill}));
  CHECK_THROWS_WITH_AS(lower_to_vdla(p),
                       doctest::Contains("load<->store dependence queue"),
                       Error);
}

TEST_CASE("per-thread on-chip budgets shrink with the virtual thread count") {
  LoopProgram p;
  p.name = "fat";
  p.params.push_back({"A", TensorType{{2, 20000}, DType::kI8}, false});
  p.params.push_back({"C", TensorType{{2, 1}, DType::kI32}, true});
  StmtPtr fill =
      make_for("i", 20000, ForKind::kSerial, "",
               make_store("big", {var("i")}, read("A", {var("v"), var("i")})));
  StmtPtr body = make_alloc("big", MemoryScope::kAccelActivation, DType::kI8,
                            {20000}, fill);
  p.root = make_for("v", 2, ForKind::kVirtualThread, "vthread", body);
  // 20000 B fits the 32 KiB activation store once, but not per thread.
  CHECK_THROWS_WITH_AS(lower_to_vdla(p),
                       doctest::Contains("per-thread budget"), Error);
}

TEST_CASE("flop and byte counts match hand counts on a naive matmul") {
  Tensor a = placeholder("A", TensorType{{8, 8}, DType::kF32});
  Tensor b = placeholder("B", TensorType{{8, 8}, DType::kF32});
  Tensor c = op_def("matmul").make_compute("C", {a, b}, {});
  LoopProgram p = lower(Schedule::create({c}), "mm");
  FlopByteCount fb = count_flops_and_bytes(p);
  CHECK(fb.mul_add_ops == 2 * 8 * 8 * 8);   // one mul + one add per point
  CHECK(fb.bytes_loaded == 2 * 8 * 8 * 4);  // A and B streamed once
  CHECK(fb.bytes_stored == 8 * 8 * 4);      // C written once
}

TEST_CASE("flop counts weigh an accelerator call as its unrolled body") {
  LoopProgram p = tiny_gemm_program(1);
  FlopByteCount fb = count_flops_and_bytes(p);
  // 16x16 macs, each one multiply plus one accumulate.
  CHECK(fb.mul_add_ops == 512);
  CHECK(fb.bytes_loaded == 16);  // the staged activation row
  CHECK(fb.bytes_stored == 64);  // the copied-out accumulator row
}

TEST_CASE("an empty program counts nothing") {
  LoopProgram p;
  p.name = "empty";
  p.root = make_seq({});
  FlopByteCount fb = count_flops_and_bytes(p);
  CHECK(fb.mul_add_ops == 0);
  CHECK(fb.bytes_loaded == 0);
  CHECK(fb.bytes_stored == 0);
}
