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
#ifndef TEC_VDLA_HPP_
#define TEC_VDLA_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tec/loop_ir.hpp"
#include "tec/tensor.hpp"

namespace tec {

/*!
 * \brief Timing and capacity model of the accelerator: a 16x16 MAC grid fed
 *        by decoupled load / compute / store stages over scoped SRAMs.
 *
 * The default DRAM figures make small matmuls memory-bound with one virtual
 * thread and compute-bound with two, so latency hiding is observable.
 */
struct PipelineConfig {
  int mac_rows = 16;
  int mac_cols = 16;
  int64_t gemm_cycles = 1;  // one 16x16 tile per cycle
  int64_t dram_latency_cycles = 100;
  int64_t dram_bytes_per_cycle = 16;
  int64_t activation_bytes = 32 * 1024;
  int64_t weight_bytes = 32 * 1024;
  int64_t microcode_bytes = 32 * 1024;
  int64_t accum_bytes = 128 * 1024;
  double clock_mhz = 200.0;

  double clock_hz() const { return clock_mhz * 1e6; }
  // 16*16 MACs/cycle, two scalar ops each.
  double peak_gops() const {
    return mac_rows * mac_cols * 2.0 * clock_hz() / 1e9;
  }
};

enum class VdlaOp { kLoad, kStore, kGemm, kAlu, kPushDep, kPopDep };
enum class VdlaStage { kLoadStage = 0, kComputeStage = 1, kStoreStage = 2 };

const char* vdla_op_name(VdlaOp op);
const char* vdla_stage_name(VdlaStage s);
VdlaStage stage_of(VdlaOp op, VdlaStage from, VdlaStage to);

/*! \brief Concretized intrinsic operand: constant origin per buffer dim. */
struct GemmOperand {
  std::string behavior_tensor;
  std::string buffer;
  std::vector<int64_t> base;
  std::vector<int> axis_dim;  // behavior dim d maps to buffer dim axis_dim[d]
};

/*!
 * \brief One accelerator instruction.
 *
 * LOAD/STORE carry the exact element moves (flat dst/src indices) so the
 * functional co-simulation can replay DMA traffic; `bytes` is the DRAM bus
 * traffic. ALU carries the collapsed loop nest plus the enclosing loop
 * environment and executes at one element per cycle. PUSH/POP move one
 * dependence token between stage queues.
 */
/** One rectangular buffer region an instruction reads or writes. */
struct VdlaAccess {
  std::string buffer;
  bool read = false;
  bool write = false;
  std::vector<int64_t> lo, hi;  // inclusive bounds per dim
};

struct VdlaInstruction {
  VdlaOp op = VdlaOp::kAlu;
  int thread = 0;
  std::vector<VdlaAccess> touches;  // on-chip and DRAM regions

  // kLoad / kStore / on-chip copies (kAlu with moves).
  std::string dst_buffer, src_buffer;
  std::vector<std::pair<int64_t, int64_t>> moves;  // (dst flat, src flat)
  std::vector<int64_t> dst_lo, dst_ext, src_lo, src_ext;
  int64_t bytes = 0;

  // kGemm
  std::string call_name;
  std::vector<GemmOperand> operands;
  int64_t mac_ops = 0;

  // kAlu compute: collapsed single-store nest evaluated under env.
  StmtPtr alu_body;
  std::map<std::string, int64_t> env;
  int64_t extent = 0;

  // kPushDep / kPopDep
  VdlaStage from = VdlaStage::kLoadStage;
  VdlaStage to = VdlaStage::kComputeStage;
};

struct VdlaBufferDecl {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<int64_t> shape;
  MemoryScope scope = MemoryScope::kGlobal;
  int64_t elems() const {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
  }
};

struct InstructionStream {
  std::string name;
  int vthreads = 1;
  std::vector<VdlaInstruction> instrs;
  std::vector<ParamDecl> params;
  // Every buffer the stream touches; on-chip entries are instantiated once
  // per virtual thread at co-simulation time.
  std::map<std::string, VdlaBufferDecl> buffers;
};

/*!
 * \brief Lower a loop program to the single interleaved instruction stream.
 *
 * Three phases: per-virtual-thread emission (copy nests collapse to DMA
 * instructions, calls become GEMMs, on-chip elementwise nests become ALU
 * ops), dependence-token insertion around every cross-stage buffer handoff
 * within a thread, and round-robin interleaving at one-instruction
 * granularity.
 */
InstructionStream lower_to_vdla(const LoopProgram& p,
                                const PipelineConfig& cfg = {});

std::string print_stream(const InstructionStream& s);

struct SimResult {
  int64_t total_cycles = 0;
  int64_t busy_load = 0;
  int64_t busy_compute = 0;
  int64_t busy_store = 0;
  int64_t bytes_moved = 0;
  int64_t mac_ops = 0;
  double compute_utilization = 0.0;
  double operational_intensity = 0.0;  // MACs per DRAM byte

  double gops(const PipelineConfig& cfg) const {
    if (total_cycles <= 0) return 0.0;
    return mac_ops * 2.0 * cfg.clock_hz() / total_cycles / 1e9;
  }
};

/*! \brief Cycle-level timing of the decoupled three-stage pipeline. */
SimResult simulate(const InstructionStream& s, const PipelineConfig& cfg = {});

/*!
 * \brief Timing plus functional replay: instruction effects are applied in
 *        start-cycle order, so missing synchronization shows up as stale
 *        reads in the outputs rather than only as timing noise.
 */
SimResult cosimulate(const InstructionStream& s, const PipelineConfig& cfg,
                     const std::map<std::string, DenseTensor>& inputs,
                     std::map<std::string, DenseTensor>* outputs);

// Sync-mutation helpers: positions of PUSH/POP instructions, and a stream
// copy with one instruction removed.
std::vector<size_t> sync_positions(const InstructionStream& s);
InstructionStream drop_instruction(const InstructionStream& s, size_t pos);

struct RooflinePoint {
  std::string workload;
  double intensity = 0.0;
  double gops = 0.0;
  double bound_gops = 0.0;
  bool memory_bound = false;
};

std::vector<RooflinePoint> roofline_report(
    const std::vector<std::pair<std::string, SimResult>>& results,
    const PipelineConfig& cfg = {});

std::string roofline_csv(const std::vector<RooflinePoint>& pts);

}  // namespace tec

#endif  // TEC_VDLA_HPP_
