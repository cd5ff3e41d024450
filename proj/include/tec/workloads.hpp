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
#ifndef TEC_WORKLOADS_HPP_
#define TEC_WORKLOADS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tec/autotune.hpp"
#include "tec/graph.hpp"
#include "tec/loop_ir.hpp"
#include "tec/schedule.hpp"
#include "tec/tensor.hpp"
#include "tec/vdla.hpp"

namespace tec {

/*
 * Canned workload builders shared by the test suites and the command-line
 * driver: the tunable accelerator matmul template and its knob grid, the
 * fused-versus-unfused pipelines, the cooperative-fetch matmul, and random
 * generators for schedules and graphs.
 */

/*!
 * \brief Tiled accelerator matmul: C[m,n] = sum_k A[m,k] * B[k,n] in i8.
 *
 * Output tiles of tile_m x tile_n, operand tiles staged on chip once per
 * tile_k reduction slice, inner 16x16x16 blocks handed to the tensor
 * intrinsic. vthreads > 1 splits the outermost tile loop into virtual
 * threads; n_outer_first walks tiles column-major. Throws Error when the
 * factors do not divide the problem or the thread count.
 */
Schedule gemm_vdla_schedule(int64_t m, int64_t n, int64_t k, int64_t tile_m,
                            int64_t tile_n, int64_t tile_k, int64_t vthreads,
                            bool n_outer_first);

// The tuning grid over gemm_vdla_schedule for an m x k by k x n problem.
KnobSpace gemm_vdla_space(int64_t m = 192, int64_t n = 64, int64_t k = 192);

// Memory-bound reference matmul (128x192 by 192x64): full-depth reduction
// slices, so the pipeline stalls on DMA unless virtual threads overlap it.
Schedule reference_gemm_schedule(int64_t vthreads);
LoopProgram reference_gemm_program(int64_t vthreads);

/*!
 * \brief One fused accelerator kernel next to its unfused pipeline.
 *
 * The staged programs chain by tensor name: each consumes the previous
 * stage's output from DRAM, so every boundary pays a store plus reload
 * that the fused kernel keeps on chip.
 */
struct FusionCase {
  std::string name;
  LoopProgram fused;
  std::vector<LoopProgram> stages;
  std::vector<std::string> outputs;  // final output tensor names
};

FusionCase conv_relu_case();
FusionCase matmul_bias_relu_case();

// Thread-bound matmul whose operand tile is staged cooperatively into
// shared memory; both barriers around the staging loop are load-bearing.
LoopProgram coop_matmul_program();

// Random inputs for every non-output parameter of a program.
std::map<std::string, DenseTensor> random_feeds(const LoopProgram& p,
                                                uint64_t seed);

// Co-simulates the staged programs in order, feeding each stage the union
// of the original feeds and earlier outputs. Returns the final outputs and
// accumulates total cycles across stages.
std::map<std::string, DenseTensor> run_vdla_chain(
    const std::vector<LoopProgram>& stages,
    const std::map<std::string, DenseTensor>& feeds, const PipelineConfig& cfg,
    int64_t* total_cycles);

/*!
 * \brief A random schedule over a random small workload, for soundness
 *        fuzzing: lowering then interpreting it must match the reference
 *        evaluation of its outputs.
 */
struct RandomSchedule {
  Schedule sched;
  std::string target;           // lowering target the primitives are legal for
  std::vector<Tensor> outputs;  // for reference evaluation of the results
};
RandomSchedule random_schedule(uint64_t seed);

// Random elementwise DAG (at most max_nodes nodes) over two tensor shape
// classes; exercises fusion grouping and memory planning.
ComputeGraph random_graph(uint64_t seed, int max_nodes = 12);

}  // namespace tec

#endif  // TEC_WORKLOADS_HPP_
