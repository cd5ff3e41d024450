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
#ifndef TEC_SCHEDULE_HPP_
#define TEC_SCHEDULE_HPP_

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tec/texpr.hpp"
#include "vendor/json.hpp"

namespace tec {

enum class IterKind { kDataParallel, kReduce };
enum class LoopAnn { kNone, kUnroll, kVectorize, kParallel };

/*! \brief One loop axis of a stage. */
struct IterVar {
  std::string id;  // unique within its stage
  int64_t extent = 0;
  IterKind kind = IterKind::kDataParallel;
  LoopAnn ann = LoopAnn::kNone;
  std::string bind_tag;  // blockIdx.* / threadIdx.* / vthread, or empty
};

/*! \brief How derived axes relate to their parents; drives index recovery. */
struct AxisRelation {
  enum Kind { kSplit, kFuse } kind;
  // split: parent -> outer*factor + inner; fuse: (outer,inner) -> fused
  std::string parent, outer, inner, fused;
  int64_t factor = 0;       // split only
  int64_t inner_extent = 0; // fuse only
  bool needs_guard = false; // split of a non-divisible extent
};

struct TensorizeInfo {
  std::string axis;
  std::string intrin;
};

/*!
 * \brief Per-tensor scheduling state: loop order, scope, attachment.
 *
 * Cache stages are copy ops injected by cache_read; their readers see
 * the cache buffer instead of the original tensor from then on.
 */
struct Stage {
  Tensor tensor;
  std::string name;
  bool is_output = false;
  std::vector<IterVar> leaf;
  std::vector<AxisRelation> relations;
  MemoryScope scope = MemoryScope::kGlobal;
  bool scope_set = false;
  std::string at_stage, at_axis;  // compute_at target; empty = root
  std::optional<TensorizeInfo> tensorized;
  bool is_cache = false;
  std::string cache_src;
  std::vector<std::string> cache_readers;

  IterVar& axis(const std::string& id);
  const IterVar& axis(const std::string& id) const;
  int axis_pos(const std::string& id) const;  // -1 if absent
  bool has_axis(const std::string& id) const { return axis_pos(id) >= 0; }
};

/*!
 * \brief Schedule over the producer chain of one or more output tensors.
 *
 * Every primitive appends a replayable entry to the transformation log;
 * replaying the log on a fresh schedule reproduces the tree exactly.
 */
class Schedule {
 public:
  static Schedule create(const std::vector<Tensor>& outputs);

  Stage& stage(const std::string& name);
  const Stage& stage(const std::string& name) const;
  bool has_stage(const std::string& name) const;
  const std::vector<Stage>& stages() const { return stages_; }

  // axis -> (outer, inner); inner extent == factor, outer rounds up.
  std::pair<std::string, std::string> split(const std::string& stage,
                                            const std::string& axis,
                                            int64_t factor);

  // Reorders the named leaf axes in place; unnamed axes keep position.
  void reorder(const std::string& stage,
               const std::vector<std::string>& axes);

  // (x, y) -> (x.outer, y.outer, x.inner, y.inner)
  std::array<std::string, 4> tile(const std::string& stage,
                                  const std::string& x, const std::string& y,
                                  int64_t fx, int64_t fy);

  // Adjacent same-kind axes collapse into one.
  std::string fuse_axes(const std::string& stage, const std::string& outer,
                        const std::string& inner);

  void unroll(const std::string& stage, const std::string& axis);
  void vectorize(const std::string& stage, const std::string& axis);
  void parallel(const std::string& stage, const std::string& axis);

  void bind(const std::string& stage, const std::string& axis,
            const std::string& thread_tag);

  // Peels `n` virtual threads off an axis; n must divide its extent.
  std::string virtual_thread(const std::string& stage, const std::string& axis,
                             int64_t n);

  // New copy stage staging `src` into `scope` for the given readers.
  Tensor cache_read(const std::string& src, MemoryScope scope,
                    const std::vector<std::string>& readers);

  void set_scope(const std::string& stage, MemoryScope scope);

  void compute_at(const std::string& producer, const std::string& consumer,
                  const std::string& axis);

  void tensorize(const std::string& stage, const std::string& axis,
                 const std::string& intrin);

  const nlohmann::json& log() const { return log_; }

  // Rebuilds a schedule from a recorded transformation log.
  static Schedule replay(const std::vector<Tensor>& outputs,
                         const nlohmann::json& log);

  // Applies one log entry; used by replay and by config templates.
  void apply_log_entry(const nlohmann::json& e);

  std::vector<Tensor> outputs() const { return outputs_; }

 private:
  int stage_index(const std::string& name) const;
  void check_axis_free(const Stage& s, const IterVar& iv,
                       const char* action) const;
  void check_thread_order(const Stage& s) const;

  std::vector<Tensor> outputs_;
  std::vector<Stage> stages_;
  nlohmann::json log_ = nlohmann::json::array();
};

}  // namespace tec

#endif  // TEC_SCHEDULE_HPP_
