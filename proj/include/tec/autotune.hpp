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
#ifndef TEC_AUTOTUNE_HPP_
#define TEC_AUTOTUNE_HPP_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tec/loop_ir.hpp"
#include "tec/lower.hpp"
#include "tec/schedule.hpp"
#include "tec/vdla.hpp"
#include "vendor/json.hpp"

namespace tec {

class WorkerPool;

/* ----------------------------- knob spaces ----------------------------- */

// One full knob assignment; every knob maps to one of its listed candidates.
using Config = std::map<std::string, int64_t>;

// Canonical "k1=v1 k2=v2" form; used as the dedup key everywhere.
std::string config_key(const Config& c);

nlohmann::json config_to_json(const Config& c);
Config config_from_json(const nlohmann::json& j);

struct KnobDef {
  std::string name;
  std::vector<int64_t> values;  // ordered candidates; adjacency for annealing
};

/*!
 * \brief A schedule template with its discrete knob space.
 *
 * `instantiate` must be total over the grid in the sense that it either
 * returns a schedule or throws Error for combinations the template cannot
 * realize (those become failed trials, never crashes).
 */
struct KnobSpace {
  std::string workload;       // database key for trials of this template
  std::string target = "vdla";  // lowering target: "vdla" | "interp"
  std::vector<KnobDef> knobs;
  std::function<Schedule(const Config&)> instantiate;
  std::string program_name = "main";
  LowerOptions lower_opts;  // target field is overwritten from `target`

  int64_t size() const;
  // Mixed-radix decode of a flat index; knob 0 varies slowest.
  Config config_at(int64_t flat) const;
  int64_t index_of(const Config& c) const;  // -1 when off the grid
  Config random_config(std::mt19937_64* rng) const;
  LoopProgram lower_config(const Config& c) const;
};

/* ---------------------------- featurization ---------------------------- */

inline constexpr int kFeatureLevels = 8;
inline constexpr int kFeatureBuffers = 8;
// Per (buffer, level): access count, reuse ratio, touched bytes; then per
// level one annotation-count slot each for vectorize/unroll/parallel/vthread.
inline constexpr int kFeatureDim =
    kFeatureBuffers * kFeatureLevels * 3 + kFeatureLevels * 4;

using FeatureVector = std::vector<double>;

/*!
 * \brief Summarizes a loop program's memory behavior per loop level.
 *
 * For every buffer access and every enclosing loop level, counts the
 * executions of that access within one sweep of the level and the distinct
 * elements it can touch there (interval-width bound), giving access_count
 * and reuse_ratio = accesses / distinct. Deeper levels than 8 fold into
 * level 7; buffers beyond 8 fold into slot 7.
 */
FeatureVector extract_features(const LoopProgram& p);

// Deterministic instruction-count stand-in for interpreted run time: executed
// stores plus loop-body entries, with guards counted as taken and an
// intrinsic call counted as one store.
int64_t interp_cost_proxy(const LoopProgram& p);

/* ---------------------------- trial database --------------------------- */

struct TrialRecord {
  std::string workload;
  Config config;
  double cost = 0.0;   // simulated cycles (vdla) or instruction proxy (interp)
  int64_t timestamp = 0;
  std::string status = "ok";  // "ok" | "lowering_failed" | "measure_failed"
  std::string method = "ml";  // candidate source tag, e.g. "ml" | "random"

  bool ok() const { return status == "ok"; }
};

nlohmann::json trial_to_json(const TrialRecord& t);
TrialRecord trial_from_json(const nlohmann::json& j);

// Append-only JSON-lines database; one record per line.
void append_trials(const std::string& path, const std::vector<TrialRecord>& v);
std::vector<TrialRecord> load_trials(const std::string& path);  // absent -> {}

/* ------------------------------ cost model ----------------------------- */

struct GbtParams {
  int max_depth = 6;
  int rounds = 50;
  double learning_rate = 0.3;
  double reg_lambda = 1.0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;
  double eval(const FeatureVector& f) const;
};

/*!
 * \brief Boosted regression trees under a pairwise logistic rank loss.
 *
 * Scores carry no units; only their order is meaningful, lower = faster.
 * Training is deterministic (exact greedy splits, fixed tie-breaks) and
 * refits from scratch on every call. An untrained model scores everything
 * 0, so selection on top of it degenerates to uniform choice.
 */
class CostModel {
 public:
  CostModel() = default;
  explicit CostModel(GbtParams p) : params_(p) {}

  bool trained() const { return !trees_.empty(); }
  // costs: positive measured costs, log-transformed internally before pair
  // construction. Fewer than two rows -> kNotEnoughData.
  void train(const std::vector<FeatureVector>& feats,
             const std::vector<double>& costs);
  double predict(const FeatureVector& f) const;

  nlohmann::json to_json() const;
  static CostModel from_json(const nlohmann::json& j);

 private:
  GbtParams params_;
  std::vector<RegressionTree> trees_;
};

// Fraction of (i, j) pairs with costs[i] != costs[j] whose predicted order
// matches; prediction ties count one half.
double pairwise_rank_accuracy(const CostModel& m,
                              const std::vector<FeatureVector>& feats,
                              const std::vector<double>& costs);

/* ------------------------------ exploration ---------------------------- */

struct ExploreParams {
  int chains = 4;
  int steps = 500;
  double t0 = 1.0;
  double decay = 0.99;        // temperature factor per step
  double random_frac = 0.05;  // floor of random picks per batch
};

/*!
 * \brief Persistent annealing state: chain positions survive model updates,
 *        and lowered features are cached so revisited configs cost nothing.
 */
struct AnnealState {
  explicit AnnealState(uint64_t seed = 0) : rng(seed) {}
  std::mt19937_64 rng;
  std::vector<Config> chains;
  bool initialized = false;
  std::map<std::string, FeatureVector> feature_cache;
  std::set<std::string> illegal;  // configs the template refuses
};

/*!
 * \brief Parallel simulated annealing over the predicted-score landscape.
 *
 * Runs `chains` independent walks; a neighbor changes one knob to an
 * adjacent candidate; moves that do not raise the predicted score are
 * accepted, worse ones with probability exp(-delta / T) under geometric
 * decay. Returns the best-scored unmeasured configs seen, topped up with a
 * small random fraction; once every config is measured, returns whatever
 * remains (possibly nothing).
 */
std::vector<Config> explore(const KnobSpace& space, const CostModel& model,
                            int batch_size, AnnealState* state,
                            const std::set<std::string>& measured,
                            const ExploreParams& params = {});

/* ------------------------------ measurement ---------------------------- */

// Cost of one already-lowered program: total simulated cycles for "vdla",
// the instruction proxy for "interp". Throws Error on lowering failures.
double measure_program(const LoopProgram& p, const std::string& target,
                       const PipelineConfig& cfg, int repeats);

struct MeasureOptions {
  PipelineConfig pipeline;
  int repeats = 1;
  std::string method = "ml";
  WorkerPool* pool = nullptr;  // optional remote fan-out
  std::ostream* warn = nullptr;
};

// Lowers and measures each config; template or capacity errors become
// status="lowering_failed" records. Remote transport failures fall back to
// in-process measurement after dropping the worker.
std::vector<TrialRecord> measure(const KnobSpace& space,
                                 const std::vector<Config>& configs,
                                 const MeasureOptions& opt = {});

/* -------------------------------- tuning ------------------------------- */

struct TuneOptions {
  int budget = 64;      // additional trials this run; 0 = just read the DB
  int batch_size = 16;
  uint64_t seed = 0;
  std::string db_path;        // empty = in-memory only
  std::string method = "ml";  // "ml" | "random"
  int repeats = 1;
  PipelineConfig pipeline;
  WorkerPool* pool = nullptr;
  ExploreParams explore;
  GbtParams gbt;
  std::ostream* warn = nullptr;
};

struct TuneResult {
  Config best_config;
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<TrialRecord> trials;  // records added by this run
  CostModel model;                  // final model (trained when data allows)
};

/*!
 * \brief The optimization loop: explore, measure, append to the DB, retrain.
 *
 * The first batch (and every batch under method "random") is drawn
 * uniformly from the unmeasured grid; afterwards candidates come from
 * annealing over the freshly retrained cost model. Existing DB rows for the
 * same workload seed both the measured set and the training data, which
 * makes runs resumable and budget 0 a pure DB read.
 */
TuneResult tune(const KnobSpace& space, const TuneOptions& opt = {});

}  // namespace tec

#endif  // TEC_AUTOTUNE_HPP_
