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
#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <utility>

#include "tec/autotune.hpp"
#include "tec/error.hpp"
#include "tec/rpc.hpp"

namespace tec {

/* ----------------------------- knob spaces ----------------------------- */

std::string config_key(const Config& c) {
  std::ostringstream os;
  bool first = true;
  for (const auto& kv : c) {
    if (!first) os << ' ';
    first = false;
    os << kv.first << '=' << kv.second;
  }
  return os.str();
}

nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& kv : c) j[kv.first] = kv.second;
  return j;
}

Config config_from_json(const nlohmann::json& j) {
  Config c;
  for (auto it = j.begin(); it != j.end(); ++it)
    c[it.key()] = it.value().get<int64_t>();
  return c;
}

int64_t KnobSpace::size() const {
  int64_t n = 1;
  for (const auto& k : knobs) n *= (int64_t)k.values.size();
  return n;
}

Config KnobSpace::config_at(int64_t flat) const {
  TEC_CHECK(flat >= 0 && flat < size(), "flat config index out of range");
  Config c;
  for (size_t i = knobs.size(); i-- > 0;) {
    int64_t radix = (int64_t)knobs[i].values.size();
    c[knobs[i].name] = knobs[i].values[(size_t)(flat % radix)];
    flat /= radix;
  }
  return c;
}

int64_t KnobSpace::index_of(const Config& c) const {
  int64_t flat = 0;
  for (const auto& k : knobs) {
    auto it = c.find(k.name);
    if (it == c.end()) return -1;
    auto vi = std::find(k.values.begin(), k.values.end(), it->second);
    if (vi == k.values.end()) return -1;
    flat = flat * (int64_t)k.values.size() + (vi - k.values.begin());
  }
  return flat;
}

Config KnobSpace::random_config(std::mt19937_64* rng) const {
  std::uniform_int_distribution<int64_t> d(0, size() - 1);
  return config_at(d(*rng));
}

LoopProgram KnobSpace::lower_config(const Config& c) const {
  TEC_CHECK(instantiate != nullptr, "knob space has no template");
  Schedule s = instantiate(c);
  LowerOptions opts = lower_opts;
  opts.target = target;
  return lower(s, program_name, opts);
}

/* ---------------------------- trial database --------------------------- */

nlohmann::json trial_to_json(const TrialRecord& t) {
  return {{"workload", t.workload}, {"config", config_to_json(t.config)},
          {"cost", t.cost},         {"timestamp", t.timestamp},
          {"status", t.status},     {"method", t.method}};
}

TrialRecord trial_from_json(const nlohmann::json& j) {
  TrialRecord t;
  t.workload = j.at("workload").get<std::string>();
  t.config = config_from_json(j.at("config"));
  t.cost = j.at("cost").get<double>();
  t.timestamp = j.at("timestamp").get<int64_t>();
  t.status = j.at("status").get<std::string>();
  t.method = j.value("method", "ml");
  return t;
}

void append_trials(const std::string& path,
                   const std::vector<TrialRecord>& v) {
  if (v.empty()) return;
  std::ofstream os(path, std::ios::app);
  if (!os) fail(ErrorCode::kIOError, "cannot open trial DB " + path);
  for (const auto& t : v) os << trial_to_json(t).dump() << '\n';
  if (!os) fail(ErrorCode::kIOError, "short write to trial DB " + path);
}

std::vector<TrialRecord> load_trials(const std::string& path) {
  std::ifstream is(path);
  std::vector<TrialRecord> out;
  if (!is) return out;  // absent DB = fresh start
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      fail(ErrorCode::kIOError, "trial DB " + path + " line " +
                                    std::to_string(lineno) +
                                    " is not valid JSON");
    out.push_back(trial_from_json(j));
  }
  return out;
}

/* ------------------------------ exploration ---------------------------- */

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Predicted score with lowering + featurization cached in the state;
// infinity marks configs the template rejects.
double predicted_score(const KnobSpace& space, const CostModel& model,
                       AnnealState* st, const Config& c) {
  std::string key = config_key(c);
  if (st->illegal.count(key) != 0) return kInf;
  auto it = st->feature_cache.find(key);
  if (it == st->feature_cache.end()) {
    try {
      FeatureVector f = extract_features(space.lower_config(c));
      it = st->feature_cache.emplace(key, std::move(f)).first;
    } catch (const Error&) {
      st->illegal.insert(key);
      return kInf;
    }
  }
  return model.predict(it->second);
}

std::vector<Config> all_unmeasured(const KnobSpace& space,
                                   const std::set<std::string>& measured) {
  std::vector<Config> rest;
  for (int64_t i = 0; i < space.size(); ++i) {
    Config c = space.config_at(i);
    if (measured.count(config_key(c)) == 0) rest.push_back(std::move(c));
  }
  return rest;
}

}  // namespace

std::vector<Config> explore(const KnobSpace& space, const CostModel& model,
                            int batch_size, AnnealState* state,
                            const std::set<std::string>& measured,
                            const ExploreParams& params) {
  TEC_CHECK(batch_size >= 1, "explore needs a positive batch size");
  TEC_CHECK(state != nullptr, "explore needs persistent state");
  int64_t space_size = space.size();
  if ((int64_t)measured.size() >= space_size)
    return all_unmeasured(space, measured);

  if (!state->initialized) {
    state->chains.clear();
    for (int c = 0; c < params.chains; ++c)
      state->chains.push_back(space.random_config(&state->rng));
    state->initialized = true;
  }

  // Every scored config is a candidate; chains only steer where we look.
  std::map<std::string, std::pair<double, Config>> seen;
  auto note = [&](const Config& c, double s) {
    if (s == kInf) return;
    std::string key = config_key(c);
    if (measured.count(key) != 0) return;
    seen.emplace(key, std::make_pair(s, c));
  };

  std::vector<double> cur_score(state->chains.size());
  for (size_t i = 0; i < state->chains.size(); ++i) {
    cur_score[i] = predicted_score(space, model, state, state->chains[i]);
    note(state->chains[i], cur_score[i]);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double temp = params.t0;
  for (int step = 0; step < params.steps; ++step, temp *= params.decay) {
    for (size_t ci = 0; ci < state->chains.size(); ++ci) {
      Config& cur = state->chains[ci];
      // Neighbor: one knob moves to an adjacent candidate value.
      Config nb = cur;
      const KnobDef& k =
          space.knobs[state->rng() % (uint64_t)space.knobs.size()];
      if (k.values.size() >= 2) {
        auto vi = std::find(k.values.begin(), k.values.end(), nb[k.name]);
        size_t at = vi == k.values.end() ? 0 : (size_t)(vi - k.values.begin());
        size_t to;
        if (at == 0)
          to = 1;
        else if (at + 1 == k.values.size())
          to = at - 1;
        else
          to = state->rng() % 2 == 0 ? at - 1 : at + 1;
        nb[k.name] = k.values[to];
      }
      double s = predicted_score(space, model, state, nb);
      note(nb, s);
      double delta = s - cur_score[ci];
      bool accept;
      if (cur_score[ci] == kInf)
        accept = s < kInf;  // escape an illegal start
      else if (s == kInf)
        accept = false;
      else if (delta <= 0.0)
        accept = true;
      else
        accept = temp > 0.0 && unit(state->rng) < std::exp(-delta / temp);
      if (accept) {
        cur = std::move(nb);
        cur_score[ci] = s;
      }
    }
  }

  // Batch: the best-scored unmeasured configs, with a random floor so no
  // corner of the space starves.
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& kv : seen) ranked.push_back({kv.second.first, kv.first});
  std::sort(ranked.begin(), ranked.end());

  int n_random = std::min<int>(
      batch_size, (int)std::llround(params.random_frac * batch_size));
  std::vector<Config> batch;
  std::set<std::string> chosen;
  for (const auto& rk : ranked) {
    if ((int)batch.size() >= batch_size - n_random) break;
    batch.push_back(seen.at(rk.second).second);
    chosen.insert(rk.second);
  }
  int64_t attempts = 0;
  while ((int)batch.size() < batch_size &&
         attempts < 64 * (space_size + batch_size)) {
    ++attempts;
    Config c = space.random_config(&state->rng);
    std::string key = config_key(c);
    if (measured.count(key) != 0 || chosen.count(key) != 0) continue;
    chosen.insert(key);
    batch.push_back(std::move(c));
  }
  if ((int)batch.size() < batch_size) {
    // Nearly exhausted space: top up deterministically.
    for (Config& c : all_unmeasured(space, measured)) {
      if ((int)batch.size() >= batch_size) break;
      std::string key = config_key(c);
      if (chosen.count(key) != 0) continue;
      chosen.insert(key);
      batch.push_back(std::move(c));
    }
  }
  return batch;
}

/* ------------------------------ measurement ---------------------------- */

double measure_program(const LoopProgram& p, const std::string& target,
                       const PipelineConfig& cfg, int repeats) {
  repeats = std::max(1, repeats);
  if (target == "vdla") {
    InstructionStream st = lower_to_vdla(p, cfg);
    SimResult r{};
    for (int i = 0; i < repeats; ++i) r = simulate(st, cfg);
    return (double)r.total_cycles;
  }
  if (target == "interp") {
    double cost = 0.0;
    for (int i = 0; i < repeats; ++i)
      cost = (double)interp_cost_proxy(p);
    return cost;
  }
  fail(ErrorCode::kInternal, "unknown measurement target " + target);
}

std::vector<TrialRecord> measure(const KnobSpace& space,
                                 const std::vector<Config>& configs,
                                 const MeasureOptions& opt) {
  std::vector<TrialRecord> out;
  out.reserve(configs.size());
  for (const Config& c : configs) {
    TrialRecord t;
    t.workload = space.workload;
    t.config = c;
    t.timestamp = (int64_t)std::time(nullptr);
    t.method = opt.method;
    try {
      LoopProgram p = space.lower_config(c);
      bool done = false;
      if (opt.pool != nullptr && !opt.pool->empty()) {
        RemoteResult r =
            opt.pool->measure(p, space.target, opt.repeats, opt.pipeline);
        if (r.transport_ok) {
          done = true;
          if (r.ok) {
            t.cost = r.cost;
          } else {
            // The worker answered but could not measure; usually the
            // accelerator rejected the lowering.
            t.status = "lowering_failed";
          }
        }
        // transport_ok=false: worker dropped; fall through to in-process.
      }
      if (!done) t.cost = measure_program(p, space.target, opt.pipeline,
                                          opt.repeats);
    } catch (const Error&) {
      t.status = "lowering_failed";
      t.cost = 0.0;
    }
    out.push_back(std::move(t));
  }
  return out;
}

/* -------------------------------- tuning ------------------------------- */

TuneResult tune(const KnobSpace& space, const TuneOptions& opt) {
  TuneResult result;
  result.model = CostModel(opt.gbt);

  std::set<std::string> measured;
  std::vector<FeatureVector> feats;
  std::vector<double> costs;
  AnnealState anneal(opt.seed);

  auto account = [&](const TrialRecord& t) {
    measured.insert(config_key(t.config));
    if (!t.ok()) return;
    if (t.cost < result.best_cost) {
      result.best_cost = t.cost;
      result.best_config = t.config;
    }
    try {
      feats.push_back(extract_features(space.lower_config(t.config)));
      costs.push_back(t.cost);
    } catch (const Error&) {
      // A trial that no longer lowers (e.g. edited DB) cannot train.
    }
  };

  if (!opt.db_path.empty())
    for (const TrialRecord& t : load_trials(opt.db_path))
      if (t.workload == space.workload) account(t);

  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ull);
  int done = 0;
  while (done < opt.budget) {
    int want = std::min(opt.batch_size, opt.budget - done);
    std::vector<Config> cand;
    bool can_model = opt.method == "ml" && feats.size() >= 2;
    if (can_model) {
      result.model.train(feats, costs);
      cand = explore(space, result.model, want, &anneal, measured,
                     opt.explore);
    } else {
      // No training data yet (or pure random search): uniform unmeasured.
      std::set<std::string> chosen;
      int64_t attempts = 0;
      while ((int)cand.size() < want &&
             attempts < 64 * (space.size() + want)) {
        ++attempts;
        Config c = space.random_config(&rng);
        std::string key = config_key(c);
        if (measured.count(key) != 0 || chosen.count(key) != 0) continue;
        chosen.insert(key);
        cand.push_back(std::move(c));
      }
      if ((int)cand.size() < want)
        for (int64_t i = 0; i < space.size() && (int)cand.size() < want;
             ++i) {
          Config c = space.config_at(i);
          std::string key = config_key(c);
          if (measured.count(key) != 0 || chosen.count(key) != 0) continue;
          chosen.insert(key);
          cand.push_back(std::move(c));
        }
    }
    if (cand.empty()) break;  // space exhausted

    MeasureOptions mo;
    mo.pipeline = opt.pipeline;
    mo.repeats = opt.repeats;
    mo.method = opt.method;
    mo.pool = opt.pool;
    mo.warn = opt.warn;
    std::vector<TrialRecord> batch = measure(space, cand, mo);
    if (!opt.db_path.empty()) append_trials(opt.db_path, batch);
    for (const TrialRecord& t : batch) {
      account(t);
      result.trials.push_back(t);
    }
    done += (int)batch.size();
  }

  if (opt.method == "ml" && feats.size() >= 2)
    result.model.train(feats, costs);
  return result;
}

}  // namespace tec
