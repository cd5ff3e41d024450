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
#include <utility>
#include <vector>

#include "tec/autotune.hpp"
#include "tec/error.hpp"

namespace tec {

double RegressionTree::eval(const FeatureVector& f) const {
  if (nodes.empty()) return 0.0;
  int i = 0;
  while (nodes[(size_t)i].feature >= 0) {
    const TreeNode& n = nodes[(size_t)i];
    double v = n.feature < (int)f.size() ? f[(size_t)n.feature] : 0.0;
    i = v < n.threshold ? n.left : n.right;
  }
  return nodes[(size_t)i].value;
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Exact greedy split under second-order gain; ties keep the first feature
// and lowest threshold found, so training is deterministic.
Split best_split(const std::vector<const FeatureVector*>& X,
                 const std::vector<double>& g, const std::vector<double>& h,
                 const std::vector<int>& items, const std::vector<int>& dims,
                 double lambda) {
  double G = 0.0, H = 0.0;
  for (int i : items) {
    G += g[(size_t)i];
    H += h[(size_t)i];
  }
  double parent = G * G / (H + lambda);
  Split best;
  std::vector<int> order(items);
  for (int fd : dims) {
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      double va = (*X[(size_t)a])[(size_t)fd], vb = (*X[(size_t)b])[(size_t)fd];
      if (va != vb) return va < vb;
      return a < b;
    });
    double gl = 0.0, hl = 0.0;
    for (size_t p = 0; p + 1 < order.size(); ++p) {
      gl += g[(size_t)order[p]];
      hl += h[(size_t)order[p]];
      double v = (*X[(size_t)order[p]])[(size_t)fd];
      double vn = (*X[(size_t)order[p + 1]])[(size_t)fd];
      if (v == vn) continue;
      double gr = G - gl, hr = H - hl;
      double gain =
          gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
      if (gain > best.gain + 1e-12) best = {fd, (v + vn) / 2.0, gain};
    }
  }
  return best;
}

int build_node(RegressionTree* t, const std::vector<const FeatureVector*>& X,
               const std::vector<double>& g, const std::vector<double>& h,
               std::vector<int> items, int depth, const std::vector<int>& dims,
               const GbtParams& prm) {
  double G = 0.0, H = 0.0;
  for (int i : items) {
    G += g[(size_t)i];
    H += h[(size_t)i];
  }
  int id = (int)t->nodes.size();
  t->nodes.push_back({});
  Split sp;
  if (depth < prm.max_depth && items.size() >= 2)
    sp = best_split(X, g, h, items, dims, prm.reg_lambda);
  if (sp.feature < 0) {
    t->nodes[(size_t)id].value =
        -prm.learning_rate * G / (H + prm.reg_lambda);
    return id;
  }
  std::vector<int> left, right;
  for (int i : items) {
    if ((*X[(size_t)i])[(size_t)sp.feature] < sp.threshold)
      left.push_back(i);
    else
      right.push_back(i);
  }
  int l = build_node(t, X, g, h, std::move(left), depth + 1, dims, prm);
  int r = build_node(t, X, g, h, std::move(right), depth + 1, dims, prm);
  TreeNode& n = t->nodes[(size_t)id];
  n.feature = sp.feature;
  n.threshold = sp.threshold;
  n.left = l;
  n.right = r;
  return id;
}

}  // namespace

void CostModel::train(const std::vector<FeatureVector>& feats,
                      const std::vector<double>& costs) {
  TEC_CHECK(feats.size() == costs.size(),
            "feature and cost row counts differ");
  size_t n = feats.size();
  if (n < 2)
    fail(ErrorCode::kNotEnoughData,
         "cost model needs at least two successful trials");

  // Only order matters; the log transform keeps pair construction stable
  // across cost scales.
  std::vector<double> label(n);
  for (size_t i = 0; i < n; ++i)
    label[i] = std::log(std::max(1e-12, costs[i]));
  std::vector<std::pair<int, int>> pairs;  // (faster, slower)
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j)
      if (label[i] < label[j]) pairs.push_back({(int)i, (int)j});

  std::vector<const FeatureVector*> X(n);
  for (size_t i = 0; i < n; ++i) X[i] = &feats[i];
  std::vector<int> dims;
  for (size_t d = 0; d < feats[0].size(); ++d) {
    double v0 = feats[0][d];
    for (size_t i = 1; i < n; ++i)
      if (feats[i][d] != v0) {
        dims.push_back((int)d);
        break;
      }
  }
  std::vector<int> all(n);
  for (size_t i = 0; i < n; ++i) all[i] = (int)i;

  trees_.clear();
  if (pairs.empty()) {
    // Identical labels leave nothing to rank; a single zero leaf makes the
    // model trained with all-equal scores.
    RegressionTree t;
    t.nodes.push_back({});
    trees_.push_back(std::move(t));
    return;
  }

  std::vector<double> score(n, 0.0);
  for (int round = 0; round < params_.rounds; ++round) {
    std::vector<double> g(n, 0.0), h(n, 0.0);
    for (const auto& pr : pairs) {
      double d = score[(size_t)pr.first] - score[(size_t)pr.second];
      double p = 1.0 / (1.0 + std::exp(-d));
      double hh = std::max(1e-6, p * (1.0 - p));
      g[(size_t)pr.first] += p;
      g[(size_t)pr.second] -= p;
      h[(size_t)pr.first] += hh;
      h[(size_t)pr.second] += hh;
    }
    RegressionTree t;
    build_node(&t, X, g, h, all, 0, dims, params_);
    for (size_t i = 0; i < n; ++i) score[i] += t.eval(feats[i]);
    trees_.push_back(std::move(t));
  }
}

double CostModel::predict(const FeatureVector& f) const {
  double s = 0.0;
  for (const auto& t : trees_) s += t.eval(f);
  return s;
}

nlohmann::json CostModel::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
      nodes.push_back({{"f", n.feature},
                       {"t", n.threshold},
                       {"l", n.left},
                       {"r", n.right},
                       {"v", n.value}});
    trees.push_back(std::move(nodes));
  }
  return {{"max_depth", params_.max_depth},
          {"rounds", params_.rounds},
          {"learning_rate", params_.learning_rate},
          {"reg_lambda", params_.reg_lambda},
          {"trees", std::move(trees)}};
}

CostModel CostModel::from_json(const nlohmann::json& j) {
  GbtParams p;
  p.max_depth = j.at("max_depth").get<int>();
  p.rounds = j.at("rounds").get<int>();
  p.learning_rate = j.at("learning_rate").get<double>();
  p.reg_lambda = j.at("reg_lambda").get<double>();
  CostModel m(p);
  for (const auto& tj : j.at("trees")) {
    RegressionTree t;
    for (const auto& nj : tj)
      t.nodes.push_back({nj.at("f").get<int>(), nj.at("t").get<double>(),
                         nj.at("l").get<int>(), nj.at("r").get<int>(),
                         nj.at("v").get<double>()});
    m.trees_.push_back(std::move(t));
  }
  return m;
}

double pairwise_rank_accuracy(const CostModel& m,
                              const std::vector<FeatureVector>& feats,
                              const std::vector<double>& costs) {
  TEC_CHECK(feats.size() == costs.size(),
            "feature and cost row counts differ");
  std::vector<double> pred(feats.size());
  for (size_t i = 0; i < feats.size(); ++i) pred[i] = m.predict(feats[i]);
  double correct = 0.0;
  int64_t total = 0;
  for (size_t i = 0; i < feats.size(); ++i)
    for (size_t j = i + 1; j < feats.size(); ++j) {
      if (costs[i] == costs[j]) continue;
      ++total;
      bool i_faster = costs[i] < costs[j];
      if (pred[i] == pred[j])
        correct += 0.5;
      else if ((pred[i] < pred[j]) == i_faster)
        correct += 1.0;
    }
  return total == 0 ? 1.0 : correct / (double)total;
}

}  // namespace tec
