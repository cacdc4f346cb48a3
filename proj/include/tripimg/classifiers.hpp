#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripimg/igtd.hpp"
#include "tripimg/preprocess.hpp"
#include "tripimg/prng.hpp"

namespace tripimg {

struct NotFittedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// k-nearest neighbors

struct KnnModel {
  int k = 5;
  DistanceMetric distance = DistanceMetric::Euclidean;
  EncodedMatrix train;

  bool fitted() const { return train.n_rows > 0; }
};

inline KnnModel knn_fit(const EncodedMatrix& x, int k,
                        DistanceMetric distance = DistanceMetric::Euclidean) {
  if (k < 1 || static_cast<size_t>(k) > x.n_rows)
    throw std::invalid_argument("knn: k must be in [1, n_rows]");
  if (distance == DistanceMetric::PearsonDissimilarity)
    throw std::invalid_argument("knn: distance must be euclidean or manhattan");
  return KnnModel{k, distance, x};
}

namespace detail {

inline double row_distance(const double* a, const double* b, size_t n, DistanceMetric metric) {
  double s = 0.0;
  if (metric == DistanceMetric::Euclidean) {
    for (size_t i = 0; i < n; ++i) {
      const double d = a[i] - b[i];
      s += d * d;
    }
    return std::sqrt(s);
  }
  for (size_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
  return s;
}

}  // namespace detail

// Majority label among the k nearest training rows. Distance ties break to
// the lower row index, vote ties to the smallest class code.
inline ChargeLevel knn_predict(const KnnModel& m, const double* query) {
  if (!m.fitted()) throw NotFittedError("knn_predict: model not fitted");
  const size_t n = m.train.n_rows;
  std::vector<std::pair<double, size_t>> dist(n);
  for (size_t r = 0; r < n; ++r) {
    dist[r] = {detail::row_distance(query, m.train.row(r), m.train.n_cols, m.distance), r};
  }
  const size_t k = static_cast<size_t>(m.k);
  std::nth_element(dist.begin(), dist.begin() + static_cast<long>(k - 1), dist.end());
  std::array<size_t, kNumClasses> votes{};
  for (size_t i = 0; i < k; ++i) ++votes[static_cast<size_t>(code_of(m.train.labels[dist[i].second]))];
  size_t best = 0;
  for (size_t c = 1; c < kNumClasses; ++c) {
    if (votes[c] > votes[best]) best = c;
  }
  return static_cast<ChargeLevel>(best);
}

// ---------------------------------------------------------------------------
// Decision tree

struct TreeParams {
  size_t max_depth = 12;  // SIZE_MAX = unbounded
  size_t min_samples_leaf = 2;
};

struct TreeNode {
  bool is_leaf = true;
  int cls = 0;
  std::array<size_t, kNumClasses> counts{};
  size_t feature = 0;
  double threshold = 0.0;
  std::unique_ptr<TreeNode> left;
  std::unique_ptr<TreeNode> right;
};

namespace detail {

inline double gini(const std::array<size_t, kNumClasses>& counts, size_t total) {
  if (total == 0) return 0.0;
  double g = 1.0;
  for (size_t c = 0; c < kNumClasses; ++c) {
    const double p = static_cast<double>(counts[c]) / static_cast<double>(total);
    g -= p * p;
  }
  return g;
}

inline int argmax_class(const std::array<size_t, kNumClasses>& counts) {
  size_t best = 0;
  for (size_t c = 1; c < kNumClasses; ++c) {
    if (counts[c] > counts[best]) best = c;
  }
  return static_cast<int>(best);
}

struct SplitChoice {
  bool found = false;
  size_t feature = 0;
  double threshold = 0.0;
  double score = std::numeric_limits<double>::infinity();  // weighted Gini
};

// Best (weighted-Gini, feature, threshold) over the candidate features.
// Features are scanned ascending and thresholds ascending with strict-less
// acceptance, which pins the lower-feature / lower-threshold tie-break.
inline SplitChoice best_split(const EncodedMatrix& x, const std::vector<size_t>& rows,
                              const std::vector<size_t>& features, size_t min_samples_leaf) {
  SplitChoice best;
  const size_t m = rows.size();
  std::vector<std::pair<double, int>> vals(m);
  for (size_t f : features) {
    for (size_t i = 0; i < m; ++i) {
      vals[i] = {x.at(rows[i], f), code_of(x.labels[rows[i]])};
    }
    std::sort(vals.begin(), vals.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::array<size_t, kNumClasses> left_counts{};
    std::array<size_t, kNumClasses> right_counts{};
    for (const auto& v : vals) ++right_counts[static_cast<size_t>(v.second)];
    for (size_t i = 0; i + 1 < m; ++i) {
      ++left_counts[static_cast<size_t>(vals[i].second)];
      --right_counts[static_cast<size_t>(vals[i].second)];
      if (vals[i].first == vals[i + 1].first) continue;
      const size_t nl = i + 1, nr = m - nl;
      if (nl < min_samples_leaf || nr < min_samples_leaf) continue;
      const double score = (static_cast<double>(nl) * gini(left_counts, nl) +
                            static_cast<double>(nr) * gini(right_counts, nr)) /
                           static_cast<double>(m);
      if (score < best.score) {
        best.found = true;
        best.feature = f;
        best.threshold = (vals[i].first + vals[i + 1].first) / 2.0;
        best.score = score;
      }
    }
  }
  return best;
}

inline std::unique_ptr<TreeNode> fit_node(const EncodedMatrix& x, std::vector<size_t>& rows,
                                          size_t depth, const TreeParams& params,
                                          size_t features_per_split, Rng* rng) {
  auto node = std::make_unique<TreeNode>();
  for (size_t r : rows) ++node->counts[static_cast<size_t>(code_of(x.labels[r]))];
  node->cls = argmax_class(node->counts);

  const bool pure = gini(node->counts, rows.size()) == 0.0;
  if (pure || depth >= params.max_depth || rows.size() < 2 * params.min_samples_leaf) return node;

  std::vector<size_t> features(x.n_cols);
  std::iota(features.begin(), features.end(), size_t{0});
  if (rng && features_per_split < x.n_cols) {
    // Partial Fisher-Yates: first features_per_split entries are the sample.
    for (size_t i = 0; i < features_per_split; ++i) {
      const size_t j = i + static_cast<size_t>(rng->next_below(features.size() - i));
      std::swap(features[i], features[j]);
    }
    features.resize(features_per_split);
    std::sort(features.begin(), features.end());
  }

  const auto split = best_split(x, rows, features, params.min_samples_leaf);
  if (!split.found) return node;

  std::vector<size_t> left_rows, right_rows;
  for (size_t r : rows) {
    (x.at(r, split.feature) <= split.threshold ? left_rows : right_rows).push_back(r);
  }
  node->is_leaf = false;
  node->feature = split.feature;
  node->threshold = split.threshold;
  node->left = fit_node(x, left_rows, depth + 1, params, features_per_split, rng);
  node->right = fit_node(x, right_rows, depth + 1, params, features_per_split, rng);
  return node;
}

}  // namespace detail

inline std::unique_ptr<TreeNode> tree_fit(const EncodedMatrix& x, const TreeParams& params) {
  if (x.n_rows < 1) throw std::invalid_argument("tree_fit: empty matrix");
  std::vector<size_t> rows(x.n_rows);
  std::iota(rows.begin(), rows.end(), size_t{0});
  return detail::fit_node(x, rows, 0, params, x.n_cols, nullptr);
}

inline ChargeLevel tree_predict(const TreeNode* node, const double* row) {
  while (!node->is_leaf) {
    node = (row[node->feature] <= node->threshold) ? node->left.get() : node->right.get();
  }
  return static_cast<ChargeLevel>(node->cls);
}

inline nlohmann::json tree_to_json(const TreeNode* node) {
  if (node->is_leaf) {
    return nlohmann::json{{"leaf", true}, {"class", node->cls}, {"counts", node->counts}};
  }
  return nlohmann::json{{"leaf", false},
                        {"feature", node->feature},
                        {"threshold", node->threshold},
                        {"left", tree_to_json(node->left.get())},
                        {"right", tree_to_json(node->right.get())}};
}

inline std::unique_ptr<TreeNode> tree_from_json(const nlohmann::json& j) {
  auto node = std::make_unique<TreeNode>();
  if (j.at("leaf").get<bool>()) {
    node->cls = j.at("class").get<int>();
    node->counts = j.at("counts").get<std::array<size_t, kNumClasses>>();
    return node;
  }
  node->is_leaf = false;
  node->feature = j.at("feature").get<size_t>();
  node->threshold = j.at("threshold").get<double>();
  node->left = tree_from_json(j.at("left"));
  node->right = tree_from_json(j.at("right"));
  return node;
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestParams {
  size_t n_trees = 100;
  size_t features_per_split = 0;  // 0 = ceil(sqrt(n_cols))
  size_t max_depth = 12;
  size_t min_samples_leaf = 2;
  bool bootstrap = true;
  uint64_t seed = 0;
};

struct ForestModel {
  std::vector<std::unique_ptr<TreeNode>> trees;
  std::vector<uint64_t> tree_seeds;
  size_t features_per_split = 0;
};

inline ForestModel forest_fit(const EncodedMatrix& x, const ForestParams& params) {
  if (params.n_trees < 1) throw std::invalid_argument("forest_fit: n_trees must be >= 1");
  size_t fps = params.features_per_split;
  if (fps == 0) fps = static_cast<size_t>(std::ceil(std::sqrt(static_cast<double>(x.n_cols))));
  fps = std::min(fps, x.n_cols);

  ForestModel model;
  model.features_per_split = fps;
  SplitMix64 seeder(params.seed);
  TreeParams tp{params.max_depth, params.min_samples_leaf};
  for (size_t t = 0; t < params.n_trees; ++t) {
    const uint64_t tree_seed = seeder.next();
    model.tree_seeds.push_back(tree_seed);
    Rng rng(tree_seed);
    std::vector<size_t> rows(x.n_rows);
    if (params.bootstrap) {
      for (auto& r : rows) r = static_cast<size_t>(rng.next_below(x.n_rows));
    } else {
      std::iota(rows.begin(), rows.end(), size_t{0});
    }
    model.trees.push_back(detail::fit_node(x, rows, 0, tp, fps, &rng));
  }
  return model;
}

// Majority vote over trees, ties to the smallest class code.
inline ChargeLevel forest_predict(const ForestModel& m, const double* row) {
  if (m.trees.empty()) throw NotFittedError("forest_predict: model not fitted");
  std::array<size_t, kNumClasses> votes{};
  for (const auto& t : m.trees) ++votes[static_cast<size_t>(code_of(tree_predict(t.get(), row)))];
  size_t best = 0;
  for (size_t c = 1; c < kNumClasses; ++c) {
    if (votes[c] > votes[best]) best = c;
  }
  return static_cast<ChargeLevel>(best);
}

inline nlohmann::json forest_to_json(const ForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) trees.push_back(tree_to_json(t.get()));
  return nlohmann::json{
      {"trees", trees}, {"tree_seeds", m.tree_seeds}, {"features_per_split", m.features_per_split}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
  ForestModel m;
  for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
  m.tree_seeds = j.at("tree_seeds").get<std::vector<uint64_t>>();
  m.features_per_split = j.at("features_per_split").get<size_t>();
  return m;
}

// ---------------------------------------------------------------------------
// Cross validation

struct CvResult {
  double mean_accuracy = 0.0;
  std::vector<double> fold_accuracies;
};

// `fit` maps a training matrix to a predictor over feature rows.
using LearnerFit =
    std::function<std::function<ChargeLevel(const double*)>(const EncodedMatrix&)>;

inline CvResult cross_validate(const LearnerFit& fit, const EncodedMatrix& x,
                               const FoldPlan& plan) {
  CvResult result;
  std::vector<bool> in_fold(x.n_rows);
  for (const auto& fold : plan.folds) {
    std::fill(in_fold.begin(), in_fold.end(), false);
    for (size_t r : fold) in_fold[r] = true;
    std::vector<size_t> train_rows;
    for (size_t r = 0; r < x.n_rows; ++r) {
      if (!in_fold[r]) train_rows.push_back(r);
    }
    const EncodedMatrix train = subset_rows(x, train_rows);
    auto predict = fit(train);
    size_t correct = 0;
    for (size_t r : fold) {
      if (predict(x.row(r)) == x.labels[r]) ++correct;
    }
    result.fold_accuracies.push_back(static_cast<double>(correct) /
                                     static_cast<double>(fold.size()));
  }
  result.mean_accuracy =
      std::accumulate(result.fold_accuracies.begin(), result.fold_accuracies.end(), 0.0) /
      static_cast<double>(result.fold_accuracies.size());
  return result;
}

}  // namespace tripimg
