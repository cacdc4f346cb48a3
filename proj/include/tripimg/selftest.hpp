#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "tripimg/igtd.hpp"
#include "tripimg/nn.hpp"
#include "tripimg/prng.hpp"

namespace tripimg {
namespace selftest {

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

constexpr double kFdStep = 1e-5;
constexpr double kGradTolerance = 1e-4;

inline double rel_error(double a, double b) {
  const double denom = std::max(std::abs(a) + std::abs(b), 1e-6);
  return std::abs(a - b) / denom;
}

// Max relative error between analytic parameter gradients and central finite
// differences of the CE loss. Dropout must be inactive (eval-mode forward).
inline double check_param_gradients(nn::CnnModel& model, const std::vector<double>& input,
                                    int true_class) {
  model.zero_grads();
  std::vector<double> grad_probs;
  auto probs = model.forward(input, false);
  nn::sparse_ce_loss(probs, true_class, &grad_probs);
  model.backward(grad_probs);

  const auto params = model.params();
  const auto grads = model.grads();
  double worst = 0.0;
  for (size_t t = 0; t < params.size(); ++t) {
    auto& p = *params[t];
    for (size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + kFdStep;
      const double lp = nn::sparse_ce_loss(model.forward(input, false), true_class);
      p[i] = saved - kFdStep;
      const double lm = nn::sparse_ce_loss(model.forward(input, false), true_class);
      p[i] = saved;
      const double fd = (lp - lm) / (2.0 * kFdStep);
      worst = std::max(worst, rel_error((*grads[t])[i], fd));
    }
  }
  return worst;
}

// Same check for the gradient w.r.t. the input (covers parameterless layers).
inline double check_input_gradients(nn::CnnModel& model, std::vector<double> input,
                                    int true_class) {
  model.zero_grads();
  std::vector<double> grad_probs;
  auto probs = model.forward(input, false);
  nn::sparse_ce_loss(probs, true_class, &grad_probs);
  const auto grad_in = model.backward(grad_probs);

  double worst = 0.0;
  for (size_t i = 0; i < input.size(); ++i) {
    const double saved = input[i];
    input[i] = saved + kFdStep;
    const double lp = nn::sparse_ce_loss(model.forward(input, false), true_class);
    input[i] = saved - kFdStep;
    const double lm = nn::sparse_ce_loss(model.forward(input, false), true_class);
    input[i] = saved;
    const double fd = (lp - lm) / (2.0 * kFdStep);
    worst = std::max(worst, rel_error(grad_in[i], fd));
  }
  return worst;
}

// Finite-difference check of the L1/L2 subgradient at nonzero weights.
inline double check_penalty_gradient(const std::vector<double>& weights, double l1, double l2) {
  std::vector<double> grad(weights.size(), 0.0);
  nn::l1l2_add_subgradient(weights, l1, l2, grad);
  std::vector<double> w = weights;
  double worst = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    if (std::abs(w[i]) < 10.0 * kFdStep) continue;  // FD invalid near the |w| kink
    const double saved = w[i];
    auto penalty = [&]() {
      const std::vector<const std::vector<double>*> tensors = {&w};
      return nn::l1l2_penalty(tensors, l1, l2);
    };
    w[i] = saved + kFdStep;
    const double lp = penalty();
    w[i] = saved - kFdStep;
    const double lm = penalty();
    w[i] = saved;
    worst = std::max(worst, rel_error(grad[i], (lp - lm) / (2.0 * kFdStep)));
  }
  return worst;
}

// Randomized model inputs for the check harness.
inline std::vector<double> random_input(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_double();
  return v;
}

// Runs one gradient check per layer kind per repetition. Returns the worst
// relative error seen.
inline double run_gradient_checks(size_t repetitions, uint64_t seed, std::ostream* log = nullptr) {
  Rng rng(seed);
  double worst = 0.0;
  auto record = [&](const char* name, double err) {
    worst = std::max(worst, err);
    if (log) *log << "  gradient check " << name << ": max rel err " << err << "\n";
  };

  for (size_t rep = 0; rep < repetitions; ++rep) {
    const uint64_t model_seed = rng.next_u64();
    const int cls = static_cast<int>(rng.next_below(4));
    const size_t h = 4 + 2 * rng.next_below(2);  // 4 or 6
    const size_t w = 4 + 2 * rng.next_below(2);

    {
      nn::CnnSpec s;
      s.layers = {nn::ConvSpec{3, 3, 3, 1, true}, nn::FlattenSpec{}, nn::DenseSpec{4},
                  nn::SoftmaxSpec{}};
      nn::CnnModel m(s, {h, w, 1}, model_seed);
      const auto in = random_input(h * w, rng);
      record("conv", std::max(check_param_gradients(m, in, cls), check_input_gradients(m, in, cls)));
    }
    {
      nn::CnnSpec s;
      s.layers = {nn::MaxPoolSpec{}, nn::FlattenSpec{}, nn::DenseSpec{4}, nn::SoftmaxSpec{}};
      nn::CnnModel m(s, {h, w, 1}, model_seed);
      const auto in = random_input(h * w, rng);
      record("maxpool", std::max(check_param_gradients(m, in, cls), check_input_gradients(m, in, cls)));
    }
    {
      nn::CnnSpec s;
      s.layers = {nn::FlattenSpec{}, nn::DenseSpec{5 + rng.next_below(8)}, nn::ReluSpec{},
                  nn::DenseSpec{4}, nn::SoftmaxSpec{}};
      nn::CnnModel m(s, {h, w, 1}, model_seed);
      const auto in = random_input(h * w, rng);
      record("dense", std::max(check_param_gradients(m, in, cls), check_input_gradients(m, in, cls)));
    }
    {
      nn::CnnSpec s;
      s.layers = {nn::FlattenSpec{}, nn::SoftmaxSpec{}};
      nn::CnnModel m(s, {4, 1, 0}, model_seed);
      const auto in = random_input(4, rng);
      record("softmax_ce", check_input_gradients(m, in, cls));
    }
    {
      auto weights = random_input(8, rng);
      for (auto& x : weights) x = x * 2.0 - 1.0;
      record("l1l2", check_penalty_gradient(weights, 0.1, 0.01));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// IGTD oracles

// Random symmetric distance matrix -> rank matrix, for optimizer stress tests.
inline RankMatrix random_rank_matrix(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> d(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const double v = rng.next_double();
      d[i * n + j] = v;
      d[j * n + i] = v;
    }
  }
  return rank_matrix(d, n);
}

// Exhaustive minimum of err over all n! assignments; feasible for n <= 8.
inline double brute_force_min_error(const RankMatrix& r, const PixelGrid& grid, ErrorKind kind) {
  Assignment a;
  a.perm.resize(r.n);
  std::iota(a.perm.begin(), a.perm.end(), size_t{0});
  double best = igtd_error(r, grid, a, kind);
  while (std::next_permutation(a.perm.begin(), a.perm.end())) {
    best = std::min(best, igtd_error(r, grid, a, kind));
  }
  return best;
}

struct OracleGapStats {
  size_t instances = 0;
  size_t optimal = 0;     // optimizer matched the exhaustive minimum
  size_t below_min = 0;   // optimizer reported less than the minimum (must stay 0)
  std::vector<double> gaps;
};

inline OracleGapStats run_igtd_oracle(size_t instances, uint64_t seed, std::ostream* log = nullptr) {
  const PixelGrid grid = pixel_rank_matrix(2, 3, DistanceMetric::Euclidean);
  IgtdConfig cfg;
  cfg.ni = 2;
  cfg.nj = 3;
  OracleGapStats stats;
  Rng rng(seed);
  for (size_t i = 0; i < instances; ++i) {
    const RankMatrix r = random_rank_matrix(6, rng.next_u64());
    const Assignment a = optimize_assignment(r, grid, cfg);
    const double oracle = brute_force_min_error(r, grid, cfg.error_kind);
    ++stats.instances;
    if (a.error < oracle - 1e-9) ++stats.below_min;
    if (std::abs(a.error - oracle) <= 1e-9) ++stats.optimal;
    stats.gaps.push_back(a.error - oracle);
  }
  if (log) {
    *log << "  igtd oracle: " << stats.optimal << "/" << stats.instances
         << " instances reached the exhaustive minimum\n";
  }
  return stats;
}

}  // namespace selftest
}  // namespace tripimg
