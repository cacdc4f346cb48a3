#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripimg/preprocess.hpp"

namespace tripimg {

enum class DistanceMetric { Euclidean, Manhattan, PearsonDissimilarity };
enum class ErrorKind { AbsoluteDifference, SquaredDifference };

struct IgtdError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TooFewFeaturesError : IgtdError {
  using IgtdError::IgtdError;
};
struct DimensionMismatchError : IgtdError {
  using IgtdError::IgtdError;
};
struct NotNormalizedError : IgtdError {
  using IgtdError::IgtdError;
};

inline const char* metric_name(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::Euclidean: return "euclidean";
    case DistanceMetric::Manhattan: return "manhattan";
    case DistanceMetric::PearsonDissimilarity: return "pearson";
  }
  return "?";
}

inline DistanceMetric metric_from_name(const std::string& s) {
  if (s == "euclidean") return DistanceMetric::Euclidean;
  if (s == "manhattan") return DistanceMetric::Manhattan;
  if (s == "pearson") return DistanceMetric::PearsonDissimilarity;
  throw std::invalid_argument("unknown distance metric: " + s);
}

inline const char* error_kind_name(ErrorKind k) {
  return k == ErrorKind::AbsoluteDifference ? "abs" : "sq";
}

inline ErrorKind error_kind_from_name(const std::string& s) {
  if (s == "abs") return ErrorKind::AbsoluteDifference;
  if (s == "sq") return ErrorKind::SquaredDifference;
  throw std::invalid_argument("unknown error kind: " + s);
}

// Symmetric matrix of ascending distance ranks; diagonal 0, upper-triangle
// ranks a permutation of 1..n(n-1)/2.
struct RankMatrix {
  size_t n = 0;
  std::vector<int> ranks;  // n*n, row-major

  int at(size_t i, size_t j) const { return ranks[i * n + j]; }
  int& at(size_t i, size_t j) { return ranks[i * n + j]; }
};

struct PixelGrid {
  size_t ni = 0;
  size_t nj = 0;
  DistanceMetric metric = DistanceMetric::Euclidean;
  RankMatrix q;

  size_t slots() const { return ni * nj; }
};

struct Assignment {
  std::vector<size_t> perm;  // feature index -> pixel slot (row-major)
  double error = 0.0;
  size_t accepted_swaps = 0;
};

struct IgtdConfig {
  DistanceMetric feature_metric = DistanceMetric::Euclidean;
  DistanceMetric pixel_metric = DistanceMetric::Euclidean;
  ErrorKind error_kind = ErrorKind::AbsoluteDifference;
  size_t ni = 4;
  size_t nj = 4;
  size_t max_steps = 10000;
  size_t patience = 100;  // consecutive non-improving feature examinations
  uint64_t seed = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"feature_metric", metric_name(feature_metric)},
                          {"pixel_metric", metric_name(pixel_metric)},
                          {"error_kind", error_kind_name(error_kind)},
                          {"ni", ni},
                          {"nj", nj},
                          {"max_steps", max_steps},
                          {"patience", patience},
                          {"seed", seed}};
  }

  static IgtdConfig from_json(const nlohmann::json& j) {
    IgtdConfig c;
    c.feature_metric = metric_from_name(j.at("feature_metric").get<std::string>());
    c.pixel_metric = metric_from_name(j.at("pixel_metric").get<std::string>());
    c.error_kind = error_kind_from_name(j.at("error_kind").get<std::string>());
    c.ni = j.at("ni").get<size_t>();
    c.nj = j.at("nj").get<size_t>();
    c.max_steps = j.at("max_steps").get<size_t>();
    c.patience = j.at("patience").get<size_t>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
  }
};

struct ImageSample {
  size_t ni = 0;
  size_t nj = 0;
  std::vector<uint8_t> pixels;  // row-major, 0..255
  ChargeLevel label = ChargeLevel::Level1;
  size_t row_id = 0;
};

namespace detail {

inline double column_distance(const EncodedMatrix& x, size_t a, size_t b, DistanceMetric metric) {
  const size_t m = x.n_rows;
  switch (metric) {
    case DistanceMetric::Euclidean: {
      double s = 0.0;
      for (size_t r = 0; r < m; ++r) {
        const double d = x.at(r, a) - x.at(r, b);
        s += d * d;
      }
      return std::sqrt(s);
    }
    case DistanceMetric::Manhattan: {
      double s = 0.0;
      for (size_t r = 0; r < m; ++r) s += std::abs(x.at(r, a) - x.at(r, b));
      return s;
    }
    case DistanceMetric::PearsonDissimilarity: {
      double ma = 0.0, mb = 0.0;
      for (size_t r = 0; r < m; ++r) {
        ma += x.at(r, a);
        mb += x.at(r, b);
      }
      ma /= static_cast<double>(m);
      mb /= static_cast<double>(m);
      double cov = 0.0, va = 0.0, vb = 0.0;
      for (size_t r = 0; r < m; ++r) {
        const double da = x.at(r, a) - ma;
        const double db = x.at(r, b) - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
      }
      // Constant column: r defined as 0, so d = 1.
      const double denom = std::sqrt(va) * std::sqrt(vb);
      const double r = (denom > 0.0) ? cov / denom : 0.0;
      return 1.0 - r;
    }
  }
  return 0.0;
}

}  // namespace detail

inline std::vector<double> feature_distance_matrix(const EncodedMatrix& x, DistanceMetric metric) {
  const size_t n = x.n_cols;
  if (n < 2) throw TooFewFeaturesError("TooFewFeatures: need at least 2 columns");
  std::vector<double> d(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const double dist = detail::column_distance(x, i, j, metric);
      d[i * n + j] = dist;
      d[j * n + i] = dist;
    }
  }
  return d;
}

// Ascending ranks 1..n(n-1)/2 over the upper triangle, ties broken by
// lexicographic (i, j); mirrored to keep the matrix symmetric.
inline RankMatrix rank_matrix(const std::vector<double>& dist, size_t n) {
  if (dist.size() != n * n) throw DimensionMismatchError("rank_matrix: bad distance matrix size");
  struct Pair {
    double d;
    size_t i, j;
  };
  std::vector<Pair> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) pairs.push_back({dist[i * n + j], i, j});
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  RankMatrix r;
  r.n = n;
  r.ranks.assign(n * n, 0);
  int rank = 0;
  for (const auto& p : pairs) {
    ++rank;
    r.at(p.i, p.j) = rank;
    r.at(p.j, p.i) = rank;
  }
  return r;
}

inline PixelGrid pixel_rank_matrix(size_t ni, size_t nj, DistanceMetric metric) {
  if (ni < 1 || nj < 1 || ni * nj < 2) throw IgtdError("pixel grid needs at least 2 pixels");
  if (metric == DistanceMetric::PearsonDissimilarity)
    throw IgtdError("pixel metric must be euclidean or manhattan");
  const size_t n = ni * nj;
  std::vector<double> d(n * n, 0.0);
  for (size_t a = 0; a < n; ++a) {
    const double ra = static_cast<double>(a / nj), ca = static_cast<double>(a % nj);
    for (size_t b = a + 1; b < n; ++b) {
      const double rb = static_cast<double>(b / nj), cb = static_cast<double>(b % nj);
      double dist;
      if (metric == DistanceMetric::Euclidean) {
        dist = std::sqrt((ra - rb) * (ra - rb) + (ca - cb) * (ca - cb));
      } else {
        dist = std::abs(ra - rb) + std::abs(ca - cb);
      }
      d[a * n + b] = dist;
      d[b * n + a] = dist;
    }
  }
  PixelGrid g;
  g.ni = ni;
  g.nj = nj;
  g.metric = metric;
  g.q = rank_matrix(d, n);
  return g;
}

namespace detail {

inline double pair_penalty(int rank_diff, ErrorKind kind) {
  const double a = std::abs(static_cast<double>(rank_diff));
  return kind == ErrorKind::AbsoluteDifference ? a : a * a;
}

}  // namespace detail

// err = sum over i<j of w(|r_ij - q_{pi(i)pi(j)}|).
inline double igtd_error(const RankMatrix& r, const PixelGrid& grid, const Assignment& a,
                         ErrorKind kind) {
  const size_t n = r.n;
  if (grid.slots() != n || a.perm.size() != n)
    throw DimensionMismatchError("igtd_error: dimension mismatch");
  double err = 0.0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      err += detail::pair_penalty(r.at(i, j) - grid.q.at(a.perm[i], a.perm[j]), kind);
    }
  }
  return err;
}

// Incremental error change of swapping pi(i) and pi(j); O(n). The (i, j)
// term itself is unchanged because q is symmetric.
inline double swap_delta(const RankMatrix& r, const PixelGrid& grid, const Assignment& a, size_t i,
                         size_t j, ErrorKind kind) {
  if (i == j) throw std::invalid_argument("swap_delta: i must differ from j");
  const size_t n = r.n;
  const size_t pi = a.perm[i], pj = a.perm[j];
  double delta = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (k == i || k == j) continue;
    const size_t pk = a.perm[k];
    delta += detail::pair_penalty(r.at(i, k) - grid.q.at(pj, pk), kind) -
             detail::pair_penalty(r.at(i, k) - grid.q.at(pi, pk), kind);
    delta += detail::pair_penalty(r.at(j, k) - grid.q.at(pi, pk), kind) -
             detail::pair_penalty(r.at(j, k) - grid.q.at(pj, pk), kind);
  }
  return delta;
}

namespace detail {

// One local-search run: repeatedly examine the feature that has gone
// unexamined the longest, applying the best strictly-improving swap available
// to it. Terminates on `patience` consecutive non-improving examinations or
// `max_steps` examinations, then runs full 2-opt sweeps until no improving
// transposition remains.
inline Assignment two_opt_run(const RankMatrix& r, const PixelGrid& grid, const IgtdConfig& cfg,
                              std::vector<size_t> start) {
  const size_t n = r.n;
  Assignment a;
  a.perm = std::move(start);
  a.error = igtd_error(r, grid, a, cfg.error_kind);

  std::vector<int64_t> last_examined(n);
  for (size_t f = 0; f < n; ++f) last_examined[f] = static_cast<int64_t>(f) - static_cast<int64_t>(n);

  size_t stale = 0;
  for (size_t step = 0; step < cfg.max_steps && stale < cfg.patience; ++step) {
    // Least recently examined feature, ties to the smallest index.
    size_t f = 0;
    for (size_t c = 1; c < n; ++c) {
      if (last_examined[c] < last_examined[f]) f = c;
    }
    const int64_t tick = static_cast<int64_t>(step);
    last_examined[f] = tick;

    double best_delta = 0.0;
    size_t best_partner = n;
    for (size_t p = 0; p < n; ++p) {
      if (p == f) continue;
      const double d = swap_delta(r, grid, a, f, p, cfg.error_kind);
      if (d < best_delta) {
        best_delta = d;
        best_partner = p;
      }
    }
    if (best_partner < n) {
      std::swap(a.perm[f], a.perm[best_partner]);
      a.error += best_delta;
      ++a.accepted_swaps;
      last_examined[best_partner] = tick;
      stale = 0;
    } else {
      ++stale;
    }
  }

  // Final sweep to a true 2-opt fixpoint.
  bool improved = true;
  while (improved) {
    improved = false;
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j) {
        const double d = swap_delta(r, grid, a, i, j, cfg.error_kind);
        if (d < 0.0) {
          std::swap(a.perm[i], a.perm[j]);
          a.error += d;
          ++a.accepted_swaps;
          improved = true;
        }
      }
    }
  }
  // Rank penalties are integer-valued, so the incremental error is exact;
  // recompute anyway so the stored error is the error of the returned perm.
  a.error = igtd_error(r, grid, a, cfg.error_kind);
  return a;
}

}  // namespace detail

// Local search from the identity assignment plus a few seeded random restarts;
// the best run wins, with the identity start preferred on exact ties. Every
// returned assignment is a 2-opt fixpoint.
inline Assignment optimize_assignment(const RankMatrix& r, const PixelGrid& grid,
                                      const IgtdConfig& cfg) {
  const size_t n = r.n;
  if (grid.slots() != n) throw DimensionMismatchError("optimize_assignment: grid/rank mismatch");
  if (cfg.max_steps < 1 || cfg.patience < 1)
    throw std::invalid_argument("max_steps and patience must be >= 1");

  std::vector<size_t> identity(n);
  std::iota(identity.begin(), identity.end(), size_t{0});
  Assignment best = detail::two_opt_run(r, grid, cfg, identity);

  constexpr size_t kRestarts = 7;
  SplitMix64 seeder(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  for (size_t t = 0; t < kRestarts; ++t) {
    Rng shuffle_rng(seeder.next());
    std::vector<size_t> start = identity;
    shuffle_rng.shuffle(start);
    Assignment candidate = detail::two_opt_run(r, grid, cfg, std::move(start));
    if (candidate.error < best.error) best = std::move(candidate);
  }
  return best;
}

// Appends all-zero `_pad_k` columns until the matrix has target_n columns.
inline EncodedMatrix pad_features(const EncodedMatrix& x, size_t target_n) {
  if (target_n < x.n_cols) throw std::invalid_argument("pad_features: target smaller than n_cols");
  if (target_n == x.n_cols) return x;
  EncodedMatrix out;
  out.n_rows = x.n_rows;
  out.n_cols = target_n;
  out.row_ids = x.row_ids;
  out.labels = x.labels;
  out.column_names = x.column_names;
  for (size_t k = 0; k < target_n - x.n_cols; ++k)
    out.column_names.push_back("_pad_" + std::to_string(k));
  out.values.assign(out.n_rows * target_n, 0.0);
  for (size_t r = 0; r < x.n_rows; ++r) {
    std::copy(x.row(r), x.row(r) + x.n_cols, out.values.begin() + static_cast<long>(r * target_n));
  }
  return out;
}

// One grayscale image per row: slot perm[f] holds round(255 * x[row, f]).
inline std::vector<ImageSample> render_images(const EncodedMatrix& x, const Assignment& a,
                                              const PixelGrid& grid) {
  if (x.n_cols > grid.slots() || a.perm.size() != x.n_cols)
    throw DimensionMismatchError("render_images: assignment/grid mismatch");
  for (double v : x.values) {
    if (!(v >= 0.0 && v <= 1.0)) throw NotNormalizedError("render_images: values outside [0,1]");
  }
  std::vector<ImageSample> images;
  images.reserve(x.n_rows);
  for (size_t r = 0; r < x.n_rows; ++r) {
    ImageSample img;
    img.ni = grid.ni;
    img.nj = grid.nj;
    img.pixels.assign(grid.slots(), 0);
    for (size_t f = 0; f < x.n_cols; ++f) {
      img.pixels[a.perm[f]] = static_cast<uint8_t>(std::lround(255.0 * x.at(r, f)));
    }
    img.label = x.labels[r];
    img.row_id = x.row_ids[r];
    images.push_back(std::move(img));
  }
  return images;
}

inline nlohmann::json assignment_to_json(const Assignment& a, const IgtdConfig& cfg) {
  return nlohmann::json{{"perm", a.perm},
                        {"error", a.error},
                        {"accepted_swaps", a.accepted_swaps},
                        {"config", cfg.to_json()}};
}

inline Assignment assignment_from_json(const nlohmann::json& j) {
  Assignment a;
  a.perm = j.at("perm").get<std::vector<size_t>>();
  a.error = j.at("error").get<double>();
  a.accepted_swaps = j.at("accepted_swaps").get<size_t>();
  return a;
}

}  // namespace tripimg
