#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripimg/data_model.hpp"
#include "tripimg/prng.hpp"

namespace tripimg {

struct PreprocessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownColumnError : PreprocessError {
  explicit UnknownColumnError(const std::string& col)
      : PreprocessError("UnknownColumn(" + col + ")") {}
};
struct UnseenCategoryError : PreprocessError {
  UnseenCategoryError(const std::string& col, const std::string& token)
      : PreprocessError("UnseenCategory(" + col + ", '" + token + "')") {}
};

// Categorical vocabulary per column, tokens in lexicographic order so codes
// are independent of row order. Columns listed in `onehot` expand to one
// indicator column per token; the rest get their integer code.
struct EncoderMap {
  std::map<std::string, std::vector<std::string>> categories;
  std::set<std::string> onehot;

  int code_of(const std::string& column, const std::string& token) const {
    const auto& toks = categories.at(column);
    auto it = std::lower_bound(toks.begin(), toks.end(), token);
    if (it == toks.end() || *it != token) throw UnseenCategoryError(column, token);
    return static_cast<int>(it - toks.begin());
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["categories"] = categories;
    j["onehot"] = std::vector<std::string>(onehot.begin(), onehot.end());
    return j;
  }

  static EncoderMap from_json(const nlohmann::json& j) {
    EncoderMap e;
    e.categories = j.at("categories").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& c : j.at("onehot")) e.onehot.insert(c.get<std::string>());
    return e;
  }
};

struct EncodedMatrix {
  size_t n_rows = 0;
  size_t n_cols = 0;
  std::vector<double> values;  // row-major
  std::vector<size_t> row_ids;
  std::vector<std::string> column_names;
  std::vector<ChargeLevel> labels;

  double at(size_t r, size_t c) const { return values[r * n_cols + c]; }
  double& at(size_t r, size_t c) { return values[r * n_cols + c]; }
  const double* row(size_t r) const { return values.data() + r * n_cols; }
};

struct SplitIndices {
  std::vector<size_t> train;
  std::vector<size_t> test;
  uint64_t seed = 0;
};

struct FoldPlan {
  size_t k = 0;
  std::vector<std::vector<size_t>> folds;
  uint64_t seed = 0;
};

inline const std::vector<std::string>& categorical_columns() {
  static const std::vector<std::string> cols = {"day_type", "day_name", "vehicle_model", "origin",
                                                "destination"};
  return cols;
}

inline EncoderMap fit_encoders(const Dataset& d, const std::set<std::string>& onehot_columns) {
  for (const auto& c : onehot_columns) {
    if (!detail::contains(categorical_columns(), c)) throw UnknownColumnError(c);
  }
  EncoderMap enc;
  enc.onehot = onehot_columns;
  for (const auto& col : categorical_columns()) {
    std::set<std::string> tokens;
    for (const auto& r : d.rows) {
      if (col == "day_type") tokens.insert(r.day_type);
      else if (col == "day_name") tokens.insert(r.day_name);
      else if (col == "vehicle_model") tokens.insert(r.vehicle_model);
      else if (col == "origin") tokens.insert(r.origin);
      else tokens.insert(r.destination);
    }
    enc.categories[col] = std::vector<std::string>(tokens.begin(), tokens.end());
  }
  return enc;
}

namespace detail {

inline const std::string& categorical_value(const TripRecord& r, const std::string& col) {
  if (col == "day_type") return r.day_type;
  if (col == "day_name") return r.day_name;
  if (col == "vehicle_model") return r.vehicle_model;
  if (col == "origin") return r.origin;
  return r.destination;
}

// In-place min-max over one output column; a constant column maps to 0.
inline void minmax_column(EncodedMatrix& x, size_t col) {
  double lo = x.at(0, col), hi = lo;
  for (size_t r = 1; r < x.n_rows; ++r) {
    lo = std::min(lo, x.at(r, col));
    hi = std::max(hi, x.at(r, col));
  }
  const double range = hi - lo;
  for (size_t r = 0; r < x.n_rows; ++r) {
    x.at(r, col) = (range > 0.0) ? (x.at(r, col) - lo) / range : 0.0;
  }
}

}  // namespace detail

// Feature order follows the schema. One-hot columns emit 0/1 indicators and
// are never rescaled; everything else is min-max scaled when `normalize`.
inline EncodedMatrix transform(const Dataset& d, const EncoderMap& enc, bool normalize) {
  EncodedMatrix x;
  std::vector<bool> is_onehot_col;
  for (const auto& name : schema::column_names()) {
    if (name == "label") continue;
    const bool categorical = detail::contains(categorical_columns(), name);
    if (categorical && enc.onehot.count(name)) {
      for (const auto& tok : enc.categories.at(name)) {
        x.column_names.push_back(name + "=" + tok);
        is_onehot_col.push_back(true);
      }
    } else {
      x.column_names.push_back(name);
      is_onehot_col.push_back(false);
    }
  }
  x.n_rows = d.rows.size();
  x.n_cols = x.column_names.size();
  x.values.assign(x.n_rows * x.n_cols, 0.0);
  x.row_ids.resize(x.n_rows);
  x.labels.resize(x.n_rows);

  for (size_t r = 0; r < d.rows.size(); ++r) {
    const TripRecord& rec = d.rows[r];
    x.row_ids[r] = r;
    x.labels[r] = rec.label;
    size_t c = 0;
    for (const auto& name : schema::column_names()) {
      if (name == "label") continue;
      const bool categorical = detail::contains(categorical_columns(), name);
      if (categorical && enc.onehot.count(name)) {
        const int code = enc.code_of(name, detail::categorical_value(rec, name));
        const size_t width = enc.categories.at(name).size();
        x.at(r, c + static_cast<size_t>(code)) = 1.0;
        c += width;
      } else if (categorical) {
        x.at(r, c++) = enc.code_of(name, detail::categorical_value(rec, name));
      } else if (name == "start_time") {
        x.at(r, c++) = rec.start_time;
      } else if (name == "soc_start") {
        x.at(r, c++) = rec.soc_start;
      } else if (name == "holiday") {
        x.at(r, c++) = rec.holiday ? 1.0 : 0.0;
      } else if (name == "day_of_year") {
        x.at(r, c++) = rec.day_of_year;
      } else {  // season
        x.at(r, c++) = rec.season;
      }
    }
  }
  if (normalize && x.n_rows > 0) {
    for (size_t c = 0; c < x.n_cols; ++c) {
      if (!is_onehot_col[c]) detail::minmax_column(x, c);
    }
  }
  return x;
}

inline EncodedMatrix subset_rows(const EncodedMatrix& x, const std::vector<size_t>& rows) {
  EncodedMatrix out;
  out.n_rows = rows.size();
  out.n_cols = x.n_cols;
  out.column_names = x.column_names;
  out.values.reserve(out.n_rows * out.n_cols);
  out.row_ids.reserve(out.n_rows);
  out.labels.reserve(out.n_rows);
  for (size_t r : rows) {
    out.values.insert(out.values.end(), x.row(r), x.row(r) + x.n_cols);
    out.row_ids.push_back(x.row_ids[r]);
    out.labels.push_back(x.labels[r]);
  }
  return out;
}

// Reduces rows of `level` to at most `cap` via seeded sampling without
// replacement; survivors keep their original relative order.
inline EncodedMatrix downsample_class(const EncodedMatrix& x, ChargeLevel level, size_t cap,
                                      uint64_t seed) {
  if (cap < 1) throw std::invalid_argument("downsample cap must be >= 1");
  std::vector<size_t> members;
  for (size_t r = 0; r < x.n_rows; ++r) {
    if (x.labels[r] == level) members.push_back(r);
  }
  std::vector<bool> keep(x.n_rows, true);
  if (members.size() > cap) {
    Rng rng(seed);
    rng.shuffle(members);
    std::sort(members.begin() + static_cast<long>(cap), members.end());
    for (size_t i = cap; i < members.size(); ++i) keep[members[i]] = false;
  }
  std::vector<size_t> surviving;
  for (size_t r = 0; r < x.n_rows; ++r) {
    if (keep[r]) surviving.push_back(r);
  }
  return subset_rows(x, surviving);
}

struct TooFewRowsError : PreprocessError {
  using PreprocessError::PreprocessError;
};
struct BadKError : PreprocessError {
  using PreprocessError::PreprocessError;
};

inline SplitIndices train_test_split(const EncodedMatrix& x, double test_fraction, uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("test_fraction must be in (0,1)");
  if (x.n_rows < 2) throw TooFewRowsError("TooFewRows: need at least 2 rows to split");
  std::vector<size_t> idx(x.n_rows);
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const size_t n_test =
      static_cast<size_t>(std::llround(test_fraction * static_cast<double>(x.n_rows)));
  SplitIndices s;
  s.seed = seed;
  s.test.assign(idx.begin(), idx.begin() + static_cast<long>(n_test));
  s.train.assign(idx.begin() + static_cast<long>(n_test), idx.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

inline FoldPlan kfold_plan(const EncodedMatrix& x, size_t k, uint64_t seed) {
  if (k < 2 || k > x.n_rows) throw BadKError("BadK: k must be in [2, n_rows]");
  std::vector<size_t> idx(x.n_rows);
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  const size_t base = x.n_rows / k;
  const size_t rem = x.n_rows % k;
  size_t pos = 0;
  for (size_t f = 0; f < k; ++f) {
    const size_t sz = base + (f < rem ? 1 : 0);
    std::vector<size_t> fold(idx.begin() + static_cast<long>(pos),
                             idx.begin() + static_cast<long>(pos + sz));
    std::sort(fold.begin(), fold.end());
    plan.folds.push_back(std::move(fold));
    pos += sz;
  }
  return plan;
}

}  // namespace tripimg
