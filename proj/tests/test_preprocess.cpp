#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "tripimg/data_model.hpp"
#include "tripimg/preprocess.hpp"

using namespace tripimg;

namespace {

Dataset small_dataset() {
  GeneratorRules rules;
  rules.seed = 5;
  return generate_synthetic_trips(300, rules);
}

}  // namespace

TEST_CASE("categorical codes are lexicographic") {
  Dataset d;
  for (const char* place : {"work", "home", "other"}) {
    TripRecord r;
    r.day_type = "weekday";
    r.day_name = "Mon";
    r.vehicle_model = "Tesla";
    r.origin = place;
    r.destination = place;
    d.rows.push_back(r);
  }
  const EncoderMap enc = fit_encoders(d, {});
  CHECK(enc.code_of("origin", "home") == 0);
  CHECK(enc.code_of("origin", "other") == 1);
  CHECK(enc.code_of("origin", "work") == 2);
}

TEST_CASE("one-hot width of day_name is 7 and fit is order-independent") {
  Dataset d = small_dataset();
  const EncoderMap enc = fit_encoders(d, {"day_name"});
  CHECK(enc.categories.at("day_name").size() == 7);

  Dataset shuffled = d;
  std::reverse(shuffled.rows.begin(), shuffled.rows.end());
  const EncoderMap enc2 = fit_encoders(shuffled, {"day_name"});
  CHECK(enc.categories == enc2.categories);
}

TEST_CASE("fit_encoders rejects unknown columns") {
  CHECK_THROWS_AS(fit_encoders(small_dataset(), {"soc_start"}), UnknownColumnError);
}

TEST_CASE("min-max scaling matches hand arithmetic") {
  Dataset d;
  for (int doy : {1, 183, 365}) {
    TripRecord r;
    r.day_type = "weekday";
    r.day_name = "Mon";
    r.vehicle_model = "Tesla";
    r.origin = "home";
    r.destination = "home";
    r.day_of_year = doy;
    d.rows.push_back(r);
  }
  const EncoderMap enc = fit_encoders(d, {});
  const EncodedMatrix x = transform(d, enc, true);
  const auto it = std::find(x.column_names.begin(), x.column_names.end(), "day_of_year");
  REQUIRE(it != x.column_names.end());
  const size_t col = static_cast<size_t>(it - x.column_names.begin());
  CHECK(x.at(0, col) == 0.0);
  CHECK(x.at(1, col) == Catch::Approx((183.0 - 1.0) / (365.0 - 1.0)));
  CHECK(x.at(2, col) == 1.0);

  // Constant columns (start_time here) map to 0.
  const auto st = std::find(x.column_names.begin(), x.column_names.end(), "start_time");
  const size_t st_col = static_cast<size_t>(st - x.column_names.begin());
  for (size_t r = 0; r < x.n_rows; ++r) CHECK(x.at(r, st_col) == 0.0);
}

TEST_CASE("transform rejects unseen categories") {
  Dataset d = small_dataset();
  const EncoderMap enc = fit_encoders(d, {});
  Dataset d2 = d;
  d2.rows[0].origin = "Bus";
  CHECK_THROWS_AS(transform(d2, enc, true), UnseenCategoryError);
}

TEST_CASE("transform is deterministic and normalized outputs stay in [0,1]") {
  Dataset d = small_dataset();
  const EncoderMap enc = fit_encoders(d, {"day_type", "day_name", "vehicle_model", "origin",
                                          "destination"});
  const EncodedMatrix a = transform(d, enc, true);
  const EncodedMatrix b = transform(d, enc, true);
  CHECK(a.values == b.values);
  for (double v : a.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(a.n_rows == d.rows.size());
  CHECK(a.row_ids.size() == a.n_rows);
  CHECK(a.labels.size() == a.n_rows);
}

TEST_CASE("downsample_class caps only the requested class") {
  Dataset d = small_dataset();
  const EncoderMap enc = fit_encoders(d, {});
  const EncodedMatrix x = transform(d, enc, true);

  std::array<size_t, kNumClasses> before{};
  for (auto l : x.labels) ++before[static_cast<size_t>(code_of(l))];
  const ChargeLevel target = ChargeLevel::NoCharge;
  const size_t cap = before[static_cast<size_t>(code_of(target))] / 2;
  REQUIRE(cap >= 1);

  const EncodedMatrix y = downsample_class(x, target, cap, 123);
  std::array<size_t, kNumClasses> after{};
  for (auto l : y.labels) ++after[static_cast<size_t>(code_of(l))];
  CHECK(after[static_cast<size_t>(code_of(target))] == cap);
  for (int c = 0; c < kNumClasses; ++c) {
    if (c != code_of(target)) CHECK(after[static_cast<size_t>(c)] == before[static_cast<size_t>(c)]);
  }

  // Survivors keep original order and identity.
  CHECK(std::is_sorted(y.row_ids.begin(), y.row_ids.end()));
  const EncodedMatrix y2 = downsample_class(x, target, cap, 123);
  CHECK(y.row_ids == y2.row_ids);

  // Non-binding cap leaves the matrix unchanged.
  const EncodedMatrix z = downsample_class(x, target, 100000, 123);
  CHECK(z.row_ids == x.row_ids);
}

TEST_CASE("train_test_split produces a seeded partition") {
  Dataset d = small_dataset();
  const EncoderMap enc = fit_encoders(d, {});
  EncodedMatrix x = transform(d, enc, true);
  x.n_rows = 100;
  x.values.resize(100 * x.n_cols);
  x.row_ids.resize(100);
  x.labels.resize(100);

  const SplitIndices s = train_test_split(x, 0.3, 42);
  CHECK(s.test.size() == 30);
  CHECK(s.train.size() == 70);
  const SplitIndices s2 = train_test_split(x, 0.3, 42);
  CHECK(s.test == s2.test);
  CHECK(s.train == s2.train);

  // Partition property over fuzzed sizes and seeds.
  Rng fuzz(555);
  for (int iter = 0; iter < 50; ++iter) {
    const size_t m = 2 + fuzz.next_below(200);
    EncodedMatrix xm;
    xm.n_rows = m;
    xm.n_cols = 1;
    xm.values.assign(m, 0.0);
    xm.row_ids.resize(m);
    xm.labels.assign(m, ChargeLevel::Level1);
    const SplitIndices sp = train_test_split(xm, 0.3, fuzz.next_u64());
    std::vector<size_t> all = sp.train;
    all.insert(all.end(), sp.test.begin(), sp.test.end());
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == m);
    for (size_t i = 0; i < m; ++i) REQUIRE(all[i] == i);
  }
}

TEST_CASE("kfold_plan sizes differ by at most one") {
  EncodedMatrix x;
  x.n_rows = 103;
  x.n_cols = 1;
  x.values.assign(103, 0.0);
  x.row_ids.resize(103);
  x.labels.assign(103, ChargeLevel::Level1);

  const FoldPlan plan = kfold_plan(x, 10, 9);
  REQUIRE(plan.folds.size() == 10);
  size_t elevens = 0, tens = 0;
  for (const auto& f : plan.folds) {
    if (f.size() == 11) ++elevens;
    else if (f.size() == 10) ++tens;
  }
  CHECK(elevens == 3);
  CHECK(tens == 7);

  x.n_rows = 100;
  x.values.resize(100);
  x.row_ids.resize(100);
  x.labels.resize(100);
  const FoldPlan even = kfold_plan(x, 10, 9);
  for (const auto& f : even.folds) CHECK(f.size() == 10);

  CHECK_THROWS_AS(kfold_plan(x, 1, 0), BadKError);
  CHECK_THROWS_AS(kfold_plan(x, 101, 0), BadKError);

  // Disjoint and exhaustive for fuzzed inputs.
  Rng fuzz(77);
  for (int iter = 0; iter < 30; ++iter) {
    const size_t m = 5 + fuzz.next_below(150);
    EncodedMatrix xm;
    xm.n_rows = m;
    xm.n_cols = 1;
    xm.values.assign(m, 0.0);
    xm.row_ids.resize(m);
    xm.labels.assign(m, ChargeLevel::Level1);
    const size_t k = 2 + fuzz.next_below(std::min<size_t>(m - 1, 12));
    const FoldPlan p = kfold_plan(xm, k, fuzz.next_u64());
    std::vector<size_t> all;
    for (const auto& f : p.folds) all.insert(all.end(), f.begin(), f.end());
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == m);
    for (size_t i = 0; i < m; ++i) REQUIRE(all[i] == i);
  }
}

TEST_CASE("encoder map serializes to JSON and back") {
  Dataset d = small_dataset();
  const EncoderMap enc = fit_encoders(d, {"origin", "destination"});
  const EncoderMap back = EncoderMap::from_json(enc.to_json());
  CHECK(back.categories == enc.categories);
  CHECK(back.onehot == enc.onehot);
}
