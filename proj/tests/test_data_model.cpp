#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tripimg/data_model.hpp"

using namespace tripimg;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

const char* kHeader =
    "start_time,soc_start,day_type,day_name,vehicle_model,holiday,origin,day_of_year,season,"
    "destination,label\n";

}  // namespace

TEST_CASE("load_csv round-trips a well-formed file") {
  const auto path = temp_file("trips_roundtrip.csv");
  std::string body = kHeader;
  body += "8.5,55.0,weekday,Mon,Tesla,0,home,32,3,work,0\n";
  body += "23.25,12.5,weekend,Sat,Nissan,1,other,200,1,home,2\n";
  body += "12.0,90.0,weekday,Fri,Toyota,0,work,100,0,other,3\n";
  write_file(path, body);

  const Dataset d = load_csv(path);
  REQUIRE(d.rows.size() == 3);
  CHECK(d.rows[0].start_time == 8.5);
  CHECK(d.rows[0].vehicle_model == "Tesla");
  CHECK(d.rows[1].label == ChargeLevel::DcFast);
  CHECK(d.rows[2].day_name == "Fri");
  std::remove(path.c_str());
}

TEST_CASE("load_csv reports out-of-range values with row and column") {
  const auto path = temp_file("trips_badsoc.csv");
  write_file(path, std::string(kHeader) + "8.5,140,weekday,Mon,Tesla,0,home,32,3,work,0\n");
  try {
    load_csv(path);
    FAIL("expected BadValueError");
  } catch (const BadValueError& e) {
    CHECK(e.row == 1);
    CHECK(e.column == "soc_start");
  }
  std::remove(path.c_str());
}

TEST_CASE("load_csv detects a missing column") {
  const auto path = temp_file("trips_noseason.csv");
  write_file(path,
             "start_time,soc_start,day_type,day_name,vehicle_model,holiday,origin,day_of_year,"
             "destination,label\n"
             "8.5,55,weekday,Mon,Tesla,0,home,32,work,0\n");
  try {
    load_csv(path);
    FAIL("expected MissingColumnError");
  } catch (const MissingColumnError& e) {
    CHECK(e.column == "season");
  }
  std::remove(path.c_str());
}

TEST_CASE("load_csv rejects empty files and day_type inconsistency") {
  const auto empty = temp_file("trips_empty.csv");
  write_file(empty, kHeader);
  CHECK_THROWS_AS(load_csv(empty), EmptyFileError);
  std::remove(empty.c_str());

  const auto bad = temp_file("trips_badday.csv");
  write_file(bad, std::string(kHeader) + "8.5,55,weekday,Sat,Tesla,0,home,32,3,work,0\n");
  CHECK_THROWS_AS(load_csv(bad), BadValueError);
  std::remove(bad.c_str());
}

TEST_CASE("load_csv ignores the optional extra columns") {
  const auto path = temp_file("trips_extra.csv");
  write_file(path,
             "start_time,soc_start,day_type,day_name,vehicle_model,holiday,origin,day_of_year,"
             "season,destination,label,distance_traveled\n"
             "8.5,55,weekday,Mon,Tesla,0,home,32,3,work,0,12.7\n");
  const Dataset d = load_csv(path);
  REQUIRE(d.rows.size() == 1);
  CHECK(d.rows[0].soc_start == 55.0);
  std::remove(path.c_str());
}

TEST_CASE("generator is deterministic") {
  GeneratorRules rules;
  rules.seed = 7;
  const Dataset a = generate_synthetic_trips(1000, rules);
  const Dataset b = generate_synthetic_trips(1000, rules);
  REQUIRE(a.rows.size() == 1000);
  for (size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].start_time == b.rows[i].start_time);
    CHECK(a.rows[i].soc_start == b.rows[i].soc_start);
    CHECK(a.rows[i].day_name == b.rows[i].day_name);
    CHECK(a.rows[i].label == b.rows[i].label);
  }
}

TEST_CASE("zero signal strength samples labels from the priors") {
  GeneratorRules rules;
  rules.signal_strength = 0.0;
  rules.class_priors = {0.1, 0.4, 0.1, 0.4};
  rules.seed = 11;
  const Dataset d = generate_synthetic_trips(100000, rules);
  const auto counts = d.class_counts();
  for (int c = 0; c < kNumClasses; ++c) {
    const double freq = static_cast<double>(counts[static_cast<size_t>(c)]) / 100000.0;
    CHECK(std::abs(freq - rules.class_priors[static_cast<size_t>(c)]) < 0.01);
  }
}

TEST_CASE("full signal strength labels match an independent rule evaluation") {
  GeneratorRules rules;
  rules.signal_strength = 1.0;
  rules.seed = 3;
  const Dataset d = generate_synthetic_trips(500, rules);
  for (const auto& r : d.rows) {
    // Re-derive the planted rule table by hand.
    ChargeLevel expected;
    if (r.destination == "work" && r.soc_start < 50.0) {
      expected = ChargeLevel::DcFast;
    } else if (r.destination == "home" && r.origin == "work") {
      expected = ChargeLevel::Level2;
    } else if (r.destination == "home") {
      expected = ChargeLevel::Level1;
    } else {
      expected = ChargeLevel::NoCharge;
    }
    REQUIRE(r.label == expected);
  }
}

TEST_CASE("generated rows satisfy the schema invariants") {
  GeneratorRules rules;
  rules.seed = 99;
  const Dataset d = generate_synthetic_trips(2000, rules);
  for (size_t i = 0; i < d.rows.size(); ++i) {
    CHECK_NOTHROW(validate_record(d.rows[i], i + 1));
  }
}

TEST_CASE("generator rejects malformed rules") {
  GeneratorRules rules;
  rules.class_priors = {0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(generate_synthetic_trips(10, rules), InvalidRulesError);
}

TEST_CASE("class_histogram counts and conserves") {
  Dataset d;
  for (int i = 0; i < 5; ++i) {
    TripRecord r;
    r.label = ChargeLevel::NoCharge;
    d.rows.push_back(r);
  }
  auto hist = class_histogram(d);
  CHECK(hist[ChargeLevel::NoCharge] == 5);
  CHECK(hist[ChargeLevel::Level1] == 0);
  CHECK(hist[ChargeLevel::Level2] == 0);
  CHECK(hist[ChargeLevel::DcFast] == 0);

  GeneratorRules rules;
  rules.seed = 7;
  const Dataset synth = generate_synthetic_trips(1000, rules);
  hist = class_histogram(synth);
  // Brute-force recount.
  std::array<size_t, kNumClasses> manual{};
  for (const auto& r : synth.rows) ++manual[static_cast<size_t>(code_of(r.label))];
  size_t total = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    CHECK(hist[static_cast<ChargeLevel>(c)] == manual[static_cast<size_t>(c)]);
    total += manual[static_cast<size_t>(c)];
  }
  CHECK(total == synth.rows.size());
}

TEST_CASE("csv writer/reader round-trip preserves the dataset") {
  GeneratorRules rules;
  rules.seed = 21;
  const Dataset d = generate_synthetic_trips(200, rules);
  const auto path = temp_file("trips_rt2.csv");
  write_csv(d, path);
  const Dataset back = load_csv(path);
  REQUIRE(back.rows.size() == d.rows.size());
  for (size_t i = 0; i < d.rows.size(); ++i) {
    CHECK(back.rows[i].start_time == d.rows[i].start_time);
    CHECK(back.rows[i].soc_start == d.rows[i].soc_start);
    CHECK(back.rows[i].day_type == d.rows[i].day_type);
    CHECK(back.rows[i].holiday == d.rows[i].holiday);
    CHECK(back.rows[i].label == d.rows[i].label);
  }
  std::remove(path.c_str());
}
