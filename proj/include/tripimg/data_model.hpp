#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tripimg/prng.hpp"

namespace tripimg {

// Charge level chosen at the end of a trip.
enum class ChargeLevel : int { Level1 = 0, Level2 = 1, DcFast = 2, NoCharge = 3 };

constexpr int kNumClasses = 4;

inline ChargeLevel charge_level_from_code(int code) {
  if (code < 0 || code >= kNumClasses) throw std::invalid_argument("charge level code out of range");
  return static_cast<ChargeLevel>(code);
}

inline int code_of(ChargeLevel c) { return static_cast<int>(c); }

inline const char* charge_level_name(ChargeLevel c) {
  switch (c) {
    case ChargeLevel::Level1: return "Level1";
    case ChargeLevel::Level2: return "Level2";
    case ChargeLevel::DcFast: return "DCFast";
    case ChargeLevel::NoCharge: return "None";
  }
  return "?";
}

struct TripRecord {
  double start_time = 0.0;    // hour-of-day fraction, [0, 24)
  double soc_start = 0.0;     // percent, [0, 100]
  std::string day_type;       // weekday | weekend
  std::string day_name;       // Mon..Sun
  std::string vehicle_model;  // open set, nonempty
  bool holiday = false;
  std::string origin;         // home | work | other
  int day_of_year = 1;        // 1..365
  int season = 0;             // spring=0 summer=1 autumn=2 winter=3
  std::string destination;    // home | work | other
  ChargeLevel label = ChargeLevel::Level1;
};

struct Dataset {
  std::vector<TripRecord> rows;
  std::string provenance;

  std::array<size_t, kNumClasses> class_counts() const {
    std::array<size_t, kNumClasses> counts{};
    for (const auto& r : rows) ++counts[static_cast<size_t>(code_of(r.label))];
    return counts;
  }
};

struct GeneratorRules {
  std::array<double, kNumClasses> class_priors{0.25, 0.25, 0.25, 0.25};
  double signal_strength = 1.0;  // 1 = deterministic planted rule, 0 = priors only
  uint64_t seed = 0;
};

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingColumnError : CsvError {
  explicit MissingColumnError(const std::string& col)
      : CsvError("MissingColumn(" + col + ")"), column(col) {}
  std::string column;
};
struct BadValueError : CsvError {
  BadValueError(size_t row, const std::string& col, const std::string& token)
      : CsvError("BadValue(row " + std::to_string(row) + ", column " + col + ", token '" + token + "')"),
        row(row), column(col), token(token) {}
  size_t row;
  std::string column;
  std::string token;
};
struct EmptyFileError : CsvError {
  using CsvError::CsvError;
};
struct InvalidRulesError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace schema {

inline const std::vector<std::string>& column_names() {
  static const std::vector<std::string> names = {
      "start_time", "soc_start", "day_type", "day_name", "vehicle_model", "holiday",
      "origin",     "day_of_year", "season", "destination", "label"};
  return names;
}

// Present in some source exports but not part of the feature set; ignored on load.
inline const std::vector<std::string>& ignored_columns() {
  static const std::vector<std::string> names = {"distance_traveled", "charging_duration"};
  return names;
}

inline const std::vector<std::string>& day_names() {
  static const std::vector<std::string> names = {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"};
  return names;
}

inline const std::vector<std::string>& places() {
  static const std::vector<std::string> names = {"home", "work", "other"};
  return names;
}

}  // namespace schema

namespace detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace detail

// Throws BadValueError on the first invariant violation.
inline void validate_record(const TripRecord& r, size_t row_number) {
  auto bad = [&](const char* col, const std::string& token) {
    throw BadValueError(row_number, col, token);
  };
  if (!(r.start_time >= 0.0 && r.start_time < 24.0)) bad("start_time", std::to_string(r.start_time));
  if (!(r.soc_start >= 0.0 && r.soc_start <= 100.0)) bad("soc_start", std::to_string(r.soc_start));
  if (r.day_type != "weekday" && r.day_type != "weekend") bad("day_type", r.day_type);
  if (!detail::contains(schema::day_names(), r.day_name)) bad("day_name", r.day_name);
  if (r.vehicle_model.empty()) bad("vehicle_model", "");
  if (!detail::contains(schema::places(), r.origin)) bad("origin", r.origin);
  if (r.day_of_year < 1 || r.day_of_year > 365) bad("day_of_year", std::to_string(r.day_of_year));
  if (r.season < 0 || r.season > 3) bad("season", std::to_string(r.season));
  if (!detail::contains(schema::places(), r.destination)) bad("destination", r.destination);
  const bool weekend = (r.day_name == "Sat" || r.day_name == "Sun");
  if (weekend != (r.day_type == "weekend")) bad("day_type", r.day_type);
}

// The planted labeling rule applied by the synthetic generator at full signal
// strength. Documented here once; tests re-evaluate it independently.
//   1. DCFast  if destination == work and soc_start < 50  (low battery en route)
//   2. Level2  if destination == home and origin == work   (overnight after commute)
//   3. Level1  if destination == home                      (slow home charge)
//   4. None    otherwise
inline ChargeLevel planted_rule(const TripRecord& r) {
  if (r.destination == "work" && r.soc_start < 50.0) return ChargeLevel::DcFast;
  if (r.destination == "home" && r.origin == "work") return ChargeLevel::Level2;
  if (r.destination == "home") return ChargeLevel::Level1;
  return ChargeLevel::NoCharge;
}

inline void validate_rules(const GeneratorRules& rules) {
  double sum = 0.0;
  for (double p : rules.class_priors) {
    if (p < 0.0) throw InvalidRulesError("InvalidRules: negative prior");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw InvalidRulesError("InvalidRules: priors must sum to 1");
  if (!(rules.signal_strength >= 0.0 && rules.signal_strength <= 1.0))
    throw InvalidRulesError("InvalidRules: signal_strength outside [0,1]");
}

inline int season_of_day(int day_of_year) {
  if (day_of_year < 60) return 3;   // winter
  if (day_of_year < 152) return 0;  // spring
  if (day_of_year < 244) return 1;  // summer
  if (day_of_year < 335) return 2;  // autumn
  return 3;
}

// Deterministic function of (n, rules): same inputs give byte-identical rows.
inline Dataset generate_synthetic_trips(size_t n, const GeneratorRules& rules) {
  if (n < 1) throw std::invalid_argument("generate_synthetic_trips: n must be >= 1");
  validate_rules(rules);
  static const std::vector<std::string> models = {"Chevrolet", "Nissan", "Tesla", "Toyota"};
  Rng rng(rules.seed);
  Dataset d;
  d.provenance = "synthetic(seed=" + std::to_string(rules.seed) + ")";
  d.rows.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    TripRecord r;
    r.start_time = rng.next_double() * 24.0;
    r.soc_start = rng.next_double() * 100.0;
    const size_t day = static_cast<size_t>(rng.next_below(7));
    r.day_name = schema::day_names()[day];
    r.day_type = (day >= 5) ? "weekend" : "weekday";
    r.vehicle_model = models[static_cast<size_t>(rng.next_below(models.size()))];
    r.holiday = rng.next_double() < 0.1;
    r.origin = schema::places()[static_cast<size_t>(rng.next_below(3))];
    r.day_of_year = static_cast<int>(rng.next_below(365)) + 1;
    r.season = season_of_day(r.day_of_year);
    r.destination = schema::places()[static_cast<size_t>(rng.next_below(3))];
    if (rng.next_double() < rules.signal_strength) {
      r.label = planted_rule(r);
    } else {
      double u = rng.next_double();
      int cls = kNumClasses - 1;
      double acc = 0.0;
      for (int c = 0; c < kNumClasses; ++c) {
        acc += rules.class_priors[static_cast<size_t>(c)];
        if (u < acc) {
          cls = c;
          break;
        }
      }
      r.label = static_cast<ChargeLevel>(cls);
    }
    d.rows.push_back(std::move(r));
  }
  return d;
}

inline std::map<ChargeLevel, size_t> class_histogram(const Dataset& d) {
  std::map<ChargeLevel, size_t> hist;
  for (int c = 0; c < kNumClasses; ++c) hist[static_cast<ChargeLevel>(c)] = 0;
  for (const auto& r : d.rows) ++hist[r.label];
  return hist;
}

namespace detail {

inline double parse_double(const std::string& tok, size_t row, const std::string& col) {
  try {
    size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw BadValueError(row, col, tok);
  }
}

inline long parse_long(const std::string& tok, size_t row, const std::string& col) {
  try {
    size_t pos = 0;
    long v = std::stol(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw BadValueError(row, col, tok);
  }
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// Strict loader: any malformed row fails the whole load. Row order preserved.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw EmptyFileError("EmptyFile: " + path);
  auto cols = detail::split_csv_line(header);
  for (auto& c : cols) c = detail::lower(c);

  std::map<std::string, size_t> index;
  for (size_t i = 0; i < cols.size(); ++i) {
    if (detail::contains(schema::ignored_columns(), cols[i])) continue;
    if (!detail::contains(schema::column_names(), cols[i]))
      throw CsvError("UnknownColumn(" + cols[i] + ")");
    index[cols[i]] = i;
  }
  for (const auto& name : schema::column_names()) {
    if (!index.count(name)) throw MissingColumnError(name);
  }

  Dataset d;
  d.provenance = "loaded(" + path + ")";
  std::string line;
  size_t row_number = 0;
  while (std::getline(in, line)) {
    ++row_number;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != cols.size())
      throw BadValueError(row_number, "<row>", "field count " + std::to_string(fields.size()));
    auto f = [&](const char* name) -> const std::string& { return fields[index.at(name)]; };
    TripRecord r;
    r.start_time = detail::parse_double(f("start_time"), row_number, "start_time");
    r.soc_start = detail::parse_double(f("soc_start"), row_number, "soc_start");
    r.day_type = f("day_type");
    r.day_name = f("day_name");
    r.vehicle_model = f("vehicle_model");
    const std::string& hol = f("holiday");
    if (hol != "0" && hol != "1") throw BadValueError(row_number, "holiday", hol);
    r.holiday = (hol == "1");
    r.origin = f("origin");
    r.day_of_year = static_cast<int>(detail::parse_long(f("day_of_year"), row_number, "day_of_year"));
    r.season = static_cast<int>(detail::parse_long(f("season"), row_number, "season"));
    r.destination = f("destination");
    long code = detail::parse_long(f("label"), row_number, "label");
    if (code < 0 || code >= kNumClasses) throw BadValueError(row_number, "label", f("label"));
    r.label = static_cast<ChargeLevel>(code);
    validate_record(r, row_number);
    d.rows.push_back(std::move(r));
  }
  if (d.rows.empty()) throw EmptyFileError("EmptyFile: no data rows in " + path);
  return d;
}

inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CsvError("cannot write file: " + path);
  const auto& names = schema::column_names();
  for (size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << "\n";
  for (const auto& r : d.rows) {
    out << detail::format_double(r.start_time) << ',' << detail::format_double(r.soc_start) << ','
        << r.day_type << ',' << r.day_name << ',' << r.vehicle_model << ',' << (r.holiday ? 1 : 0)
        << ',' << r.origin << ',' << r.day_of_year << ',' << r.season << ',' << r.destination << ','
        << code_of(r.label) << "\n";
  }
}

}  // namespace tripimg
