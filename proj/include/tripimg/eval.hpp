#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripimg/data_model.hpp"
#include "tripimg/preprocess.hpp"

namespace tripimg {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rows are true classes, columns predicted.
struct ConfusionMatrix {
  std::array<std::array<uint64_t, kNumClasses>, kNumClasses> cells{};

  uint64_t total() const {
    uint64_t s = 0;
    for (const auto& row : cells) {
      for (uint64_t c : row) s += c;
    }
    return s;
  }

  uint64_t trace() const {
    uint64_t s = 0;
    for (int c = 0; c < kNumClasses; ++c) s += cells[static_cast<size_t>(c)][static_cast<size_t>(c)];
    return s;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<ChargeLevel>& truth,
                                        const std::vector<ChargeLevel>& predictions) {
  if (truth.size() != predictions.size())
    throw EvalError("LengthMismatch: truth and predictions differ in length");
  ConfusionMatrix cm;
  for (size_t i = 0; i < truth.size(); ++i) {
    ++cm.cells[static_cast<size_t>(code_of(truth[i]))][static_cast<size_t>(code_of(predictions[i]))];
  }
  return cm;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  uint64_t support = 0;
};

struct ClassReport {
  std::array<ClassMetrics, kNumClasses> per_class;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

// 0/0 ratios resolve to 0 throughout.
inline ClassReport classification_report(const ConfusionMatrix& cm) {
  const uint64_t total = cm.total();
  if (total == 0) throw EvalError("EmptyMatrix: no samples");
  ClassReport report;
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  for (size_t c = 0; c < kNumClasses; ++c) {
    uint64_t tp = cm.cells[c][c], fp = 0, fn = 0;
    for (size_t o = 0; o < kNumClasses; ++o) {
      if (o != c) {
        fp += cm.cells[o][c];
        fn += cm.cells[c][o];
      }
    }
    auto& m = report.per_class[c];
    m.support = tp + fn;
    m.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
    m.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    report.macro_precision += m.precision / kNumClasses;
    report.macro_recall += m.recall / kNumClasses;
    report.macro_f1 += m.f1 / kNumClasses;
  }
  report.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  return report;
}

// FNV-1a 64 over raw bytes; used for dataset fingerprints.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string dataset_fingerprint(const EncodedMatrix& x) {
  uint64_t h = fnv1a64(x.values.data(), x.values.size() * sizeof(double));
  std::vector<int> codes;
  codes.reserve(x.labels.size());
  for (auto l : x.labels) codes.push_back(code_of(l));
  h = fnv1a64(codes.data(), codes.size() * sizeof(int), h);
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << h;
  return os.str();
}

struct RunReport {
  std::string model_name;
  nlohmann::json config_echo;
  std::string dataset_fingerprint;
  ClassReport report;
  ConfusionMatrix cm;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json per_class = nlohmann::json::array();
    for (size_t c = 0; c < kNumClasses; ++c) {
      const auto& m = report.per_class[c];
      per_class.push_back({{"class", c},
                           {"name", charge_level_name(static_cast<ChargeLevel>(c))},
                           {"precision", m.precision},
                           {"recall", m.recall},
                           {"f1", m.f1},
                           {"support", m.support}});
    }
    nlohmann::json cm_json = nlohmann::json::array();
    for (const auto& row : cm.cells) cm_json.push_back(row);
    return nlohmann::json{{"model", model_name},
                          {"config", config_echo},
                          {"dataset_fingerprint", dataset_fingerprint},
                          {"accuracy", report.accuracy},
                          {"macro_precision", report.macro_precision},
                          {"macro_recall", report.macro_recall},
                          {"macro_f1", report.macro_f1},
                          {"per_class", per_class},
                          {"confusion_matrix", cm_json},
                          {"wall_clock_seconds", wall_clock_seconds}};
  }

  static RunReport from_json(const nlohmann::json& j) {
    RunReport r;
    r.model_name = j.at("model").get<std::string>();
    r.config_echo = j.value("config", nlohmann::json::object());
    r.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    auto cm_json = j.at("confusion_matrix");
    for (size_t t = 0; t < kNumClasses; ++t) {
      for (size_t p = 0; p < kNumClasses; ++p) {
        r.cm.cells[t][p] = cm_json[t][p].get<uint64_t>();
      }
    }
    r.report = classification_report(r.cm);
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    return r;
  }
};

struct ComparisonRow {
  std::string method;
  double accuracy = 0.0;
};

// Sorted by accuracy descending; ties keep input order.
inline std::vector<ComparisonRow> comparison_table(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw EvalError("comparison_table: no reports");
  std::vector<ComparisonRow> rows;
  for (const auto& r : reports) rows.push_back({r.model_name, r.report.accuracy});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ComparisonRow& a, const ComparisonRow& b) { return a.accuracy > b.accuracy; });
  return rows;
}

inline std::string comparison_table_text(const std::vector<ComparisonRow>& rows) {
  size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.method.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "Method" << "  Accuracy\n";
  os << std::string(width + 10, '-') << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.method << "  " << std::right
       << std::fixed << std::setprecision(4) << r.accuracy << "\n";
  }
  return os.str();
}

inline std::string comparison_table_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  os << "method,accuracy\n";
  os.precision(17);
  for (const auto& r : rows) os << r.method << ',' << r.accuracy << "\n";
  return os.str();
}

}  // namespace tripimg
