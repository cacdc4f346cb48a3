#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tripimg/pipeline.hpp"
#include "tripimg/selftest.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

tripimg::PipelineConfig load_config(const std::string& config_path) {
  if (config_path.empty()) return {};
  return tripimg::PipelineConfig::from_json(tripimg::pipeline::read_json(config_path));
}

bool parse_grid(const std::string& s, size_t* ni, size_t* nj) {
  const auto x = s.find('x');
  if (x == std::string::npos) return false;
  try {
    *ni = std::stoull(s.substr(0, x));
    *nj = std::stoull(s.substr(x + 1));
  } catch (const std::exception&) {
    return false;
  }
  return *ni >= 1 && *nj >= 1;
}

int run_selftest() {
  std::cout << "selftest: gradient checks\n";
  const double worst = tripimg::selftest::run_gradient_checks(3, 20240901, &std::cout);
  const bool grad_ok = worst < tripimg::selftest::kGradTolerance;
  std::cout << (grad_ok ? "PASS" : "FAIL") << " gradient checks (max rel err " << worst << ")\n";

  std::cout << "selftest: igtd oracle\n";
  const auto stats = tripimg::selftest::run_igtd_oracle(20, 20240902, &std::cout);
  const bool igtd_ok = stats.below_min == 0 && stats.optimal * 5 >= stats.instances * 3;
  std::cout << (igtd_ok ? "PASS" : "FAIL") << " igtd oracle\n";

  return (grad_ok && igtd_ok) ? kExitOk : kExitInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular EV trip records to IGTD images, classifiers and reports"};
  app.require_subcommand(1);

  std::string config_path, out_dir, model, grid, feature_metric, pixel_metric, error_kind,
      optimizer, csv_path;
  uint64_t seed = 0;
  bool seed_set = false, out_set = false, model_set = false;
  size_t epochs = 0, batch_size = 0, n_rows = 0;
  double signal = -1.0;
  bool deep = false;

  app.add_option("--config", config_path, "JSON pipeline config");
  app.add_option("--seed", seed, "master seed")->each([&](const std::string&) { seed_set = true; });
  app.add_option("--out", out_dir, "output directory")->each([&](const std::string&) { out_set = true; });
  app.add_option("--model", model, "knn | tree | forest | cnn")
      ->each([&](const std::string&) { model_set = true; });
  app.add_option("--grid", grid, "image grid, NIxNJ (e.g. 4x4)");
  app.add_option("--feature-metric", feature_metric, "euclidean | manhattan | pearson");
  app.add_option("--pixel-metric", pixel_metric, "euclidean | manhattan");
  app.add_option("--error", error_kind, "abs | sq");
  app.add_option("--epochs", epochs, "training epochs");
  app.add_option("--batch-size", batch_size, "mini-batch size");
  app.add_option("--optimizer", optimizer, "adam | sgd");
  app.add_option("--csv", csv_path, "input CSV instead of synthetic data");
  app.add_option("--n", n_rows, "synthetic row count");
  app.add_option("--signal", signal, "synthetic signal strength in [0,1]");
  app.add_flag("--deep", deep, "use the two-block CNN preset");

  auto* cmd_generate = app.add_subcommand("generate", "write a synthetic trips.csv");
  auto* cmd_preprocess = app.add_subcommand("preprocess", "encode, downsample and split");
  auto* cmd_convert = app.add_subcommand("convert", "IGTD conversion to PGM images");
  auto* cmd_train = app.add_subcommand("train", "fit the selected model");
  auto* cmd_evaluate = app.add_subcommand("evaluate", "evaluate on the held-out split");
  auto* cmd_report = app.add_subcommand("report", "cross-model comparison table");
  auto* cmd_selftest = app.add_subcommand("selftest", "gradient-check and IGTD-oracle suites");
  // Accept the shared options after the subcommand name as well.
  for (auto* sub : {cmd_generate, cmd_preprocess, cmd_convert, cmd_train, cmd_evaluate, cmd_report,
                    cmd_selftest}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cmd_selftest->parsed()) return run_selftest();

    tripimg::PipelineConfig cfg = load_config(config_path);
    if (seed_set) cfg.seed = seed;
    if (out_set) cfg.out_dir = out_dir;
    if (model_set) cfg.model = model;
    if (!csv_path.empty()) cfg.csv_path = csv_path;
    if (n_rows > 0) cfg.synthetic_n = n_rows;
    if (signal >= 0.0) cfg.signal_strength = signal;
    if (!grid.empty()) {
      if (!parse_grid(grid, &cfg.igtd.ni, &cfg.igtd.nj)) {
        std::cerr << "error: UsageError: bad --grid value '" << grid << "'\n";
        return kExitUsage;
      }
    }
    if (!feature_metric.empty()) cfg.igtd.feature_metric = tripimg::metric_from_name(feature_metric);
    if (!pixel_metric.empty()) cfg.igtd.pixel_metric = tripimg::metric_from_name(pixel_metric);
    if (!error_kind.empty()) cfg.igtd.error_kind = tripimg::error_kind_from_name(error_kind);
    if (epochs > 0) cfg.train.epochs = epochs;
    if (batch_size > 0) cfg.train.batch_size = batch_size;
    if (!optimizer.empty()) {
      if (optimizer != "adam" && optimizer != "sgd") {
        std::cerr << "error: UsageError: unknown optimizer '" << optimizer << "'\n";
        return kExitUsage;
      }
      cfg.train.optimizer =
          optimizer == "adam" ? tripimg::nn::OptimizerKind::Adam : tripimg::nn::OptimizerKind::Sgd;
    }
    if (deep) cfg.cnn_deep = true;

    if (cmd_generate->parsed()) {
      tripimg::pipeline::run_generate(cfg);
    } else if (cmd_preprocess->parsed()) {
      tripimg::pipeline::run_preprocess(cfg);
    } else if (cmd_convert->parsed()) {
      tripimg::pipeline::run_convert(cfg);
    } else if (cmd_train->parsed()) {
      tripimg::pipeline::run_train(cfg);
    } else if (cmd_evaluate->parsed()) {
      const auto report = tripimg::pipeline::run_evaluate(cfg);
      std::cout << cfg.model << " accuracy: " << report.report.accuracy << "\n";
    } else if (cmd_report->parsed()) {
      std::cout << tripimg::pipeline::run_report(cfg);
    }
    return kExitOk;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: UsageError: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: DataError: " << e.what() << "\n";
    return kExitData;
  }
}
