#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripimg/classifiers.hpp"
#include "tripimg/data_model.hpp"
#include "tripimg/eval.hpp"
#include "tripimg/igtd.hpp"
#include "tripimg/nn.hpp"
#include "tripimg/pgm.hpp"
#include "tripimg/preprocess.hpp"
#include "tripimg/prng.hpp"

namespace tripimg {

// Stage indices for per-stage seed derivation from the master seed.
enum StageSeed : unsigned {
  kSeedGenerate = 0,
  kSeedDownsample = 1,
  kSeedSplit = 2,
  kSeedFolds = 3,
  kSeedModel = 4,
  kSeedTrain = 5,
};

struct PipelineConfig {
  uint64_t seed = 42;
  std::string out_dir = "run";

  // data
  std::string csv_path;  // empty = synthetic
  size_t synthetic_n = 20000;
  double signal_strength = 1.0;
  std::array<double, kNumClasses> class_priors{0.25, 0.25, 0.25, 0.25};

  // preprocess
  std::set<std::string> onehot = {"day_type", "day_name", "vehicle_model", "origin", "destination"};
  std::map<int, size_t> downsample_caps = {{code_of(ChargeLevel::Level2), 9000},
                                           {code_of(ChargeLevel::NoCharge), 9000}};
  double test_fraction = 0.3;
  size_t cv_folds = 10;

  IgtdConfig igtd;

  // model
  std::string model = "tree";  // knn | tree | forest | cnn
  int knn_k = 5;
  TreeParams tree_params;
  ForestParams forest_params;
  bool cnn_deep = false;
  nn::TrainConfig train;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["out"] = out_dir;
    j["data"] = {{"csv_path", csv_path},
                 {"n", synthetic_n},
                 {"signal_strength", signal_strength},
                 {"class_priors", class_priors}};
    nlohmann::json caps = nlohmann::json::object();
    for (const auto& [cls, cap] : downsample_caps) caps[std::to_string(cls)] = cap;
    j["preprocess"] = {{"onehot", std::vector<std::string>(onehot.begin(), onehot.end())},
                       {"downsample_caps", caps},
                       {"test_fraction", test_fraction},
                       {"cv_folds", cv_folds}};
    j["igtd"] = igtd.to_json();
    j["model"] = {{"name", model},
                  {"knn_k", knn_k},
                  {"tree_max_depth", tree_params.max_depth},
                  {"tree_min_samples_leaf", tree_params.min_samples_leaf},
                  {"forest_n_trees", forest_params.n_trees},
                  {"forest_features_per_split", forest_params.features_per_split},
                  {"forest_max_depth", forest_params.max_depth},
                  {"cnn_deep", cnn_deep}};
    j["train"] = {{"optimizer", train.optimizer == nn::OptimizerKind::Adam ? "adam" : "sgd"},
                  {"lr", train.lr},
                  {"batch_size", train.batch_size},
                  {"epochs", train.epochs},
                  {"l1", train.l1},
                  {"l2", train.l2}};
    return j;
  }

  static PipelineConfig from_json(const nlohmann::json& j) {
    PipelineConfig c;
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("out")) c.out_dir = j["out"].get<std::string>();
    if (j.contains("data")) {
      const auto& d = j["data"];
      if (d.contains("csv_path")) c.csv_path = d["csv_path"].get<std::string>();
      if (d.contains("n")) c.synthetic_n = d["n"].get<size_t>();
      if (d.contains("signal_strength")) c.signal_strength = d["signal_strength"].get<double>();
      if (d.contains("class_priors"))
        c.class_priors = d["class_priors"].get<std::array<double, kNumClasses>>();
    }
    if (j.contains("preprocess")) {
      const auto& p = j["preprocess"];
      if (p.contains("onehot")) {
        c.onehot.clear();
        for (const auto& col : p["onehot"]) c.onehot.insert(col.get<std::string>());
      }
      if (p.contains("downsample_caps")) {
        c.downsample_caps.clear();
        for (const auto& [key, value] : p["downsample_caps"].items())
          c.downsample_caps[std::stoi(key)] = value.get<size_t>();
      }
      if (p.contains("test_fraction")) c.test_fraction = p["test_fraction"].get<double>();
      if (p.contains("cv_folds")) c.cv_folds = p["cv_folds"].get<size_t>();
    }
    if (j.contains("igtd")) c.igtd = IgtdConfig::from_json(j["igtd"]);
    if (j.contains("model")) {
      const auto& m = j["model"];
      if (m.contains("name")) c.model = m["name"].get<std::string>();
      if (m.contains("knn_k")) c.knn_k = m["knn_k"].get<int>();
      if (m.contains("tree_max_depth")) c.tree_params.max_depth = m["tree_max_depth"].get<size_t>();
      if (m.contains("tree_min_samples_leaf"))
        c.tree_params.min_samples_leaf = m["tree_min_samples_leaf"].get<size_t>();
      if (m.contains("forest_n_trees")) c.forest_params.n_trees = m["forest_n_trees"].get<size_t>();
      if (m.contains("forest_features_per_split"))
        c.forest_params.features_per_split = m["forest_features_per_split"].get<size_t>();
      if (m.contains("forest_max_depth"))
        c.forest_params.max_depth = m["forest_max_depth"].get<size_t>();
      if (m.contains("cnn_deep")) c.cnn_deep = m["cnn_deep"].get<bool>();
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      if (t.contains("optimizer"))
        c.train.optimizer = t["optimizer"].get<std::string>() == "sgd" ? nn::OptimizerKind::Sgd
                                                                       : nn::OptimizerKind::Adam;
      if (t.contains("lr")) c.train.lr = t["lr"].get<double>();
      if (t.contains("batch_size")) c.train.batch_size = t["batch_size"].get<size_t>();
      if (t.contains("epochs")) c.train.epochs = t["epochs"].get<size_t>();
      if (t.contains("l1")) c.train.l1 = t["l1"].get<double>();
      if (t.contains("l2")) c.train.l2 = t["l2"].get<double>();
    }
    return c;
  }
};

namespace pipeline {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const fs::path& path) {
  return nlohmann::json::parse(read_text(path));
}

inline void echo_config(const PipelineConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_json(fs::path(cfg.out_dir) / "config.json", cfg.to_json());
}

// ---- stage: generate -------------------------------------------------------

inline fs::path trips_path(const PipelineConfig& cfg) { return fs::path(cfg.out_dir) / "trips.csv"; }

inline void run_generate(const PipelineConfig& cfg) {
  echo_config(cfg);
  GeneratorRules rules;
  rules.class_priors = cfg.class_priors;
  rules.signal_strength = cfg.signal_strength;
  rules.seed = derive_seed(cfg.seed, kSeedGenerate);
  const Dataset d = generate_synthetic_trips(cfg.synthetic_n, rules);
  write_csv(d, trips_path(cfg).string());
}

inline Dataset load_stage_dataset(const PipelineConfig& cfg) {
  const std::string path = cfg.csv_path.empty() ? trips_path(cfg).string() : cfg.csv_path;
  return load_csv(path);
}

// ---- stage: preprocess -----------------------------------------------------

inline void write_matrix_csv(const EncodedMatrix& x, const fs::path& path) {
  std::ostringstream os;
  os << "row_id,label";
  for (const auto& c : x.column_names) os << ',' << c;
  os << "\n";
  os.precision(17);
  for (size_t r = 0; r < x.n_rows; ++r) {
    os << x.row_ids[r] << ',' << code_of(x.labels[r]);
    for (size_t c = 0; c < x.n_cols; ++c) os << ',' << x.at(r, c);
    os << "\n";
  }
  write_text(path, os.str());
}

inline EncodedMatrix read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty matrix file: " + path.string());
  auto header = detail::split_csv_line(line);
  EncodedMatrix x;
  x.column_names.assign(header.begin() + 2, header.end());
  x.n_cols = x.column_names.size();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    x.row_ids.push_back(std::stoull(fields[0]));
    x.labels.push_back(charge_level_from_code(std::stoi(fields[1])));
    for (size_t c = 0; c < x.n_cols; ++c) x.values.push_back(std::stod(fields[2 + c]));
  }
  x.n_rows = x.row_ids.size();
  return x;
}

inline EncodedMatrix apply_downsample(const PipelineConfig& cfg, EncodedMatrix x) {
  SplitMix64 cap_seeder(derive_seed(cfg.seed, kSeedDownsample));
  for (const auto& [cls, cap] : cfg.downsample_caps) {
    x = downsample_class(x, charge_level_from_code(cls), cap, cap_seeder.next());
  }
  return x;
}

inline void run_preprocess(const PipelineConfig& cfg) {
  echo_config(cfg);
  const Dataset d = load_stage_dataset(cfg);
  const EncoderMap enc = fit_encoders(d, cfg.onehot);
  EncodedMatrix x = transform(d, enc, true);
  x = apply_downsample(cfg, x);
  const SplitIndices split = train_test_split(x, cfg.test_fraction, derive_seed(cfg.seed, kSeedSplit));

  const fs::path out(cfg.out_dir);
  write_json(out / "encoders.json", enc.to_json());
  write_matrix_csv(x, out / "matrix.csv");
  write_json(out / "split.json",
             nlohmann::json{{"train", split.train}, {"test", split.test}, {"seed", split.seed}});
}

inline SplitIndices read_split(const fs::path& out) {
  const auto j = read_json(out / "split.json");
  SplitIndices s;
  s.train = j.at("train").get<std::vector<size_t>>();
  s.test = j.at("test").get<std::vector<size_t>>();
  s.seed = j.at("seed").get<uint64_t>();
  return s;
}

// ---- stage: convert --------------------------------------------------------

// Ordinal-encodes every categorical column (10 features total), pads to the
// grid, optimizes the IGTD assignment and writes one PGM per row.
inline void run_convert(const PipelineConfig& cfg) {
  echo_config(cfg);
  const Dataset d = load_stage_dataset(cfg);
  const EncoderMap enc = fit_encoders(d, {});
  EncodedMatrix x = transform(d, enc, true);
  x = apply_downsample(cfg, x);
  x = pad_features(x, cfg.igtd.ni * cfg.igtd.nj);

  const auto dist = feature_distance_matrix(x, cfg.igtd.feature_metric);
  const RankMatrix r = rank_matrix(dist, x.n_cols);
  const PixelGrid grid = pixel_rank_matrix(cfg.igtd.ni, cfg.igtd.nj, cfg.igtd.pixel_metric);
  const Assignment a = optimize_assignment(r, grid, cfg.igtd);
  const auto images = render_images(x, a, grid);

  const fs::path out(cfg.out_dir);
  const fs::path img_dir = out / "images";
  fs::create_directories(img_dir);
  std::ostringstream manifest;
  manifest << "filename,label,row_id\n";
  for (size_t i = 0; i < images.size(); ++i) {
    std::ostringstream name;
    name << "row_" << std::setw(6) << std::setfill('0') << images[i].row_id << ".pgm";
    write_pgm(images[i], (img_dir / name.str()).string());
    manifest << name.str() << ',' << code_of(images[i].label) << ',' << images[i].row_id << "\n";
  }
  write_text(out / "manifest.csv", manifest.str());
  write_json(out / "assignment.json", assignment_to_json(a, cfg.igtd));
  write_json(out / "image_encoders.json", enc.to_json());
}

inline std::vector<ImageSample> read_images(const fs::path& out) {
  std::ifstream in(out / "manifest.csv");
  if (!in) throw std::runtime_error("cannot read manifest.csv; run convert first");
  std::string line;
  std::getline(in, line);
  std::vector<ImageSample> images;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    ImageSample img = read_pgm((out / "images" / fields[0]).string());
    img.label = charge_level_from_code(std::stoi(fields[1]));
    img.row_id = std::stoull(fields[2]);
    images.push_back(std::move(img));
  }
  return images;
}

// ---- stage: train ----------------------------------------------------------

inline nn::CnnSpec cnn_spec_for(const PipelineConfig& cfg) {
  return cfg.cnn_deep ? nn::CnnSpec::deep(cfg.train.l1, cfg.train.l2)
                      : nn::CnnSpec::baseline(cfg.train.l1, cfg.train.l2);
}

inline void run_train(const PipelineConfig& cfg) {
  echo_config(cfg);
  const fs::path out(cfg.out_dir);
  if (cfg.model == "cnn") {
    auto images = read_images(out);
    EncodedMatrix shim;  // index space for the split
    shim.n_rows = images.size();
    shim.n_cols = 1;
    shim.values.assign(images.size(), 0.0);
    shim.row_ids.resize(images.size());
    shim.labels.resize(images.size());
    // The CNN uses its own 80/20 split over the image set.
    const SplitIndices split = train_test_split(shim, 0.2, derive_seed(cfg.seed, kSeedSplit));
    nn::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, kSeedTrain);
    auto result = nn::train_cnn(images, cnn_spec_for(cfg), tc, split);
    nn::save_checkpoint(*result.model, (out / "cnn.ckpt").string());
    write_json(out / "cnn_split.json",
               nlohmann::json{{"train", split.train}, {"test", split.test}, {"seed", split.seed}});
    std::ostringstream curves;
    curves << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    curves.precision(17);
    for (size_t e = 0; e < result.curves.train_loss.size(); ++e) {
      curves << (e + 1) << ',' << result.curves.train_loss[e] << ',' << result.curves.train_acc[e]
             << ',' << result.curves.val_loss[e] << ',' << result.curves.val_acc[e] << "\n";
    }
    write_text(out / "curves.csv", curves.str());
    return;
  }

  const EncodedMatrix x = read_matrix_csv(out / "matrix.csv");
  const SplitIndices split = read_split(out);
  const EncodedMatrix train = subset_rows(x, split.train);
  if (cfg.model == "knn") {
    // KNN keeps no fitted state beyond its data reference.
    write_json(out / "model_knn.json",
               nlohmann::json{{"model", "knn"},
                              {"k", cfg.knn_k},
                              {"distance", metric_name(DistanceMetric::Euclidean)},
                              {"dataset_fingerprint", dataset_fingerprint(x)}});
  } else if (cfg.model == "tree") {
    const auto root = tree_fit(train, cfg.tree_params);
    write_json(out / "model_tree.json",
               nlohmann::json{{"model", "tree"}, {"tree", tree_to_json(root.get())}});
  } else if (cfg.model == "forest") {
    ForestParams fp = cfg.forest_params;
    fp.seed = derive_seed(cfg.seed, kSeedModel);
    const ForestModel m = forest_fit(train, fp);
    nlohmann::json j = forest_to_json(m);
    j["model"] = "forest";
    write_json(out / "model_forest.json", j);
  } else {
    throw std::invalid_argument("unknown model: " + cfg.model);
  }
}

// ---- stage: evaluate -------------------------------------------------------

inline RunReport run_evaluate(const PipelineConfig& cfg) {
  echo_config(cfg);
  const fs::path out(cfg.out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<ChargeLevel> truth, pred;
  std::string fingerprint;

  if (cfg.model == "cnn") {
    auto images = read_images(out);
    auto model = nn::load_checkpoint((out / "cnn.ckpt").string());
    const auto split_json = read_json(out / "cnn_split.json");
    const auto test = split_json.at("test").get<std::vector<size_t>>();
    for (size_t i : test) {
      truth.push_back(images[i].label);
      pred.push_back(charge_level_from_code(nn::predict_class(*model, nn::image_to_input(images[i]))));
    }
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& img : images) h = fnv1a64(img.pixels.data(), img.pixels.size(), h);
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << h;
    fingerprint = os.str();
  } else {
    const EncodedMatrix x = read_matrix_csv(out / "matrix.csv");
    const SplitIndices split = read_split(out);
    const EncodedMatrix train = subset_rows(x, split.train);
    fingerprint = dataset_fingerprint(x);
    std::function<ChargeLevel(const double*)> predict;
    if (cfg.model == "knn") {
      const auto j = read_json(out / "model_knn.json");
      if (j.at("dataset_fingerprint").get<std::string>() != fingerprint)
        throw std::runtime_error("knn model refers to a different dataset");
      auto model = std::make_shared<KnnModel>(knn_fit(train, j.at("k").get<int>()));
      predict = [model](const double* row) { return knn_predict(*model, row); };
    } else if (cfg.model == "tree") {
      auto root = std::shared_ptr<TreeNode>(tree_from_json(read_json(out / "model_tree.json").at("tree")));
      predict = [root](const double* row) { return tree_predict(root.get(), row); };
    } else if (cfg.model == "forest") {
      auto model = std::make_shared<ForestModel>(forest_from_json(read_json(out / "model_forest.json")));
      predict = [model](const double* row) { return forest_predict(*model, row); };
    } else {
      throw std::invalid_argument("unknown model: " + cfg.model);
    }
    for (size_t r : split.test) {
      truth.push_back(x.labels[r]);
      pred.push_back(predict(x.row(r)));
    }
  }

  RunReport report;
  report.model_name = cfg.model;
  report.config_echo = cfg.to_json();
  report.dataset_fingerprint = fingerprint;
  report.cm = confusion_matrix(truth, pred);
  report.report = classification_report(report.cm);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(out / ("report_" + cfg.model + ".json"), report.to_json());
  return report;
}

// ---- stage: report ---------------------------------------------------------

inline std::string run_report(const PipelineConfig& cfg) {
  const fs::path out(cfg.out_dir);
  std::vector<RunReport> reports;
  for (const auto& entry : fs::directory_iterator(out)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("report_", 0) == 0 && entry.path().extension() == ".json") {
      reports.push_back(RunReport::from_json(read_json(entry.path())));
    }
  }
  std::sort(reports.begin(), reports.end(),
            [](const RunReport& a, const RunReport& b) { return a.model_name < b.model_name; });
  const auto rows = comparison_table(reports);
  const std::string text = comparison_table_text(rows);
  write_text(out / "comparison.txt", text);
  write_text(out / "comparison.csv", comparison_table_csv(rows));
  return text;
}

}  // namespace pipeline
}  // namespace tripimg
