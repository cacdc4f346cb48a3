#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "tripimg/pipeline.hpp"

using namespace tripimg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PipelineConfig small_config(const fs::path& out, uint64_t seed = 42) {
  PipelineConfig cfg;
  cfg.seed = seed;
  cfg.out_dir = out.string();
  cfg.synthetic_n = 400;
  cfg.downsample_caps.clear();
  cfg.igtd.max_steps = 2000;
  return cfg;
}

}  // namespace

TEST_CASE("generate then preprocess writes the expected artifacts") {
  TempDir tmp("pl_pre");
  auto cfg = small_config(tmp.path);
  pipeline::run_generate(cfg);
  REQUIRE(fs::exists(tmp.path / "trips.csv"));
  REQUIRE(fs::exists(tmp.path / "config.json"));

  pipeline::run_preprocess(cfg);
  REQUIRE(fs::exists(tmp.path / "encoders.json"));
  REQUIRE(fs::exists(tmp.path / "matrix.csv"));
  REQUIRE(fs::exists(tmp.path / "split.json"));

  const EncodedMatrix x = pipeline::read_matrix_csv(tmp.path / "matrix.csv");
  CHECK(x.n_rows == 400);
  // one-hot expansion: 5 numerics + 2+7+4+3+3 indicator columns
  CHECK(x.n_cols == 24);
  const SplitIndices split = pipeline::read_split(tmp.path);
  CHECK(split.train.size() + split.test.size() == x.n_rows);
  CHECK(split.test.size() == 120);
}

TEST_CASE("matrix csv round-trip preserves values, ids and labels") {
  TempDir tmp("pl_mat");
  auto cfg = small_config(tmp.path, 7);
  pipeline::run_generate(cfg);

  const Dataset d = pipeline::load_stage_dataset(cfg);
  const EncoderMap enc = fit_encoders(d, cfg.onehot);
  const EncodedMatrix x = transform(d, enc, true);
  pipeline::write_matrix_csv(x, tmp.path / "m.csv");
  const EncodedMatrix back = pipeline::read_matrix_csv(tmp.path / "m.csv");
  CHECK(back.n_rows == x.n_rows);
  CHECK(back.n_cols == x.n_cols);
  CHECK(back.column_names == x.column_names);
  CHECK(back.row_ids == x.row_ids);
  CHECK(back.labels == x.labels);
  CHECK(back.values == x.values);  // 17 significant digits round-trips doubles
}

TEST_CASE("convert writes one image per surviving row plus a manifest") {
  TempDir tmp("pl_conv");
  auto cfg = small_config(tmp.path, 3);
  cfg.synthetic_n = 120;
  pipeline::run_generate(cfg);
  pipeline::run_convert(cfg);

  REQUIRE(fs::exists(tmp.path / "manifest.csv"));
  REQUIRE(fs::exists(tmp.path / "assignment.json"));
  REQUIRE(fs::exists(tmp.path / "image_encoders.json"));
  const auto images = pipeline::read_images(tmp.path);
  REQUIRE(images.size() == 120);
  for (const auto& img : images) {
    CHECK(img.ni == 4);
    CHECK(img.nj == 4);
    CHECK(img.pixels.size() == 16);
  }

  // The stored assignment is a bijection with the recorded error.
  const auto aj = pipeline::read_json(tmp.path / "assignment.json");
  const auto perm = aj.at("perm").get<std::vector<size_t>>();
  std::vector<bool> seen(perm.size(), false);
  for (size_t s : perm) {
    REQUIRE(s < perm.size());
    REQUIRE_FALSE(seen[s]);
    seen[s] = true;
  }
}

TEST_CASE("train and evaluate run for every tabular model") {
  TempDir tmp("pl_tab");
  auto cfg = small_config(tmp.path, 11);
  pipeline::run_generate(cfg);
  pipeline::run_preprocess(cfg);

  for (const std::string model : {"knn", "tree", "forest"}) {
    cfg.model = model;
    pipeline::run_train(cfg);
    const RunReport report = pipeline::run_evaluate(cfg);
    CHECK(report.model_name == model);
    CHECK(report.cm.total() == 120);
    CHECK(fs::exists(tmp.path / ("report_" + model + ".json")));
    // Full-signal planted labels should be learnable well above chance.
    CHECK(report.report.accuracy > 0.5);
  }

  const std::string table = pipeline::run_report(cfg);
  CHECK(fs::exists(tmp.path / "comparison.txt"));
  CHECK(fs::exists(tmp.path / "comparison.csv"));
  CHECK(table.find("tree") != std::string::npos);
  CHECK(table.find("knn") != std::string::npos);
  CHECK(table.find("forest") != std::string::npos);
}

TEST_CASE("cnn stage trains from images and evaluates from the checkpoint") {
  TempDir tmp("pl_cnn");
  auto cfg = small_config(tmp.path, 17);
  cfg.synthetic_n = 150;
  cfg.model = "cnn";
  cfg.train.epochs = 2;
  cfg.train.batch_size = 16;
  pipeline::run_generate(cfg);
  pipeline::run_convert(cfg);
  pipeline::run_train(cfg);
  REQUIRE(fs::exists(tmp.path / "cnn.ckpt"));
  REQUIRE(fs::exists(tmp.path / "cnn_split.json"));
  REQUIRE(fs::exists(tmp.path / "curves.csv"));

  const RunReport report = pipeline::run_evaluate(cfg);
  CHECK(report.model_name == "cnn");
  CHECK(report.cm.total() == 30);  // 20% of 150

  // Evaluating twice from the same checkpoint is idempotent.
  const RunReport again = pipeline::run_evaluate(cfg);
  CHECK(again.cm.cells == report.cm.cells);
}

TEST_CASE("two runs with the same seed produce byte-identical artifacts") {
  TempDir a("pl_det_a");
  TempDir b("pl_det_b");
  for (const auto* dir : {&a, &b}) {
    auto cfg = small_config(dir->path, 99);
    cfg.synthetic_n = 100;
    pipeline::run_generate(cfg);
    pipeline::run_preprocess(cfg);
    pipeline::run_convert(cfg);
    cfg.model = "tree";
    pipeline::run_train(cfg);
  }
  for (const char* name : {"trips.csv", "matrix.csv", "split.json", "manifest.csv",
                           "assignment.json", "model_tree.json"}) {
    INFO(name);
    REQUIRE(pipeline::read_text(a.path / name) == pipeline::read_text(b.path / name));
  }
  const auto manifest = pipeline::read_images(a.path);
  for (const auto& img : manifest) {
    std::ostringstream name;
    name << "row_" << std::setw(6) << std::setfill('0') << img.row_id << ".pgm";
    REQUIRE(pipeline::read_text(a.path / "images" / name.str()) ==
            pipeline::read_text(b.path / "images" / name.str()));
  }
}

TEST_CASE("config JSON round-trips through partial override parsing") {
  PipelineConfig cfg;
  cfg.seed = 1234;
  cfg.model = "forest";
  cfg.synthetic_n = 777;
  cfg.igtd.ni = 2;
  cfg.igtd.nj = 8;
  cfg.train.epochs = 4;
  const PipelineConfig back = PipelineConfig::from_json(cfg.to_json());
  CHECK(back.seed == 1234);
  CHECK(back.model == "forest");
  CHECK(back.synthetic_n == 777);
  CHECK(back.igtd.ni == 2);
  CHECK(back.igtd.nj == 8);
  CHECK(back.train.epochs == 4);
  CHECK(back.downsample_caps == cfg.downsample_caps);

  // A sparse document only overrides what it mentions.
  const PipelineConfig sparse = PipelineConfig::from_json(nlohmann::json{{"seed", 5}});
  CHECK(sparse.seed == 5);
  CHECK(sparse.model == "tree");
  CHECK(sparse.synthetic_n == 20000);
}
