#include <doctest.h>

#include <filesystem>

#include "villa/pipeline.hpp"

using namespace villa;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.gen.c = 9.9;
  cfg.gen.b = 600;
  cfg.test_images = 30;
  cfg.map_train.epochs = 2;
  cfg.vlm.train.epochs = 2;
  return cfg;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("config serializes every key and parses back") {
  RunConfig cfg = tiny_config();
  cfg.set("sweep_c", "5, 29.4");
  cfg.set("digits", "mnist:/data/img,/data/lab");
  const auto text = cfg.serialize();
  const auto back = RunConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.sweep_c == std::vector<double>{5.0, 29.4});
  for (const auto& k : RunConfig::keys()) CHECK(text.find(k + " = ") != std::string::npos);

  const auto over = RunConfig::parse("# comment\n c = 14.8 \n\nvlm_mask = false\n", cfg);
  CHECK(over.gen.c == 14.8);
  CHECK_FALSE(over.vlm.mask_same_image);
  CHECK(over.gen.b == 600);

  CHECK_THROWS_AS(RunConfig::parse("colour = red\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("c 14\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("b = lots\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("sweep_variant = clip\n"), Error);
}

TEST_CASE("stage hashes chain") {
  const RunConfig a = tiny_config();
  RunConfig b = a;
  b.vlm.train.lr = 1e-3;
  CHECK(a.data_hash() == b.data_hash());
  CHECK(a.mapping_hash() == b.mapping_hash());
  CHECK(a.vlm_hash(VlmVariant::FtImg) != b.vlm_hash(VlmVariant::FtImg));
  b = a;
  b.assign.epsilon = 0.3;
  CHECK(a.vlm_hash(VlmVariant::FtImg) == b.vlm_hash(VlmVariant::FtImg));
  CHECK(a.vlm_hash(VlmVariant::Villa) != b.vlm_hash(VlmVariant::Villa));
  b = a;
  b.gen.seed = 99;
  CHECK(a.data_hash() != b.data_hash());
  CHECK(a.mapping_hash() != b.mapping_hash());
}

TEST_CASE("stages run in order and detect stale or missing inputs") {
  const RunPaths run{fs::temp_directory_path() / "villa_pipeline_test"};
  fs::remove_all(run.root);
  const auto cfg = tiny_config();
  init_run(run, cfg);
  CHECK(load_run_config(run).serialize() == cfg.serialize());

  CHECK(kind_of([&] { stage_train_map(run, cfg, 1); }) == ErrorKind::MissingArtifact);
  stage_generate(run, cfg, 1);
  CHECK(fs::exists(run.train() / "manifest.jsonl"));
  CHECK(load_dataset(run.test()).samples.size() == 30);

  CHECK(kind_of([&] { stage_assign(run, cfg, 1); }) == ErrorKind::MissingArtifact);
  stage_train_map(run, cfg, 1);
  stage_assign(run, cfg, 1);
  CHECK(kind_of([&] { stage_evaluate(run, cfg, {VlmVariant::FtImg}, 1); }) == ErrorKind::MissingArtifact);

  const std::vector<VlmVariant> all(std::begin(kAllVariants), std::end(kAllVariants));
  stage_train_vlm(run, cfg, all, 1);
  const auto report = stage_evaluate(run, cfg, all, 1);
  CHECK(report.variants.size() == 5);
  CHECK(report.mappings.size() == 3);
  const auto csv = read_file(run.metrics_csv());
  for (auto v : kAllVariants) CHECK(csv.find(std::string(to_string(v)) + ",") != std::string::npos);
  const auto text = stage_report(run);
  CHECK(text.find("villa") != std::string::npos);
  CHECK(fs::exists(run.report()));

  RunConfig changed = cfg;
  changed.gen.seed = 8;
  CHECK(kind_of([&] { stage_train_map(run, changed, 1); }) == ErrorKind::ConfigHashMismatch);
  changed = cfg;
  changed.map_train.lr = 1e-3;
  CHECK(kind_of([&] { stage_assign(run, changed, 1); }) == ErrorKind::ConfigHashMismatch);
  CHECK(kind_of([&] { stage_train_vlm(run, changed, {VlmVariant::Villa}, 1); }) == ErrorKind::ConfigHashMismatch);
  fs::remove_all(run.root);
}

TEST_CASE("sweep rows and csv") {
  auto cfg = tiny_config();
  cfg.gen.b = 300;
  const auto rows = sweep_complexity(cfg, {6.0, 6.0}, VlmVariant::FtImg, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].t2r_rprec == rows[1].t2r_rprec);
  CHECK(rows[0].r2t_rprec == rows[1].r2t_rprec);
  const auto csv = sweep_csv(rows);
  CHECK(csv.rfind("c,t2r_rprec,r2t_rprec\n6.000000,", 0) == 0);
  CHECK(sweep_from_csv(csv).size() == 2);
  CHECK_THROWS_AS(sweep_complexity(cfg, {6.0}, VlmVariant::FtImg, 1), Error);
}
