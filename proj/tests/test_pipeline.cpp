#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rcd/error.hpp"
#include "rcd/io_util.hpp"
#include "rcd/pipeline.hpp"
#include "support.hpp"

using namespace rcd;
using pipeline::PipelineConfig;
namespace fs = std::filesystem;

namespace {

// A handful of kidneys and a few epochs: exercises every stage quickly.
PipelineConfig small_config(const fs::path& out, int healthy = 8, int exophytic = 4, int endophytic = 4) {
  PipelineConfig c;
  c.run.output_dir = out.string();
  c.phantom.healthy = healthy;
  c.phantom.exophytic = exophytic;
  c.phantom.endophytic = endophytic;
  c.mesher.remesh_voxel_mm = 2.4;
  c.ensemble.mlp.epochs = 3;
  c.ensemble.gnn.epochs = 3;
  c.ensemble.staged.frozen_epochs = 2;
  c.ensemble.staged.joint_epochs = 1;
  // every training fold needs both classes for every model
  c.ensemble.thresholds.mlp = 500;
  return c;
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

int run_cli(const std::string& args) {
  const int status = std::system((std::string(RCD_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config JSON round trip") {
  PipelineConfig c;
  c.phantom.healthy = 3;
  c.mesher.remesh_voxel_mm = 2.0;
  c.sampler.kind = "block3d";
  c.run.stages = {"phantom", "sample"};
  const auto text = pipeline::to_json(c);
  const auto back = pipeline::config_from_json(text);
  CHECK(pipeline::to_json(back) == text);
  CHECK(pipeline::config_hash(back) == pipeline::config_hash(c));
  CHECK(pipeline::config_hash(PipelineConfig{}) != pipeline::config_hash(c));

  // partial configs fill in defaults
  const auto partial = pipeline::config_from_json(R"({"eval": {"top_tiles": 4}})");
  CHECK(partial.eval.top_tiles == 4);
  CHECK(partial.ensemble.mlp.lr == 1e-2);
}

TEST_CASE("published defaults") {
  const PipelineConfig c;
  CHECK(c.mesher.remesh_voxel_mm == 1.2);
  CHECK(c.mesher.smooth_factor == 0.5);
  CHECK(c.mesher.smooth_iterations == 5);
  CHECK(c.ensemble.mlp.epochs == 100);
  CHECK(c.ensemble.gnn.lr == 1e-3);
  CHECK(c.ensemble.mlp.batch_size == 8);
  CHECK(c.ensemble.staged.frozen_epochs == 30);
  CHECK(c.ensemble.staged.joint_epochs == 2);
  CHECK(c.ensemble.thresholds.gnn == 500);
  CHECK(c.ensemble.thresholds.mlp == 20000);
  CHECK(c.volio.mask_dilation_mm == 40);
  CHECK(c.sampler.rules.sliding_cap == 50);
  CHECK(c.sampler.scorer.batch_size == 16);
  CHECK(c.eval.top_tiles == 10);
  CHECK(c.eval.small_cutoff_mm == 40);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(pipeline::config_from_json(R"({"mesher": {"voxel": 1}})"), Error);
  CHECK_THROWS_AS(pipeline::config_from_json(R"({"nope": {}})"), Error);
  CHECK_THROWS_AS(pipeline::config_from_json(R"({"mesher": {"smooth_iterations": 1.5}})"), Error);
  CHECK_THROWS_AS(pipeline::config_from_json(R"({"mesher": {"smooth_factor": 2}})"), Error);
  CHECK_THROWS_AS(pipeline::config_from_json("[1, 2]"), Error);
  CHECK_THROWS_AS(pipeline::config_from_json("{"), Error);
  CHECK_THROWS_AS(pipeline::config_from_json(R"({"run": {"stages": ["phantom", "dance"]}})"), Error);
  try {
    pipeline::config_from_json(R"({"mesher": {"voxel": 1}})");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    CHECK(std::string(e.what()).find("mesher.voxel") != std::string::npos);
  }
  CHECK_THROWS_AS(pipeline::load_config("/nonexistent/config.json"), Error);
}

TEST_CASE("overrides") {
  PipelineConfig c;
  pipeline::apply_override(c, "ensemble.gnn_epochs=20");
  CHECK(c.ensemble.gnn.epochs == 20);
  pipeline::apply_override(c, "sampler.kind=block3d");
  CHECK(c.sampler.kind == "block3d");
  pipeline::apply_override(c, "phantom.semi_axes=[16, 13, 25]");
  CHECK(c.phantom.semi_axes == Vec3{16, 13, 25});
  CHECK_THROWS_AS(pipeline::apply_override(c, "ensemble.gnn_epochs"), Error);
  CHECK_THROWS_AS(pipeline::apply_override(c, "ensemble.unknown=1"), Error);
  CHECK_THROWS_AS(pipeline::apply_override(c, "ensemble.gnn_epochs=ten"), Error);
  CHECK_THROWS_AS(pipeline::apply_override(c, "sampler.kind=slab"), Error);
}

TEST_CASE("annotated dump cites every key") {
  const auto text = pipeline::annotated(PipelineConfig{});
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    CHECK(line.find(" = ") != std::string::npos);
    CHECK(line.find("  # ") != std::string::npos);
  }
  CHECK(n > 60);
  CHECK(text.find("mesher.remesh_voxel_mm = 1.2  # \"remesh method with a voxel size 1.2\"") != std::string::npos);
}

TEST_CASE("lesion volume takes the largest lesion region inside the kidney") {
  // off the midline, as split_kidneys needs
  auto m = test::ball(12.0, 1.0, {16, 0, 0});
  LabelGrid l;
  l.geom = m.geom;
  l.labels.assign(m.bits.begin(), m.bits.end());
  const int cx = (l.geom.dims[0] - 1) / 2 + 16, c = (l.geom.dims[1] - 1) / 2;
  // two tumour cubes, 27 and 8 voxels, plus a cyst voxel joined to the small one
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) l.labels[l.geom.index(cx - 5 + x, c + y, c + z)] = 2;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) l.labels[l.geom.index(cx + 3 + x, c + y, c + z)] = 2;
  l.labels[l.geom.index(cx + 5, c, c)] = 3;
  const auto kids = volio::split_kidneys(l, {100.0, 0.0});
  REQUIRE(kids.size() == 1);
  CHECK(pipeline::lesion_volume(l, kids[0]) == 27.0);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) l.labels[l.geom.index(cx - 5 + x, c + y, c + z)] = 1;
  // the small tumour and its cyst neighbour now form the largest region
  CHECK(pipeline::lesion_volume(l, kids[0]) == 9.0);
  LabelGrid healthy = l;
  for (auto& v : healthy.labels) v = v ? 1 : 0;
  CHECK(pipeline::lesion_volume(healthy, volio::split_kidneys(healthy, {100.0, 0.0})[0]) == 0.0);
}

TEST_CASE("a missing mask names the failing stage") {
  test::TempDir dir("pipe_missing");
  auto c = small_config(dir.path() / "run", 2, 0, 0);
  pipeline::run_stage("phantom", c);
  fs::remove(dir.path() / "run" / "phantom" / "p000_labels.json");
  try {
    pipeline::run_stage("mesh", c);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).rfind("[mesh] ", 0) == 0);
    CHECK(e.kind() == ErrorKind::data);
  }
  CHECK(run_cli("mesh -o " + (dir.path() / "run").string()) == static_cast<int>(ErrorKind::data));
  CHECK(run_cli("features -o " + (dir.path() / "nowhere").string()) != 0);
  CHECK(run_cli("mesh --set mesher.smooth_factor=3") == static_cast<int>(ErrorKind::config));
  CHECK(run_cli("no-such-command") != 0);
  CHECK_THROWS_AS(pipeline::run_stage("evaluate", small_config(dir.path() / "empty")), Error);
}

TEST_CASE("CLI config dump") {
  test::TempDir dir("pipe_cli");
  const auto out = dir.path() / "dump.json";
  const int rc = std::system((std::string(RCD_CLI_PATH) + " config-dump --set eval.top_tiles=3 > " + out.string()).c_str());
  REQUIRE(rc == 0);
  CHECK(pipeline::config_from_json(slurp(out)).eval.top_tiles == 3);
}

TEST_CASE("shape-only smoke run over 100 phantom kidneys") {
  test::TempDir dir("pipe_smoke");
  const auto root = dir.path() / "run";
  const auto c = small_config(root, 50, 25, 25);
  pipeline::run_all(c);
  for (const char* f : {"phantom/cohort.json", "features/features.csv", "features/kidneys.csv", "shape/predictions.csv",
                        "shape/folds.csv", "eval/summary.json", "eval/ensemble_all_roc.csv", "provenance.json",
                        "index.json"})
    CHECK_MESSAGE(fs::exists(root / f), f);
  const auto summary = nlohmann::json::parse(slurp(root / "eval" / "summary.json"));
  for (const char* m : {"mlp", "gnn", "ensemble"}) {
    const double auc = summary[m]["all"].get<double>();
    CHECK(auc >= 0.0);
    CHECK(auc <= 1.0);
  }
  const auto prov = nlohmann::json::parse(slurp(root / "provenance.json"));
  CHECK(prov["config_hash"] == io::hex64(pipeline::config_hash(c)));
  CHECK(prov["stages"].size() == 5);

  std::istringstream preds(slurp(root / "shape" / "predictions.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(preds, line)) ++rows;
  CHECK(rows == 100);
}

TEST_CASE("axial branch runs end to end") {
  test::TempDir dir("pipe_axial");
  auto c = small_config(dir.path() / "run");
  c.run.stages = {"phantom", "sample", "score", "evaluate"};
  c.sampler.kind = "block3d";
  pipeline::run_all(c);
  const auto root = dir.path() / "run";
  CHECK(fs::exists(root / "samples" / "manifest.csv"));
  CHECK(fs::exists(root / "samples" / "kidney_scores.csv"));
  const auto summary = nlohmann::json::parse(slurp(root / "eval" / "summary.json"));
  CHECK(summary.contains("axial_block3d"));
  // block scores are a single probability
  std::istringstream ks(slurp(root / "samples" / "kidney_scores.csv"));
  std::string line;
  std::getline(ks, line);
  while (std::getline(ks, line)) {
    const double s = std::stod(line.substr(line.rfind(',') + 1));
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("identical configs give identical artifacts") {
  test::TempDir dir("pipe_det");
  const auto a = small_config(dir.path() / "a");
  const auto b = small_config(dir.path() / "b");
  pipeline::run_all(a);
  pipeline::run_all(b);
  for (const char* f : {"phantom/cohort.json", "features/features.csv", "shape/predictions.csv", "eval/summary.json",
                        "eval/ensemble_all_roc.csv"})
    CHECK_MESSAGE(slurp(dir.path() / "a" / f) == slurp(dir.path() / "b" / f), f);
}

}
