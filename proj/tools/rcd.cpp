// Command-line front end: one subcommand per pipeline stage plus run-all.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rcd/error.hpp"
#include "rcd/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
};

rcd::pipeline::PipelineConfig resolve(const Common& o) {
  auto c = o.config.empty() ? rcd::pipeline::PipelineConfig{} : rcd::pipeline::load_config(o.config);
  for (const auto& kv : o.overrides) rcd::pipeline::apply_override(c, kv);
  if (!o.out.empty()) c.run.output_dir = o.out;
  c.validate();
  return c;
}

void add_common(CLI::App* cmd, Common& o) {
  cmd->add_option("-c,--config", o.config, "JSON config; keys not given keep their defaults");
  cmd->add_option("-o,--out", o.out, "run directory (overrides run.output_dir)");
  cmd->add_option("-s,--set", o.overrides, "override one key, e.g. --set ensemble.gnn_epochs=20")
      ->take_all();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Renal-cancer detection pipeline over CT kidney segmentations"};
  app.require_subcommand(1);
  Common common;

  std::vector<std::pair<CLI::App*, std::string>> stages;
  const std::vector<std::pair<std::string, std::string>> stage_help{
      {"phantom", "generate the synthetic phantom cohort"},
      {"mesh", "extract, remesh and smooth kidney surfaces"},
      {"features", "assemble the 28 shape and attenuation features"},
      {"train-shape", "cross-validate the MLP, GNN and staged ensemble"},
      {"sample", "extract axial tile/block samples"},
      {"score", "train the reference scorer per fold and vote kidney scores"},
      {"evaluate", "ROC curves and summaries per model and size stratum"}};
  for (const auto& [name, help] : stage_help) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    stages.emplace_back(cmd, name);
  }
  auto* run_all = app.add_subcommand("run-all", "run every configured stage");
  add_common(run_all, common);
  auto* dump = app.add_subcommand("config-dump", "print the effective configuration");
  add_common(dump, common);
  bool annotated = false;
  dump->add_flag("--annotated", annotated, "one key per line with the source of its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(rcd::ErrorKind::config);
  }

  try {
    const auto cfg = resolve(common);
    if (*dump) {
      std::cout << (annotated ? rcd::pipeline::annotated(cfg) : rcd::pipeline::to_json(cfg));
      return 0;
    }
    if (*run_all) {
      rcd::pipeline::run_all(cfg);
      return 0;
    }
    for (const auto& [cmd, name] : stages)
      if (*cmd) {
        rcd::pipeline::run_stage(name, cfg);
        rcd::pipeline::write_provenance(cfg, {name});
      }
    return 0;
  } catch (const rcd::Error& e) {
    std::fprintf(stderr, "rcd: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rcd: %s\n", e.what());
    return static_cast<int>(rcd::ErrorKind::data);
  }
}
