#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rcd/ensemble.hpp"
#include "rcd/mesher.hpp"
#include "rcd/neuro.hpp"
#include "rcd/phantom.hpp"
#include "rcd/sampler.hpp"
#include "rcd/volio.hpp"

namespace rcd::pipeline {

inline constexpr const char* kVersion = "0.1.0";

struct PipelineConfig {
  struct Run {
    std::string output_dir = "run";
    std::vector<std::string> stages{"phantom", "mesh", "features", "train-shape", "evaluate"};
  } run;

  phantom::CohortSpec phantom;

  struct Volio {
    double min_component_mm3 = 1000.0;
    double midline_margin_mm = 20.0;
    double isotropic_mm = 1.0;
    double clip_low_hu = -200.0;
    double clip_high_hu = 200.0;
    double norm_divisor = 100.0;
    double mask_dilation_mm = 40.0;
  } volio;

  struct Mesher {
    double remesh_voxel_mm = mesher::kRemeshVoxelMm;
    double smooth_factor = mesher::kSmoothFactor;
    int smooth_iterations = mesher::kSmoothIterations;
  } mesher;

  struct Features {
    double curvature_low = -0.5;
    double curvature_high = 0.5;
    double attenuation_low_hu = -20.0;
    double attenuation_high_hu = 80.0;
  } features;

  struct Ensemble {
    ensemble::LabelThresholds thresholds;
    ensemble::TrainOptions mlp{100, 1e-2, 8, 1, {}};
    ensemble::TrainOptions gnn{100, 1e-3, 8, 2, {}};
    ensemble::StagedOptions staged{30, 2, 1e-3, 8, 3};
    int folds = 5;
    std::uint64_t fold_seed = 11;
    bool use_schedule = false;  // individual models follow `schedule` per epoch
  } ensemble;

  neuro::Schedule schedule;

  struct Sampler {
    std::string kind = "tile2d";
    sampler::SamplingRules rules;
    std::uint64_t seed = 5;
    sampler::ScorerTraining scorer;
  } sampler;

  struct Eval {
    int top_tiles = 10;
    int top_blocks = 1;
    double small_cutoff_mm = 40.0;
  } eval;

  void validate() const;
};

/// Stable, complete JSON rendering; `config_from_json` accepts any subset
/// of keys over the defaults and rejects unknown ones.
std::string to_json(const PipelineConfig& c);
PipelineConfig config_from_json(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
/// `section.key=value`, value parsed as JSON when possible, else as a string.
void apply_override(PipelineConfig& c, const std::string& assignment);
/// One line per key: `key = value  # source`.
std::string annotated(const PipelineConfig& c);
std::uint64_t config_hash(const PipelineConfig& c);

const std::vector<std::string>& stage_names();  // canonical order

/// Runs one stage against `run.output_dir`; module errors are rethrown with
/// the stage name prefixed.
void run_stage(const std::string& stage, const PipelineConfig& c);
/// The configured stages in canonical order, then provenance.json and an
/// index of every artifact.
void run_all(const PipelineConfig& c);
/// provenance.json: tool version, config hash and copy, seeds, stages run.
void write_provenance(const PipelineConfig& c, const std::vector<std::string>& stages);
/// index.json: every file under the run directory with size and FNV-1a.
void write_index(const PipelineConfig& c);

// ---- in-memory building blocks ------------------------------------------

/// Largest 26-connected tumour-or-cyst region inside the kidney's mask, mm^3.
double lesion_volume(const LabelGrid& labels, const KidneyComponent& kidney);

struct KidneyShape {
  mesher::SurfaceResult surface;
  FeatureVector28 features{};
};
KidneyShape kidney_shape(const VolumeGrid& volume, const KidneyComponent& kidney,
                         const PipelineConfig& c);

volio::SplitOptions split_options(const PipelineConfig& c);
ensemble::ShapeTrainingPlan training_plan(const PipelineConfig& c);

}  // namespace rcd::pipeline
