#include "rcd/pipeline.hpp"

#include <algorithm>
#include <exception>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rcd/error.hpp"
#include "rcd/eval.hpp"
#include "rcd/features.hpp"
#include "rcd/io_util.hpp"

namespace rcd::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------- config

namespace {

constexpr const char* kSynthetic = "synthetic cohort; no published value";
constexpr const char* kArtifact = "artifact choice";

// Every config field once, with where its default comes from. `C` is the
// config, const or not; `f(key, field, source)`.
template <class C, class F>
void visit(C& c, F&& f) {
  f("run.output_dir", c.run.output_dir, kArtifact);
  f("run.stages", c.run.stages, kArtifact);

  auto& p = c.phantom;
  f("phantom.healthy", p.healthy, "phantom study: 100 healthy kidneys");
  f("phantom.exophytic", p.exophytic, "phantom study: 50 exophytic-bump kidneys");
  f("phantom.endophytic", p.endophytic, "phantom study: 50 endophytic-lesion kidneys");
  f("phantom.cysts", p.cysts, kSynthetic);
  f("phantom.semi_axes", p.semi_axes, kSynthetic);
  f("phantom.axis_jitter", p.axis_jitter, kSynthetic);
  f("phantom.exophytic_radius_min", p.exophytic_radius_min, kSynthetic);
  f("phantom.exophytic_radius_max", p.exophytic_radius_max, kSynthetic);
  f("phantom.endophytic_radius_min", p.endophytic_radius_min, kSynthetic);
  f("phantom.endophytic_radius_max", p.endophytic_radius_max, kSynthetic);
  f("phantom.kidney_hu", p.kidney_hu, kSynthetic);
  f("phantom.tumour_hu", p.tumour_hu, kSynthetic);
  f("phantom.cyst_hu", p.cyst_hu, kSynthetic);
  f("phantom.background_hu", p.background_hu, kSynthetic);
  f("phantom.noise_sigma", p.noise_sigma, kSynthetic);
  f("phantom.spacing", p.spacing, kSynthetic);
  f("phantom.seed", p.seed, kArtifact);

  f("volio.min_component_mm3", c.volio.min_component_mm3, "artifact choice: drops segmentation specks");
  f("volio.midline_margin_mm", c.volio.midline_margin_mm, "artifact choice: horseshoe guard");
  f("volio.isotropic_mm", c.volio.isotropic_mm, "\"converted into an isotropic voxel size of 1mm\"");
  f("volio.clip_low_hu", c.volio.clip_low_hu, "\"attenuation-clipped between [-200, 200] HU\"");
  f("volio.clip_high_hu", c.volio.clip_high_hu, "\"attenuation-clipped between [-200, 200] HU\"");
  f("volio.norm_divisor", c.volio.norm_divisor, "\"normalised by dividing attenuation values by 100\"");
  f("volio.mask_dilation_mm", c.volio.mask_dilation_mm,
    "\"masked by the kidney segmentation (dilated by 4cm)\"");

  f("mesher.remesh_voxel_mm", c.mesher.remesh_voxel_mm, "\"remesh method with a voxel size 1.2\"");
  f("mesher.smooth_factor", c.mesher.smooth_factor, "\"smooth method with factor 0.5 and 5 iterations\"");
  f("mesher.smooth_iterations", c.mesher.smooth_iterations,
    "\"smooth method with factor 0.5 and 5 iterations\"");

  f("features.curvature_low", c.features.curvature_low, "artifact choice: histogram range");
  f("features.curvature_high", c.features.curvature_high, "artifact choice: histogram range");
  f("features.attenuation_low_hu", c.features.attenuation_low_hu, "artifact choice: histogram range");
  f("features.attenuation_high_hu", c.features.attenuation_high_hu, "artifact choice: histogram range");

  auto& e = c.ensemble;
  f("ensemble.threshold_gnn", e.thresholds.gnn, "\"cancer or cyst above 500mm3, their graph label was positive\"");
  f("ensemble.threshold_mlp", e.thresholds.mlp, "\"if above 20000mm3, their MLP feature set label was positive\"");
  f("ensemble.threshold_ensemble", e.thresholds.ensemble, "\"common threshold of 500mm3\"");
  f("ensemble.mlp_epochs", e.mlp.epochs, "\"Both shape models were trained individually for 100 epochs\"");
  f("ensemble.mlp_lr", e.mlp.lr, "\"MLP learning rate was 10^-2\"");
  f("ensemble.mlp_batch_size", e.mlp.batch_size, "\"batch size of 8\"");
  f("ensemble.mlp_seed", e.mlp.seed, kArtifact);
  f("ensemble.gnn_epochs", e.gnn.epochs, "\"Both shape models were trained individually for 100 epochs\"");
  f("ensemble.gnn_lr", e.gnn.lr, "\"GNN learning rate was 10^-3\"");
  f("ensemble.gnn_batch_size", e.gnn.batch_size, "\"batch size of 8\"");
  f("ensemble.gnn_seed", e.gnn.seed, kArtifact);
  f("ensemble.frozen_epochs", e.staged.frozen_epochs, "\"trained the ensemble's shared layers for 30 epochs\"");
  f("ensemble.joint_epochs", e.staged.joint_epochs, "\"before training all layers for 2 epochs\"");
  f("ensemble.staged_lr", e.staged.lr, "\"with a learning rate of 10^-3 and batch size of 8\"");
  f("ensemble.staged_batch_size", e.staged.batch_size, "\"with a learning rate of 10^-3 and batch size of 8\"");
  f("ensemble.staged_seed", e.staged.seed, kArtifact);
  f("ensemble.folds", e.folds, "\"patient-wise 5-fold cross-validations\"");
  f("ensemble.fold_seed", e.fold_seed, kArtifact);
  f("ensemble.use_schedule", e.use_schedule, "artifact choice: shape models use constant rates");

  f("schedule.lr_min", c.schedule.lr_min, "\"a learning rate of 10^-4, rising to 4x10^-3\"");
  f("schedule.lr_max", c.schedule.lr_max, "\"a learning rate of 10^-4, rising to 4x10^-3\"");
  f("schedule.a", c.schedule.a, "\"a=4 for pretraining\"");
  f("schedule.k_max", c.schedule.k_max, "\"500 epochs for pretraining\"");

  auto& s = c.sampler;
  f("sampler.kind", s.kind, "tile2d or block3d");
  f("sampler.tile_step_mm", s.rules.tile_step_mm, "\"1mm in 2D\"");
  f("sampler.block_step_mm", s.rules.block_step_mm, "\"a 5mm out-of-plane spacing was used in 3D\"");
  f("sampler.sliding_grid_mm", s.rules.sliding_grid_mm, "\"a 40x40mm axial-plane spacing\"");
  f("sampler.sliding_cap", s.rules.sliding_cap, "\"A maximum of 50 sliding-window samples were taken per-class, per-kidney\"");
  f("sampler.cancer_radius_mm", s.rules.cancer_radius_mm, "\"a cancer region larger than 1cm radius\"");
  f("sampler.kidney_radius_mm", s.rules.kidney_radius_mm, "\"a kidney region larger than 2cm radius\"");
  f("sampler.seed", s.seed, kArtifact);
  f("sampler.pretrain_epochs", s.scorer.pretrain_epochs, "\"5 epochs, learning rate of 1x10^-3\"");
  f("sampler.pretrain_lr", s.scorer.pretrain_lr, "\"5 epochs, learning rate of 1x10^-3\"");
  f("sampler.finetune_epochs", s.scorer.finetune_epochs, "\"5 epochs, learning rate of 5x10^-4\"");
  f("sampler.finetune_lr", s.scorer.finetune_lr, "\"5 epochs, learning rate of 5x10^-4\"");
  f("sampler.batch_size", s.scorer.batch_size, "\"We used a batch size of 16\"");
  f("sampler.scorer_seed", s.scorer.seed, kArtifact);

  f("eval.top_tiles", c.eval.top_tiles, "\"the top-10 most probable tile scores\"");
  f("eval.top_blocks", c.eval.top_blocks, "\"the top-1 most probable block score\"");
  f("eval.small_cutoff_mm", c.eval.small_cutoff_mm, "\"small (<=40mm diameter) RC detection\"");
}

std::pair<std::string, std::string> split_key(const std::string& key) {
  const auto dot = key.find('.');
  return {key.substr(0, dot), key.substr(dot + 1)};
}

template <class T>
void read_field(const json& v, T& field, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw config_error(key + " must be a boolean");
      field = v.get<bool>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw config_error(key + " must be an integer");
      field = v.get<int>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw config_error(key + " must be a non-negative integer");
      field = v.get<std::uint64_t>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw config_error(key + " must be a number");
      field = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw config_error(key + " must be a string");
      field = v.get<std::string>();
    } else {
      field = v.get<T>();
    }
  } catch (const json::exception& e) {
    throw config_error(key + ": " + e.what());
  }
}

}  // namespace

void PipelineConfig::validate() const {
  for (const auto& s : run.stages)
    if (std::find(stage_names().begin(), stage_names().end(), s) == stage_names().end())
      throw config_error("unknown stage '" + s + "'");
  phantom.validate();
  for (double s : phantom.spacing)
    if (!(s > 0.0)) throw config_error("phantom.spacing must be positive");
  if (!(volio.isotropic_mm > 0.0)) throw config_error("volio.isotropic_mm must be positive");
  if (!(volio.clip_low_hu < volio.clip_high_hu)) throw config_error("volio clip bounds must be ordered");
  if (!(volio.norm_divisor > 0.0)) throw config_error("volio.norm_divisor must be positive");
  if (!(volio.mask_dilation_mm >= 0.0)) throw config_error("volio.mask_dilation_mm must be non-negative");
  if (!(volio.min_component_mm3 >= 0.0) || !(volio.midline_margin_mm >= 0.0))
    throw config_error("volio split options must be non-negative");
  if (!(mesher.remesh_voxel_mm > 0.0)) throw config_error("mesher.remesh_voxel_mm must be positive");
  if (!(mesher.smooth_factor >= 0.0 && mesher.smooth_factor <= 1.0))
    throw config_error("mesher.smooth_factor must lie in [0, 1]");
  if (mesher.smooth_iterations < 0) throw config_error("mesher.smooth_iterations must be non-negative");
  if (!(features.curvature_low < features.curvature_high) ||
      !(features.attenuation_low_hu < features.attenuation_high_hu))
    throw config_error("histogram ranges must be ordered");
  const auto& t = ensemble.thresholds;
  if (!(t.gnn >= 0.0) || !(t.mlp >= 0.0) || !(t.ensemble >= 0.0))
    throw config_error("label thresholds must be non-negative");
  for (const auto* o : {&ensemble.mlp, &ensemble.gnn}) {
    if (o->epochs < 0 || !(o->lr > 0.0) || o->batch_size < 1)
      throw config_error("ensemble training options out of range");
  }
  if (ensemble.staged.frozen_epochs < 0 || ensemble.staged.joint_epochs < 0 ||
      !(ensemble.staged.lr > 0.0) || ensemble.staged.batch_size < 1)
    throw config_error("staged ensemble options out of range");
  if (ensemble.folds < 2) throw config_error("ensemble.folds must be at least 2");
  schedule.validate();
  if (ensemble.use_schedule && std::max(ensemble.mlp.epochs, ensemble.gnn.epochs) > schedule.k_max)
    throw config_error("schedule.k_max is shorter than the training run");
  sampler::kind_from_string(sampler.kind);
  sampler.rules.validate();
  const auto& sc = sampler.scorer;
  if (sc.pretrain_epochs < 0 || sc.finetune_epochs < 0 || !(sc.pretrain_lr > 0.0) ||
      !(sc.finetune_lr > 0.0) || sc.batch_size < 1)
    throw config_error("scorer training options out of range");
  if (eval.top_tiles < 1 || eval.top_blocks < 1) throw config_error("eval top-k must be positive");
  if (!(eval.small_cutoff_mm >= 0.0)) throw config_error("eval.small_cutoff_mm must be non-negative");
}

std::string to_json(const PipelineConfig& c) {
  ordered_json j;
  visit(c, [&](const char* key, const auto& field, const char*) {
    const auto [section, name] = split_key(key);
    j[section][name] = field;
  });
  return j.dump(2) + "\n";
}

PipelineConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw config_error("config must be a JSON object");
  PipelineConfig c;
  std::set<std::string> known;
  visit(c, [&](const char* key, auto& field, const char*) {
    known.insert(key);
    const auto [section, name] = split_key(key);
    if (j.contains(section) && j[section].is_object() && j[section].contains(name))
      read_field(j[section][name], field, key);
  });
  std::set<std::string> sections;
  for (const auto& k : known) sections.insert(split_key(k).first);
  for (const auto& [section, body] : j.items()) {
    if (!sections.count(section)) throw config_error("unknown config section '" + section + "'");
    if (!body.is_object()) throw config_error("config section '" + section + "' must be an object");
    for (const auto& [name, _] : body.items())
      if (!known.count(section + "." + name)) throw config_error("unknown config key '" + section + "." + name + "'");
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw config_error("config file " + path.string() + " not found");
  return config_from_json(io::read_file(path));
}

void apply_override(PipelineConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw config_error("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  bool found = false;
  visit(c, [&](const char* k, auto& field, const char*) {
    if (key != k) return;
    found = true;
    if constexpr (std::is_same_v<std::decay_t<decltype(field)>, std::string>) {
      field = value.is_string() ? value.get<std::string>() : raw;
    } else {
      read_field(value, field, key);
    }
  });
  if (!found) throw config_error("unknown config key '" + key + "'");
  c.validate();
}

std::string annotated(const PipelineConfig& c) {
  std::ostringstream out;
  visit(c, [&](const char* key, const auto& field, const char* source) {
    out << key << " = " << json(field).dump() << "  # " << source << "\n";
  });
  return out.str();
}

std::uint64_t config_hash(const PipelineConfig& c) { return io::fnv1a(to_json(c)); }

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"phantom",     "mesh",   "features", "train-shape",
                                              "sample",      "score",  "evaluate"};
  return names;
}

volio::SplitOptions split_options(const PipelineConfig& c) {
  return {c.volio.min_component_mm3, c.volio.midline_margin_mm};
}

ensemble::ShapeTrainingPlan training_plan(const PipelineConfig& c) {
  ensemble::ShapeTrainingPlan plan;
  plan.mlp = c.ensemble.mlp;
  plan.gnn = c.ensemble.gnn;
  if (c.ensemble.use_schedule) {
    plan.mlp.schedule = c.schedule;
    plan.gnn.schedule = c.schedule;
  }
  plan.ensemble = c.ensemble.staged;
  plan.thresholds = c.ensemble.thresholds;
  plan.folds = c.ensemble.folds;
  return plan;
}

// ---------------------------------------------------------------- building blocks

double lesion_volume(const LabelGrid& labels, const KidneyComponent& kidney) {
  MaskGrid lesion;
  lesion.geom = kidney.mask.geom;
  lesion.bits.assign(lesion.geom.voxel_count(), 0);
  const auto& d = lesion.geom.dims;
  bool any = false;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        if (!kidney.mask.at(x, y, z)) continue;
        const auto v = labels.at(x + kidney.bbox_lo[0], y + kidney.bbox_lo[1], z + kidney.bbox_lo[2]);
        if (v == static_cast<std::uint8_t>(Tissue::tumour) || v == static_cast<std::uint8_t>(Tissue::cyst)) {
          lesion.bits[lesion.geom.index(x, y, z)] = 1;
          any = true;
        }
      }
  if (!any) return 0.0;
  const auto comps = volio::label_components(lesion);
  const auto largest = *std::max_element(comps.counts.begin() + 1, comps.counts.end());
  return static_cast<double>(largest) * lesion.geom.voxel_volume();
}

KidneyShape kidney_shape(const VolumeGrid& volume, const KidneyComponent& kidney, const PipelineConfig& c) {
  KidneyShape out;
  out.surface = mesher::kidney_surface(kidney.mask, c.mesher.remesh_voxel_mm, c.mesher.smooth_factor,
                                       c.mesher.smooth_iterations);
  const auto shape = features::shape_descriptors(kidney);
  const auto curv = features::curvature_histogram(out.surface.curvature.vertex_curvatures,
                                                  c.features.curvature_low, c.features.curvature_high);
  const auto atten = features::attenuation_histogram(volume, kidney, c.features.attenuation_low_hu,
                                                     c.features.attenuation_high_hu);
  out.features = features::assemble(shape, curv, atten);
  return out;
}

// ---------------------------------------------------------------- artifacts

namespace {

struct KidneyEntry {
  std::string kidney_id;
  Side side = Side::right;
  std::string lesion = "none";
  double lesion_volume_mm3 = 0.0;
  double max_diameter_mm = 0.0;
  bool cancerous() const { return lesion == "exophytic" || lesion == "endophytic"; }
};

struct ScanEntry {
  std::string patient_id;
  std::string volume;  // grid stems relative to the run directory
  std::string labels;
  std::vector<KidneyEntry> kidneys;
};

Side side_from_string(const std::string& s) {
  if (s == "left") return Side::left;
  if (s == "right") return Side::right;
  throw data_error("unknown side '" + s + "'");
}

fs::path root_of(const PipelineConfig& c) { return fs::path(c.run.output_dir); }
fs::path cohort_path(const PipelineConfig& c) { return root_of(c) / "phantom" / "cohort.json"; }

void write_cohort(const fs::path& path, const std::vector<ScanEntry>& scans) {
  ordered_json j;
  j["scans"] = ordered_json::array();
  for (const auto& s : scans) {
    ordered_json e;
    e["patient_id"] = s.patient_id;
    e["volume"] = s.volume;
    e["labels"] = s.labels;
    e["kidneys"] = ordered_json::array();
    for (const auto& k : s.kidneys)
      e["kidneys"].push_back({{"kidney_id", k.kidney_id},
                              {"side", to_string(k.side)},
                              {"lesion", k.lesion},
                              {"lesion_volume_mm3", k.lesion_volume_mm3},
                              {"max_diameter_mm", k.max_diameter_mm}});
    j["scans"].push_back(std::move(e));
  }
  io::write_atomic(path, j.dump(2) + "\n");
}

std::vector<ScanEntry> read_cohort(const PipelineConfig& c) {
  const auto path = cohort_path(c);
  if (!fs::exists(path)) throw data_error("cohort manifest " + path.string() + " is missing");
  std::vector<ScanEntry> out;
  try {
    const auto j = json::parse(io::read_file(path));
    for (const auto& e : j.at("scans")) {
      ScanEntry s;
      s.patient_id = e.at("patient_id").get<std::string>();
      s.volume = e.at("volume").get<std::string>();
      s.labels = e.at("labels").get<std::string>();
      for (const auto& k : e.at("kidneys")) {
        KidneyEntry ke;
        ke.kidney_id = k.at("kidney_id").get<std::string>();
        ke.side = side_from_string(k.at("side").get<std::string>());
        ke.lesion = k.value("lesion", std::string("none"));
        phantom::lesion_from_string(ke.lesion);
        ke.lesion_volume_mm3 = k.value("lesion_volume_mm3", 0.0);
        ke.max_diameter_mm = k.value("max_diameter_mm", 0.0);
        s.kidneys.push_back(std::move(ke));
      }
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw data_error("cohort manifest: " + std::string(e.what()));
  }
  return out;
}

const KidneyEntry& entry_for(const ScanEntry& scan, Side side) {
  for (const auto& k : scan.kidneys)
    if (k.side == side) return k;
  throw data_error("scan " + scan.patient_id + " has a " + to_string(side) +
                   " kidney that the cohort manifest does not list");
}

// Independent jobs over OpenMP; the first failure (by index) is rethrown.
template <class F>
void parallel_for(int n, F&& f) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      f(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw data_error("table lacks column '" + name + "'");
    return static_cast<int>(it - header.begin());
  }
};

std::vector<std::string> cells_of(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Table read_table(const fs::path& path) {
  if (!fs::exists(path)) throw data_error(path.string() + " is missing");
  std::istringstream in(io::read_file(path));
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw data_error(path.string() + " is empty");
  t.header = cells_of(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = cells_of(line);
    if (cells.size() != t.header.size()) throw data_error(path.string() + ": ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw data_error("bad number '" + s + "'");
  }
  if (used != s.size()) throw data_error("bad number '" + s + "'");
  return v;
}

std::string num(double v) { return io::fmt_double(v); }

// ---------------------------------------------------------------- stages

void stage_phantom(const PipelineConfig& c) {
  const auto specs = phantom::make_cohort(c.phantom);
  std::vector<ScanEntry> scans(specs.size());
  const fs::path dir = root_of(c) / "phantom";
  parallel_for(static_cast<int>(specs.size()), [&](int i) {
    const auto& spec = specs[i];
    const auto ph = phantom::generate(spec);
    ScanEntry& s = scans[i];
    s.patient_id = spec.patient_id;
    s.volume = "phantom/" + spec.patient_id + "_volume";
    s.labels = "phantom/" + spec.patient_id + "_labels";
    volio::save_grid(root_of(c) / s.volume, ph.volume);
    volio::save_grid(root_of(c) / s.labels, ph.labels);
    for (const auto& t : ph.truth)
      s.kidneys.push_back({t.kidney_id, t.side, phantom::to_string(t.kind), t.volume_mm3, t.max_diameter_mm});
  });
  write_cohort(dir / "cohort.json", scans);
}

void stage_mesh(const PipelineConfig& c) {
  const auto scans = read_cohort(c);
  parallel_for(static_cast<int>(scans.size()), [&](int i) {
    const auto& scan = scans[i];
    const auto labels = volio::load_labels(root_of(c) / scan.labels);
    for (const auto& kid : volio::split_kidneys(labels, split_options(c))) {
      const auto& entry = entry_for(scan, kid.side);
      const auto surf = mesher::kidney_surface(kid.mask, c.mesher.remesh_voxel_mm, c.mesher.smooth_factor,
                                               c.mesher.smooth_iterations);
      io::write_atomic(root_of(c) / "mesh" / (entry.kidney_id + ".obj"), mesher::to_obj(surf.mesh));
      io::write_atomic(root_of(c) / "mesh" / (entry.kidney_id + ".graph.json"),
                       mesher::graph_to_json(surf.graph));
    }
  });
}

struct FeatureOut {
  features::FeatureRow row;
  std::string patient_id;
  KidneyEntry entry;
  double lesion_volume = 0.0;
};

void stage_features(const PipelineConfig& c) {
  const auto scans = read_cohort(c);
  std::vector<std::vector<FeatureOut>> per_scan(scans.size());
  parallel_for(static_cast<int>(scans.size()), [&](int i) {
    const auto& scan = scans[i];
    const auto volume = volio::load_volume(root_of(c) / scan.volume);
    const auto labels = volio::load_labels(root_of(c) / scan.labels);
    if (!(volume.geom == labels.geom)) throw data_error(scan.patient_id + ": volume and labels differ in geometry");
    for (const auto& kid : volio::split_kidneys(labels, split_options(c))) {
      const auto& entry = entry_for(scan, kid.side);
      const auto graph = mesher::graph_from_json(
          io::read_file(root_of(c) / "mesh" / (entry.kidney_id + ".graph.json")));
      std::vector<double> curv;
      curv.reserve(graph.nodes.size());
      for (const auto& n : graph.nodes) curv.push_back(n[3]);
      FeatureOut o;
      o.row.kidney_id = entry.kidney_id;
      o.row.side = kid.side;
      o.patient_id = scan.patient_id;
      o.entry = entry;
      o.lesion_volume = lesion_volume(labels, kid);
      o.row.label = ensemble::assign_labels(o.lesion_volume, ensemble::LabelMode::ensemble, c.ensemble.thresholds);
      o.row.values = features::assemble(
          features::shape_descriptors(kid),
          features::curvature_histogram(curv, c.features.curvature_low, c.features.curvature_high),
          features::attenuation_histogram(volume, kid, c.features.attenuation_low_hu,
                                          c.features.attenuation_high_hu));
      per_scan[i].push_back(std::move(o));
    }
  });
  std::vector<features::FeatureRow> rows;
  std::string kidneys = "kidney_id,patient_id,side,lesion,lesion_volume_mm3,cancerous,max_diameter_mm\n";
  for (const auto& scan : per_scan)
    for (const auto& o : scan) {
      rows.push_back(o.row);
      kidneys += o.row.kidney_id + "," + o.patient_id + "," + to_string(o.row.side) + "," + o.entry.lesion +
                 "," + num(o.lesion_volume) + "," + (o.entry.cancerous() ? "1" : "0") + "," +
                 num(o.entry.max_diameter_mm) + "\n";
    }
  io::write_atomic(root_of(c) / "features" / "features.csv", features::to_csv(rows));
  io::write_atomic(root_of(c) / "features" / "kidneys.csv", kidneys);
}

struct KidneyTruth {
  std::string kidney_id, patient_id, lesion;
  double lesion_volume = 0.0;
  bool cancerous = false;
  double diameter = 0.0;
};

std::vector<KidneyTruth> read_kidneys(const PipelineConfig& c) {
  const auto t = read_table(root_of(c) / "features" / "kidneys.csv");
  const int id = t.column("kidney_id"), pid = t.column("patient_id"), les = t.column("lesion"),
            vol = t.column("lesion_volume_mm3"), can = t.column("cancerous"), dia = t.column("max_diameter_mm");
  std::vector<KidneyTruth> out;
  for (const auto& r : t.rows)
    out.push_back({r[id], r[pid], r[les], to_double(r[vol]), r[can] == "1", to_double(r[dia])});
  return out;
}

// The axial branch needs only the cohort manifest, not the shape features.
std::vector<KidneyTruth> kidneys_from_cohort(const std::vector<ScanEntry>& scans) {
  std::vector<KidneyTruth> out;
  for (const auto& s : scans)
    for (const auto& k : s.kidneys)
      out.push_back({k.kidney_id, s.patient_id, k.lesion, k.lesion_volume_mm3, k.cancerous(), k.max_diameter_mm});
  return out;
}

std::vector<int> folds_for(const PipelineConfig& c, const std::vector<KidneyTruth>& kidneys) {
  std::vector<std::string> patients;
  for (const auto& k : kidneys) patients.push_back(k.patient_id);
  return eval::make_folds(patients, c.ensemble.folds, c.ensemble.fold_seed);
}

void stage_train_shape(const PipelineConfig& c) {
  const auto rows = features::from_csv(io::read_file(root_of(c) / "features" / "features.csv"));
  const auto kidneys = read_kidneys(c);
  if (rows.size() != kidneys.size()) throw data_error("features.csv and kidneys.csv disagree in length");
  std::vector<ensemble::ShapeRecord> records;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].kidney_id != kidneys[i].kidney_id) throw data_error("features.csv and kidneys.csv disagree in order");
    ensemble::ShapeRecord r;
    r.kidney_id = rows[i].kidney_id;
    r.patient_id = kidneys[i].patient_id;
    r.features = rows[i].values;
    r.graph = mesher::graph_from_json(io::read_file(root_of(c) / "mesh" / (r.kidney_id + ".graph.json")));
    r.lesion_volume = kidneys[i].lesion_volume;
    records.push_back(std::move(r));
  }
  const ensemble::ShapeDataset ds(std::move(records));
  const auto fold_of = folds_for(c, kidneys);
  auto cv = ensemble::cross_validate(ds, fold_of, training_plan(c));

  std::string folds = "kidney_id,patient_id,fold\n";
  std::string preds = "kidney_id,patient_id,fold,lesion,cancerous,max_diameter_mm,lesion_volume_mm3,mlp,gnn,ensemble\n";
  for (int i = 0; i < ds.size(); ++i) {
    const auto& k = kidneys[i];
    folds += k.kidney_id + "," + k.patient_id + "," + std::to_string(fold_of[i]) + "\n";
    preds += k.kidney_id + "," + k.patient_id + "," + std::to_string(fold_of[i]) + "," + k.lesion + "," +
             (k.cancerous ? "1" : "0") + "," + num(k.diameter) + "," + num(k.lesion_volume) + "," +
             num(cv.oof_mlp[i]) + "," + num(cv.oof_gnn[i]) + "," + num(cv.oof_ensemble[i]) + "\n";
  }
  const fs::path dir = root_of(c) / "shape";
  io::write_atomic(dir / "folds.csv", folds);
  io::write_atomic(dir / "predictions.csv", preds);
  for (int f = 0; f < c.ensemble.folds; ++f)
    ensemble::save_model(dir / ("ensemble_fold" + std::to_string(f)), cv.ensemble[f],
                         "{\"fold\": " + std::to_string(f) + "}");
}

void stage_sample(const PipelineConfig& c) {
  const auto scans = read_cohort(c);
  const auto kind = sampler::kind_from_string(c.sampler.kind);
  const sampler::PreprocessOptions popts{c.volio.isotropic_mm, c.volio.mask_dilation_mm,
                                         static_cast<float>(c.volio.clip_low_hu),
                                         static_cast<float>(c.volio.clip_high_hu),
                                         static_cast<float>(c.volio.norm_divisor)};
  std::vector<std::vector<sampler::SampleSpec>> per_scan(scans.size());
  parallel_for(static_cast<int>(scans.size()), [&](int i) {
    const auto& scan = scans[i];
    const auto volume = volio::load_volume(root_of(c) / scan.volume);
    const auto labels = volio::load_labels(root_of(c) / scan.labels);
    const auto pre = sampler::preprocess(volume, labels, popts);
    const auto kids = volio::split_kidneys(pre.labels, split_options(c));
    std::vector<std::string> ids;
    auto& out = per_scan[i];
    for (const auto& kid : kids) {
      ids.push_back(entry_for(scan, kid.side).kidney_id);
      auto cs = sampler::centralised_samples(pre.labels.geom, kid, kind, scan.patient_id, ids.back(),
                                             c.sampler.rules);
      for (auto& s : cs) s.label = sampler::label_sample(s, pre.labels, c.sampler.rules);
      for (auto& s : sampler::filter_containing_kidney(pre.labels, std::move(cs))) out.push_back(std::move(s));
    }
    for (auto& s : sampler::sliding_samples(pre.labels, kids, ids, kind, scan.patient_id,
                                            c.sampler.seed ^ io::fnv1a(scan.patient_id), c.sampler.rules))
      out.push_back(std::move(s));
    sampler::sort_samples(out);
  });
  std::vector<sampler::SampleSpec> all;
  for (auto& v : per_scan) all.insert(all.end(), v.begin(), v.end());
  io::write_atomic(root_of(c) / "samples" / "manifest.csv", sampler::manifest_csv(all));
}

void stage_score(const PipelineConfig& c) {
  const auto scans = read_cohort(c);
  const auto samples = sampler::manifest_from_csv(io::read_file(root_of(c) / "samples" / "manifest.csv"));
  const auto kidneys = kidneys_from_cohort(scans);
  const auto fold_list = folds_for(c, kidneys);
  std::map<std::string, int> fold_of_patient;
  std::map<std::string, const KidneyTruth*> truth_of;
  for (std::size_t i = 0; i < kidneys.size(); ++i) {
    fold_of_patient[kidneys[i].patient_id] = fold_list[i];
    truth_of[kidneys[i].kidney_id] = &kidneys[i];
  }
  const sampler::PreprocessOptions popts{c.volio.isotropic_mm, c.volio.mask_dilation_mm,
                                         static_cast<float>(c.volio.clip_low_hu),
                                         static_cast<float>(c.volio.clip_high_hu),
                                         static_cast<float>(c.volio.norm_divisor)};

  // summary features, one scan in memory at a time per thread
  std::map<std::string, std::vector<std::size_t>> by_scan;
  for (std::size_t i = 0; i < samples.size(); ++i) by_scan[samples[i].scan_id].push_back(i);
  std::vector<std::vector<double>> feats(samples.size());
  parallel_for(static_cast<int>(scans.size()), [&](int i) {
    const auto& scan = scans[i];
    const auto it = by_scan.find(scan.patient_id);
    if (it == by_scan.end()) return;
    const auto pre = sampler::preprocess(volio::load_volume(root_of(c) / scan.volume),
                                         volio::load_labels(root_of(c) / scan.labels), popts);
    for (std::size_t s : it->second) feats[s] = sampler::summary_features(pre, samples[s]);
  });

  std::vector<sampler::SampleScore> scores;
  std::map<std::string, std::vector<double>> cancer_probs;
  for (int f = 0; f < c.ensemble.folds; ++f) {
    std::vector<std::vector<double>> pre_x, fine_x;
    std::vector<sampler::SampleLabel> pre_y, fine_y;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto fit = fold_of_patient.find(samples[i].scan_id);
      if (fit == fold_of_patient.end()) throw data_error("sample scan " + samples[i].scan_id + " has no fold");
      if (fit->second == f) continue;
      // sliding windows pretrain; centralised samples fine-tune
      if (samples[i].scheme == sampler::Scheme::sliding) {
        pre_x.push_back(feats[i]);
        pre_y.push_back(samples[i].label);
      } else {
        fine_x.push_back(feats[i]);
        fine_y.push_back(samples[i].label);
      }
    }
    sampler::ReferenceScorer scorer;
    auto opts = c.sampler.scorer;
    opts.seed += static_cast<std::uint64_t>(f);
    scorer.train(pre_x, pre_y, fine_x, fine_y, opts);
    std::vector<const neuro::Tensor*> tensors;
    for (auto* t : scorer.tensors()) tensors.push_back(t);
    neuro::save_weights(root_of(c) / "samples" / ("scorer_fold" + std::to_string(f)), tensors);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].scheme != sampler::Scheme::centralised) continue;
      if (fold_of_patient[samples[i].scan_id] != f) continue;
      sampler::SampleScore sc{i, scorer.score(feats[i])};
      cancer_probs[samples[i].kidney_id].push_back(sc.p[0]);
      scores.push_back(sc);
    }
  }
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.sample < b.sample; });
  io::write_atomic(root_of(c) / "samples" / "scores.csv", sampler::scores_csv(samples, scores));

  const auto kind = sampler::kind_from_string(c.sampler.kind);
  std::string out = "kidney_id,patient_id,fold,lesion,cancerous,max_diameter_mm,score\n";
  for (const auto& k : kidneys) {
    const auto it = cancer_probs.find(k.kidney_id);
    if (it == cancer_probs.end()) throw data_error("kidney " + k.kidney_id + " has no centralised samples");
    const double s = eval::kidney_score(it->second, kind, c.eval.top_tiles, c.eval.top_blocks);
    out += k.kidney_id + "," + k.patient_id + "," + std::to_string(fold_of_patient[k.patient_id]) + "," +
           k.lesion + "," + (k.cancerous ? "1" : "0") + "," + num(k.diameter) + "," + num(s) + "\n";
  }
  io::write_atomic(root_of(c) / "samples" / "kidney_scores.csv", out);
}

void evaluate_model(const PipelineConfig& c, const std::string& model, const std::vector<eval::KidneyRecord>& recs,
                    ordered_json& summary) {
  const auto strata = eval::stratify(recs, c.eval.small_cutoff_mm);
  const std::vector<std::pair<std::string, const std::vector<eval::KidneyRecord>*>> sets{
      {"all", &recs}, {"small", &strata.small}, {"large", &strata.large}};
  for (const auto& [name, set] : sets) {
    const bool pos = std::any_of(set->begin(), set->end(), [](const auto& r) { return r.cancerous; });
    const bool neg = std::any_of(set->begin(), set->end(), [](const auto& r) { return !r.cancerous; });
    if (!pos || !neg) {
      summary[model][name] = nullptr;
      continue;
    }
    const auto curve = eval::roc_auc(*set);
    const fs::path dir = root_of(c) / "eval";
    io::write_atomic(dir / (model + "_" + name + "_roc.csv"), eval::roc_csv(curve));
    io::write_atomic(dir / (model + "_" + name + "_summary.json"), eval::summary_json(curve, model, name));
    summary[model][name] = curve.auc;
  }
}

void stage_evaluate(const PipelineConfig& c) {
  ordered_json summary = ordered_json::object();
  bool any = false;
  const auto shape = root_of(c) / "shape" / "predictions.csv";
  if (fs::exists(shape)) {
    const auto t = read_table(shape);
    const int id = t.column("kidney_id"), pid = t.column("patient_id"), can = t.column("cancerous"),
              dia = t.column("max_diameter_mm");
    for (const std::string model : {"mlp", "gnn", "ensemble"}) {
      const int col = t.column(model);
      std::vector<eval::KidneyRecord> recs;
      for (const auto& r : t.rows) recs.push_back({r[id], r[pid], r[can] == "1", to_double(r[dia]), to_double(r[col])});
      evaluate_model(c, model, recs, summary);
    }
    any = true;
  }
  const auto axial = root_of(c) / "samples" / "kidney_scores.csv";
  if (fs::exists(axial)) {
    const auto t = read_table(axial);
    const int id = t.column("kidney_id"), pid = t.column("patient_id"), can = t.column("cancerous"),
              dia = t.column("max_diameter_mm"), sc = t.column("score");
    std::vector<eval::KidneyRecord> recs;
    for (const auto& r : t.rows) recs.push_back({r[id], r[pid], r[can] == "1", to_double(r[dia]), to_double(r[sc])});
    evaluate_model(c, std::string("axial_") + c.sampler.kind, recs, summary);
    any = true;
  }
  if (!any) throw data_error("nothing to evaluate: run train-shape or score first");
  io::write_atomic(root_of(c) / "eval" / "summary.json", summary.dump(2) + "\n");
}

}  // namespace

void run_stage(const std::string& stage, const PipelineConfig& c) {
  c.validate();
  try {
    if (stage == "phantom") stage_phantom(c);
    else if (stage == "mesh") stage_mesh(c);
    else if (stage == "features") stage_features(c);
    else if (stage == "train-shape") stage_train_shape(c);
    else if (stage == "sample") stage_sample(c);
    else if (stage == "score") stage_score(c);
    else if (stage == "evaluate") stage_evaluate(c);
    else throw config_error("unknown stage '" + stage + "'");
  } catch (const Error& e) {
    throw Error(e.kind(), "[" + stage + "] " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw data_error("[" + stage + "] " + e.what());
  } catch (const json::exception& e) {
    throw data_error("[" + stage + "] " + e.what());
  }
}

void write_provenance(const PipelineConfig& c, const std::vector<std::string>& stages) {
  ordered_json j;
  j["tool"] = "rcd";
  j["version"] = kVersion;
  j["config_hash"] = io::hex64(config_hash(c));
  j["stages"] = stages;
  j["seeds"] = {{"phantom", c.phantom.seed},       {"folds", c.ensemble.fold_seed},
                {"mlp", c.ensemble.mlp.seed},      {"gnn", c.ensemble.gnn.seed},
                {"ensemble", c.ensemble.staged.seed}, {"sampler", c.sampler.seed},
                {"scorer", c.sampler.scorer.seed}};
  j["config"] = ordered_json::parse(to_json(c));
  io::write_atomic(root_of(c) / "provenance.json", j.dump(2) + "\n");
}

void write_index(const PipelineConfig& c) {
  const fs::path root = root_of(c);
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      const auto rel = fs::relative(e.path(), root).generic_string();
      if (rel != "index.json") files.push_back(rel);
    }
  std::sort(files.begin(), files.end());
  ordered_json j = ordered_json::array();
  for (const auto& f : files) {
    const auto bytes = io::read_file(root / f);
    j.push_back({{"path", f}, {"bytes", bytes.size()}, {"fnv1a", io::hex64(io::fnv1a(bytes))}});
  }
  io::write_atomic(root / "index.json", j.dump(2) + "\n");
}

void run_all(const PipelineConfig& c) {
  c.validate();
  std::vector<std::string> ran;
  for (const auto& s : stage_names())
    if (std::find(c.run.stages.begin(), c.run.stages.end(), s) != c.run.stages.end()) {
      run_stage(s, c);
      ran.push_back(s);
    }
  write_provenance(c, ran);
  write_index(c);
}

}  // namespace rcd::pipeline
