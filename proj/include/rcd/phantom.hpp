#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcd/grid.hpp"

namespace rcd::phantom {

enum class LesionKind { none, exophytic, endophytic, cyst };
const char* to_string(LesionKind k);
LesionKind lesion_from_string(const std::string& s);

struct LesionSpec {
  LesionKind kind = LesionKind::none;
  double radius_mm = 0.0;
  double hu = 25.0;
  /// Placement ray from the kidney centre (need not be unit). Exophytic
  /// lesions are centred where it meets the surface; endophytic ones and
  /// cysts sit `depth` of the way from the centre to the surface minus r.
  Vec3 direction{1.0, 0.0, 0.0};
  double depth = 0.5;
};

/// Axis-aligned ellipsoid; semi-axes are along scan x, y, z.
struct KidneySpec {
  Side side = Side::right;
  Vec3 semi_axes{15.0, 12.0, 24.0};
  double hu = 40.0;
  LesionSpec lesion;
};

struct PhantomSpec {
  std::string patient_id = "p000";
  Vec3 spacing{1.0, 1.0, 1.0};
  double background_hu = -100.0;
  double noise_sigma = 10.0;
  double midline_gap_mm = 30.0;  // between the inner kidney poles
  double margin_mm = 10.0;
  std::vector<KidneySpec> kidneys;  // one or two, distinct sides
  std::uint64_t seed = 1;

  /// Needs positive spacing and axes, and 0 < radius < smallest semi-axis
  /// for each lesion.
  void validate() const;
};

struct LesionTruth {
  std::string kidney_id;
  Side side = Side::right;
  LesionKind kind = LesionKind::none;
  double volume_mm3 = 0.0;       // rasterised lesion voxels
  double max_diameter_mm = 0.0;  // 2 r
};

struct Phantom {
  VolumeGrid volume;
  LabelGrid labels;
  std::vector<LesionTruth> truth;  // one per kidney, in spec order
};

std::string kidney_id(const std::string& patient_id, Side side);

/// Kidneys at +-x around a midline at x = 0; x > 0 is the patient's left.
/// HU = tissue value + Gaussian noise, drawn voxel by voxel in storage order.
Phantom generate(const PhantomSpec& spec);

/// A study population: kidneys are drawn as healthy, exophytic-bump or
/// endophytic-lesion in the requested counts, then paired into patients.
struct CohortSpec {
  int healthy = 100;
  int exophytic = 50;
  int endophytic = 50;
  int cysts = 0;
  Vec3 semi_axes{15.0, 12.0, 24.0};
  double axis_jitter = 0.1;  // uniform relative perturbation per axis
  double exophytic_radius_min = 6.0, exophytic_radius_max = 10.0;
  double endophytic_radius_min = 5.5, endophytic_radius_max = 9.0;
  double kidney_hu = 40.0;
  double tumour_hu = 25.0;
  double cyst_hu = 5.0;
  double background_hu = -100.0;
  double noise_sigma = 10.0;
  Vec3 spacing{1.0, 1.0, 1.0};
  std::uint64_t seed = 2024;

  int kidney_count() const { return healthy + exophytic + endophytic + cysts; }
  void validate() const;
};

/// Two kidneys per patient (an odd count leaves one single-kidney patient).
std::vector<PhantomSpec> make_cohort(const CohortSpec& spec);

}  // namespace rcd::phantom
