#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "rcd/grid.hpp"

namespace rcd::volio {

using AnyGrid = std::variant<VolumeGrid, LabelGrid, MaskGrid>;

// Grid files are a pair: `<stem>.json` header and `<stem>.raw` little-endian
// payload. `path` may name the stem, the .json or the .raw file.
void save_grid(const std::filesystem::path& path, const VolumeGrid& grid);
void save_grid(const std::filesystem::path& path, const LabelGrid& grid);
void save_grid(const std::filesystem::path& path, const MaskGrid& grid);

AnyGrid load_grid(const std::filesystem::path& path);
VolumeGrid load_volume(const std::filesystem::path& path);
LabelGrid load_labels(const std::filesystem::path& path);
MaskGrid load_mask(const std::filesystem::path& path);

enum class Interp { trilinear, nearest };

/// New dims are ceil(dims * spacing / target); the new lattice starts at the
/// same physical lower edge as the old one.
GridGeometry resampled_geometry(const GridGeometry& src, const Vec3& target_spacing);

VolumeGrid resample(const VolumeGrid& grid, const Vec3& target_spacing, Interp mode);
/// Labels and masks only accept Interp::nearest.
LabelGrid resample(const LabelGrid& grid, const Vec3& target_spacing, Interp mode);
MaskGrid resample(const MaskGrid& grid, const Vec3& target_spacing, Interp mode);

inline constexpr float kClipLowHu = -200.0f;
inline constexpr float kClipHighHu = 200.0f;
inline constexpr float kNormDivisor = 100.0f;

/// clamp(hu, lo, hi) / divisor. Refuses already-normalised input.
VolumeGrid clip_normalize(const VolumeGrid& volume, float lo = kClipLowHu, float hi = kClipHighHu,
                          float divisor = kNormDivisor);

/// Voxel set iff its Euclidean distance (mm) to the foreground is <= radius_mm.
MaskGrid dilate(const MaskGrid& mask, double radius_mm);

/// Squared distance (mm^2) from every voxel to the nearest foreground voxel.
std::vector<double> squared_distance_to(const MaskGrid& mask);

MaskGrid binarize(const LabelGrid& labels);
MaskGrid select(const LabelGrid& labels, Tissue tissue);

MaskGrid pad(const MaskGrid& mask, int voxels);
MaskGrid crop(const MaskGrid& mask, const Index3& lo, const Index3& hi);

/// 26-connected component ids (0 = background, 1..n) and voxel counts
/// (counts[0] unused).
struct Components {
  std::vector<int> ids;
  std::vector<std::size_t> counts;
};
Components label_components(const MaskGrid& mask);

struct SplitOptions {
  double min_volume_mm3 = 1000.0;
  double midline_margin_mm = 20.0;
};

/// The two largest kidney components (labels >= 1), sided by centroid x
/// against the scan midline. x above the midline is the patient's left.
std::vector<KidneyComponent> split_kidneys(const LabelGrid& labels, const SplitOptions& opts = {});

}  // namespace rcd::volio
