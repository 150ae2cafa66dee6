#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace rcd {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

/// Voxel lattice placement. `origin` is the physical position (mm) of the
/// centre of voxel (0,0,0); voxels are stored x-fastest.
struct GridGeometry {
  Index3 dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  Vec3 position(int x, int y, int z) const {
    return {origin[0] + x * spacing[0], origin[1] + y * spacing[1], origin[2] + z * spacing[2]};
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }
  double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }
  /// Physical extent along each axis (dims x spacing).
  Vec3 extent() const {
    return {dims[0] * spacing[0], dims[1] * spacing[1], dims[2] * spacing[2]};
  }

  /// Throws a data error if dims or spacing are not strictly positive.
  void validate() const;

  bool operator==(const GridGeometry&) const = default;
};

/// Label codes carried by LabelGrid.
enum class Tissue : std::uint8_t { background = 0, kidney = 1, tumour = 2, cyst = 3 };

/// Scalar CT volume in HU, or in normalised units once `normalized` is set.
struct VolumeGrid {
  GridGeometry geom;
  std::vector<float> values;
  bool normalized = false;

  float at(int x, int y, int z) const { return values[geom.index(x, y, z)]; }
};

struct LabelGrid {
  GridGeometry geom;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(int x, int y, int z) const { return labels[geom.index(x, y, z)]; }
};

/// Binary mask; every element is 0 or 1.
struct MaskGrid {
  GridGeometry geom;
  std::vector<std::uint8_t> bits;

  bool at(int x, int y, int z) const { return bits[geom.index(x, y, z)] != 0; }
  std::size_t count() const;
};

enum class Side { left, right };

const char* to_string(Side side);

/// One kidney: cropped mask plus where it sits in the parent scan.
struct KidneyComponent {
  MaskGrid mask;          // cropped to the bounding box; geometry in scan mm
  Index3 bbox_lo{};       // inclusive voxel bounds in the parent grid
  Index3 bbox_hi{};
  Side side = Side::left;
  Vec3 centroid{};        // mm
  std::size_t voxel_count = 0;

  double volume_mm3() const { return voxel_count * mask.geom.voxel_volume(); }
};

}  // namespace rcd
