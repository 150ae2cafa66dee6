#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace rcd::geom {

using Point3i = std::array<std::int64_t, 3>;

/// Convex hull of integer lattice points, built incrementally with exact
/// integer orientation tests. Faces are wound outward.
struct LatticeHull {
  std::vector<Point3i> points;             // hull vertices
  std::vector<std::array<int, 3>> faces;   // indices into `points`

  /// Outward plane n . p <= d for every face, exact in integers.
  struct Plane {
    std::array<std::int64_t, 3> n;
    std::int64_t d;
  };
  std::vector<Plane> planes() const;
};

/// Throws a data error when the input is coplanar (no 3D hull).
LatticeHull lattice_hull(const std::vector<Point3i>& pts);

}  // namespace rcd::geom
