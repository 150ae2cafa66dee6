#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "rcd/grid.hpp"
#include "rcd/neuro.hpp"

namespace rcd::test {

inline constexpr double kPi = 3.14159265358979323846;

/// Lattice of `dims` voxels centred on the origin.
inline GridGeometry centred_geometry(const Index3& dims, const Vec3& spacing) {
  GridGeometry g;
  g.dims = dims;
  g.spacing = spacing;
  for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * (dims[a] - 1) * spacing[a];
  return g;
}

/// Mask of every voxel centre satisfying `inside(p)`, with `margin_mm` of
/// empty space around `half_extent_mm`.
inline MaskGrid mask_from(const std::function<bool(const Vec3&)>& inside, const Vec3& half_extent_mm,
                          double spacing = 1.0, double margin_mm = 4.0) {
  Index3 dims{};
  for (int a = 0; a < 3; ++a)
    dims[a] = 2 * static_cast<int>(std::ceil((half_extent_mm[a] + margin_mm) / spacing)) + 1;
  MaskGrid m;
  m.geom = centred_geometry(dims, {spacing, spacing, spacing});
  m.bits.assign(m.geom.voxel_count(), 0);
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x)
        if (inside(m.geom.position(x, y, z))) m.bits[m.geom.index(x, y, z)] = 1;
  return m;
}

inline MaskGrid ball(double radius_mm, double spacing = 1.0, const Vec3& centre = {0, 0, 0}) {
  const double r2 = radius_mm * radius_mm;
  const double reach = radius_mm + std::max({std::abs(centre[0]), std::abs(centre[1]), std::abs(centre[2])});
  return mask_from(
      [&](const Vec3& p) {
        double d = 0;
        for (int a = 0; a < 3; ++a) d += (p[a] - centre[a]) * (p[a] - centre[a]);
        return d <= r2;
      },
      {reach, reach, reach}, spacing);
}

inline MaskGrid ellipsoid(const Vec3& axes, double spacing = 1.0) {
  return mask_from(
      [&](const Vec3& p) {
        double e = 0;
        for (int a = 0; a < 3; ++a) e += p[a] * p[a] / (axes[a] * axes[a]);
        return e <= 1.0;
      },
      axes, spacing);
}

/// A whole-mask component, as split_kidneys would crop it.
inline KidneyComponent component_of(const MaskGrid& m, Side side = Side::left) {
  const auto& g = m.geom;
  KidneyComponent k;
  k.side = side;
  Index3 lo{g.dims[0], g.dims[1], g.dims[2]}, hi{-1, -1, -1};
  Vec3 sum{0, 0, 0};
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        if (!m.at(x, y, z)) continue;
        const Index3 v{x, y, z};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], v[a]);
          hi[a] = std::max(hi[a], v[a]);
        }
        const Vec3 p = g.position(x, y, z);
        for (int a = 0; a < 3; ++a) sum[a] += p[a];
        ++k.voxel_count;
      }
  for (int a = 0; a < 3; ++a) k.centroid[a] = sum[a] / static_cast<double>(k.voxel_count);
  k.bbox_lo = lo;
  k.bbox_hi = hi;
  k.mask.geom.spacing = g.spacing;
  k.mask.geom.origin = g.position(lo[0], lo[1], lo[2]);
  for (int a = 0; a < 3; ++a) k.mask.geom.dims[a] = hi[a] - lo[a] + 1;
  k.mask.bits.assign(k.mask.geom.voxel_count(), 0);
  for (int z = lo[2]; z <= hi[2]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[0]; x <= hi[0]; ++x)
        if (m.at(x, y, z)) k.mask.bits[k.mask.geom.index(x - lo[0], y - lo[1], z - lo[2])] = 1;
  return k;
}

/// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("rcd_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Random connected graph: a random spanning tree plus up to `extra` chords.
inline std::vector<Edge> random_graph(int n, int extra, neuro::Rng& rng) {
  std::vector<Edge> e;
  for (int i = 1; i < n; ++i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
    e.push_back({j, i});
  }
  for (int k = 0; k < extra; ++k) {
    int a = static_cast<int>(rng.below(n)), b = static_cast<int>(rng.below(n));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    e.push_back({a, b});
  }
  std::sort(e.begin(), e.end());
  e.erase(std::unique(e.begin(), e.end()), e.end());
  return e;
}

inline neuro::Matrix random_matrix(int r, int c, neuro::Rng& rng, double scale = 1.0) {
  neuro::Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace rcd::test
