#pragma once

// Data-parallel inner loops. Each kernel in `rcd::kernels` is OpenMP
// parallel; `rcd::kernels::serial` holds a plain single-threaded reference
// used by the tests and the benchmark to check and time the parallel one.

#include <cstdint>
#include <span>
#include <vector>

#include "rcd/grid.hpp"

namespace rcd::kernels {

inline constexpr double kFar = 1e30;

/// Compressed sparse rows; `val[k]` weights the edge row -> col[k].
struct CsrMatrix {
  int rows = 0;
  std::vector<int> row_ptr{0};
  std::vector<int> col;
  std::vector<double> val;
};

/// Trilinear sampling of `in` (on `src`) at the voxel centres of `dst`;
/// out-of-lattice positions clamp to the edge.
void resample_trilinear(const GridGeometry& src, std::span<const float> in, const GridGeometry& dst,
                        std::span<float> out);
void resample_nearest(const GridGeometry& src, std::span<const std::uint8_t> in,
                      const GridGeometry& dst, std::span<std::uint8_t> out);

/// Exact squared Euclidean distance (mm^2) to the nearest nonzero voxel;
/// kFar when the mask is empty.
void squared_edt(const GridGeometry& geom, std::span<const std::uint8_t> mask,
                 std::span<double> out);
void squared_edt_2d(int nx, int ny, double sx, double sy, std::span<const std::uint8_t> mask,
                    std::span<double> out);

/// out (rows x cols, row-major) = A * x.
void spmm(const CsrMatrix& a, std::span<const double> x, int cols, std::span<double> out);

namespace serial {
void resample_trilinear(const GridGeometry& src, std::span<const float> in, const GridGeometry& dst,
                        std::span<float> out);
void resample_nearest(const GridGeometry& src, std::span<const std::uint8_t> in,
                      const GridGeometry& dst, std::span<std::uint8_t> out);
void squared_edt(const GridGeometry& geom, std::span<const std::uint8_t> mask,
                 std::span<double> out);
void spmm(const CsrMatrix& a, std::span<const double> x, int cols, std::span<double> out);
}  // namespace serial

}  // namespace rcd::kernels
