#include "rcd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

namespace rcd::kernels {

namespace {

struct AxisSample {
  int i0;
  int i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// Continuous source index of destination voxel i along one axis.
double source_coord(const GridGeometry& src, const GridGeometry& dst, int axis, int i) {
  const double p = dst.origin[axis] + i * dst.spacing[axis];
  return (p - src.origin[axis]) / src.spacing[axis];
}

std::vector<AxisSample> linear_axis(const GridGeometry& src, const GridGeometry& dst, int axis) {
  const int n = src.dims[axis];
  std::vector<AxisSample> out(static_cast<std::size_t>(dst.dims[axis]));
  for (int i = 0; i < dst.dims[axis]; ++i) {
    const double u = std::clamp(source_coord(src, dst, axis, i), 0.0, static_cast<double>(n - 1));
    const int i0 = std::min(static_cast<int>(std::floor(u)), n - 1);
    const int i1 = std::min(i0 + 1, n - 1);
    out[i] = {i0, i1, u - i0};
  }
  return out;
}

std::vector<int> nearest_axis(const GridGeometry& src, const GridGeometry& dst, int axis) {
  std::vector<int> out(static_cast<std::size_t>(dst.dims[axis]));
  for (int i = 0; i < dst.dims[axis]; ++i) {
    const double u = source_coord(src, dst, axis, i);
    out[i] = std::clamp(static_cast<int>(std::floor(u + 0.5)), 0, src.dims[axis] - 1);
  }
  return out;
}

// Felzenszwalb-Huttenlocher lower envelope of parabolas, in place on
// `f[0..n)` read with `stride`. `v` and `z` are scratch.
void envelope_1d(double* f, std::ptrdiff_t stride, int n, double s, std::vector<double>& g,
                 std::vector<int>& v, std::vector<double>& z) {
  g.resize(n);
  v.resize(n);
  z.resize(n + 1);
  for (int q = 0; q < n; ++q) g[q] = f[q * stride];

  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (g[q] >= kFar) continue;
    const double xq = q * s;
    while (k >= 0) {
      const double xv = v[k] * s;
      const double cross = ((g[q] + xq * xq) - (g[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (cross <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    if (k == 0) {
      z[k] = -std::numeric_limits<double>::infinity();
    } else {
      const double xv = v[k - 1] * s;
      z[k] = ((g[q] + xq * xq) - (g[v[k - 1]] + xv * xv)) / (2.0 * (xq - xv));
    }
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) return;  // line has no finite sample; leave it at kFar

  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * s;
    while (z[j + 1] < xq) ++j;
    const double d = xq - v[j] * s;
    f[q * stride] = d * d + g[v[j]];
  }
}

}  // namespace

void resample_trilinear(const GridGeometry& src, std::span<const float> in, const GridGeometry& dst,
                        std::span<float> out) {
  const auto ax = linear_axis(src, dst, 0);
  const auto ay = linear_axis(src, dst, 1);
  const auto az = linear_axis(src, dst, 2);
  const std::ptrdiff_t nz = dst.dims[2];

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t zi = 0; zi < nz; ++zi) {
    const AxisSample& sz = az[zi];
    for (int y = 0; y < dst.dims[1]; ++y) {
      const AxisSample& sy = ay[y];
      const float* r00 = in.data() + src.index(0, sy.i0, sz.i0);
      const float* r10 = in.data() + src.index(0, sy.i1, sz.i0);
      const float* r01 = in.data() + src.index(0, sy.i0, sz.i1);
      const float* r11 = in.data() + src.index(0, sy.i1, sz.i1);
      float* dst_row = out.data() + dst.index(0, y, static_cast<int>(zi));
      for (int x = 0; x < dst.dims[0]; ++x) {
        const AxisSample& sx = ax[x];
        const double c00 = r00[sx.i0] + sx.w1 * (r00[sx.i1] - r00[sx.i0]);
        const double c10 = r10[sx.i0] + sx.w1 * (r10[sx.i1] - r10[sx.i0]);
        const double c01 = r01[sx.i0] + sx.w1 * (r01[sx.i1] - r01[sx.i0]);
        const double c11 = r11[sx.i0] + sx.w1 * (r11[sx.i1] - r11[sx.i0]);
        const double c0 = c00 + sy.w1 * (c10 - c00);
        const double c1 = c01 + sy.w1 * (c11 - c01);
        dst_row[x] = static_cast<float>(c0 + sz.w1 * (c1 - c0));
      }
    }
  }
}

void resample_nearest(const GridGeometry& src, std::span<const std::uint8_t> in,
                      const GridGeometry& dst, std::span<std::uint8_t> out) {
  const auto ix = nearest_axis(src, dst, 0);
  const auto iy = nearest_axis(src, dst, 1);
  const auto iz = nearest_axis(src, dst, 2);
  const std::ptrdiff_t nz = dst.dims[2];

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t zi = 0; zi < nz; ++zi) {
    for (int y = 0; y < dst.dims[1]; ++y) {
      const std::uint8_t* row = in.data() + src.index(0, iy[y], iz[zi]);
      std::uint8_t* dst_row = out.data() + dst.index(0, y, static_cast<int>(zi));
      for (int x = 0; x < dst.dims[0]; ++x) dst_row[x] = row[ix[x]];
    }
  }
}

void squared_edt(const GridGeometry& geom, std::span<const std::uint8_t> mask,
                 std::span<double> out) {
  const int nx = geom.dims[0], ny = geom.dims[1], nz = geom.dims[2];
  const std::size_t n = geom.voxel_count();
  for (std::size_t i = 0; i < n; ++i) out[i] = mask[i] ? 0.0 : kFar;

  const std::ptrdiff_t sx = 1, sy = nx, sz = static_cast<std::ptrdiff_t>(nx) * ny;
  double* base = out.data();

#pragma omp parallel
  {
    std::vector<double> g, z;
    std::vector<int> v;
#pragma omp for schedule(static)
    for (std::ptrdiff_t line = 0; line < static_cast<std::ptrdiff_t>(ny) * nz; ++line)
      envelope_1d(base + line * sy, sx, nx, geom.spacing[0], g, v, z);
#pragma omp for schedule(static)
    for (std::ptrdiff_t line = 0; line < static_cast<std::ptrdiff_t>(nx) * nz; ++line) {
      const std::ptrdiff_t x = line % nx, zz = line / nx;
      envelope_1d(base + zz * sz + x, sy, ny, geom.spacing[1], g, v, z);
    }
#pragma omp for schedule(static)
    for (std::ptrdiff_t line = 0; line < static_cast<std::ptrdiff_t>(nx) * ny; ++line)
      envelope_1d(base + line, sz, nz, geom.spacing[2], g, v, z);
  }
}

void squared_edt_2d(int nx, int ny, double sx, double sy, std::span<const std::uint8_t> mask,
                    std::span<double> out) {
  const std::size_t n = static_cast<std::size_t>(nx) * ny;
  for (std::size_t i = 0; i < n; ++i) out[i] = mask[i] ? 0.0 : kFar;
  std::vector<double> g, z;
  std::vector<int> v;
  for (int y = 0; y < ny; ++y) envelope_1d(out.data() + static_cast<std::size_t>(y) * nx, 1, nx, sx, g, v, z);
  for (int x = 0; x < nx; ++x) envelope_1d(out.data() + x, nx, ny, sy, g, v, z);
}

void spmm(const CsrMatrix& a, std::span<const double> x, int cols, std::span<double> out) {
  const std::ptrdiff_t rows = a.rows;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    double* dst = out.data() + r * cols;
    std::fill(dst, dst + cols, 0.0);
    for (int k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) {
      const double w = a.val[k];
      const double* src = x.data() + static_cast<std::ptrdiff_t>(a.col[k]) * cols;
      for (int c = 0; c < cols; ++c) dst[c] += w * src[c];
    }
  }
}

namespace serial {

namespace {
double sample_clamped(const GridGeometry& g, std::span<const float> in, int x, int y, int z) {
  x = std::clamp(x, 0, g.dims[0] - 1);
  y = std::clamp(y, 0, g.dims[1] - 1);
  z = std::clamp(z, 0, g.dims[2] - 1);
  return in[g.index(x, y, z)];
}
}  // namespace

void resample_trilinear(const GridGeometry& src, std::span<const float> in, const GridGeometry& dst,
                        std::span<float> out) {
  for (int z = 0; z < dst.dims[2]; ++z) {
    for (int y = 0; y < dst.dims[1]; ++y) {
      for (int x = 0; x < dst.dims[0]; ++x) {
        const Vec3 p = dst.position(x, y, z);
        double u[3];
        for (int a = 0; a < 3; ++a)
          u[a] = std::clamp((p[a] - src.origin[a]) / src.spacing[a], 0.0,
                            static_cast<double>(src.dims[a] - 1));
        const int x0 = static_cast<int>(std::floor(u[0]));
        const int y0 = static_cast<int>(std::floor(u[1]));
        const int z0 = static_cast<int>(std::floor(u[2]));
        const double fx = u[0] - x0, fy = u[1] - y0, fz = u[2] - z0;
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
              if (w != 0.0) acc += w * sample_clamped(src, in, x0 + dx, y0 + dy, z0 + dz);
            }
        out[dst.index(x, y, z)] = static_cast<float>(acc);
      }
    }
  }
}

void resample_nearest(const GridGeometry& src, std::span<const std::uint8_t> in,
                      const GridGeometry& dst, std::span<std::uint8_t> out) {
  for (int z = 0; z < dst.dims[2]; ++z)
    for (int y = 0; y < dst.dims[1]; ++y)
      for (int x = 0; x < dst.dims[0]; ++x) {
        const Vec3 p = dst.position(x, y, z);
        int idx[3];
        for (int a = 0; a < 3; ++a)
          idx[a] = std::clamp(
              static_cast<int>(std::floor((p[a] - src.origin[a]) / src.spacing[a] + 0.5)), 0,
              src.dims[a] - 1);
        out[dst.index(x, y, z)] = in[src.index(idx[0], idx[1], idx[2])];
      }
}

// Separable brute force: exact for squared Euclidean distance, O(n^2) per line.
void squared_edt(const GridGeometry& geom, std::span<const std::uint8_t> mask,
                 std::span<double> out) {
  const std::size_t n = geom.voxel_count();
  for (std::size_t i = 0; i < n; ++i) out[i] = mask[i] ? 0.0 : kFar;
  const std::ptrdiff_t stride[3] = {1, geom.dims[0],
                                    static_cast<std::ptrdiff_t>(geom.dims[0]) * geom.dims[1]};
  std::vector<double> line;
  for (int axis = 0; axis < 3; ++axis) {
    const int len = geom.dims[axis];
    const double s = geom.spacing[axis];
    line.resize(len);
    for (std::size_t start = 0; start < n; ++start) {
      // visit each line once, from its first element
      const std::ptrdiff_t coord = (static_cast<std::ptrdiff_t>(start) / stride[axis]) % len;
      if (coord != 0) continue;
      for (int q = 0; q < len; ++q) line[q] = out[start + q * stride[axis]];
      for (int p = 0; p < len; ++p) {
        double best = kFar;
        for (int q = 0; q < len; ++q) {
          if (line[q] >= kFar) continue;
          const double d = (p - q) * s;
          best = std::min(best, d * d + line[q]);
        }
        out[start + p * stride[axis]] = best;
      }
    }
  }
}

void spmm(const CsrMatrix& a, std::span<const double> x, int cols, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (int r = 0; r < a.rows; ++r)
    for (int k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k)
      for (int c = 0; c < cols; ++c)
        out[static_cast<std::size_t>(r) * cols + c] +=
            a.val[k] * x[static_cast<std::size_t>(a.col[k]) * cols + c];
}

}  // namespace serial

}  // namespace rcd::kernels
