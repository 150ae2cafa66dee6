#include "rcd/features.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "rcd/convex_hull.hpp"
#include "rcd/error.hpp"
#include "rcd/io_util.hpp"

namespace rcd::features {

namespace {

// Lattice points of the mask that can be hull vertices: the first and last
// foreground voxel of every x-run.
std::vector<geom::Point3i> row_extremes(const MaskGrid& m) {
  std::vector<geom::Point3i> pts;
  const auto& d = m.geom.dims;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y) {
      int lo = -1, hi = -1;
      for (int x = 0; x < d[0]; ++x)
        if (m.at(x, y, z)) {
          if (lo < 0) lo = x;
          hi = x;
        }
      if (lo < 0) continue;
      pts.push_back({lo, y, z});
      if (hi != lo) pts.push_back({hi, y, z});
    }
  return pts;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Number of lattice points (x, y, z) inside every plane n.p <= d.
std::size_t lattice_points_inside(const std::vector<geom::LatticeHull::Plane>& planes,
                                  const Index3& dims) {
  std::size_t total = 0;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y) {
      std::int64_t lo = 0, hi = dims[0] - 1;
      for (const auto& pl : planes) {
        const std::int64_t rhs = pl.d - pl.n[1] * y - pl.n[2] * z;
        if (pl.n[0] > 0) {
          hi = std::min(hi, floor_div(rhs, pl.n[0]));
        } else if (pl.n[0] < 0) {
          lo = std::max(lo, -floor_div(rhs, -pl.n[0]));
        } else if (rhs < 0) {
          hi = -1;
        }
        if (hi < lo) break;
      }
      if (hi >= lo) total += static_cast<std::size_t>(hi - lo + 1);
    }
  return total;
}

}  // namespace

ShapeDescriptors shape_descriptors(const KidneyComponent& kidney) {
  const MaskGrid& m = kidney.mask;
  const GridGeometry& g = m.geom;
  const std::size_t n = m.count();
  if (n == 0) throw data_error("shape descriptors of an empty component");

  ShapeDescriptors s;
  s.volume = static_cast<double>(n) * g.voxel_volume();
  s.side_flag = kidney.side == Side::left ? 1.0 : 0.0;

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x)
        if (m.at(x, y, z)) mean += Eigen::Vector3d(x * g.spacing[0], y * g.spacing[1], z * g.spacing[2]);
  mean /= static_cast<double>(n);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x)
        if (m.at(x, y, z)) {
          const Eigen::Vector3d d =
              Eigen::Vector3d(x * g.spacing[0], y * g.spacing[1], z * g.spacing[2]) - mean;
          cov += d * d.transpose();
        }
  cov /= static_cast<double>(n);

  // inertia tensor of unit total mass: tr(C) I - C
  const Eigen::Matrix3d inertia = cov.trace() * Eigen::Matrix3d::Identity() - cov;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> inertia_eig(inertia);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> cov_eig(cov);
  const Eigen::Vector3d ev = inertia_eig.eigenvalues();  // ascending
  for (int k = 0; k < 3; ++k) s.inertia_eigenvalues[k] = std::max(0.0, ev[2 - k]);
  // a solid ellipsoid with semi-axis c has variance c^2 / 5 along that axis
  s.min_diameter = 2.0 * std::sqrt(5.0 * std::max(0.0, cov_eig.eigenvalues()[0]));

  const geom::LatticeHull hull = geom::lattice_hull(row_extremes(m));
  double best = 0.0;
  for (std::size_t i = 0; i < hull.points.size(); ++i)
    for (std::size_t j = i + 1; j < hull.points.size(); ++j) {
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double d = (hull.points[i][k] - hull.points[j][k]) * g.spacing[k];
        d2 += d * d;
      }
      best = std::max(best, d2);
    }
  s.max_diameter = std::sqrt(best);
  const std::size_t inside = lattice_points_inside(hull.planes(), g.dims);
  s.convexity = static_cast<double>(n) / static_cast<double>(inside);
  if (!(s.min_diameter > 0.0)) throw data_error("degenerate (flat) component");
  return s;
}

std::vector<double> histogram(std::span<const double> values, double lo, double hi, int bins) {
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  std::size_t in_range = 0;
  for (double v : values) {
    if (!(v >= lo && v <= hi)) continue;
    int b = static_cast<int>(std::floor((v - lo) * bins / (hi - lo)));
    b = std::min(b, bins - 1);
    h[b] += 1.0;
    ++in_range;
  }
  if (in_range > 0)
    for (double& x : h) x /= static_cast<double>(in_range);
  return h;
}

std::array<double, kHistogramBins> curvature_histogram(std::span<const double> values, double lo,
                                                       double hi) {
  const auto h = histogram(values, lo, hi, kHistogramBins);
  std::array<double, kHistogramBins> out{};
  std::copy(h.begin(), h.end(), out.begin());
  return out;
}

std::array<double, kHistogramBins> attenuation_histogram(const VolumeGrid& volume,
                                                         const KidneyComponent& kidney, double lo,
                                                         double hi) {
  if (volume.normalized) throw data_error("attenuation histogram needs raw HU, volume is normalised");
  const MaskGrid& m = kidney.mask;
  if (m.count() == 0) throw data_error("attenuation histogram over an empty mask");
  for (int a = 0; a < 3; ++a)
    if (kidney.bbox_hi[a] >= volume.geom.dims[a]) throw data_error("kidney mask lies outside the volume");
  std::vector<double> hu;
  hu.reserve(m.count());
  for (int z = 0; z < m.geom.dims[2]; ++z)
    for (int y = 0; y < m.geom.dims[1]; ++y)
      for (int x = 0; x < m.geom.dims[0]; ++x)
        if (m.at(x, y, z))
          hu.push_back(volume.at(x + kidney.bbox_lo[0], y + kidney.bbox_lo[1], z + kidney.bbox_lo[2]));
  const auto h = histogram(hu, lo, hi, kHistogramBins);
  std::array<double, kHistogramBins> out{};
  std::copy(h.begin(), h.end(), out.begin());
  return out;
}

FeatureVector28 assemble(const ShapeDescriptors& s,
                         const std::array<double, kHistogramBins>& curv,
                         const std::array<double, kHistogramBins>& atten) {
  FeatureVector28 f{};
  f[0] = s.volume;
  f[1] = s.max_diameter;
  f[2] = s.min_diameter;
  f[3] = s.convexity;
  f[4] = s.inertia_eigenvalues[0];
  f[5] = s.inertia_eigenvalues[1];
  f[6] = s.inertia_eigenvalues[2];
  f[7] = s.side_flag;
  std::copy(curv.begin(), curv.end(), f.begin() + kShapeScalarCount);
  std::copy(atten.begin(), atten.end(), f.begin() + kShapeScalarCount + kHistogramBins);
  for (double v : f)
    if (!std::isfinite(v)) throw numeric_error("non-finite value in feature vector");
  return f;
}

std::vector<std::string> column_names() {
  std::vector<std::string> names = {"volume_mm3", "max_diameter_mm", "min_diameter_mm", "convexity",
                                    "inertia_1",  "inertia_2",       "inertia_3",       "side_left"};
  for (int i = 0; i < kHistogramBins; ++i) names.push_back("curv_" + std::to_string(i));
  for (int i = 0; i < kHistogramBins; ++i) names.push_back("atten_" + std::to_string(i));
  return names;
}

std::string to_csv(const std::vector<FeatureRow>& rows) {
  std::ostringstream out;
  out << "id,side,label";
  for (const auto& c : column_names()) out << ',' << c;
  out << '\n';
  for (const auto& r : rows) {
    out << r.kidney_id << ',' << to_string(r.side) << ',' << r.label;
    for (double v : r.values) out << ',' << io::fmt_double(v);
    out << '\n';
  }
  return out.str();
}

std::vector<FeatureRow> from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw data_error("empty feature csv");
  std::vector<FeatureRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 3 + kFeatureCount) throw data_error("feature csv row has wrong column count");
    FeatureRow r;
    r.kidney_id = cells[0];
    if (cells[1] != "left" && cells[1] != "right") throw data_error("bad side in feature csv");
    r.side = cells[1] == "left" ? Side::left : Side::right;
    r.label = std::stoi(cells[2]);
    for (int i = 0; i < kFeatureCount; ++i) r.values[i] = std::stod(cells[3 + i]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace rcd::features
