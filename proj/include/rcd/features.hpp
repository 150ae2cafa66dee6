#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "rcd/grid.hpp"

namespace rcd {

struct ShapeDescriptors {
  double volume = 0.0;        // mm^3
  double max_diameter = 0.0;  // mm, exact Feret diameter over voxel centres
  double min_diameter = 0.0;  // mm, shortest axis of the inertia-equivalent ellipsoid
  double convexity = 0.0;     // voxel count / lattice points inside the convex hull
  std::array<double, 3> inertia_eigenvalues{};  // mm^2, descending
  double side_flag = 0.0;     // 1 = left
};

inline constexpr int kFeatureCount = 28;
inline constexpr int kShapeScalarCount = 8;
inline constexpr int kHistogramBins = 10;

/// [volume, max_d, min_d, convexity, l1, l2, l3, side | curvature bins | attenuation bins]
using FeatureVector28 = std::array<double, kFeatureCount>;

}  // namespace rcd

namespace rcd::features {

inline constexpr double kCurvatureLow = -0.5;
inline constexpr double kCurvatureHigh = 0.5;
inline constexpr double kAttenuationLowHu = -20.0;
inline constexpr double kAttenuationHighHu = 80.0;

ShapeDescriptors shape_descriptors(const KidneyComponent& kidney);

/// `bins` equal bins on [lo, hi); hi itself lands in the last bin; values
/// outside are dropped; counts become fractions of in-range values.
std::vector<double> histogram(std::span<const double> values, double lo, double hi, int bins);

std::array<double, kHistogramBins> curvature_histogram(std::span<const double> vertex_curvatures,
                                                       double lo = kCurvatureLow,
                                                       double hi = kCurvatureHigh);

/// Histogram of raw HU over the kidney's voxels. The volume must share the
/// lattice the kidney was split from.
std::array<double, kHistogramBins> attenuation_histogram(const VolumeGrid& volume,
                                                         const KidneyComponent& kidney,
                                                         double lo = kAttenuationLowHu,
                                                         double hi = kAttenuationHighHu);

FeatureVector28 assemble(const ShapeDescriptors& shape,
                         const std::array<double, kHistogramBins>& curvature_hist,
                         const std::array<double, kHistogramBins>& attenuation_hist);

std::vector<std::string> column_names();

struct FeatureRow {
  std::string kidney_id;
  Side side = Side::left;
  int label = 0;
  FeatureVector28 values{};
};

/// id, side, label, then the 28 features in assembly order.
std::string to_csv(const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> from_csv(const std::string& text);

}  // namespace rcd::features
