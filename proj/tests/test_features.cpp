#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rcd/convex_hull.hpp"
#include "rcd/error.hpp"
#include "rcd/features.hpp"
#include "rcd/phantom.hpp"
#include "rcd/volio.hpp"
#include "support.hpp"

using namespace rcd;

namespace {

double sum_of(const auto& h) { return std::accumulate(h.begin(), h.end(), 0.0); }

VolumeGrid constant_volume(const GridGeometry& g, float hu) {
  VolumeGrid v;
  v.geom = g;
  v.values.assign(g.voxel_count(), hu);
  return v;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("digital ball of radius 20 mm") {
  const auto s = features::shape_descriptors(test::component_of(test::ball(20.0)));
  const double analytic = 4.0 / 3.0 * test::kPi * 8000.0;
  CHECK(std::abs(s.volume - analytic) / analytic < 0.02);
  CHECK(std::abs(s.max_diameter - 40.0) / 40.0 < 0.05);
  CHECK(std::abs(s.min_diameter - 40.0) / 40.0 < 0.05);
  const auto& ev = s.inertia_eigenvalues;
  CHECK(std::abs(ev[0] - ev[2]) / ev[2] < 0.02);
  // solid sphere: unit-mass moment 2 r^2 / 5
  CHECK(std::abs(ev[1] - 0.4 * 400.0) / 160.0 < 0.02);
  CHECK(s.convexity >= 0.97);
  CHECK(s.convexity <= 1.0);
  CHECK(s.side_flag == 1.0);
}

TEST_CASE("ellipsoid (50, 25, 20): inertia ratios follow the analytic tensor") {
  const double a = 50, b = 25, c = 20;
  const auto s = features::shape_descriptors(test::component_of(test::ellipsoid({a, b, c}), Side::right));
  std::array<double, 3> analytic{a * a + b * b, a * a + c * c, b * b + c * c};  // descending
  const auto& ev = s.inertia_eigenvalues;
  CHECK(ev[0] >= ev[1]);
  CHECK(ev[1] >= ev[2]);
  for (int k = 1; k < 3; ++k) CHECK(std::abs(ev[k] / ev[0] - analytic[k] / analytic[0]) / (analytic[k] / analytic[0]) < 0.05);
  CHECK(std::abs(ev[0] - analytic[0] / 5.0) / (analytic[0] / 5.0) < 0.05);
  CHECK(std::abs(s.min_diameter - 2 * c) / (2 * c) < 0.05);
  CHECK(std::abs(s.max_diameter - 2 * a) / (2 * a) < 0.05);
  CHECK(s.convexity >= 0.97);
  CHECK(s.side_flag == 0.0);
}

TEST_CASE("convex digital solids at 20 mm scale have convexity at least 0.95") {
  neuro::Rng rng(12);
  for (int t = 0; t < 6; ++t) {
    const Vec3 axes{rng.uniform(20, 35), rng.uniform(20, 35), rng.uniform(20, 35)};
    const auto s = features::shape_descriptors(test::component_of(test::ellipsoid(axes)));
    CHECK(s.convexity >= 0.95);
    CHECK(s.convexity <= 1.0);
  }
}

TEST_CASE("a concave solid has lower convexity") {
  const auto shell = test::mask_from(
      [](const Vec3& p) {
        const double r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        return r2 <= 400 && p[0] < 5;  // capped ball
      },
      {20, 20, 20});
  const auto bowl = test::mask_from(
      [](const Vec3& p) {
        const double r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        const double q = (p[0] - 15) * (p[0] - 15) + p[1] * p[1] + p[2] * p[2];
        return r2 <= 400 && q > 225;
      },
      {20, 20, 20});
  CHECK(features::shape_descriptors(test::component_of(bowl)).convexity <
        features::shape_descriptors(test::component_of(shell)).convexity - 0.1);
}

TEST_CASE("descriptors are invariant under translation") {
  const auto a = features::shape_descriptors(test::component_of(test::ball(9.0, 1.0, {0, 0, 0})));
  const auto b = features::shape_descriptors(test::component_of(test::ball(9.0, 1.0, {7, -3, 11})));
  CHECK(a.volume == b.volume);
  CHECK(a.max_diameter == doctest::Approx(b.max_diameter).epsilon(1e-12));
  CHECK(a.min_diameter == doctest::Approx(b.min_diameter).epsilon(1e-9));
  CHECK(a.convexity == b.convexity);
  for (int k = 0; k < 3; ++k) CHECK(a.inertia_eigenvalues[k] == doctest::Approx(b.inertia_eigenvalues[k]).epsilon(1e-9));
}

TEST_CASE("a flat component is degenerate") {
  MaskGrid m;
  m.geom = test::centred_geometry({12, 12, 3}, {1, 1, 1});
  m.bits.assign(m.geom.voxel_count(), 0);
  for (int y = 2; y < 10; ++y)
    for (int x = 2; x < 10; ++x) m.bits[m.geom.index(x, y, 1)] = 1;
  CHECK_THROWS_AS(features::shape_descriptors(test::component_of(m)), Error);
}

TEST_CASE("curvature histogram bins") {
  const std::vector<double> zeros(17, 0.0);
  const auto h = features::curvature_histogram(zeros);
  for (int b = 0; b < 10; ++b) CHECK(h[b] == (b == 5 ? 1.0 : 0.0));

  const std::vector<double> edges{-0.5, 0.5};
  const auto e = features::curvature_histogram(edges);
  CHECK(e[0] == 0.5);
  CHECK(e[9] == 0.5);

  std::vector<double> centres;
  for (int b = 0; b < 10; ++b) centres.push_back(-0.45 + 0.1 * b);
  for (double v : features::curvature_histogram(centres)) CHECK(v == doctest::Approx(0.1).epsilon(1e-12));

  const std::vector<double> outside{-0.7, 0.51, 3.0};
  for (double v : features::curvature_histogram(outside)) CHECK(v == 0.0);
}

TEST_CASE("histogram segments sum to one or zero") {
  neuro::Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(rng.below(60));
    for (auto& x : v) x = rng.uniform(-0.8, 0.8);
    const auto h = features::curvature_histogram(v);
    const double s = sum_of(h);
    for (double x : h) CHECK(x >= 0.0);
    const bool any = std::any_of(v.begin(), v.end(), [](double x) { return x >= -0.5 && x <= 0.5; });
    CHECK(std::abs(s - (any ? 1.0 : 0.0)) <= 1e-12);
  }
}

TEST_CASE("attenuation histogram") {
  const auto kid = test::component_of(test::ball(6.0));
  const GridGeometry parent = test::ball(6.0).geom;
  // the component is cropped; rebuild a parent-lattice kidney through split
  LabelGrid l;
  l.geom = parent;
  l.labels.assign(parent.voxel_count(), 0);
  const auto full = test::ball(6.0);
  for (std::size_t i = 0; i < full.bits.size(); ++i) l.labels[i] = full.bits[i];
  const auto kids = volio::split_kidneys(l, {100.0, 20.0});
  REQUIRE(kids.size() == 1);
  CHECK(kids[0].voxel_count == kid.voxel_count);

  const auto h30 = features::attenuation_histogram(constant_volume(parent, 30.0f), kids[0]);
  for (int b = 0; b < 10; ++b) CHECK(h30[b] == (b == 5 ? 1.0 : 0.0));
  for (double v : features::attenuation_histogram(constant_volume(parent, 500.0f), kids[0])) CHECK(v == 0.0);
}

TEST_CASE("kidney with a 20 percent cyst") {
  phantom::PhantomSpec spec;
  spec.noise_sigma = 0.0;
  phantom::KidneySpec k;
  k.side = Side::left;
  k.hu = 40.0;
  k.lesion.kind = phantom::LesionKind::cyst;
  k.lesion.hu = 0.0;
  k.lesion.depth = 0.0;
  k.lesion.radius_mm = std::cbrt(0.2 * 15 * 12 * 24);
  spec.kidneys = {k};
  const auto ph = phantom::generate(spec);
  const auto kids = volio::split_kidneys(ph.labels);
  REQUIRE(kids.size() == 1);
  const auto h = features::attenuation_histogram(ph.volume, kids[0]);
  CHECK(h[2] == doctest::Approx(0.2).epsilon(0.05));
  CHECK(h[2] + h[6] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("assemble: order, length, side flag and finiteness") {
  ShapeDescriptors s{1000, 20, 10, 0.9, {3, 2, 1}, 0.0};
  std::array<double, 10> c{}, a{};
  c[5] = 1.0;
  a[6] = 1.0;
  const auto f = features::assemble(s, c, a);
  CHECK(f.size() == 28);
  CHECK(f[0] == 1000);
  CHECK(f[3] == 0.9);
  CHECK(f[4] == 3);
  CHECK(f[13] == 1.0);
  CHECK(f[24] == 1.0);
  CHECK(features::column_names().size() == 28);

  ShapeDescriptors left = s;
  left.side_flag = 1.0;
  const auto g = features::assemble(left, c, a);
  for (int i = 0; i < 28; ++i) CHECK((f[i] != g[i]) == (i == 7));

  const std::array<double, 10> empty{};
  CHECK(features::assemble(s, empty, a).size() == 28);

  ShapeDescriptors bad = s;
  bad.volume = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(features::assemble(bad, c, a), Error);
}

TEST_CASE("feature CSV round trip") {
  features::FeatureRow r;
  r.kidney_id = "p001_left";
  r.side = Side::left;
  r.label = 1;
  for (int i = 0; i < 28; ++i) r.values[i] = 0.1 * i + 1.0 / 3.0;
  const auto back = features::from_csv(features::to_csv({r, r}));
  REQUIRE(back.size() == 2);
  CHECK(back[0].kidney_id == r.kidney_id);
  CHECK(back[0].side == r.side);
  CHECK(back[0].label == 1);
  CHECK(back[0].values == r.values);
}

TEST_CASE("lattice hull of a cube and its planes") {
  std::vector<geom::Point3i> pts;
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) pts.push_back({x, y, z});
  const auto hull = geom::lattice_hull(pts);
  // boundary points may be kept; the corners must be there and the
  // triangulation closed (F = 2V - 4)
  for (std::int64_t cz : {0, 3})
    for (std::int64_t cy : {0, 3})
      for (std::int64_t cx : {0, 3})
        CHECK(std::find(hull.points.begin(), hull.points.end(), geom::Point3i{cx, cy, cz}) != hull.points.end());
  CHECK(hull.faces.size() == 2 * hull.points.size() - 4);
  for (const auto& pl : hull.planes())
    for (const auto& p : pts) CHECK(pl.n[0] * p[0] + pl.n[1] * p[1] + pl.n[2] * p[2] <= pl.d);

  std::vector<geom::Point3i> flat{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  CHECK_THROWS_AS(geom::lattice_hull(flat), Error);
}

}
