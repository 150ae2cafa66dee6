#include <doctest.h>

#include <cmath>
#include <fstream>

#include "rcd/error.hpp"
#include "rcd/io_util.hpp"
#include "rcd/volio.hpp"
#include "support.hpp"

using namespace rcd;
namespace fs = std::filesystem;

namespace {

LabelGrid labels_with(const GridGeometry& g) {
  LabelGrid l;
  l.geom = g;
  l.labels.assign(g.voxel_count(), 0);
  return l;
}

void paint_ellipsoid(LabelGrid& l, const Vec3& c, const Vec3& axes, std::uint8_t code) {
  const auto& g = l.geom;
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        const Vec3 p = g.position(x, y, z);
        double e = 0;
        for (int a = 0; a < 3; ++a) e += (p[a] - c[a]) * (p[a] - c[a]) / (axes[a] * axes[a]);
        if (e <= 1.0) l.labels[g.index(x, y, z)] = code;
      }
}

void paint_box(LabelGrid& l, const Index3& lo, const Index3& hi, std::uint8_t code) {
  for (int z = lo[2]; z < hi[2]; ++z)
    for (int y = lo[1]; y < hi[1]; ++y)
      for (int x = lo[0]; x < hi[0]; ++x) l.labels[l.geom.index(x, y, z)] = code;
}

}  // namespace

TEST_SUITE("volio") {

TEST_CASE("zero grid round-trips bit-exactly") {
  test::TempDir dir("volio");
  VolumeGrid v;
  v.geom = test::centred_geometry({4, 4, 4}, {0.7, 0.8, 2.5});
  v.values.assign(64, 0.0f);
  volio::save_grid(dir.path() / "zeros", v);
  const auto back = volio::load_volume(dir.path() / "zeros.json");
  CHECK(back.geom == v.geom);
  CHECK(back.values == v.values);
  CHECK_FALSE(back.normalized);

  const auto any = volio::load_grid(dir.path() / "zeros.raw");
  CHECK(std::holds_alternative<VolumeGrid>(any));
}

TEST_CASE("labels and masks keep their dtype") {
  test::TempDir dir("volio");
  LabelGrid l = labels_with(test::centred_geometry({5, 3, 2}, {1, 1, 1}));
  for (std::size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = static_cast<std::uint8_t>(i % 4);
  volio::save_grid(dir.path() / "lab", l);
  CHECK(volio::load_labels(dir.path() / "lab").labels == l.labels);
  CHECK(std::holds_alternative<LabelGrid>(volio::load_grid(dir.path() / "lab")));

  const MaskGrid m = volio::binarize(l);
  volio::save_grid(dir.path() / "mask", m);
  CHECK(volio::load_mask(dir.path() / "mask").bits == m.bits);
  CHECK_THROWS_AS(volio::load_volume(dir.path() / "mask"), Error);
}

TEST_CASE("short payload is a data error") {
  test::TempDir dir("volio");
  VolumeGrid v;
  v.geom = test::centred_geometry({10, 10, 10}, {1, 1, 1});
  v.values.assign(1000, 1.0f);
  volio::save_grid(dir.path() / "g", v);
  fs::resize_file(dir.path() / "g.raw", 999 * sizeof(float));
  try {
    volio::load_volume(dir.path() / "g");
    FAIL("expected a payload error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find("payload") != std::string::npos);
  }
}

TEST_CASE("constant volume stays constant under resampling") {
  VolumeGrid v;
  v.geom = test::centred_geometry({9, 7, 5}, {1.3, 0.9, 2.0});
  v.values.assign(v.geom.voxel_count(), 42.5f);
  for (const Vec3 t : {Vec3{1, 1, 1}, Vec3{0.5, 2.1, 3.3}}) {
    const auto r = volio::resample(v, t, volio::Interp::trilinear);
    for (float x : r.values) CHECK(x == doctest::Approx(42.5).epsilon(1e-6));
  }
}

TEST_CASE("down then up reproduces a linear ramp in the interior") {
  VolumeGrid v;
  v.geom = test::centred_geometry({24, 24, 24}, {1, 1, 1});
  v.values.resize(v.geom.voxel_count());
  auto ramp = [](const Vec3& p) { return 2.0 * p[0] + 3.0 * p[1] - p[2] + 5.0; };
  for (int z = 0; z < 24; ++z)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) v.values[v.geom.index(x, y, z)] = static_cast<float>(ramp(v.geom.position(x, y, z)));
  const auto down = volio::resample(v, {2, 2, 2}, volio::Interp::trilinear);
  const auto up = volio::resample(down, {1, 1, 1}, volio::Interp::trilinear);
  REQUIRE(up.geom == v.geom);
  double worst = 0;
  for (int z = 2; z < 22; ++z)
    for (int y = 2; y < 22; ++y)
      for (int x = 2; x < 22; ++x)
        worst = std::max(worst, std::abs(double(up.at(x, y, z)) - ramp(v.geom.position(x, y, z))));
  // float storage: the bound is relative to values of order 100
  CHECK(worst < 1e-4);
}

TEST_CASE("2 mm sphere mask resampled to 1 mm keeps its volume") {
  const MaskGrid m = test::ball(20.0, 2.0);
  const double before = m.count() * m.geom.voxel_volume();
  const auto r = volio::resample(m, {1, 1, 1}, volio::Interp::nearest);
  const double after = r.count() * r.geom.voxel_volume();
  CHECK(std::abs(after - before) / before < 0.02);
  for (int a = 0; a < 3; ++a) CHECK(std::abs(r.geom.extent()[a] - m.geom.extent()[a]) <= 1.0 + 1e-9);
}

TEST_CASE("resampled extent stays within one target voxel") {
  neuro::Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    GridGeometry g = test::centred_geometry({int(rng.below(30)) + 1, int(rng.below(30)) + 1, int(rng.below(30)) + 1},
                                            {rng.uniform(0.3, 3), rng.uniform(0.3, 3), rng.uniform(0.3, 3)});
    const Vec3 target{rng.uniform(0.5, 4), rng.uniform(0.5, 4), rng.uniform(0.5, 4)};
    const auto r = volio::resampled_geometry(g, target);
    for (int a = 0; a < 3; ++a) {
      CHECK(r.extent()[a] >= g.extent()[a] - 1e-9);
      CHECK(r.extent()[a] < g.extent()[a] + target[a] + 1e-9);
    }
  }
}

TEST_CASE("labels refuse trilinear") {
  LabelGrid l = labels_with(test::centred_geometry({3, 3, 3}, {1, 1, 1}));
  CHECK_THROWS_AS(volio::resample(l, {1, 1, 1}, volio::Interp::trilinear), Error);
}

TEST_CASE("clip and normalise") {
  VolumeGrid v;
  v.geom = test::centred_geometry({5, 1, 1}, {1, 1, 1});
  v.values = {250.0f, 0.0f, -350.0f, 120.0f, -200.0f};
  const auto n = volio::clip_normalize(v);
  CHECK(n.normalized);
  CHECK(n.values[0] == 2.0f);
  CHECK(n.values[1] == 0.0f);
  CHECK(n.values[2] == -2.0f);
  CHECK(n.values[3] == doctest::Approx(1.2));
  CHECK(n.values[4] == -2.0f);
  CHECK_THROWS_AS(volio::clip_normalize(n), Error);
}

TEST_CASE("dilating one voxel by 5 mm gives the 515-voxel digital ball") {
  MaskGrid m;
  m.geom = test::centred_geometry({21, 21, 21}, {1, 1, 1});
  m.bits.assign(m.geom.voxel_count(), 0);
  m.bits[m.geom.index(10, 10, 10)] = 1;
  const auto d = volio::dilate(m, 5.0);
  std::size_t brute = 0;
  for (int z = -10; z <= 10; ++z)
    for (int y = -10; y <= 10; ++y)
      for (int x = -10; x <= 10; ++x) brute += x * x + y * y + z * z <= 25;
  CHECK(brute == 515);
  CHECK(d.count() == brute);
  CHECK(volio::dilate(m, 0.0).bits == m.bits);
}

TEST_CASE("dilation is monotone in radius and empty stays empty") {
  neuro::Rng rng(8);
  MaskGrid m;
  m.geom = test::centred_geometry({16, 14, 12}, {1.0, 1.5, 2.0});
  m.bits.assign(m.geom.voxel_count(), 0);
  for (int k = 0; k < 6; ++k) m.bits[rng.below(m.bits.size())] = 1;
  const auto a = volio::dilate(m, 2.5), b = volio::dilate(m, 4.0);
  for (std::size_t i = 0; i < a.bits.size(); ++i) CHECK((!a.bits[i] || b.bits[i]));

  MaskGrid empty = m;
  std::fill(empty.bits.begin(), empty.bits.end(), 0);
  CHECK(volio::dilate(empty, 3.0).count() == 0);
}

TEST_CASE("split_kidneys sides two ellipsoids and drops a speck") {
  LabelGrid l = labels_with(test::centred_geometry({120, 60, 70}, {1, 1, 1}));
  paint_ellipsoid(l, {35, 0, 0}, {14, 11, 22}, 1);
  paint_ellipsoid(l, {-35, 0, 0}, {14, 11, 22}, 1);
  paint_ellipsoid(l, {35, 0, 5}, {5, 5, 5}, 2);  // tumour counts as contour
  paint_box(l, {2, 2, 2}, {12, 12, 7}, 1);        // 500 mm^3 speck
  const auto kids = volio::split_kidneys(l);
  REQUIRE(kids.size() == 2);
  CHECK(kids[0].side == Side::right);
  CHECK(kids[1].side == Side::left);
  CHECK(kids[0].centroid[0] < 0);
  CHECK(kids[1].centroid[0] > 0);
  for (const auto& k : kids) {
    CHECK(k.volume_mm3() > 10000);
    // each component is one 26-connected piece
    CHECK(volio::label_components(k.mask).counts.size() == 2);
  }
}

TEST_CASE("a bridged component across the midline is a horseshoe") {
  LabelGrid l = labels_with(test::centred_geometry({120, 60, 70}, {1, 1, 1}));
  paint_ellipsoid(l, {35, 0, 0}, {14, 11, 22}, 1);
  paint_ellipsoid(l, {-35, 0, 0}, {14, 11, 22}, 1);
  paint_box(l, {20, 27, 32}, {100, 33, 38}, 1);
  CHECK_THROWS_WITH_AS(volio::split_kidneys(l), doctest::Contains("horseshoe"), Error);
}

TEST_CASE("no kidney at all") {
  LabelGrid l = labels_with(test::centred_geometry({10, 10, 10}, {1, 1, 1}));
  CHECK_THROWS_AS(volio::split_kidneys(l), Error);
}

TEST_CASE("two components on one side are ambiguous") {
  LabelGrid l = labels_with(test::centred_geometry({120, 60, 90}, {1, 1, 1}));
  paint_ellipsoid(l, {35, 0, 22}, {10, 10, 12}, 1);
  paint_ellipsoid(l, {35, 0, -22}, {10, 10, 12}, 1);
  CHECK_THROWS_AS(volio::split_kidneys(l), Error);
}

TEST_CASE("26-connectivity joins diagonal neighbours") {
  MaskGrid m;
  m.geom = test::centred_geometry({4, 4, 4}, {1, 1, 1});
  m.bits.assign(64, 0);
  m.bits[m.geom.index(0, 0, 0)] = 1;
  m.bits[m.geom.index(1, 1, 1)] = 1;
  m.bits[m.geom.index(3, 3, 3)] = 1;
  const auto c = volio::label_components(m);
  CHECK(c.counts.size() == 3);
  CHECK(c.counts[1] == 2);
  CHECK(c.counts[2] == 1);
}

}
