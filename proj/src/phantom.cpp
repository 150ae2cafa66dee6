#include "rcd/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rcd/error.hpp"
#include "rcd/neuro.hpp"

namespace rcd::phantom {

const char* to_string(LesionKind k) {
  switch (k) {
    case LesionKind::none: return "none";
    case LesionKind::exophytic: return "exophytic";
    case LesionKind::endophytic: return "endophytic";
    case LesionKind::cyst: return "cyst";
  }
  return "none";
}

LesionKind lesion_from_string(const std::string& s) {
  if (s == "none") return LesionKind::none;
  if (s == "exophytic") return LesionKind::exophytic;
  if (s == "endophytic") return LesionKind::endophytic;
  if (s == "cyst") return LesionKind::cyst;
  throw config_error("unknown lesion kind '" + s + "'");
}

std::string kidney_id(const std::string& patient_id, Side side) {
  return patient_id + "_" + to_string(side);
}

void PhantomSpec::validate() const {
  for (double s : spacing)
    if (!(s > 0.0)) throw config_error("phantom spacing must be positive");
  if (kidneys.empty() || kidneys.size() > 2) throw config_error("phantom needs one or two kidneys");
  if (kidneys.size() == 2 && kidneys[0].side == kidneys[1].side)
    throw config_error("phantom kidneys must be on different sides");
  if (!(noise_sigma >= 0.0)) throw config_error("noise sigma must be non-negative");
  if (!(midline_gap_mm >= 0.0) || !(margin_mm >= 0.0)) throw config_error("phantom gaps must be non-negative");
  for (const auto& k : kidneys) {
    for (double a : k.semi_axes)
      if (!(a > 0.0)) throw config_error("kidney semi-axes must be positive");
    const auto& l = k.lesion;
    if (l.kind == LesionKind::none) continue;
    const double smallest = *std::min_element(k.semi_axes.begin(), k.semi_axes.end());
    if (!(l.radius_mm > 0.0) || !(l.radius_mm < smallest))
      throw config_error("lesion radius must lie in (0, smallest semi-axis)");
    if (!(l.depth >= 0.0 && l.depth < 1.0)) throw config_error("lesion depth must lie in [0, 1)");
    if (std::hypot(l.direction[0], l.direction[1], l.direction[2]) == 0.0)
      throw config_error("lesion direction must be non-zero");
  }
}

namespace {

struct Placed {
  Vec3 centre{};
  Vec3 axes{};
  double hu = 0.0;
  LesionKind kind = LesionKind::none;
  Vec3 lesion_centre{};
  double r2 = 0.0;
  double lesion_hu = 0.0;
};

// Distance from the centre to the surface along `d`.
double ray_to_surface(const Vec3& axes, const Vec3& d) {
  double q = 0.0;
  for (int a = 0; a < 3; ++a) q += d[a] * d[a] / (axes[a] * axes[a]);
  return 1.0 / std::sqrt(q);
}

Placed place(const KidneySpec& k, double gap) {
  Placed p;
  p.axes = k.semi_axes;
  const double sx = k.semi_axes[0];
  p.centre = {k.side == Side::left ? gap / 2 + sx : -(gap / 2 + sx), 0.0, 0.0};
  p.hu = k.hu;
  p.kind = k.lesion.kind;
  if (p.kind == LesionKind::none) return p;
  Vec3 d = k.lesion.direction;
  const double n = std::hypot(d[0], d[1], d[2]);
  for (double& v : d) v /= n;
  const double reach = ray_to_surface(k.semi_axes, d);
  const double t = p.kind == LesionKind::exophytic ? reach : k.lesion.depth * std::max(0.0, reach - k.lesion.radius_mm);
  for (int a = 0; a < 3; ++a) p.lesion_centre[a] = p.centre[a] + t * d[a];
  p.r2 = k.lesion.radius_mm * k.lesion.radius_mm;
  p.lesion_hu = k.lesion.hu;
  return p;
}

}  // namespace

Phantom generate(const PhantomSpec& spec) {
  spec.validate();
  std::vector<Placed> placed;
  for (const auto& k : spec.kidneys) placed.push_back(place(k, spec.midline_gap_mm));

  // symmetric lattice around the origin, so the scan midline is x = 0
  Vec3 half{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const auto& p = placed[i];
    const double r = spec.kidneys[i].lesion.radius_mm;
    for (int a = 0; a < 3; ++a) {
      half[a] = std::max(half[a], std::abs(p.centre[a]) + p.axes[a]);
      if (p.kind == LesionKind::exophytic) half[a] = std::max(half[a], std::abs(p.lesion_centre[a]) + r);
    }
  }
  Phantom out;
  auto& g = out.volume.geom;
  for (int a = 0; a < 3; ++a) {
    const double h = half[a] + spec.margin_mm;
    g.dims[a] = static_cast<int>(std::ceil(2.0 * h / spec.spacing[a] - 1e-9));
    g.spacing[a] = spec.spacing[a];
    g.origin[a] = -0.5 * g.dims[a] * spec.spacing[a] + 0.5 * spec.spacing[a];
  }
  out.labels.geom = g;
  out.volume.values.assign(g.voxel_count(), 0.0f);
  out.labels.labels.assign(g.voxel_count(), 0);

  std::vector<std::size_t> lesion_voxels(placed.size(), 0);
  neuro::Rng rng(spec.seed);
  std::size_t i = 0;
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x, ++i) {
        const Vec3 pos = g.position(x, y, z);
        double hu = spec.background_hu;
        std::uint8_t label = 0;
        for (std::size_t k = 0; k < placed.size(); ++k) {
          const auto& p = placed[k];
          double e = 0.0, s2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double u = (pos[a] - p.centre[a]) / p.axes[a];
            e += u * u;
            const double v = pos[a] - p.lesion_centre[a];
            s2 += v * v;
          }
          const bool in_kidney = e <= 1.0;
          const bool in_lesion = p.kind != LesionKind::none && s2 <= p.r2 &&
                                 (p.kind == LesionKind::exophytic || in_kidney);
          if (in_lesion) {
            label = static_cast<std::uint8_t>(p.kind == LesionKind::cyst ? Tissue::cyst : Tissue::tumour);
            hu = p.lesion_hu;
            ++lesion_voxels[k];
            break;
          }
          if (in_kidney) {
            label = static_cast<std::uint8_t>(Tissue::kidney);
            hu = p.hu;
            break;
          }
        }
        out.labels.labels[i] = label;
        out.volume.values[i] = static_cast<float>(hu + spec.noise_sigma * rng.normal());
      }

  for (std::size_t k = 0; k < placed.size(); ++k) {
    const auto& ks = spec.kidneys[k];
    LesionTruth t;
    t.kidney_id = kidney_id(spec.patient_id, ks.side);
    t.side = ks.side;
    t.kind = ks.lesion.kind;
    if (t.kind != LesionKind::none) {
      if (lesion_voxels[k] == 0) throw data_error("lesion of " + t.kidney_id + " covers no voxel");
      t.volume_mm3 = static_cast<double>(lesion_voxels[k]) * g.voxel_volume();
      t.max_diameter_mm = 2.0 * ks.lesion.radius_mm;
    }
    out.truth.push_back(t);
  }
  return out;
}

void CohortSpec::validate() const {
  if (healthy < 0 || exophytic < 0 || endophytic < 0 || cysts < 0)
    throw config_error("cohort counts must be non-negative");
  if (kidney_count() == 0) throw config_error("cohort is empty");
  if (!(axis_jitter >= 0.0 && axis_jitter < 1.0)) throw config_error("axis jitter must lie in [0, 1)");
  const double smallest = *std::min_element(semi_axes.begin(), semi_axes.end()) * (1.0 - axis_jitter);
  for (auto [lo, hi] : {std::pair{exophytic_radius_min, exophytic_radius_max},
                        std::pair{endophytic_radius_min, endophytic_radius_max}}) {
    if (!(lo > 0.0) || !(hi >= lo)) throw config_error("lesion radius range must be positive and ordered");
    if (!(hi < smallest)) throw config_error("lesion radius range must stay below the smallest semi-axis");
  }
}

std::vector<PhantomSpec> make_cohort(const CohortSpec& c) {
  c.validate();
  std::vector<LesionKind> kinds;
  kinds.insert(kinds.end(), c.healthy, LesionKind::none);
  kinds.insert(kinds.end(), c.exophytic, LesionKind::exophytic);
  kinds.insert(kinds.end(), c.endophytic, LesionKind::endophytic);
  kinds.insert(kinds.end(), c.cysts, LesionKind::cyst);
  neuro::Rng rng(c.seed);
  rng.shuffle(kinds);

  std::vector<PhantomSpec> out;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (i % 2 == 0) {
      PhantomSpec p;
      char id[32];
      std::snprintf(id, sizeof id, "p%03zu", i / 2);
      p.patient_id = id;
      p.spacing = c.spacing;
      p.background_hu = c.background_hu;
      p.noise_sigma = c.noise_sigma;
      p.seed = c.seed * 1000003ULL + i / 2 + 1;
      out.push_back(std::move(p));
    }
    KidneySpec k;
    k.side = i % 2 == 0 ? Side::right : Side::left;
    for (int a = 0; a < 3; ++a) k.semi_axes[a] = c.semi_axes[a] * (1.0 + c.axis_jitter * rng.uniform(-1.0, 1.0));
    k.hu = c.kidney_hu;
    k.lesion.kind = kinds[i];
    // draw every field for every kidney so the stream does not depend on kinds
    const double u = rng.uniform();
    const Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
    const double depth = rng.uniform(0.0, 0.6);
    k.lesion.direction = dir;
    k.lesion.depth = depth;
    switch (kinds[i]) {
      case LesionKind::none: break;
      case LesionKind::exophytic:
        k.lesion.radius_mm = c.exophytic_radius_min + u * (c.exophytic_radius_max - c.exophytic_radius_min);
        k.lesion.hu = c.tumour_hu;
        break;
      case LesionKind::endophytic:
      case LesionKind::cyst:
        k.lesion.radius_mm = c.endophytic_radius_min + u * (c.endophytic_radius_max - c.endophytic_radius_min);
        k.lesion.hu = kinds[i] == LesionKind::cyst ? c.cyst_hu : c.tumour_hu;
        break;
    }
    out.back().kidneys.push_back(k);
  }
  return out;
}

}  // namespace rcd::phantom
