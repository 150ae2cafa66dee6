#include "rcd/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include "rcd/error.hpp"
#include "rcd/io_util.hpp"
#include "rcd/kernels.hpp"
#include "rcd/volio.hpp"

namespace rcd::sampler {

const char* to_string(SampleKind k) { return k == SampleKind::tile2d ? "tile2d" : "block3d"; }
const char* to_string(Scheme s) { return s == Scheme::centralised ? "centralised" : "sliding"; }
const char* to_string(SampleLabel l) {
  switch (l) {
    case SampleLabel::cancerous: return "cancerous";
    case SampleLabel::normal_kidney: return "normal_kidney";
    case SampleLabel::none: return "none";
  }
  return "none";
}

SampleKind kind_from_string(const std::string& s) {
  if (s == "tile2d") return SampleKind::tile2d;
  if (s == "block3d") return SampleKind::block3d;
  throw config_error("unknown sample kind '" + s + "'");
}
Scheme scheme_from_string(const std::string& s) {
  if (s == "centralised") return Scheme::centralised;
  if (s == "sliding") return Scheme::sliding;
  throw config_error("unknown sampling scheme '" + s + "'");
}
SampleLabel label_from_string(const std::string& s) {
  if (s == "cancerous") return SampleLabel::cancerous;
  if (s == "normal_kidney") return SampleLabel::normal_kidney;
  if (s == "none") return SampleLabel::none;
  throw data_error("unknown sample label '" + s + "'");
}

int depth_of(SampleKind k) { return k == SampleKind::tile2d ? 1 : kBlockDepth; }

namespace {

int nearest_index(const GridGeometry& g, int axis, double mm) {
  return static_cast<int>(std::floor((mm - g.origin[axis]) / g.spacing[axis] + 0.5));
}

int steps_of(double mm, double spacing) {
  return std::max(1, static_cast<int>(std::lround(mm / spacing)));
}

// Footprint clipped to the grid; empty when disjoint.
struct Box {
  Index3 lo{}, hi{};  // [lo, hi)
  bool empty() const { return lo[0] >= hi[0] || lo[1] >= hi[1] || lo[2] >= hi[2]; }
};

Box clipped(const GridGeometry& g, const Footprint& f) {
  Box b;
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = std::max(0, f.lo[a]);
    b.hi[a] = std::min(g.dims[a], f.lo[a] + f.size[a]);
  }
  return b;
}

std::vector<int> axial_positions(int z_lo, int z_hi, SampleKind kind, double spacing_z,
                                 const SamplingRules& rules) {
  std::vector<int> zs;
  const int extent = z_hi - z_lo + 1;
  if (kind == SampleKind::tile2d) {
    for (int z = z_lo; z <= z_hi; z += steps_of(rules.tile_step_mm, spacing_z)) zs.push_back(z);
  } else if (extent < kBlockDepth) {
    zs.push_back(z_lo + (extent - 1) / 2);
  } else {
    for (int z = z_lo; z <= z_hi; z += steps_of(rules.block_step_mm, spacing_z)) zs.push_back(z);
  }
  return zs;
}

void check_id(const std::string& id) {
  if (id.find_first_of(",\n\"") != std::string::npos)
    throw data_error("identifier '" + id + "' contains a CSV delimiter");
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw data_error("bad number '" + s + "'");
  }
  if (used != s.size()) throw data_error("bad number '" + s + "'");
  return v;
}

}  // namespace

void SamplingRules::validate() const {
  if (!(tile_step_mm > 0) || !(block_step_mm > 0) || !(sliding_grid_mm > 0))
    throw config_error("sample steps and grid spacing must be positive");
  if (sliding_cap < 0) throw config_error("sliding cap must be non-negative");
  if (!(cancer_radius_mm >= 0) || !(kidney_radius_mm >= 0))
    throw config_error("label radii must be non-negative");
}

Footprint footprint(const GridGeometry& geom, const SampleSpec& s) {
  Footprint f;
  for (int a = 0; a < 2; ++a) {
    f.lo[a] = nearest_index(geom, a, s.center[a]) - kInPlaneVoxels / 2;
    f.size[a] = kInPlaneVoxels;
  }
  const int depth = depth_of(s.kind);
  f.lo[2] = nearest_index(geom, 2, s.center[2]) - depth / 2;
  f.size[2] = depth;
  return f;
}

PreprocessedScan preprocess(const VolumeGrid& volume, const LabelGrid& labels,
                            const PreprocessOptions& opts) {
  if (!(volume.geom == labels.geom)) throw data_error("preprocess: volume and labels differ in geometry");
  if (std::none_of(labels.labels.begin(), labels.labels.end(), [](auto v) { return v != 0; }))
    throw data_error("preprocess: empty kidney mask");
  const Vec3 iso{opts.spacing_mm, opts.spacing_mm, opts.spacing_mm};
  PreprocessedScan out;
  out.labels = volio::resample(labels, iso, volio::Interp::nearest);
  out.volume = volio::clip_normalize(volio::resample(volume, iso, volio::Interp::trilinear),
                                     opts.clip_low, opts.clip_high, opts.divisor);
  out.region = volio::dilate(volio::binarize(out.labels), opts.dilation_mm);
  for (std::size_t i = 0; i < out.volume.values.size(); ++i)
    if (!out.region.bits[i]) out.volume.values[i] = 0.0f;
  return out;
}

std::vector<SampleSpec> centralised_samples(const GridGeometry& geom, const KidneyComponent& kidney,
                                            SampleKind kind, const std::string& scan_id,
                                            const std::string& kidney_id,
                                            const SamplingRules& rules) {
  rules.validate();
  std::vector<SampleSpec> out;
  for (int z : axial_positions(kidney.bbox_lo[2], kidney.bbox_hi[2], kind, geom.spacing[2], rules)) {
    SampleSpec s;
    s.scan_id = scan_id;
    s.kidney_id = kidney_id;
    s.kind = kind;
    s.scheme = Scheme::centralised;
    s.center = {kidney.centroid[0], kidney.centroid[1], geom.origin[2] + z * geom.spacing[2]};
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SampleSpec> filter_containing_kidney(const LabelGrid& labels,
                                                 std::vector<SampleSpec> samples) {
  const auto& g = labels.geom;
  std::erase_if(samples, [&](const SampleSpec& s) {
    const Box b = clipped(g, footprint(g, s));
    if (b.empty()) return true;
    for (int z = b.lo[2]; z < b.hi[2]; ++z)
      for (int y = b.lo[1]; y < b.hi[1]; ++y)
        for (int x = b.lo[0]; x < b.hi[0]; ++x)
          if (labels.at(x, y, z) != 0) return false;
    return true;
  });
  return samples;
}

double inscribed_radius(const SampleSpec& s, const LabelGrid& labels, Tissue tissue) {
  const auto& g = labels.geom;
  const Box b = clipped(g, footprint(g, s));
  if (b.empty()) return 0.0;
  const auto code = static_cast<std::uint8_t>(tissue);
  double best = 0.0;
  std::vector<std::uint8_t> bg;
  std::vector<double> d2;
  for (int z = b.lo[2]; z < b.hi[2]; ++z) {
    int x0 = b.hi[0], x1 = -1, y0 = b.hi[1], y1 = -1;
    for (int y = b.lo[1]; y < b.hi[1]; ++y)
      for (int x = b.lo[0]; x < b.hi[0]; ++x)
        if (labels.at(x, y, z) == code) {
          x0 = std::min(x0, x), x1 = std::max(x1, x);
          y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
    if (x1 < 0) continue;
    // Tissue bounding box plus a one-voxel background ring. Every background
    // voxel outside it is at least as far as its clamp onto the ring.
    const int nx = x1 - x0 + 3, ny = y1 - y0 + 3;
    bg.assign(static_cast<std::size_t>(nx) * ny, 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (labels.at(x, y, z) == code) bg[static_cast<std::size_t>(y - y0 + 1) * nx + (x - x0 + 1)] = 0;
    d2.assign(bg.size(), 0.0);
    kernels::squared_edt_2d(nx, ny, g.spacing[0], g.spacing[1], bg, d2);
    best = std::max(best, *std::max_element(d2.begin(), d2.end()));
  }
  if (best == 0.0) return 0.0;
  // a voxelised disc of radius r is r + half a voxel from its nearest outside centre
  return std::max(0.0, std::sqrt(best) - 0.5 * std::min(g.spacing[0], g.spacing[1]));
}

SampleLabel label_sample(const SampleSpec& s, const LabelGrid& labels, const SamplingRules& rules) {
  if (inscribed_radius(s, labels, Tissue::tumour) > rules.cancer_radius_mm) return SampleLabel::cancerous;
  if (inscribed_radius(s, labels, Tissue::kidney) > rules.kidney_radius_mm) return SampleLabel::normal_kidney;
  return SampleLabel::none;
}

void sort_samples(std::vector<SampleSpec>& samples) {
  auto key = [](const SampleSpec& s) {
    return std::tie(s.scan_id, s.kidney_id, s.kind, s.scheme, s.center[2], s.center[1], s.center[0],
                    s.label);
  };
  std::stable_sort(samples.begin(), samples.end(),
                   [&](const SampleSpec& a, const SampleSpec& b) { return key(a) < key(b); });
}

std::vector<SampleSpec> cap_per_class(std::vector<SampleSpec> samples, int cap, std::uint64_t seed) {
  if (cap < 0) throw config_error("sample cap must be non-negative");
  sort_samples(samples);
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i)
    groups[{samples[i].kidney_id, static_cast<int>(samples[i].label)}].push_back(i);
  std::vector<std::uint8_t> keep(samples.size(), 1);
  for (auto& [key, idx] : groups) {
    if (static_cast<int>(idx.size()) <= cap) continue;
    const std::string tag = key.first + "/" + to_string(static_cast<SampleLabel>(key.second));
    neuro::Rng rng(seed ^ io::fnv1a(tag));
    rng.shuffle(idx);
    for (std::size_t j = static_cast<std::size_t>(cap); j < idx.size(); ++j) keep[idx[j]] = 0;
  }
  std::vector<SampleSpec> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (keep[i]) out.push_back(std::move(samples[i]));
  return out;
}

std::vector<SampleSpec> sliding_samples(const LabelGrid& labels,
                                        const std::vector<KidneyComponent>& kidneys,
                                        const std::vector<std::string>& kidney_ids, SampleKind kind,
                                        const std::string& scan_id, std::uint64_t seed,
                                        const SamplingRules& rules) {
  rules.validate();
  if (kidneys.size() != kidney_ids.size()) throw data_error("sliding_samples: one id per kidney");
  const auto& g = labels.geom;
  std::array<std::vector<double>, 2> axis;
  for (int a = 0; a < 2; ++a) {
    const double extent = g.dims[a] * g.spacing[a];
    const double lower = g.origin[a] - 0.5 * g.spacing[a];
    const int n = std::max(1, static_cast<int>(std::floor(extent / rules.sliding_grid_mm + 1e-9)));
    for (int i = 0; i < n; ++i) axis[a].push_back(lower + rules.sliding_grid_mm * (i + 0.5));
  }
  const double midline = g.origin[0] + 0.5 * (g.dims[0] - 1) * g.spacing[0];

  std::vector<SampleSpec> out;
  for (std::size_t k = 0; k < kidneys.size(); ++k) {
    const auto& kid = kidneys[k];
    for (int z : axial_positions(kid.bbox_lo[2], kid.bbox_hi[2], kind, g.spacing[2], rules)) {
      for (double y : axis[1]) {
        for (double x : axis[0]) {
          if (kidneys.size() > 1 && ((x > midline) != (kid.side == Side::left))) continue;
          SampleSpec s;
          s.scan_id = scan_id;
          s.kidney_id = kidney_ids[k];
          s.kind = kind;
          s.scheme = Scheme::sliding;
          s.center = {x, y, g.origin[2] + z * g.spacing[2]};
          s.label = label_sample(s, labels, rules);
          out.push_back(std::move(s));
        }
      }
    }
  }
  return cap_per_class(std::move(out), rules.sliding_cap, seed);
}

std::string manifest_csv(const std::vector<SampleSpec>& samples) {
  std::string out = "scan_id,kidney_id,kind,scheme,cx,cy,cz,label\n";
  for (const auto& s : samples) {
    check_id(s.scan_id);
    check_id(s.kidney_id);
    out += s.scan_id + "," + s.kidney_id + "," + to_string(s.kind) + "," + to_string(s.scheme);
    for (double c : s.center) out += "," + io::fmt_double(c);
    out += std::string(",") + to_string(s.label) + "\n";
  }
  return out;
}

std::vector<SampleSpec> manifest_from_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line != "scan_id,kidney_id,kind,scheme,cx,cy,cz,label")
    throw data_error("sample manifest: unexpected header");
  std::vector<SampleSpec> out;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != 8) throw data_error("sample manifest: expected 8 columns");
    SampleSpec s;
    s.scan_id = cells[0];
    s.kidney_id = cells[1];
    s.kind = kind_from_string(cells[2]);
    s.scheme = scheme_from_string(cells[3]);
    for (int a = 0; a < 3; ++a) s.center[a] = parse_double(cells[4 + a]);
    s.label = label_from_string(cells[7]);
    out.push_back(std::move(s));
  }
  return out;
}

// ---- scoring ---------------------------------------------------------------

std::vector<double> summary_features(const PreprocessedScan& scan, const SampleSpec& s) {
  const auto& g = scan.volume.geom;
  const Box b = clipped(g, footprint(g, s));
  std::vector<double> v;
  if (!b.empty())
    for (int z = b.lo[2]; z < b.hi[2]; ++z)
      for (int y = b.lo[1]; y < b.hi[1]; ++y)
        for (int x = b.lo[0]; x < b.hi[0]; ++x) {
          const auto i = g.index(x, y, z);
          if (scan.region.bits[i]) v.push_back(scan.volume.values[i]);
        }
  std::vector<double> f(kSummaryWidth, 0.0);
  if (v.empty()) return f;
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  f[0] = mean;
  f[1] = std::sqrt(var / n);
  std::sort(v.begin(), v.end());
  for (int d = 1; d <= 9; ++d) {
    const double pos = d / 10.0 * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    f[1 + d] = v[lo] + (pos - lo) * (v[hi] - v[lo]);
  }
  return f;
}

ReferenceScorer::ReferenceScorer()
    : hidden("scorer.hidden", kSummaryWidth, kHidden),
      out("scorer.out", kHidden, 3),
      shift("scorer.shift", 1, kSummaryWidth),
      scale("scorer.scale", 1, kSummaryWidth) {
  scale.value.setOnes();
}

std::vector<neuro::Tensor*> ReferenceScorer::tensors() {
  return {&hidden.weight, &hidden.bias, &out.weight, &out.bias, &shift, &scale};
}

Probabilities ReferenceScorer::score(const std::vector<double>& features) const {
  if (static_cast<int>(features.size()) != input_width())
    throw data_error("scorer input width does not match the feature extractor");
  neuro::Matrix x(1, kSummaryWidth);
  for (int j = 0; j < kSummaryWidth; ++j)
    x(0, j) = (features[j] - shift.value(0, j)) / scale.value(0, j);
  const neuro::RowVector p = neuro::softmax(out.forward(neuro::relu(hidden.forward(x))).row(0));
  return {p(0), p(1), p(2)};
}

void ReferenceScorer::train(const std::vector<std::vector<double>>& pre_x,
                            const std::vector<SampleLabel>& pre_y,
                            const std::vector<std::vector<double>>& fine_x,
                            const std::vector<SampleLabel>& fine_y, const ScorerTraining& opts) {
  if (pre_x.size() != pre_y.size() || fine_x.size() != fine_y.size())
    throw data_error("scorer training: one label per row");
  if (pre_x.empty() && fine_x.empty()) throw data_error("scorer training: no samples");
  if (opts.batch_size <= 0) throw config_error("scorer batch size must be positive");

  // standardise with statistics over every row seen in training
  const double n = static_cast<double>(pre_x.size() + fine_x.size());
  neuro::RowVector mean = neuro::RowVector::Zero(kSummaryWidth);
  neuro::RowVector sq = neuro::RowVector::Zero(kSummaryWidth);
  for (const auto* set : {&pre_x, &fine_x})
    for (const auto& r : *set) {
      if (static_cast<int>(r.size()) != kSummaryWidth)
        throw data_error("scorer input width does not match the feature extractor");
      for (int j = 0; j < kSummaryWidth; ++j) mean(j) += r[j];
    }
  mean /= n;
  for (const auto* set : {&pre_x, &fine_x})
    for (const auto& r : *set)
      for (int j = 0; j < kSummaryWidth; ++j) sq(j) += (r[j] - mean(j)) * (r[j] - mean(j));
  for (int j = 0; j < kSummaryWidth; ++j) {
    const double sd = std::sqrt(sq(j) / n);
    shift.value(0, j) = mean(j);
    scale.value(0, j) = sd > 1e-12 ? sd : 1.0;
  }

  neuro::Rng rng(opts.seed);
  hidden.init(rng);
  out.init(rng);
  std::vector<neuro::Tensor*> params{&hidden.weight, &hidden.bias, &out.weight, &out.bias};

  auto run = [&](const std::vector<std::vector<double>>& xs, const std::vector<SampleLabel>& ys,
                 int epochs, double lr) {
    if (xs.empty() || epochs <= 0) return;
    neuro::Adam adam(params);
    std::vector<std::size_t> order(xs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int e = 0; e < epochs; ++e) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
        const std::size_t end = std::min(order.size(), start + opts.batch_size);
        const auto b = static_cast<Eigen::Index>(end - start);
        neuro::Matrix x(b, kSummaryWidth);
        for (Eigen::Index r = 0; r < b; ++r)
          for (int j = 0; j < kSummaryWidth; ++j)
            x(r, j) = (xs[order[start + r]][j] - shift.value(0, j)) / scale.value(0, j);
        adam.zero_grad();
        const neuro::Matrix z = hidden.forward(x);
        const neuro::Matrix h = neuro::relu(z);
        const neuro::Matrix logits = out.forward(h);
        neuro::Matrix dlogits(b, 3);
        for (Eigen::Index r = 0; r < b; ++r)
          dlogits.row(r) =
              neuro::softmax_xent(logits.row(r), static_cast<int>(ys[order[start + r]])).grad /
              static_cast<double>(b);
        hidden.backward(x, neuro::relu_backward(z, out.backward(h, dlogits)));
        adam.step(lr);
      }
    }
  };
  run(pre_x, pre_y, opts.pretrain_epochs, opts.pretrain_lr);
  run(fine_x, fine_y, opts.finetune_epochs, opts.finetune_lr);
}

std::vector<SampleScore> score_samples(const SampleScorer& scorer, const PreprocessedScan& scan,
                                       const std::vector<SampleSpec>& samples) {
  if (scorer.input_width() != kSummaryWidth)
    throw data_error("scorer input width does not match the feature extractor");
  std::vector<SampleScore> out(samples.size());
  const long n = static_cast<long>(samples.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < n; ++i) {
    out[i].sample = static_cast<std::size_t>(i);
    out[i].p = scorer.score(summary_features(scan, samples[i]));
  }
  return out;
}

std::string scores_csv(const std::vector<SampleSpec>& samples, const std::vector<SampleScore>& scores) {
  std::string out = "scan_id,kidney_id,kind,scheme,cx,cy,cz,p_cancerous,p_normal_kidney,p_none\n";
  for (const auto& sc : scores) {
    if (sc.sample >= samples.size()) throw data_error("score refers to a missing sample");
    const auto& s = samples[sc.sample];
    out += s.scan_id + "," + s.kidney_id + "," + to_string(s.kind) + "," + to_string(s.scheme);
    for (double c : s.center) out += "," + io::fmt_double(c);
    for (double p : sc.p) out += "," + io::fmt_double(p);
    out += "\n";
  }
  return out;
}

}  // namespace rcd::sampler
