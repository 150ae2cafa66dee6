#include "rcd/volio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rcd/error.hpp"
#include "rcd/io_util.hpp"
#include "rcd/kernels.hpp"

namespace rcd {

void GridGeometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0) throw data_error("grid dims must be positive");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw data_error("grid spacing must be positive");
  }
}

std::size_t MaskGrid::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

const char* to_string(Side side) { return side == Side::left ? "left" : "right"; }

}  // namespace rcd

namespace rcd::volio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "grid payloads are little-endian; big-endian hosts need byte swapping");

fs::path stem_of(const fs::path& p) {
  const auto ext = p.extension();
  if (ext == ".json" || ext == ".raw") return p.parent_path() / p.stem();
  return p;
}

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

json geometry_json(const GridGeometry& g) {
  return {{"dims", g.dims}, {"spacing", g.spacing}, {"origin", g.origin}};
}

template <class T>
void write_pair(const fs::path& path, const GridGeometry& g, const char* kind, const char* dtype,
                bool normalized, const std::vector<T>& payload) {
  const fs::path stem = stem_of(path);
  json header = geometry_json(g);
  header["kind"] = kind;
  header["dtype"] = dtype;
  header["normalized"] = normalized;
  std::string bytes(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(T));
  io::write_atomic(with_ext(stem, ".raw"), bytes);
  io::write_atomic(with_ext(stem, ".json"), header.dump(2) + "\n");
}

struct Header {
  GridGeometry geom;
  std::string kind;
  std::string dtype;
  bool normalized = false;
};

Header read_header(const fs::path& stem) {
  const fs::path hp = with_ext(stem, ".json");
  std::ifstream in(hp);
  if (!in) throw data_error("cannot open grid header " + hp.string());
  Header h;
  try {
    const json j = json::parse(in);
    h.geom.dims = j.at("dims").get<Index3>();
    h.geom.spacing = j.at("spacing").get<Vec3>();
    h.geom.origin = j.at("origin").get<Vec3>();
    h.dtype = j.at("dtype").get<std::string>();
    h.kind = j.value("kind", h.dtype == "f32" ? "volume" : "labels");
    h.normalized = j.value("normalized", false);
  } catch (const json::exception& e) {
    throw data_error("malformed grid header " + hp.string() + ": " + e.what());
  }
  h.geom.validate();
  if (h.dtype != "f32" && h.dtype != "u8") throw data_error("unsupported dtype " + h.dtype);
  if ((h.kind == "volume") != (h.dtype == "f32"))
    throw data_error("grid kind " + h.kind + " does not match dtype " + h.dtype);
  return h;
}

template <class T>
std::vector<T> read_payload(const fs::path& stem, std::size_t count) {
  const fs::path rp = with_ext(stem, ".raw");
  std::ifstream in(rp, std::ios::binary);
  if (!in) throw data_error("cannot open grid payload " + rp.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  if (bytes.size() != count * sizeof(T)) {
    std::ostringstream msg;
    msg << "payload length mismatch in " << rp.string() << ": expected " << count
        << " elements, found " << bytes.size() / sizeof(T);
    throw data_error(msg.str());
  }
  std::vector<T> out(count);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

template <class Grid>
Grid nearest_only(const Grid& grid, const std::vector<std::uint8_t>& data, const Vec3& target,
                  Interp mode, const char* what) {
  if (mode != Interp::nearest)
    throw config_error(std::string("trilinear interpolation is not defined for ") + what);
  Grid out;
  out.geom = resampled_geometry(grid.geom, target);
  std::vector<std::uint8_t> values(out.geom.voxel_count());
  kernels::resample_nearest(grid.geom, data, out.geom, values);
  if constexpr (std::is_same_v<Grid, LabelGrid>) {
    out.labels = std::move(values);
  } else {
    out.bits = std::move(values);
  }
  return out;
}

}  // namespace

void save_grid(const fs::path& path, const VolumeGrid& grid) {
  write_pair(path, grid.geom, "volume", "f32", grid.normalized, grid.values);
}
void save_grid(const fs::path& path, const LabelGrid& grid) {
  write_pair(path, grid.geom, "labels", "u8", false, grid.labels);
}
void save_grid(const fs::path& path, const MaskGrid& grid) {
  write_pair(path, grid.geom, "mask", "u8", false, grid.bits);
}

AnyGrid load_grid(const fs::path& path) {
  const fs::path stem = stem_of(path);
  const Header h = read_header(stem);
  const std::size_t n = h.geom.voxel_count();
  if (h.kind == "volume") {
    return VolumeGrid{h.geom, read_payload<float>(stem, n), h.normalized};
  }
  auto bytes = read_payload<std::uint8_t>(stem, n);
  if (h.kind == "labels") {
    for (auto b : bytes)
      if (b > 3) throw data_error("unknown label code " + std::to_string(b) + " in " + stem.string());
    return LabelGrid{h.geom, std::move(bytes)};
  }
  if (h.kind == "mask") {
    for (auto b : bytes)
      if (b > 1) throw data_error("mask value outside {0,1} in " + stem.string());
    return MaskGrid{h.geom, std::move(bytes)};
  }
  throw data_error("unknown grid kind " + h.kind);
}

namespace {
template <class G>
G load_as(const fs::path& path, const char* what) {
  auto any = load_grid(path);
  if (auto* g = std::get_if<G>(&any)) return std::move(*g);
  throw data_error(path.string() + " is not a " + what + " grid");
}
}  // namespace

VolumeGrid load_volume(const fs::path& path) { return load_as<VolumeGrid>(path, "volume"); }
LabelGrid load_labels(const fs::path& path) { return load_as<LabelGrid>(path, "label"); }
MaskGrid load_mask(const fs::path& path) { return load_as<MaskGrid>(path, "mask"); }

GridGeometry resampled_geometry(const GridGeometry& src, const Vec3& target) {
  GridGeometry out;
  for (int a = 0; a < 3; ++a) {
    if (!(target[a] > 0.0)) throw config_error("target spacing must be positive");
    const double extent = src.dims[a] * src.spacing[a];
    // the epsilon keeps exact ratios (e.g. 100 * 1.0 / 1.0) from rounding up
    out.dims[a] = std::max(1, static_cast<int>(std::ceil(extent / target[a] - 1e-9)));
    out.spacing[a] = target[a];
    const double lower_edge = src.origin[a] - 0.5 * src.spacing[a];
    out.origin[a] = lower_edge + 0.5 * target[a];
  }
  return out;
}

VolumeGrid resample(const VolumeGrid& grid, const Vec3& target, Interp mode) {
  VolumeGrid out;
  out.geom = resampled_geometry(grid.geom, target);
  out.normalized = grid.normalized;
  out.values.resize(out.geom.voxel_count());
  if (mode == Interp::trilinear) {
    kernels::resample_trilinear(grid.geom, grid.values, out.geom, out.values);
  } else {
    // nearest on intensities; only used for spacing-preserving copies
    const GridGeometry& src = grid.geom;
    for (int z = 0; z < out.geom.dims[2]; ++z)
      for (int y = 0; y < out.geom.dims[1]; ++y)
        for (int x = 0; x < out.geom.dims[0]; ++x) {
          const Vec3 p = out.geom.position(x, y, z);
          int idx[3];
          for (int a = 0; a < 3; ++a)
            idx[a] = std::clamp(static_cast<int>(std::floor((p[a] - src.origin[a]) / src.spacing[a] + 0.5)),
                                0, src.dims[a] - 1);
          out.values[out.geom.index(x, y, z)] = grid.values[src.index(idx[0], idx[1], idx[2])];
        }
  }
  return out;
}

LabelGrid resample(const LabelGrid& grid, const Vec3& target, Interp mode) {
  return nearest_only(grid, grid.labels, target, mode, "label grids");
}

MaskGrid resample(const MaskGrid& grid, const Vec3& target, Interp mode) {
  return nearest_only(grid, grid.bits, target, mode, "masks");
}

VolumeGrid clip_normalize(const VolumeGrid& volume, float lo, float hi, float divisor) {
  if (volume.normalized) throw data_error("volume is already normalised");
  if (!(hi > lo) || !(divisor > 0.0f)) throw config_error("invalid clip/normalise parameters");
  VolumeGrid out{volume.geom, std::vector<float>(volume.values.size()), true};
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(volume.values.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    out.values[i] = std::clamp(volume.values[i], lo, hi) / divisor;
  return out;
}

std::vector<double> squared_distance_to(const MaskGrid& mask) {
  std::vector<double> d(mask.geom.voxel_count());
  kernels::squared_edt(mask.geom, mask.bits, d);
  return d;
}

MaskGrid dilate(const MaskGrid& mask, double radius_mm) {
  if (!(radius_mm >= 0.0)) throw config_error("dilation radius must be >= 0");
  if (radius_mm == 0.0) return mask;
  const auto d = squared_distance_to(mask);
  // relative slack so lattice points exactly on the sphere are kept
  const double r2 = radius_mm * radius_mm * (1.0 + 1e-12);
  MaskGrid out{mask.geom, std::vector<std::uint8_t>(d.size())};
  for (std::size_t i = 0; i < d.size(); ++i) out.bits[i] = d[i] <= r2 ? 1 : 0;
  return out;
}

MaskGrid binarize(const LabelGrid& labels) {
  MaskGrid out{labels.geom, std::vector<std::uint8_t>(labels.labels.size())};
  for (std::size_t i = 0; i < labels.labels.size(); ++i) out.bits[i] = labels.labels[i] >= 1 ? 1 : 0;
  return out;
}

MaskGrid select(const LabelGrid& labels, Tissue tissue) {
  const auto code = static_cast<std::uint8_t>(tissue);
  MaskGrid out{labels.geom, std::vector<std::uint8_t>(labels.labels.size())};
  for (std::size_t i = 0; i < labels.labels.size(); ++i) out.bits[i] = labels.labels[i] == code ? 1 : 0;
  return out;
}

MaskGrid pad(const MaskGrid& mask, int voxels) {
  if (voxels < 0) throw config_error("pad width must be >= 0");
  MaskGrid out;
  out.geom = mask.geom;
  for (int a = 0; a < 3; ++a) {
    out.geom.dims[a] += 2 * voxels;
    out.geom.origin[a] -= voxels * mask.geom.spacing[a];
  }
  out.bits.assign(out.geom.voxel_count(), 0);
  for (int z = 0; z < mask.geom.dims[2]; ++z)
    for (int y = 0; y < mask.geom.dims[1]; ++y)
      std::copy_n(mask.bits.begin() + mask.geom.index(0, y, z), mask.geom.dims[0],
                  out.bits.begin() + out.geom.index(voxels, y + voxels, z + voxels));
  return out;
}

MaskGrid crop(const MaskGrid& mask, const Index3& lo, const Index3& hi) {
  MaskGrid out;
  out.geom.spacing = mask.geom.spacing;
  for (int a = 0; a < 3; ++a) {
    if (lo[a] < 0 || hi[a] >= mask.geom.dims[a] || hi[a] < lo[a]) throw data_error("crop box outside grid");
    out.geom.dims[a] = hi[a] - lo[a] + 1;
  }
  out.geom.origin = mask.geom.position(lo[0], lo[1], lo[2]);
  out.bits.resize(out.geom.voxel_count());
  for (int z = 0; z < out.geom.dims[2]; ++z)
    for (int y = 0; y < out.geom.dims[1]; ++y)
      std::copy_n(mask.bits.begin() + mask.geom.index(lo[0], y + lo[1], z + lo[2]), out.geom.dims[0],
                  out.bits.begin() + out.geom.index(0, y, z));
  return out;
}

Components label_components(const MaskGrid& mask) {
  const GridGeometry& g = mask.geom;
  Components c;
  c.ids.assign(g.voxel_count(), 0);
  c.counts.assign(1, 0);
  std::vector<Index3> stack;
  int next = 0;
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        const std::size_t seed = g.index(x, y, z);
        if (!mask.bits[seed] || c.ids[seed]) continue;
        ++next;
        std::size_t count = 0;
        c.ids[seed] = next;
        stack.push_back({x, y, z});
        while (!stack.empty()) {
          const Index3 v = stack.back();
          stack.pop_back();
          ++count;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int nx = v[0] + dx, ny = v[1] + dy, nz = v[2] + dz;
                if (!g.contains(nx, ny, nz)) continue;
                const std::size_t i = g.index(nx, ny, nz);
                if (mask.bits[i] && !c.ids[i]) {
                  c.ids[i] = next;
                  stack.push_back({nx, ny, nz});
                }
              }
        }
        c.counts.push_back(count);
      }
  return c;
}

std::vector<KidneyComponent> split_kidneys(const LabelGrid& labels, const SplitOptions& opts) {
  const GridGeometry& g = labels.geom;
  const MaskGrid contour = binarize(labels);
  const Components comps = label_components(contour);
  const double vv = g.voxel_volume();

  std::vector<int> keep;
  for (int id = 1; id < static_cast<int>(comps.counts.size()); ++id)
    if (comps.counts[id] * vv >= opts.min_volume_mm3) keep.push_back(id);
  if (keep.empty()) throw data_error("no kidney component found");
  std::stable_sort(keep.begin(), keep.end(),
                   [&](int a, int b) { return comps.counts[a] > comps.counts[b]; });
  if (keep.size() > 2) keep.resize(2);

  // scan midline along x, in mm
  const double midline = g.origin[0] + 0.5 * (g.dims[0] - 1) * g.spacing[0];

  std::vector<KidneyComponent> out;
  for (int id : keep) {
    KidneyComponent kc;
    Index3 lo{g.dims[0], g.dims[1], g.dims[2]}, hi{-1, -1, -1};
    Vec3 sum{0, 0, 0};
    for (int z = 0; z < g.dims[2]; ++z)
      for (int y = 0; y < g.dims[1]; ++y)
        for (int x = 0; x < g.dims[0]; ++x) {
          if (comps.ids[g.index(x, y, z)] != id) continue;
          const Index3 v{x, y, z};
          for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], v[a]);
            hi[a] = std::max(hi[a], v[a]);
          }
          const Vec3 p = g.position(x, y, z);
          for (int a = 0; a < 3; ++a) sum[a] += p[a];
        }
    kc.voxel_count = comps.counts[id];
    for (int a = 0; a < 3; ++a) kc.centroid[a] = sum[a] / static_cast<double>(kc.voxel_count);
    kc.bbox_lo = lo;
    kc.bbox_hi = hi;

    const double left_reach = g.position(hi[0], 0, 0)[0] - midline;
    const double right_reach = midline - g.position(lo[0], 0, 0)[0];
    if (left_reach > opts.midline_margin_mm && right_reach > opts.midline_margin_mm)
      throw data_error("horseshoe/ambiguous kidney: component crosses the midline");
    kc.side = kc.centroid[0] > midline ? Side::left : Side::right;

    kc.mask.geom.spacing = g.spacing;
    kc.mask.geom.origin = g.position(lo[0], lo[1], lo[2]);
    for (int a = 0; a < 3; ++a) kc.mask.geom.dims[a] = hi[a] - lo[a] + 1;
    kc.mask.bits.assign(kc.mask.geom.voxel_count(), 0);
    for (int z = lo[2]; z <= hi[2]; ++z)
      for (int y = lo[1]; y <= hi[1]; ++y)
        for (int x = lo[0]; x <= hi[0]; ++x)
          if (comps.ids[g.index(x, y, z)] == id)
            kc.mask.bits[kc.mask.geom.index(x - lo[0], y - lo[1], z - lo[2])] = 1;
    out.push_back(std::move(kc));
  }
  if (out.size() == 2 && out[0].side == out[1].side)
    throw data_error("horseshoe/ambiguous kidneys: both components on the same side");
  // right before left, so ids are stable across runs
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.side == Side::right && b.side == Side::left; });
  return out;
}

}  // namespace rcd::volio
