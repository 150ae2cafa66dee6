#include "rcd/convex_hull.hpp"

#include <algorithm>
#include <unordered_map>

#include "rcd/error.hpp"

namespace rcd::geom {

namespace {

using i64 = std::int64_t;

Point3i diff(const Point3i& a, const Point3i& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Point3i cross(const Point3i& a, const Point3i& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
i64 dot(const Point3i& a, const Point3i& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// > 0 when p lies on the outer side of the oriented face (a, b, c)
i64 orient(const Point3i& a, const Point3i& b, const Point3i& c, const Point3i& p) {
  return dot(cross(diff(b, a), diff(c, a)), diff(p, a));
}

std::uint64_t edge_key(int u, int v) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(u)) << 32) |
         static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<LatticeHull::Plane> LatticeHull::planes() const {
  std::vector<Plane> out;
  out.reserve(faces.size());
  for (const auto& f : faces) {
    const Point3i n = cross(diff(points[f[1]], points[f[0]]), diff(points[f[2]], points[f[0]]));
    out.push_back({n, dot(n, points[f[0]])});
  }
  return out;
}

LatticeHull lattice_hull(const std::vector<Point3i>& input) {
  std::vector<Point3i> pts = input;
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 4) throw data_error("convex hull needs at least 4 distinct points");

  // initial tetrahedron: extreme-x pair, farthest from that line, farthest from that plane
  int i0 = 0, i1 = static_cast<int>(pts.size()) - 1;
  int i2 = -1, i3 = -1;
  i64 best = 0;
  const Point3i d01 = diff(pts[i1], pts[i0]);
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    const Point3i c = cross(d01, diff(pts[i], pts[i0]));
    const i64 a = dot(c, c);
    if (a > best) best = a, i2 = i;
  }
  if (i2 < 0) throw data_error("degenerate component: all points collinear");
  best = 0;
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    const i64 o = orient(pts[i0], pts[i1], pts[i2], pts[i]);
    if ((o < 0 ? -o : o) > best) best = o < 0 ? -o : o, i3 = i;
  }
  if (i3 < 0) throw data_error("degenerate component: all points coplanar");

  struct Face {
    int a, b, c;
    bool alive;
  };
  std::vector<Face> faces;
  std::unordered_map<std::uint64_t, int> face_of_edge;  // directed edge -> face
  auto add_face = [&](int a, int b, int c) {
    const int id = static_cast<int>(faces.size());
    faces.push_back({a, b, c, true});
    face_of_edge[edge_key(a, b)] = id;
    face_of_edge[edge_key(b, c)] = id;
    face_of_edge[edge_key(c, a)] = id;
  };
  if (orient(pts[i0], pts[i1], pts[i2], pts[i3]) > 0) std::swap(i1, i2);
  add_face(i0, i1, i2);
  add_face(i0, i3, i1);
  add_face(i1, i3, i2);
  add_face(i2, i3, i0);

  // deterministic pseudo-random insertion order keeps the expected cost low
  std::vector<int> order(pts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::uint64_t state = 0x9e3779b97f4a7c15ULL;
  for (std::size_t i = order.size(); i > 1; --i) {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    std::swap(order[i - 1], order[(state >> 33) % i]);
  }

  std::vector<int> visible;
  std::vector<std::pair<int, int>> horizon;
  for (int p : order) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    visible.clear();
    for (int f = 0; f < static_cast<int>(faces.size()); ++f)
      if (faces[f].alive && orient(pts[faces[f].a], pts[faces[f].b], pts[faces[f].c], pts[p]) > 0)
        visible.push_back(f);
    if (visible.empty()) continue;
    for (int f : visible) faces[f].alive = false;
    horizon.clear();
    for (int f : visible) {
      const int vs[3] = {faces[f].a, faces[f].b, faces[f].c};
      for (int k = 0; k < 3; ++k) {
        const int u = vs[k], v = vs[(k + 1) % 3];
        const int twin = face_of_edge.at(edge_key(v, u));
        if (faces[twin].alive) horizon.push_back({u, v});
      }
    }
    for (int f : visible) {
      face_of_edge.erase(edge_key(faces[f].a, faces[f].b));
      face_of_edge.erase(edge_key(faces[f].b, faces[f].c));
      face_of_edge.erase(edge_key(faces[f].c, faces[f].a));
    }
    for (const auto& [u, v] : horizon) add_face(u, v, p);
    // compact occasionally so the visibility scan stays proportional to the hull
    if (faces.size() > 64 && faces.size() > 4 * static_cast<std::size_t>(std::count_if(
                                                  faces.begin(), faces.end(), [](const Face& f) { return f.alive; }))) {
      std::vector<Face> live;
      for (const auto& f : faces)
        if (f.alive) live.push_back(f);
      faces.clear();
      face_of_edge.clear();
      for (const auto& f : live) add_face(f.a, f.b, f.c);
    }
  }

  LatticeHull hull;
  std::unordered_map<int, int> remap;
  for (const auto& f : faces) {
    if (!f.alive) continue;
    std::array<int, 3> out{};
    const int vs[3] = {f.a, f.b, f.c};
    for (int k = 0; k < 3; ++k) {
      auto [it, inserted] = remap.try_emplace(vs[k], static_cast<int>(hull.points.size()));
      if (inserted) hull.points.push_back(pts[vs[k]]);
      out[k] = it->second;
    }
    hull.faces.push_back(out);
  }
  return hull;
}

}  // namespace rcd::geom
