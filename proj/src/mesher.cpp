#include "rcd/mesher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mc_tables.hpp"
#include "rcd/error.hpp"
#include "rcd/volio.hpp"

namespace rcd {

double CurvatureField::edge(int i, int j) const {
  const Edge key = i < j ? Edge{i, j} : Edge{j, i};
  const auto it = std::lower_bound(edges.begin(), edges.end(), key);
  if (it == edges.end() || *it != key) throw data_error("edge not present in curvature field");
  return edge_curvatures[static_cast<std::size_t>(it - edges.begin())];
}

}  // namespace rcd

namespace rcd::mesher {

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

int index_of(const std::vector<Edge>& edges, int i, int j) {
  const Edge key = i < j ? Edge{i, j} : Edge{j, i};
  const auto it = std::lower_bound(edges.begin(), edges.end(), key);
  if (it == edges.end() || *it != key) throw data_error("edge not present in mesh");
  return static_cast<int>(it - edges.begin());
}

std::vector<std::vector<int>> neighbour_sets(const TriMesh& mesh) {
  std::vector<std::vector<int>> nb(mesh.vertices.size());
  for (const auto& [a, b] : mesh_edges(mesh)) {
    nb[a].push_back(b);
    nb[b].push_back(a);
  }
  return nb;
}

}  // namespace

TriMesh extract_surface(const MaskGrid& mask) {
  const GridGeometry& g = mask.geom;
  g.validate();
  if (mask.count() == 0) throw data_error("cannot extract a surface from an empty mask");
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        const bool border = x == 0 || y == 0 || z == 0 || x == g.dims[0] - 1 ||
                            y == g.dims[1] - 1 || z == g.dims[2] - 1;
        if (border && mask.at(x, y, z))
          throw data_error("mask touches the grid boundary; pad it before extraction");
      }

  TriMesh mesh;
  std::unordered_map<std::uint64_t, int> vertex_of_edge;
  vertex_of_edge.reserve(mask.count() * 2);

  auto vertex_on = [&](int x, int y, int z, int e) {
    const int* a = kCorner[kEdgeCorners[e][0]];
    const int* b = kCorner[kEdgeCorners[e][1]];
    int base[3], axis = 0;
    for (int k = 0; k < 3; ++k) {
      base[k] = std::min(a[k], b[k]);
      if (a[k] != b[k]) axis = k;
    }
    const int bx = x + base[0], by = y + base[1], bz = z + base[2];
    const std::uint64_t key = static_cast<std::uint64_t>(g.index(bx, by, bz)) * 3 + axis;
    const auto [it, inserted] = vertex_of_edge.try_emplace(key, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      Vec3 p = g.position(bx, by, bz);
      p[axis] += 0.5 * g.spacing[axis];
      mesh.vertices.push_back(p);
    }
    return it->second;
  };

  int ids[12];
  for (int z = 0; z + 1 < g.dims[2]; ++z)
    for (int y = 0; y + 1 < g.dims[1]; ++y)
      for (int x = 0; x + 1 < g.dims[0]; ++x) {
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (!mask.at(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2])) cube |= 1 << c;
        const int edges = detail::kEdgeTable[cube];
        if (edges == 0) continue;
        for (int e = 0; e < 12; ++e)
          if (edges & (1 << e)) ids[e] = vertex_on(x, y, z, e);
        for (int t = 0; detail::kTriTable[cube][t] != -1; t += 3)
          mesh.faces.push_back({ids[detail::kTriTable[cube][t]], ids[detail::kTriTable[cube][t + 1]],
                                ids[detail::kTriTable[cube][t + 2]]});
      }

  if (enclosed_volume(mesh) < 0.0) mesh = flipped(mesh);
  return mesh;
}

TriMesh remesh(const MaskGrid& mask, double voxel_mm) {
  if (!(voxel_mm > 0.0)) throw config_error("remesh voxel size must be positive");
  const MaskGrid iso = volio::resample(mask, {voxel_mm, voxel_mm, voxel_mm}, volio::Interp::nearest);
  return extract_surface(volio::pad(iso, 2));
}

TriMesh smooth(const TriMesh& mesh, double factor, int iterations) {
  TriMesh out = mesh;
  if (factor == 0.0 || iterations <= 0) return out;
  const auto nb = neighbour_sets(mesh);
  std::vector<Vec3> next(out.vertices.size());
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
      const Vec3& v = out.vertices[i];
      if (nb[i].empty()) {
        next[i] = v;
        continue;
      }
      Vec3 mean{0, 0, 0};
      for (int j : nb[i])
        for (int k = 0; k < 3; ++k) mean[k] += out.vertices[j][k];
      for (int k = 0; k < 3; ++k) next[i][k] = v[k] + factor * (mean[k] / nb[i].size() - v[k]);
    }
    out.vertices.swap(next);
  }
  return out;
}

double enclosed_volume(const TriMesh& mesh) {
  double six_v = 0.0;
  for (const auto& f : mesh.faces)
    six_v += dot(mesh.vertices[f[0]], cross(mesh.vertices[f[1]], mesh.vertices[f[2]]));
  return six_v / 6.0;
}

std::vector<Edge> mesh_edges(const TriMesh& mesh) {
  std::vector<Edge> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = f[k], b = f[(k + 1) % 3];
      edges.push_back(a < b ? Edge{a, b} : Edge{b, a});
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

long euler_characteristic(const TriMesh& mesh) {
  return static_cast<long>(mesh.vertices.size()) - static_cast<long>(mesh_edges(mesh).size()) +
         static_cast<long>(mesh.faces.size());
}

TriMesh flipped(const TriMesh& mesh) {
  TriMesh out = mesh;
  for (auto& f : out.faces) std::swap(f[1], f[2]);
  return out;
}

std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
  std::vector<Vec3> n(mesh.vertices.size(), Vec3{0, 0, 0});
  std::vector<char> touched(mesh.vertices.size(), 0);
  for (const auto& f : mesh.faces) {
    // |cross| is twice the face area, so summing raw cross products area-weights
    const Vec3 c = cross(sub(mesh.vertices[f[1]], mesh.vertices[f[0]]),
                         sub(mesh.vertices[f[2]], mesh.vertices[f[0]]));
    for (int v : f) {
      for (int k = 0; k < 3; ++k) n[v][k] += c[k];
      touched[v] = 1;
    }
  }
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (!touched[i]) throw data_error("isolated vertex " + std::to_string(i) + " has no normal");
    const double len = norm(n[i]);
    if (len == 0.0) throw numeric_error("degenerate normal at vertex " + std::to_string(i));
    for (auto& c : n[i]) c /= len;
  }
  return n;
}

std::vector<std::vector<int>> ordered_one_rings(const TriMesh& mesh) {
  const std::size_t nv = mesh.vertices.size();
  // (p -> q) for every face (i, p, q) around vertex i
  std::vector<std::vector<std::pair<int, int>>> fan(nv);
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) fan[f[k]].push_back({f[(k + 1) % 3], f[(k + 2) % 3]});

  std::vector<std::vector<int>> rings(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    const auto& steps = fan[i];
    if (steps.empty()) throw data_error("isolated vertex " + std::to_string(i));
    int start = steps[0].first;
    for (const auto& s : steps) start = std::min(start, s.first);
    auto& ring = rings[i];
    int cur = start;
    do {
      ring.push_back(cur);
      int next = -1, hits = 0;
      for (const auto& [p, q] : steps)
        if (p == cur) {
          next = q;
          ++hits;
        }
      if (hits == 0) throw data_error("open one-ring at vertex " + std::to_string(i));
      if (hits > 1 || ring.size() > steps.size())
        throw data_error("non-manifold one-ring at vertex " + std::to_string(i));
      cur = next;
    } while (cur != start);
    if (ring.size() != steps.size())
      throw data_error("non-manifold one-ring at vertex " + std::to_string(i));
  }
  return rings;
}

CurvatureField edge_curvature(const TriMesh& mesh, const std::vector<Vec3>& normals) {
  if (normals.size() != mesh.vertices.size()) throw data_error("normal count does not match vertices");
  CurvatureField field;
  field.edges = mesh_edges(mesh);
  field.edge_curvatures.resize(field.edges.size());
  for (std::size_t e = 0; e < field.edges.size(); ++e) {
    const auto [i, j] = field.edges[e];
    const Vec3 dv = sub(mesh.vertices[i], mesh.vertices[j]);
    const Vec3 dn = sub(normals[i], normals[j]);
    field.edge_curvatures[e] = dot(dn, dv) / (norm(dv) + CurvatureField::kEpsilon);
  }
  return field;
}

std::vector<double> vertex_curvature(const TriMesh& mesh, const CurvatureField& field) {
  const auto rings = ordered_one_rings(mesh);
  std::vector<double> out(mesh.vertices.size());
  for (std::size_t i = 0; i < rings.size(); ++i) {
    const auto& ring = rings[i];
    const Vec3& vi = mesh.vertices[i];
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j + 1 < ring.size(); ++j) {
      const Vec3 a = sub(mesh.vertices[ring[j]], vi);
      const Vec3 b = sub(mesh.vertices[ring[j + 1]], vi);
      const double cosang = std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0);
      const double theta = std::acos(cosang);
      const double ca = field.edge_curvatures[index_of(field.edges, static_cast<int>(i), ring[j])];
      const double cb = field.edge_curvatures[index_of(field.edges, static_cast<int>(i), ring[j + 1])];
      num += theta * (ca + cb);
      den += theta;
    }
    if (!(den > 0.0)) throw numeric_error("degenerate one-ring at vertex " + std::to_string(i));
    out[i] = num / (2.0 * den);
  }
  return out;
}

CurvatureField curvature(const TriMesh& mesh) {
  CurvatureField field = edge_curvature(mesh, vertex_normals(mesh));
  field.vertex_curvatures = vertex_curvature(mesh, field);
  return field;
}

KidneyGraph build_graph(const TriMesh& mesh, const std::vector<double>& vertex_curvatures) {
  if (vertex_curvatures.size() != mesh.vertices.size())
    throw data_error("curvature count does not match vertices");
  Vec3 c{0, 0, 0};
  for (const auto& v : mesh.vertices)
    for (int k = 0; k < 3; ++k) c[k] += v[k];
  const double n = static_cast<double>(mesh.vertices.size());
  for (auto& x : c) x /= n;

  KidneyGraph g;
  g.nodes.reserve(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    g.nodes.push_back({v[0] - c[0], v[1] - c[1], v[2] - c[2], vertex_curvatures[i]});
  }
  g.edges = mesh_edges(mesh);
  return g;
}

SurfaceResult kidney_surface(const MaskGrid& mask, double voxel_mm, double smooth_factor,
                             int smooth_iterations) {
  SurfaceResult r;
  r.mesh = smooth(remesh(mask, voxel_mm), smooth_factor, smooth_iterations);
  r.curvature = curvature(r.mesh);
  r.graph = build_graph(r.mesh, r.curvature.vertex_curvatures);
  return r;
}

std::string to_obj(const TriMesh& mesh) {
  std::ostringstream out;
  out.precision(9);
  for (const auto& v : mesh.vertices) out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  return out.str();
}

std::string graph_to_json(const KidneyGraph& graph) {
  nlohmann::json j;
  j["nodes"] = graph.nodes;
  auto& edges = j["edges"] = nlohmann::json::array();
  for (const auto& [a, b] : graph.edges) edges.push_back({a, b});
  return j.dump() + "\n";
}

KidneyGraph graph_from_json(const std::string& text) {
  KidneyGraph g;
  try {
    const auto j = nlohmann::json::parse(text);
    g.nodes = j.at("nodes").get<std::vector<std::array<double, 4>>>();
    for (const auto& e : j.at("edges")) {
      const int a = e.at(0).get<int>(), b = e.at(1).get<int>();
      if (a == b || a < 0 || b < 0 || a >= g.node_count() || b >= g.node_count())
        throw data_error("invalid graph edge");
      g.edges.push_back(a < b ? Edge{a, b} : Edge{b, a});
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed graph json: ") + e.what());
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

}  // namespace rcd::mesher
