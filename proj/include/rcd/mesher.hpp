#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rcd/grid.hpp"

namespace rcd {

struct TriMesh {
  std::vector<Vec3> vertices;              // mm
  std::vector<std::array<int, 3>> faces;   // counter-clockwise seen from outside
};

using Edge = std::pair<int, int>;  // always first < second

/// Per-edge curvature (edges sorted, unique) and the per-vertex average.
struct CurvatureField {
  static constexpr double kEpsilon = 1e-6;
  std::vector<Edge> edges;
  std::vector<double> edge_curvatures;
  std::vector<double> vertex_curvatures;

  /// Curvature of edge {i, j}; throws if the edge does not exist.
  double edge(int i, int j) const;
};

/// Surface graph: per-node (x, y, z, curvature), undirected edges.
struct KidneyGraph {
  std::vector<std::array<double, 4>> nodes;
  std::vector<Edge> edges;

  int node_count() const { return static_cast<int>(nodes.size()); }
};

}  // namespace rcd

namespace rcd::mesher {

inline constexpr double kRemeshVoxelMm = 1.2;
inline constexpr double kSmoothFactor = 0.5;
inline constexpr int kSmoothIterations = 5;

/// Marching cubes at level 0.5 over a binary mask. Vertices lie on lattice
/// edge midpoints and are shared between cells. The mask must be non-empty
/// and must not touch the grid boundary. The result is wound outward.
TriMesh extract_surface(const MaskGrid& mask);

/// Resample to `voxel_mm` isotropic (nearest), pad, then extract.
TriMesh remesh(const MaskGrid& mask, double voxel_mm = kRemeshVoxelMm);

/// Uniform Laplacian smoothing: each step moves every vertex by
/// factor * (one-ring mean - itself), all vertices updated together.
TriMesh smooth(const TriMesh& mesh, double factor = kSmoothFactor,
               int iterations = kSmoothIterations);

/// Signed enclosed volume (mm^3); positive for outward winding.
double enclosed_volume(const TriMesh& mesh);
std::vector<Edge> mesh_edges(const TriMesh& mesh);
long euler_characteristic(const TriMesh& mesh);
/// Reverses every face's winding.
TriMesh flipped(const TriMesh& mesh);

/// Area-weighted mean of incident face normals, unit length.
std::vector<Vec3> vertex_normals(const TriMesh& mesh);

/// Neighbours of each vertex in cyclic order following the face winding,
/// starting at the lowest-index neighbour. Throws on open or non-manifold
/// one-rings.
std::vector<std::vector<int>> ordered_one_rings(const TriMesh& mesh);

/// C_e(i,j) = ((n_i - n_j) . (v_i - v_j)) / (|v_i - v_j| + eps) for every
/// mesh edge. Fills `edges` and `edge_curvatures`.
CurvatureField edge_curvature(const TriMesh& mesh, const std::vector<Vec3>& normals);

/// Angle-weighted mean of consecutive edge-curvature pairs over the ordered
/// one-ring. The fan runs over pairs (1,2)..(N-1,N) and does not wrap.
std::vector<double> vertex_curvature(const TriMesh& mesh, const CurvatureField& field);

/// normals -> edge curvature -> vertex curvature.
CurvatureField curvature(const TriMesh& mesh);

/// Nodes carry centroid-centred coordinates plus vertex curvature.
KidneyGraph build_graph(const TriMesh& mesh, const std::vector<double>& vertex_curvatures);

/// Full shape path for one kidney mask: remesh, smooth, curvature, graph.
struct SurfaceResult {
  TriMesh mesh;
  CurvatureField curvature;
  KidneyGraph graph;
};
SurfaceResult kidney_surface(const MaskGrid& mask, double voxel_mm = kRemeshVoxelMm,
                             double smooth_factor = kSmoothFactor,
                             int smooth_iterations = kSmoothIterations);

/// ASCII OBJ: `v x y z` and 1-based `f a b c` records.
std::string to_obj(const TriMesh& mesh);
/// {"nodes": [[x,y,z,c], ...], "edges": [[i,j], ...]} with 0-based ids.
std::string graph_to_json(const KidneyGraph& graph);
KidneyGraph graph_from_json(const std::string& text);

}  // namespace rcd::mesher
