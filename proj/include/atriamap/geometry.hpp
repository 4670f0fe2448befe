#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atriamap/volume.hpp"

namespace atriamap {

/// Sign of det[b - a, c - a, d - a]: +1 when d lies on the side of the
/// normal (b - a) x (c - a). Exact for all finite doubles: a floating-point
/// filter, then an integer path for small integral coordinates, then exact
/// rational arithmetic.
int orient3d(Vec3 a, Vec3 b, Vec3 c, Vec3 d);
/// Exact collinearity test for three points.
bool collinear(Vec3 a, Vec3 b, Vec3 c);

struct TriangleMesh {
  std::vector<Vec3> vertices;                         // grid coordinates, voxels
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  /// Throws Error(InvalidInput) on out-of-range or repeated indices or
  /// non-finite vertices.
  void validate() const;
};

struct MeshTopology {
  std::size_t vertices = 0;  // vertices referenced by at least one triangle
  std::size_t edges = 0;
  std::size_t faces = 0;
  std::size_t boundary_edges = 0;   // edges on exactly one triangle
  std::size_t nonmanifold_edges = 0;  // edges on three or more triangles
  long euler() const { return static_cast<long>(vertices) - static_cast<long>(edges) + static_cast<long>(faces); }
  bool closed() const { return boundary_edges == 0 && nonmanifold_edges == 0; }
};

MeshTopology topology(const TriangleMesh& mesh);
/// Enclosed volume by the divergence theorem; positive for outward-facing
/// triangles.
double signed_volume(const TriangleMesh& mesh);
/// Triangle-connected components (sharing a vertex); label per triangle.
std::pair<std::vector<int>, int> mesh_components(const TriangleMesh& mesh);

struct HullFill {
  VoxelGrid grid;                                // binary
  std::vector<std::array<int, 4>> simplices;     // point indices
  std::vector<std::array<int, 3>> faces;         // hull facets, outward
};

/// Fills every voxel whose centre lies inside or on the alpha shape of
/// `cloud` (voxel coordinates; voxel (i,j,k) has centre (i,j,k)). Only
/// alpha = 0, the convex hull, is supported; any other value is rejected
/// because larger radii can open the surface.
///
/// Degenerate input raises Error(DegenerateInput) whose detail() is one of
/// "too-few-points", "coincident", "collinear", "coplanar".
HullFill alpha_hull_fill(const PointCloud& cloud, Dims dims, double alpha = 0.0);

/// Marching cubes at `threshold` (values strictly greater are inside). The
/// grid is zero-padded by one layer first, so the result is closed: every
/// edge is shared by exactly two triangles. Vertices are linearly
/// interpolated along cube edges and expressed in the unpadded grid's voxel
/// coordinates.
TriangleMesh marching_cubes(const VoxelGrid& grid, double threshold = 0.5);

/// Per-configuration surface loops as cube-edge sequences. Exposed for tests.
const std::vector<std::vector<int>>& marching_cubes_loops(std::uint8_t config);

struct PostprocessOptions {
  /// The largest component must hold at least this share of all triangles,
  /// otherwise the surface is reported as fragmented.
  double min_component_fraction = 0.0;
  int smooth_iters = 0;
  double smooth_lambda = 0.5;
};

/// Keeps the largest component (by triangle count), applies uniform
/// Laplacian smoothing, then fan-fills any boundary loop. Unreferenced
/// vertices are dropped; surviving vertices keep their relative order.
TriangleMesh postprocess(const TriangleMesh& mesh, const PostprocessOptions& opts = {});

std::string to_obj(const TriangleMesh& mesh);
TriangleMesh from_obj(const std::string& text);
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_obj(const std::filesystem::path& path);
std::vector<std::uint8_t> to_stl(const TriangleMesh& mesh);
void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path);

}  // namespace atriamap
