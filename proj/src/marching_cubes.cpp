#include <vector>

#include "atriamap/error.hpp"
#include "atriamap/geometry.hpp"

namespace atriamap {
namespace detail {
extern const int kCorner[8][3];
extern const int kEdge[12][2];
}  // namespace detail

TriangleMesh marching_cubes(const VoxelGrid& grid, double threshold) {
  using detail::kCorner;
  using detail::kEdge;
  const Dims d = grid.dims();
  if (d.x < 2 || d.y < 2 || d.z < 2)
    throw Error(ErrorKind::InvalidInput, "geometry", "marching cubes needs at least 2 voxels per axis");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw Error(ErrorKind::InvalidInput, "geometry", "threshold must lie in (0, 1)");

  // Padded lattice: point (i, j, k) holds grid value (i-1, j-1, k-1), zero
  // outside.
  const int px = static_cast<int>(d.x) + 2, py = static_cast<int>(d.y) + 2, pz = static_cast<int>(d.z) + 2;
  auto value = [&](int i, int j, int k) -> double {
    const int x = i - 1, y = j - 1, z = k - 1;
    return grid.contains(x, y, z) ? grid.at(x, y, z) : 0.0;
  };
  auto lattice = [&](int i, int j, int k) {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(px) * (j + static_cast<std::size_t>(py) * k);
  };

  TriangleMesh mesh;
  // Vertex id per lattice edge, indexed by lower endpoint and axis.
  std::vector<int> edge_vertex(static_cast<std::size_t>(px) * py * pz * 3, -1);

  auto vertex_on = [&](int ci, int cj, int ck, int e) -> std::uint32_t {
    const int* a = kCorner[kEdge[e][0]];
    const int* b = kCorner[kEdge[e][1]];
    int lo[3] = {ci + a[0], cj + a[1], ck + a[2]};
    int hi[3] = {ci + b[0], cj + b[1], ck + b[2]};
    if (lo[0] + lo[1] + lo[2] > hi[0] + hi[1] + hi[2]) std::swap(lo, hi);
    const int axis = hi[0] != lo[0] ? 0 : (hi[1] != lo[1] ? 1 : 2);
    int& slot = edge_vertex[lattice(lo[0], lo[1], lo[2]) * 3 + axis];
    if (slot < 0) {
      const double v0 = value(lo[0], lo[1], lo[2]), v1 = value(hi[0], hi[1], hi[2]);
      const double t = (threshold - v0) / (v1 - v0);
      Vec3 p{double(lo[0] - 1), double(lo[1] - 1), double(lo[2] - 1)};
      p[axis] += t;
      slot = static_cast<int>(mesh.vertices.size());
      mesh.vertices.push_back(p);
    }
    return static_cast<std::uint32_t>(slot);
  };

  for (int k = 0; k + 1 < pz; ++k)
    for (int j = 0; j + 1 < py; ++j)
      for (int i = 0; i + 1 < px; ++i) {
        int config = 0;
        for (int c = 0; c < 8; ++c)
          if (value(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) > threshold) config |= 1 << c;
        if (config == 0 || config == 255) continue;
        for (const auto& loop : marching_cubes_loops(static_cast<std::uint8_t>(config))) {
          std::vector<std::uint32_t> ids;
          ids.reserve(loop.size());
          for (int e : loop) ids.push_back(vertex_on(i, j, k, e));
          if (ids.size() == 3) {
            mesh.triangles.push_back({ids[0], ids[1], ids[2]});
            continue;
          }
          // Longer loops are fanned around their centroid. The triangulation
          // is then invariant under the cube's symmetries and no chord can
          // be shared with a neighbouring cube.
          Vec3 centre;
          for (auto id : ids) centre = centre + mesh.vertices[id];
          centre = (1.0 / static_cast<double>(ids.size())) * centre;
          const auto cid = static_cast<std::uint32_t>(mesh.vertices.size());
          mesh.vertices.push_back(centre);
          for (std::size_t n = 0; n < ids.size(); ++n)
            mesh.triangles.push_back({cid, ids[n], ids[(n + 1) % ids.size()]});
        }
      }
  return mesh;
}

}  // namespace atriamap
