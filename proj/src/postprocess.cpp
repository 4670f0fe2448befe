#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_map>

#include "atriamap/error.hpp"
#include "atriamap/geometry.hpp"

namespace atriamap {
namespace {

constexpr const char* kStage = "geometry";

std::uint64_t undirected(std::uint32_t a, std::uint32_t b) {
  if (a > b) std::swap(a, b);
  return (std::uint64_t{a} << 32) | b;
}

// Drops unreferenced vertices, preserving the relative order of the rest.
TriangleMesh compact(const TriangleMesh& mesh, const std::vector<char>& keep_triangle) {
  TriangleMesh out;
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  std::vector<char> used(mesh.vertices.size(), 0);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    if (keep_triangle[t])
      for (auto v : mesh.triangles[t]) used[v] = 1;
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
    if (used[v]) {
      remap[v] = static_cast<std::int64_t>(out.vertices.size());
      out.vertices.push_back(mesh.vertices[v]);
    }
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    if (keep_triangle[t]) {
      const auto& tri = mesh.triangles[t];
      out.triangles.push_back({static_cast<std::uint32_t>(remap[tri[0]]), static_cast<std::uint32_t>(remap[tri[1]]),
                               static_cast<std::uint32_t>(remap[tri[2]])});
    }
  return out;
}

void smooth(TriangleMesh& mesh, int iters, double lambda) {
  std::vector<std::vector<std::uint32_t>> nbrs(mesh.vertices.size());
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      nbrs[t[e]].push_back(t[(e + 1) % 3]);
      nbrs[t[(e + 1) % 3]].push_back(t[e]);
    }
  for (auto& n : nbrs) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  std::vector<Vec3> next(mesh.vertices.size());
  for (int it = 0; it < iters; ++it) {
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
      if (nbrs[v].empty()) {
        next[v] = mesh.vertices[v];
        continue;
      }
      Vec3 avg;
      for (auto u : nbrs[v]) avg = avg + mesh.vertices[u];
      avg = (1.0 / static_cast<double>(nbrs[v].size())) * avg;
      next[v] = mesh.vertices[v] + lambda * (avg - mesh.vertices[v]);
    }
    mesh.vertices.swap(next);
  }
}

// Triangulates every boundary loop by a fan from its first vertex, winding
// opposite to the boundary edges so orientation stays consistent.
void fill_holes(TriangleMesh& mesh) {
  std::unordered_map<std::uint64_t, int> count;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) ++count[undirected(t[e], t[(e + 1) % 3])];
  std::multimap<std::uint32_t, std::uint32_t> next;  // boundary edge a -> b as it appears in a triangle
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      const auto a = t[e], b = t[(e + 1) % 3];
      if (count[undirected(a, b)] == 1) next.emplace(a, b);
    }
  while (!next.empty()) {
    std::vector<std::uint32_t> loop;
    auto it = next.begin();
    const std::uint32_t start = it->first;
    std::uint32_t cur = start;
    while (true) {
      it = next.find(cur);
      if (it == next.end()) break;
      loop.push_back(cur);
      cur = it->second;
      next.erase(it);
      if (cur == start) break;
    }
    if (cur != start || loop.size() < 3) continue;  // open chain: nothing sensible to fill
    for (std::size_t i = 1; i + 1 < loop.size(); ++i)
      mesh.triangles.push_back({loop[0], loop[i + 1], loop[i]});
  }
}

}  // namespace

void TriangleMesh::validate() const {
  for (const Vec3& v : vertices)
    if (!is_finite(v)) throw Error(ErrorKind::InvalidInput, kStage, "non-finite mesh vertex");
  for (const auto& t : triangles) {
    for (auto i : t)
      if (i >= vertices.size()) throw Error(ErrorKind::InvalidInput, kStage, "triangle index out of range");
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
      throw Error(ErrorKind::InvalidInput, kStage, "degenerate triangle");
  }
}

MeshTopology topology(const TriangleMesh& mesh) {
  MeshTopology topo;
  std::unordered_map<std::uint64_t, int> count;
  std::vector<char> used(mesh.vertices.size(), 0);
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      ++count[undirected(t[e], t[(e + 1) % 3])];
      used[t[e]] = 1;
    }
  }
  topo.faces = mesh.triangles.size();
  topo.vertices = static_cast<std::size_t>(std::count(used.begin(), used.end(), 1));
  topo.edges = count.size();
  for (const auto& [_, c] : count) {
    if (c == 1) ++topo.boundary_edges;
    if (c > 2) ++topo.nonmanifold_edges;
  }
  return topo;
}

double signed_volume(const TriangleMesh& mesh) {
  double v = 0.0;
  for (const auto& t : mesh.triangles)
    v += dot(mesh.vertices[t[0]], cross(mesh.vertices[t[1]], mesh.vertices[t[2]]));
  return v / 6.0;
}

std::pair<std::vector<int>, int> mesh_components(const TriangleMesh& mesh) {
  std::vector<std::uint32_t> parent(mesh.vertices.size());
  std::iota(parent.begin(), parent.end(), 0u);
  auto find = [&](std::uint32_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& t : mesh.triangles) {
    const auto r0 = find(t[0]);
    for (int e = 1; e < 3; ++e) {
      const auto r = find(t[e]);
      if (r != r0) parent[r] = r0;
    }
  }
  std::unordered_map<std::uint32_t, int> label_of_root;
  std::vector<int> labels(mesh.triangles.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto r = find(mesh.triangles[t][0]);
    auto [it, fresh] = label_of_root.try_emplace(r, static_cast<int>(label_of_root.size()));
    labels[t] = it->second;
  }
  return {std::move(labels), static_cast<int>(label_of_root.size())};
}

TriangleMesh postprocess(const TriangleMesh& mesh, const PostprocessOptions& opts) {
  mesh.validate();
  if (mesh.empty()) return {};
  auto [labels, count] = mesh_components(mesh);
  std::vector<std::size_t> sizes(count, 0);
  for (int l : labels) ++sizes[l];
  // First-seen label wins ties, so the choice is deterministic.
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  if (static_cast<double>(sizes[keep]) < opts.min_component_fraction * static_cast<double>(mesh.triangles.size()))
    throw Error(ErrorKind::DegenerateInput, kStage, "surface is fragmented", "fragmented");
  std::vector<char> keep_tri(labels.size());
  for (std::size_t t = 0; t < labels.size(); ++t) keep_tri[t] = labels[t] == keep;
  TriangleMesh out = compact(mesh, keep_tri);
  smooth(out, opts.smooth_iters, opts.smooth_lambda);
  fill_holes(out);
  return out;
}

}  // namespace atriamap
