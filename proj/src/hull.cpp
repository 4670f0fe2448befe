#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "atriamap/error.hpp"
#include "atriamap/geometry.hpp"
#include "atriamap/rng.hpp"

namespace atriamap {
namespace {

constexpr const char* kStage = "geometry";

[[noreturn]] void degenerate(const char* what, const std::string& cls) {
  throw Error(ErrorKind::DegenerateInput, kStage, what, cls);
}

std::uint64_t edge_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

// Incremental 3D convex hull. Facets are kept outward-oriented: a point p
// sees facet (a,b,c) iff orient3d(a,b,c,p) > 0. Points on a facet plane are
// treated as inside, so the hull stores no coplanar interior vertices.
class Hull {
 public:
  explicit Hull(const std::vector<Vec3>& pts) : pts_(pts) {}

  void build() {
    const int n = static_cast<int>(pts_.size());
    if (n < 4) degenerate("convex hull needs at least 4 points", "too-few-points");
    int i1 = -1, i2 = -1, i3 = -1;
    for (int j = 1; j < n && i1 < 0; ++j)
      if (!(pts_[j] == pts_[0])) i1 = j;
    if (i1 < 0) degenerate("all points coincide", "coincident");
    for (int j = 1; j < n && i2 < 0; ++j)
      if (!collinear(pts_[0], pts_[i1], pts_[j])) i2 = j;
    if (i2 < 0) degenerate("all points are collinear", "collinear");
    for (int j = 1; j < n && i3 < 0; ++j)
      if (orient3d(pts_[0], pts_[i1], pts_[i2], pts_[j]) != 0) i3 = j;
    if (i3 < 0) degenerate("all points are coplanar", "coplanar");

    const int tet[4] = {0, i1, i2, i3};
    const int faces[4][4] = {{0, 1, 2, 3}, {0, 3, 1, 2}, {1, 3, 2, 0}, {0, 2, 3, 1}};
    for (const auto& f : faces) {
      int a = tet[f[0]], b = tet[f[1]], c = tet[f[2]];
      if (orient3d(pts_[a], pts_[b], pts_[c], pts_[tet[f[3]]]) > 0) std::swap(b, c);
      add_face(a, b, c);
    }

    // Randomized insertion order with a fixed stream keeps the output
    // reproducible while avoiding adversarial orderings.
    std::vector<int> order;
    for (int j = 0; j < n; ++j)
      if (j != 0 && j != i1 && j != i2 && j != i3) order.push_back(j);
    Rng rng(0x48554C4Cull);
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
    for (int p : order) insert(p);
  }

  std::vector<std::array<int, 3>> facets() const {
    std::vector<std::array<int, 3>> out;
    for (std::size_t f = 0; f < faces_.size(); ++f)
      if (alive_[f]) out.push_back(faces_[f]);
    return out;
  }

 private:
  void add_face(int a, int b, int c) {
    const int id = static_cast<int>(faces_.size());
    faces_.push_back({a, b, c});
    alive_.push_back(true);
    edges_[edge_key(a, b)] = id;
    edges_[edge_key(b, c)] = id;
    edges_[edge_key(c, a)] = id;
  }

  void insert(int p) {
    std::vector<int> visible;
    std::vector<char> is_visible(faces_.size(), 0);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!alive_[f]) continue;
      const auto& t = faces_[f];
      if (orient3d(pts_[t[0]], pts_[t[1]], pts_[t[2]], pts_[p]) > 0) {
        visible.push_back(static_cast<int>(f));
        is_visible[f] = 1;
      }
    }
    if (visible.empty()) return;

    std::vector<std::pair<int, int>> horizon;
    for (int f : visible) {
      const auto& t = faces_[f];
      for (int e = 0; e < 3; ++e) {
        const int a = t[e], b = t[(e + 1) % 3];
        const int twin = edges_.at(edge_key(b, a));
        if (!is_visible[twin]) horizon.emplace_back(a, b);
      }
    }
    for (int f : visible) {
      alive_[f] = false;
      const auto& t = faces_[f];
      for (int e = 0; e < 3; ++e) edges_.erase(edge_key(t[e], t[(e + 1) % 3]));
    }
    for (auto [a, b] : horizon) add_face(a, b, p);
  }

  const std::vector<Vec3>& pts_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<bool> alive_;
  std::unordered_map<std::uint64_t, int> edges_;
};

}  // namespace

HullFill alpha_hull_fill(const PointCloud& cloud, Dims dims, double alpha) {
  if (alpha != 0.0)
    throw Error(ErrorKind::InvalidSpec, kStage,
                "only alpha = 0 (convex hull) is supported; larger radii can open the surface");
  for (const Vec3& p : cloud.points)
    if (!is_finite(p)) throw Error(ErrorKind::InvalidInput, kStage, "non-finite point");

  Hull hull(cloud.points);
  hull.build();

  HullFill out;
  out.faces = hull.facets();
  out.grid = VoxelGrid(dims, GridKind::Binary);

  double lo[3] = {INFINITY, INFINITY, INFINITY}, hi[3] = {-INFINITY, -INFINITY, -INFINITY};
  for (const auto& f : out.faces)
    for (int v : f)
      for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], cloud.points[v][a]);
        hi[a] = std::max(hi[a], cloud.points[v][a]);
      }
  int from[3], to[3];
  for (std::size_t a = 0; a < 3; ++a) {
    from[a] = static_cast<int>(std::max(0.0, std::ceil(lo[a])));
    to[a] = static_cast<int>(std::min<double>(dims[a] - 1.0, std::floor(hi[a])));
  }
  for (int z = from[2]; z <= to[2]; ++z)
    for (int y = from[1]; y <= to[1]; ++y)
      for (int x = from[0]; x <= to[0]; ++x) {
        const Vec3 q{double(x), double(y), double(z)};
        bool inside = true;
        for (const auto& f : out.faces) {
          if (orient3d(cloud.points[f[0]], cloud.points[f[1]], cloud.points[f[2]], q) > 0) {
            inside = false;
            break;
          }
        }
        if (inside) out.grid.set(x, y, z, 1.f);
      }

  // Tetrahedralize by fanning every facet to one hull vertex; facets through
  // the apex (or coplanar with it) contribute nothing.
  const int apex = out.faces.front()[0];
  for (const auto& f : out.faces) {
    if (f[0] == apex || f[1] == apex || f[2] == apex) continue;
    if (orient3d(cloud.points[f[0]], cloud.points[f[1]], cloud.points[f[2]], cloud.points[apex]) == 0)
      continue;
    out.simplices.push_back({apex, f[0], f[1], f[2]});
  }
  return out;
}

}  // namespace atriamap
