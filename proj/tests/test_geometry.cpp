#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include "atriamap/error.hpp"
#include "atriamap/geometry.hpp"
#include "atriamap/rng.hpp"
#include "doctest.h"
#include "geometry_oracle.hpp"

using namespace atriamap;

namespace {

using oracle::I3;
using oracle::det_int;
using oracle::in_tetra;
using oracle::sub;

Vec3 to_vec(I3 p) { return {double(p[0]), double(p[1]), double(p[2])}; }

std::string degeneracy_of(const PointCloud& c) {
  try {
    alpha_hull_fill(c, {20, 20, 20});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateInput);
    return e.detail();
  }
  return "none";
}

VoxelGrid random_binary(Rng& rng, Dims d, double density) {
  VoxelGrid g(d, GridKind::Binary);
  for (std::size_t i = 0; i < g.size(); ++i) g.set(i, rng.uniform() < density ? 1.f : 0.f);
  return g;
}

// Closed bipyramid over an n-gon: n + 2 vertices, 2n triangles.
TriangleMesh bipyramid(int n, Vec3 offset) {
  TriangleMesh m;
  for (int i = 0; i < n; ++i) {
    const double a = 2 * std::numbers::pi * i / n;
    m.vertices.push_back(offset + Vec3{std::cos(a), std::sin(a), 0});
  }
  m.vertices.push_back(offset + Vec3{0, 0, 1});
  m.vertices.push_back(offset + Vec3{0, 0, -1});
  const auto top = static_cast<std::uint32_t>(n), bot = static_cast<std::uint32_t>(n + 1);
  for (int i = 0; i < n; ++i) {
    const auto a = static_cast<std::uint32_t>(i), b = static_cast<std::uint32_t>((i + 1) % n);
    m.triangles.push_back({a, b, top});
    m.triangles.push_back({b, a, bot});
  }
  return m;
}

TriangleMesh append(TriangleMesh a, const TriangleMesh& b) {
  const auto off = static_cast<std::uint32_t>(a.vertices.size());
  a.vertices.insert(a.vertices.end(), b.vertices.begin(), b.vertices.end());
  for (auto t : b.triangles) a.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
  return a;
}

}  // namespace

TEST_CASE("orient3d signs and exact degeneracy") {
  const Vec3 a{0, 0, 0}, b{1, 0, 0}, c{0, 1, 0};
  CHECK(orient3d(a, b, c, {0, 0, 1}) == 1);
  CHECK(orient3d(a, b, c, {0, 0, -1}) == -1);
  CHECK(orient3d(a, b, c, {0.3, 0.7, 0}) == 0);
  // Non-integral coplanar points exercise the rational path.
  const Vec3 p{0.1, 0.2, 0.3}, q{1.1, 0.2, 0.3}, r{0.1, 1.2, 0.3};
  CHECK(orient3d(p, q, r, {0.6, 0.7, 0.3}) == 0);
  CHECK(orient3d(p, q, r, {0.6, 0.7, std::nextafter(0.3, 1.0)}) == 1);
  CHECK(orient3d(p, q, r, {0.6, 0.7, std::nextafter(0.3, 0.0)}) == -1);

  Rng rng(17);
  for (int t = 0; t < 500; ++t) {
    Vec3 v[4];
    for (auto& x : v) x = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    v[3] = v[0] + 0.5 * (v[1] - v[0]) + 0.25 * (v[2] - v[0]);  // nearly coplanar after rounding
    const int s = orient3d(v[0], v[1], v[2], v[3]);
    CHECK(orient3d(v[1], v[0], v[2], v[3]) == -s);
    CHECK(orient3d(v[1], v[2], v[0], v[3]) == s);
    CHECK(orient3d(v[0], v[1], v[3], v[2]) == -s);
  }
  CHECK(collinear({0, 0, 0}, {1, 1, 1}, {0.5, 0.5, 0.5}));
  CHECK(!collinear({0, 0, 0}, {1, 1, 1}, {0.5, 0.5, 0.25}));
}

TEST_CASE("hull fill of a tetrahedron matches the barycentric oracle") {
  Rng rng(101);
  int tested = 0;
  while (tested < 50) {
    std::array<I3, 4> t;
    for (auto& p : t) p = {static_cast<long long>(rng.below(20)), static_cast<long long>(rng.below(20)),
                           static_cast<long long>(rng.below(20))};
    if (det_int(sub(t[1], t[0]), sub(t[2], t[0]), sub(t[3], t[0])) == 0) continue;
    ++tested;
    PointCloud c;
    for (auto p : t) c.points.push_back(to_vec(p));
    const auto fill = alpha_hull_fill(c, {20, 20, 20});
    CHECK(fill.faces.size() == 4);
    for (int z = 0; z < 20; ++z)
      for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x)
          REQUIRE((fill.grid.at(x, y, z) > 0.5f) == in_tetra(t, {x, y, z}));
  }
}

TEST_CASE("hull of the grid corners fills the box") {
  PointCloud c;
  for (int k = 0; k < 8; ++k) c.points.push_back({(k & 1) ? 19.0 : 0.0, (k & 2) ? 19.0 : 0.0, (k & 4) ? 19.0 : 0.0});
  const auto fill = alpha_hull_fill(c, {20, 20, 20});
  CHECK(fill.grid.foreground_count() == 8000);
  CHECK(fill.faces.size() == 12);
}

TEST_CASE("hull degeneracy classes") {
  CHECK(degeneracy_of({{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}}) == "too-few-points");
  CHECK(degeneracy_of({{{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}}}) == "coincident");
  CHECK(degeneracy_of({{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {5, 5, 5}, {0, 0, 0}}}) == "collinear");
  CHECK(degeneracy_of({{{0, 0, 3}, {1, 0, 3}, {0, 1, 3}, {5, 5, 3}, {7, 2, 3}}}) == "coplanar");
  PointCloud ok{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  CHECK_THROWS_AS(alpha_hull_fill(ok, {4, 4, 4}, 2.5), Error);
  CHECK_THROWS_AS(alpha_hull_fill(PointCloud{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, NAN}}}, {4, 4, 4}), Error);
}

TEST_CASE("hull fill is discretely convex and covered by its simplices") {
  Rng rng(202);
  for (int trial = 0; trial < 15; ++trial) {
    PointCloud c;
    const std::size_t n = 4 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i)
      c.points.push_back({double(rng.below(20)), double(rng.below(20)), double(rng.below(20))});
    HullFill fill;
    try {
      fill = alpha_hull_fill(c, {20, 20, 20});
    } catch (const Error&) {
      continue;
    }
    std::vector<Index3> fg;
    for (std::size_t i = 0; i < fill.grid.size(); ++i)
      if (fill.grid[i] > 0.5f) fg.push_back(fill.grid.coords(i));
    REQUIRE(!fg.empty());

    for (int pair = 0; pair < 200; ++pair) {
      const Index3 a = fg[rng.below(fg.size())], b = fg[rng.below(fg.size())];
      const int dx = b.x - a.x, dy = b.y - a.y, dz = b.z - a.z;
      const int g = std::gcd(std::gcd(std::abs(dx), std::abs(dy)), std::abs(dz));
      for (int s = 0; s <= g; ++s) {
        const int x = a.x + (g ? dx / g * s : 0), y = a.y + (g ? dy / g * s : 0), z = a.z + (g ? dz / g * s : 0);
        CHECK(fill.grid.at(x, y, z) > 0.5f);
      }
    }
    for (const Index3& v : fg) {
      const Vec3 q{double(v.x), double(v.y), double(v.z)};
      bool covered = false;
      for (const auto& s : fill.simplices) {
        const Vec3 p0 = c.points[s[0]], p1 = c.points[s[1]], p2 = c.points[s[2]], p3 = c.points[s[3]];
        const int o = orient3d(p0, p1, p2, p3);
        if (orient3d(q, p1, p2, p3) * o >= 0 && orient3d(p0, q, p2, p3) * o >= 0 &&
            orient3d(p0, p1, q, p3) * o >= 0 && orient3d(p0, p1, p2, q) * o >= 0) {
          covered = true;
          break;
        }
      }
      REQUIRE(covered);
    }
  }
}

TEST_CASE("marching-cubes table is well formed for all 256 configurations") {
  for (int c = 0; c < 256; ++c) {
    CAPTURE(c);
    std::multiset<int> edges;
    for (const auto& loop : marching_cubes_loops(static_cast<std::uint8_t>(c))) {
      CHECK(loop.size() >= 3);
      edges.insert(loop.begin(), loop.end());
    }
    static const int E[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
    for (int e = 0; e < 12; ++e) {
      const bool crossed = ((c >> E[e][0]) & 1) != ((c >> E[e][1]) & 1);
      CHECK(edges.count(e) == (crossed ? 1u : 0u));
    }
  }
}

TEST_CASE("marching cubes basic cases") {
  CHECK(marching_cubes(VoxelGrid({5, 5, 5}, GridKind::Binary)).empty());

  VoxelGrid one({5, 5, 5}, GridKind::Binary);
  one.set(2, 2, 2, 1.f);
  const auto mesh = marching_cubes(one);
  const auto topo = topology(mesh);
  CHECK(topo.closed());
  CHECK(topo.euler() == 2);
  CHECK(topo.vertices == 6);
  CHECK(topo.faces == 8);
  // Octahedron with vertices half a voxel from the centre: volume 4/3 * (1/2)^3.
  CHECK(signed_volume(mesh) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));

  // Foreground touching the boundary still closes thanks to the padding.
  VoxelGrid full({3, 3, 3}, GridKind::Binary, std::vector<float>(27, 1.f));
  const auto box = marching_cubes(full);
  CHECK(topology(box).closed());
  CHECK(topology(box).euler() == 2);

  CHECK_THROWS_AS(marching_cubes(one, 1.0), Error);
  CHECK_THROWS_AS(marching_cubes(VoxelGrid({1, 4, 4}, GridKind::Binary)), Error);
}

TEST_CASE("marching cubes meshes are closed on random grids") {
  Rng rng(303);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_binary(rng, {10, 10, 10}, rng.uniform(0.1, 0.9));
    const auto mesh = marching_cubes(g);
    mesh.validate();
    const auto topo = topology(mesh);
    CHECK(topo.boundary_edges == 0);
    CHECK(topo.nonmanifold_edges == 0);
  }
  for (int trial = 0; trial < 10; ++trial) {
    VoxelGrid g({8, 8, 8}, GridKind::Probability);
    for (std::size_t i = 0; i < g.size(); ++i) g.set(i, static_cast<float>(rng.uniform()));
    CHECK(topology(marching_cubes(g, rng.uniform(0.2, 0.8))).closed());
  }
}

TEST_CASE("marching cubes commutes with mirroring along x") {
  Rng rng(404);
  for (int trial = 0; trial < 10; ++trial) {
    const Dims d{7, 6, 5};
    const auto g = random_binary(rng, d, 0.4);
    VoxelGrid m(d, GridKind::Binary);
    for (int z = 0; z < 5; ++z)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 7; ++x) m.set(6 - x, y, z, g.at(x, y, z));

    auto key = [](Vec3 v) { return std::array<long, 3>{std::lround(v.x * 1e6), std::lround(v.y * 1e6), std::lround(v.z * 1e6)}; };
    auto tri_set = [&](const TriangleMesh& mesh, bool mirror) {
      std::multiset<std::array<std::array<long, 3>, 3>> out;
      for (const auto& t : mesh.triangles) {
        std::array<std::array<long, 3>, 3> k;
        for (int i = 0; i < 3; ++i) {
          Vec3 v = mesh.vertices[t[i]];
          if (mirror) v.x = 6 - v.x;
          k[i] = key(v);
        }
        std::sort(k.begin(), k.end());
        out.insert(k);
      }
      return out;
    };
    CHECK(tri_set(marching_cubes(g), true) == tri_set(marching_cubes(m), false));
  }
}

TEST_CASE("postprocess keeps only the largest component") {
  const auto big = bipyramid(50, {0, 0, 0});
  const auto small = bipyramid(3, {10, 0, 0});
  REQUIRE(big.triangles.size() == 100);
  REQUIRE(small.triangles.size() == 6);
  const auto both = append(small, big);
  CHECK(mesh_components(both).second == 2);

  const auto out = postprocess(both);
  CHECK(out.triangles.size() == 100);
  CHECK(out.vertices.size() == 52);
  CHECK(mesh_components(out).second == 1);
  CHECK(topology(out).closed());
  CHECK_THROWS_AS(postprocess(both, {.min_component_fraction = 0.99}), Error);
}

TEST_CASE("postprocess preserves connectivity, counts and idempotence") {
  Rng rng(505);
  VoxelGrid g({12, 12, 12}, GridKind::Binary);
  for (int z = 3; z < 9; ++z)
    for (int y = 2; y < 10; ++y)
      for (int x = 4; x < 8; ++x) g.set(x, y, z, 1.f);
  const auto mesh = marching_cubes(g);
  const auto once = postprocess(mesh);
  const auto t0 = topology(mesh), t1 = topology(once);
  CHECK(t1.vertices == t0.vertices);
  CHECK(t1.edges == t0.edges);
  CHECK(t1.faces == t0.faces);
  const auto twice = postprocess(once);
  CHECK(twice.vertices == once.vertices);
  CHECK(twice.triangles == once.triangles);

  for (int iters : {1, 3, 10}) {
    const auto s = postprocess(mesh, {.smooth_iters = iters});
    CHECK(s.vertices.size() == once.vertices.size());
    CHECK(s.triangles.size() == once.triangles.size());
    CHECK(topology(s).closed());
  }
  CHECK(postprocess(TriangleMesh{}).empty());
}

TEST_CASE("postprocess fills holes") {
  auto mesh = bipyramid(12, {0, 0, 0});
  mesh.triangles.erase(mesh.triangles.begin() + 3);
  mesh.triangles.erase(mesh.triangles.begin() + 5);
  CHECK(topology(mesh).boundary_edges > 0);
  const auto out = postprocess(mesh);
  CHECK(topology(out).closed());
  CHECK(signed_volume(out) > 0);
}

TEST_CASE("OBJ and STL export") {
  VoxelGrid one({3, 3, 3}, GridKind::Binary);
  one.set(1, 1, 1, 1.f);
  const auto mesh = marching_cubes(one);
  const auto back = from_obj(to_obj(mesh));
  CHECK(back.vertices == mesh.vertices);
  CHECK(back.triangles == mesh.triangles);
  CHECK(to_obj(mesh).find("f 1 ") != std::string::npos);
  CHECK(to_stl(mesh).size() == 84 + 50 * mesh.triangles.size());
  CHECK_THROWS_AS(from_obj("v 0 0 0\nf 1 2 3\n"), Error);
}
