#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "atriamap/error.hpp"
#include "atriamap/eval.hpp"
#include "atriamap/parallel.hpp"
#include "doctest.h"

using namespace atriamap;

namespace {

VoxelGrid random_binary(Dims d, double p, Rng& rng) {
  std::vector<float> v(d.count());
  for (auto& x : v) x = rng.bernoulli(p) ? 1.f : 0.f;
  return VoxelGrid(d, GridKind::Binary, v);
}

std::set<std::size_t> foreground(const VoxelGrid& g) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.values()[i] > 0.5f) s.insert(i);
  return s;
}

double dice_by_sets(const VoxelGrid& a, const VoxelGrid& b) {
  const auto A = foreground(a), B = foreground(b);
  std::vector<std::size_t> both;
  std::set_intersection(A.begin(), A.end(), B.begin(), B.end(), std::back_inserter(both));
  return 2.0 * both.size() / (A.size() + B.size());
}

bool subset(const VoxelGrid& a, const VoxelGrid& b) {
  const auto A = foreground(a), B = foreground(b);
  return std::includes(B.begin(), B.end(), A.begin(), A.end());
}

PhantomSpec small_spec() {
  PhantomSpec s;
  s.semi_axes = {3.0, 2.5, 2.3};
  s.vein_radius_min = 0.7;
  s.vein_radius_max = 1.0;
  return s;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.point_counts = {10, 40};
  c.rbm.epochs = 3;
  c.rbm.hidden = 6;
  c.vae.epochs = 2;
  c.vae.arch.hidden = {8};
  c.vae.arch.d = 2;
  c.n_samples = 8;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("dice examples and properties") {
  const Dims d{4, 1, 1};
  const VoxelGrid a(d, GridKind::Binary, {1, 1, 0, 0}), b(d, GridKind::Binary, {0, 1, 1, 0}),
      c(d, GridKind::Binary, {0, 0, 0, 1}), empty(d, GridKind::Binary);
  CHECK(dice(a, a) == 1.0);
  CHECK(dice(a, b) == 0.5);
  CHECK(dice(a, c) == 0.0);
  CHECK(dice(a, empty) == 0.0);
  try {
    dice(empty, empty);
    FAIL("expected undefined metric");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UndefinedMetric);
  }
  CHECK_THROWS_AS(dice(a, VoxelGrid({2, 2, 1}, GridKind::Binary)), Error);

  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_binary({20, 20, 20}, rng.uniform(0.05, 0.6), rng);
    const auto y = random_binary({20, 20, 20}, rng.uniform(0.05, 0.6), rng);
    const double dxy = dice(x, y);
    CHECK(std::abs(dxy - dice_by_sets(x, y)) <= 1e-12);
    CHECK(dxy == dice(y, x));
    CHECK(dxy >= 0.0);
    CHECK(dxy <= 1.0);
  }
  // Growing the intersection with fixed set sizes raises dice.
  std::vector<float> u(10, 0.f), v(10, 0.f);
  for (int i = 0; i < 5; ++i) u[i] = 1.f;
  double prev = -1.0;
  for (int shift = 5; shift >= 0; --shift) {
    std::fill(v.begin(), v.end(), 0.f);
    for (int i = 0; i < 5; ++i) v[i + shift] = 1.f;
    const double dv = dice(VoxelGrid({10, 1, 1}, GridKind::Binary, u), VoxelGrid({10, 1, 1}, GridKind::Binary, v));
    CHECK(dv > prev);
    prev = dv;
  }
}

TEST_CASE("simulated acquisition") {
  const auto truth = synth_phantom(small_spec(), {12, 12, 12});
  CHECK(simulate_acquisition(truth, {0, 1.0, 3}).points.empty());

  const auto surface = marching_cubes(truth, 0.5);
  const auto cloud = simulate_acquisition(truth, {30, 1.0, 3});
  CHECK(!cloud.points.empty());
  std::set<std::size_t> seen;
  for (const Vec3& p : cloud.points) {
    const int x = int(p.x), y = int(p.y), z = int(p.z);
    CHECK(truth.at(x, y, z) == 1.0f);
    CHECK(seen.insert(truth.index(x, y, z)).second);
    double best = 1e9;
    for (const Vec3& v : surface.vertices) best = std::min(best, norm(v - p));
    CHECK(best <= 1.0);
  }
  const auto again = simulate_acquisition(truth, {30, 1.0, 3});
  CHECK(again.points == cloud.points);
  CHECK(simulate_acquisition(truth, {30, 1.0, 4}).points != cloud.points);

  // More than the vertex count: capped at every vertex.
  const auto all = simulate_acquisition(truth, {surface.vertices.size() + 50, 1.0, 3});
  const auto exact = simulate_acquisition(truth, {surface.vertices.size(), 1.0, 9});
  CHECK(all.points == exact.points);

  CHECK_THROWS_AS(simulate_acquisition(truth, {10, 0.0, 1}), Error);
  CHECK_THROWS_AS(simulate_acquisition(VoxelGrid({5, 5, 5}, GridKind::Binary), {10, 1.0, 1}), Error);
}

TEST_CASE("trilinear sampling") {
  std::vector<float> v(8);
  for (int i = 0; i < 8; ++i) v[i] = static_cast<float>(i) / 8.f;
  const VoxelGrid g({2, 2, 2}, GridKind::Probability, v);
  CHECK(sample_trilinear(g, {1, 0, 0}) == doctest::Approx(1.0 / 8));
  CHECK(sample_trilinear(g, {0.5, 0.5, 0.5}) == doctest::Approx(3.5 / 8));
  CHECK(sample_trilinear(g, {-3, -3, -3}) == doctest::Approx(0.0));
  CHECK(sample_trilinear(g, {5, 5, 5}) == doctest::Approx(7.0 / 8));
}

TEST_CASE("reconstruction follows the committed stage trace") {
  std::ifstream in(std::string(ATRIAMAP_TEST_DATA) + "/trace_3cubed.json");
  REQUIRE(in);
  const auto golden = nlohmann::json::parse(in);

  auto rbm = RbmModel::zeros({3, 3, 3}, 2);
  std::fill(rbm.b.begin(), rbm.b.end(), -5.0);
  rbm.b[13] = 5.0;
  PointCloud cloud;
  for (const auto& p : golden["points"]) cloud.points.push_back({p[0], p[1], p[2]});

  // Stage 1: hull fill.
  const auto hull = alpha_hull_fill(cloud, {3, 3, 3}).grid;
  const auto hv = foreground(hull);
  CHECK(std::vector<std::size_t>(hv.begin(), hv.end()) == golden["hull_voxels"].get<std::vector<std::size_t>>());

  const auto r = reconstruct(cloud, rbm, {20, 7, {}});
  CHECK(std::ranges::equal(r.hull.values(), hull.values()));
  // Stage 2: posterior.
  for (std::size_t i = 0; i < 27; ++i) {
    const double want = i == 13 ? golden["mean_inside"].get<double>() : golden["mean_outside"].get<double>();
    CHECK(std::abs(r.posterior.mean.values()[i] - want) < 1e-7);
    CHECK(r.posterior.std.values()[i] == golden["std"].get<double>());
  }
  // Stage 3: threshold.
  const auto mv = foreground(r.mean_mask);
  CHECK(std::vector<std::size_t>(mv.begin(), mv.end()) == golden["mask_voxels"].get<std::vector<std::size_t>>());
  // Stages 4 and 5: surface and postprocessing.
  CHECK(r.mean_mesh.triangles.size() == golden["mesh_triangles"].get<std::size_t>());
  std::multiset<std::array<double, 3>> got, want;
  for (const auto& v : r.mean_mesh.vertices) got.insert({v.x, v.y, v.z});
  for (const auto& v : golden["mesh_vertices"]) want.insert({v[0].get<double>(), v[1].get<double>(), v[2].get<double>()});
  CHECK(got == want);
  CHECK(std::abs(signed_volume(r.mean_mesh) - golden["mesh_volume"].get<double>()) < 1e-12);
  CHECK(topology(r.mean_mesh).closed());
  // Zero std: all three surfaces coincide.
  CHECK(r.lower_mesh.vertices == r.mean_mesh.vertices);
  CHECK(r.upper_mesh.vertices == r.mean_mesh.vertices);
  CHECK(r.lower_mesh.triangles == r.mean_mesh.triangles);
}

TEST_CASE("reconstruction masks are nested and degenerate input propagates") {
  Rng rng(4);
  const auto truth = synth_phantom(small_spec(), {12, 12, 12});
  std::vector<VoxelGrid> train = {truth, synth_phantom([] { auto s = small_spec(); s.seed = 9; return s; }(), {12, 12, 12})};
  CdConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 20;
  const auto rbm = train_cd(train, cfg).model;
  const auto cloud = simulate_acquisition(truth, {20, 1.0, 2});
  for (const Model& model : {Model(rbm), Model(initialize_vae(train, [] {
                               VaeTrainConfig v;
                               v.arch.hidden = {6};
                               v.arch.d = 2;
                               return v;
                             }()))}) {
    const auto r = reconstruct(cloud, model, {40, 3, {}});
    CHECK(subset(r.lower_mask, r.mean_mask));
    CHECK(subset(r.mean_mask, r.upper_mask));
    for (float s : r.posterior.std.values()) CHECK(s >= 0.0f);
    for (const auto* mesh : {&r.mean_mesh, &r.lower_mesh, &r.upper_mesh})
      if (!mesh->empty()) CHECK(topology(*mesh).closed());
  }
  PointCloud flat;
  for (int i = 0; i < 6; ++i) flat.points.push_back({double(i), double(i % 3), 2.0});
  try {
    reconstruct(flat, rbm, {});
    FAIL("expected degenerate input");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateInput);
  }
}

TEST_CASE("phantom corpus") {
  const auto a = phantom_corpus(3, 4, {12, 12, 12}, small_spec());
  REQUIRE(a.size() == 4);
  CHECK(a[0].id == "phantom_000");
  CHECK(a[3].id == "phantom_003");
  CHECK(!std::ranges::equal(a[0].grid.values(), a[1].grid.values()));
  const auto b = phantom_corpus(3, 4, {12, 12, 12}, small_spec());
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::ranges::equal(a[i].grid.values(), b[i].grid.values()));
  const auto fine = phantom_corpus(3, 2, {12, 12, 12}, small_spec(), 2);
  for (const auto& v : fine) {
    CHECK(v.grid.dims() == Dims{12, 12, 12});
    CHECK(v.grid.is_binary());
    CHECK(v.grid.foreground_count() > 0);
  }
  CHECK_THROWS_AS(phantom_corpus(3, 2, {12, 12, 12}, small_spec(), 0), Error);
}

TEST_CASE("experiment runner") {
  const auto corpus = phantom_corpus(7, 6, {12, 12, 12}, small_spec());
  const std::vector<NamedVolume> train(corpus.begin(), corpus.begin() + 4), test(corpus.begin() + 4, corpus.end());
  const auto cfg = small_config();

  set_max_threads(1);
  const auto r1 = run_experiment(train, test, cfg);
  set_max_threads(3);
  const auto r2 = run_experiment(train, test, cfg);
  set_max_threads(0);
  CHECK(report_jsonl(r1) == report_jsonl(r2));
  CHECK(report_table(r1) == report_table(r2));

  REQUIRE(r1.cases.size() == 2 * 2 * 2);
  CHECK(r1.failures() == 0);
  for (const auto& c : r1.cases) {
    REQUIRE(c.dice);
    CHECK(*c.dice >= 0.0);
    CHECK(*c.dice <= 1.0);
  }
  // Recount one case from scratch with set operations.
  const auto& c0 = r1.cases.front();
  CHECK(c0.model == "rbm");
  CdConfig rc = cfg.rbm;
  rc.seed = r1.rbm_seed;
  std::vector<VoxelGrid> grids;
  for (const auto& v : train) grids.push_back(v.grid);
  const auto rbm = train_cd(grids, rc).model;
  const auto& truth = test[0].grid;
  const auto cloud = simulate_acquisition(truth, {c0.points, cfg.sim_threshold, c0.acquisition_seed});
  CHECK(cloud.points.size() == c0.acquired);
  const auto rec = reconstruct(cloud, rbm, {cfg.n_samples, c0.posterior_seed, cfg.post});
  CHECK(std::abs(*c0.dice - dice_by_sets(rec.mean_mask, truth)) <= 1e-12);

  const auto m = r1.median("rbm", 10);
  REQUIRE(m);
  std::vector<double> ds;
  for (const auto& c : r1.cases)
    if (c.model == "rbm" && c.points == 10) ds.push_back(*c.dice);
  CHECK(*m == doctest::Approx(0.5 * (ds[0] + ds[1])));

  // One header, one line per case, one per median.
  const auto text = report_jsonl(r1);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 8 + 4);
  const auto header = nlohmann::json::parse(text.substr(0, text.find('\n')));
  CHECK(header["record"] == "header");
  CHECK(header["train"].size() == 4);
  CHECK(header["config"]["point_counts"] == std::vector<int>{10, 40});
  CHECK(report_table(r1).find("RBM") != std::string::npos);

  CHECK_THROWS_AS(run_experiment(train, corpus, cfg), Error);
  auto only_rbm = cfg;
  only_rbm.run_vae = false;
  const auto r3 = run_experiment(train, test, only_rbm);
  CHECK(r3.cases.size() == 4);
  CHECK(report_table(r3).find("VAE") == std::string::npos);
}

TEST_CASE("failed cases are recorded and the run continues") {
  const auto corpus = phantom_corpus(7, 5, {12, 12, 12}, small_spec());
  std::vector<NamedVolume> train(corpus.begin(), corpus.begin() + 4);
  std::vector<NamedVolume> test = {corpus[4], {"blank", VoxelGrid({12, 12, 12}, GridKind::Binary)}};
  auto cfg = small_config();
  cfg.run_vae = false;
  const auto r = run_experiment(train, test, cfg);
  CHECK(r.failures() == 2);
  for (const auto& c : r.cases) {
    if (c.volume == "blank") {
      CHECK_FALSE(c.dice);
      CHECK(c.error.find("empty-volume") != std::string::npos);
    } else {
      CHECK(c.dice);
    }
  }
  CHECK(report_jsonl(r).find("\"error\"") != std::string::npos);
}
