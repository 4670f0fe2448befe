#include "atriamap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "atriamap/error.hpp"

namespace atriamap {

double dice(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.dims() != b.dims()) throw Error(ErrorKind::ShapeMismatch, "dice", "grids differ in dims");
  std::size_t na = 0, nb = 0, both = 0;
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const bool x = va[i] > 0.5f, y = vb[i] > 0.5f;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) throw Error(ErrorKind::UndefinedMetric, "dice", "both grids are empty");
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

void EamSimConfig::validate() const {
  if (!(threshold > 0.0) || !std::isfinite(threshold))
    throw Error(ErrorKind::InvalidSpec, "simulate", "threshold must be finite and > 0");
}

PointCloud simulate_acquisition(const VoxelGrid& truth, const EamSimConfig& config) {
  constexpr const char* stage = "simulate";
  config.validate();
  if (truth.foreground_count() == 0) throw Error(ErrorKind::EmptyVolume, stage, "truth has no foreground");
  PointCloud cloud;
  if (config.n_points == 0) return cloud;
  const TriangleMesh surface = marching_cubes(truth, 0.5);
  if (surface.vertices.empty()) throw Error(ErrorKind::EmptySurface, stage, "truth surface has no vertices");

  const std::size_t nv = surface.vertices.size();
  std::size_t n = config.n_points;
  if (n > nv) {
    spdlog::warn("simulate: {} points requested but surface has {} vertices; capping", n, nv);
    n = nv;
  }
  // Partial Fisher-Yates: the first n entries are a uniform sample without
  // replacement.
  std::vector<std::uint32_t> idx(nv);
  std::iota(idx.begin(), idx.end(), 0u);
  Rng rng(config.seed);
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(nv - i)]);

  const double t = config.threshold;
  const Dims d = truth.dims();
  std::vector<std::size_t> hits;
  for (std::size_t s = 0; s < n; ++s) {
    const Vec3 v = surface.vertices[idx[s]];
    const int x0 = std::max(0, static_cast<int>(std::floor(v.x - t)));
    const int y0 = std::max(0, static_cast<int>(std::floor(v.y - t)));
    const int z0 = std::max(0, static_cast<int>(std::floor(v.z - t)));
    const int x1 = std::min(static_cast<int>(d.x) - 1, static_cast<int>(std::ceil(v.x + t)));
    const int y1 = std::min(static_cast<int>(d.y) - 1, static_cast<int>(std::ceil(v.y + t)));
    const int z1 = std::min(static_cast<int>(d.z) - 1, static_cast<int>(std::ceil(v.z + t)));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (truth.at(x, y, z) <= 0.5f) continue;
          const Vec3 c{double(x), double(y), double(z)};
          if (norm(c - v) <= t) hits.push_back(truth.index(x, y, z));
        }
  }
  std::sort(hits.begin(), hits.end());
  hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
  cloud.points.reserve(hits.size());
  for (auto i : hits) {
    const Index3 c = truth.coords(i);
    cloud.points.push_back({double(c.x), double(c.y), double(c.z)});
  }
  return cloud;
}

Dims model_dims(const Model& model) {
  return std::visit([](const auto& m) { return m.dims; }, model);
}

const char* model_kind(const Model& model) { return std::holds_alternative<RbmModel>(model) ? "rbm" : "vae"; }

namespace {

VoxelGrid mask(const VoxelGrid& mean, const VoxelGrid& stdev, double sign) {
  const auto m = mean.values(), s = stdev.values();
  std::vector<float> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = std::clamp(double(m[i]) + sign * double(s[i]), 0.0, 1.0);
    out[i] = v > 0.5 ? 1.0f : 0.0f;
  }
  return VoxelGrid(mean.dims(), GridKind::Binary, std::move(out), mean.spacing());
}

TriangleMesh surface_of(const VoxelGrid& m, const PostprocessOptions& post) {
  TriangleMesh mesh = marching_cubes(m, 0.5);
  if (mesh.empty()) return mesh;
  return postprocess(mesh, post);
}

}  // namespace

Reconstruction reconstruct(const PointCloud& points, const Model& model, const ReconstructOptions& options) {
  Reconstruction r;
  r.hull = alpha_hull_fill(points, model_dims(model)).grid;
  Rng rng(options.seed);
  r.posterior = std::visit(
      [&](const auto& m) -> PosteriorSummary {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, RbmModel>)
          return posterior_predictive(r.hull, m, options.n_samples, rng);
        else
          return posterior_predictive_vae(r.hull, m, options.n_samples, rng);
      },
      model);
  r.mean_mask = mask(r.posterior.mean, r.posterior.std, 0.0);
  r.lower_mask = mask(r.posterior.mean, r.posterior.std, -1.0);
  r.upper_mask = mask(r.posterior.mean, r.posterior.std, 1.0);
  r.mean_mesh = surface_of(r.mean_mask, options.post);
  r.lower_mesh = surface_of(r.lower_mask, options.post);
  r.upper_mesh = surface_of(r.upper_mask, options.post);
  return r;
}

double sample_trilinear(const VoxelGrid& grid, Vec3 p) {
  const Dims d = grid.dims();
  double f[3];
  int i0[3], i1[3];
  for (int a = 0; a < 3; ++a) {
    const double hi = static_cast<double>(d[a] - 1);
    const double c = std::clamp(p[a], 0.0, hi);
    const double fl = std::floor(c);
    i0[a] = static_cast<int>(fl);
    i1[a] = std::min(i0[a] + 1, static_cast<int>(d[a]) - 1);
    f[a] = c - fl;
  }
  double v = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
    const double w = (bx ? f[0] : 1 - f[0]) * (by ? f[1] : 1 - f[1]) * (bz ? f[2] : 1 - f[2]);
    if (w == 0.0) continue;
    v += w * grid.at(bx ? i1[0] : i0[0], by ? i1[1] : i0[1], bz ? i1[2] : i0[2]);
  }
  return v;
}

}  // namespace atriamap
