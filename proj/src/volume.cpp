#include <algorithm>
#include <cmath>
#include <string>

#include "atriamap/error.hpp"
#include "atriamap/volume.hpp"

namespace atriamap {
namespace {

constexpr const char* kStage = "volume";

bool in_unit(float v) { return v >= 0.f && v <= 1.f; }

}  // namespace

void FieldOfView::validate() const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (!std::isfinite(p_min[i]) || !std::isfinite(p_max[i]) || !(p_min[i] < p_max[i]))
      throw Error(ErrorKind::InvalidSpec, kStage, "field of view needs p_min < p_max on every axis",
                  std::to_string(i));
    if (n[i] < 2)
      throw Error(ErrorKind::InvalidSpec, kStage, "field of view needs at least 2 voxels per axis",
                  std::to_string(i));
  }
}

Vec3 FieldOfView::spacing() const {
  return {(p_max.x - p_min.x) / n.x, (p_max.y - p_min.y) / n.y, (p_max.z - p_min.z) / n.z};
}

VoxelGrid::VoxelGrid(Dims dims, GridKind kind, std::array<float, 3> spacing)
    : dims_(dims), kind_(kind), spacing_(spacing), values_(dims.count(), 0.f) {}

VoxelGrid::VoxelGrid(Dims dims, GridKind kind, std::vector<float> values,
                     std::array<float, 3> spacing)
    : dims_(dims), kind_(kind), spacing_(spacing), values_(std::move(values)) {
  if (values_.size() != dims_.count())
    throw Error(ErrorKind::ShapeMismatch, kStage, "value count does not match dims");
  for (float v : values_) {
    if (!in_unit(v)) throw Error(ErrorKind::InvalidInput, kStage, "grid value outside [0,1]");
    if (kind_ == GridKind::Binary && v != 0.f && v != 1.f)
      throw Error(ErrorKind::InvalidInput, kStage, "binary grid value not in {0,1}");
  }
}

VoxelGrid VoxelGrid::from_probabilities(Dims dims, std::span<const double> values,
                                        std::array<float, 3> spacing) {
  return VoxelGrid(dims, GridKind::Probability, std::vector<float>(values.begin(), values.end()),
                   spacing);
}

void VoxelGrid::set(std::size_t i, float v) {
  if (!in_unit(v) || (kind_ == GridKind::Binary && v != 0.f && v != 1.f))
    throw Error(ErrorKind::InvalidInput, kStage, "value violates grid kind");
  values_.at(i) = v;
}

std::size_t VoxelGrid::foreground_count() const {
  return static_cast<std::size_t>(std::count_if(values_.begin(), values_.end(), [](float v) { return v > 0.5f; }));
}

VoxelGrid VoxelGrid::threshold(double t) const {
  VoxelGrid out(dims_, GridKind::Binary, spacing_);
  for (std::size_t i = 0; i < values_.size(); ++i) out.values_[i] = values_[i] > t ? 1.f : 0.f;
  return out;
}

Index3 voxelize(Vec3 p, const FieldOfView& fov) {
  if (!is_finite(p)) throw Error(ErrorKind::InvalidInput, kStage, "non-finite point coordinate");
  int v[3];
  for (std::size_t i = 0; i < 3; ++i) {
    if (p[i] < fov.p_min[i] || p[i] > fov.p_max[i])
      throw Error(ErrorKind::OutOfFov, kStage,
                  "point outside field of view on axis " + std::to_string(i), std::to_string(i));
    const double t = (p[i] - fov.p_min[i]) / (fov.p_max[i] - fov.p_min[i]);
    const auto n = static_cast<long>(fov.n[i]);
    v[i] = static_cast<int>(std::clamp(static_cast<long>(std::floor(n * t)), 0L, n - 1));
  }
  return {v[0], v[1], v[2]};
}

Voxelized points_to_grid(const PointCloud& cloud, const FieldOfView& fov, FovPolicy policy) {
  fov.validate();
  const Vec3 sp = fov.spacing();
  Voxelized out{VoxelGrid(fov.n, GridKind::Binary,
                          std::array<float, 3>{static_cast<float>(sp.x), static_cast<float>(sp.y), static_cast<float>(sp.z)}),
                0};
  for (const Vec3& p : cloud.points) {
    try {
      const Index3 v = voxelize(p, fov);
      out.grid.set(v.x, v.y, v.z, 1.f);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::OutOfFov || policy == FovPolicy::Strict) throw;
      ++out.skipped;
    }
  }
  return out;
}

VoxelGrid prepare_volume(const VoxelGrid& grid, Dims target) {
  const Dims d = grid.dims();
  if (target.x == 0 || target.y == 0 || target.z == 0)
    throw Error(ErrorKind::InvalidSpec, kStage, "target dims must be positive");
  int lo[3] = {INT32_MAX, INT32_MAX, INT32_MAX}, hi[3] = {-1, -1, -1};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] <= 0.5f) continue;
    const Index3 c = grid.coords(i);
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], c[a]);
      hi[a] = std::max(hi[a], c[a]);
    }
  }
  if (hi[0] < 0) throw Error(ErrorKind::EmptyVolume, kStage, "grid has no foreground");

  // Crop window [start, start + extent) per axis. A window narrower than the
  // target is widened symmetrically; cells outside the input read as 0.
  long start[3], extent[3];
  for (int a = 0; a < 3; ++a) {
    long s = std::max(0, lo[a] - 1);
    long e = std::min<long>(d[a] - 1, hi[a] + 1);
    long ext = e - s + 1;
    if (ext < static_cast<long>(target[a])) {
      const long grow = static_cast<long>(target[a]) - ext;
      s -= grow / 2;
      ext = target[a];
    }
    start[a] = s;
    extent[a] = ext;
  }

  VoxelGrid out(target, grid.kind(),
                std::array<float, 3>{grid.spacing()[0] * static_cast<float>(extent[0]) / target.x,
                 grid.spacing()[1] * static_cast<float>(extent[1]) / target.y,
                 grid.spacing()[2] * static_cast<float>(extent[2]) / target.z});
  auto ceil_div = [](long num, long den) { return num >= 0 ? (num + den - 1) / den : -((-num) / den); };
  auto cell_range = [&](int a, long o) {
    // Output cell o owns the input cells whose centres i + 0.5 fall in
    // [o*E/T, (o+1)*E/T). E >= T, so every cell owns at least one.
    const long T = target[a], E = extent[a];
    const long first = ceil_div(2 * o * E - T, 2 * T);
    const long last = ceil_div(2 * (o + 1) * E - T, 2 * T) - 1;
    return std::pair<long, long>{start[a] + first, start[a] + last};
  };
  for (long oz = 0; oz < target.z; ++oz) {
    const auto [z0, z1] = cell_range(2, oz);
    for (long oy = 0; oy < target.y; ++oy) {
      const auto [y0, y1] = cell_range(1, oy);
      for (long ox = 0; ox < target.x; ++ox) {
        const auto [x0, x1] = cell_range(0, ox);
        double sum = 0.0;
        long count = 0, ones = 0;
        for (long z = z0; z <= z1; ++z)
          for (long y = y0; y <= y1; ++y)
            for (long x = x0; x <= x1; ++x) {
              ++count;
              if (!grid.contains(static_cast<int>(x), static_cast<int>(y), static_cast<int>(z))) continue;
              const float v = grid.at(static_cast<int>(x), static_cast<int>(y), static_cast<int>(z));
              sum += v;
              if (v > 0.5f) ++ones;
            }
        const float value = grid.is_binary() ? (2 * ones >= count ? 1.f : 0.f)
                                             : static_cast<float>(sum / static_cast<double>(count));
        out.set(static_cast<int>(ox), static_cast<int>(oy), static_cast<int>(oz), value);
      }
    }
  }
  return out;
}

std::vector<VoxelGrid> prepare_dataset(std::span<const VoxelGrid> grids, Dims target) {
  std::vector<VoxelGrid> out;
  out.reserve(grids.size());
  for (const auto& g : grids) out.push_back(prepare_volume(g, target));
  return out;
}

std::pair<std::vector<int>, int> label_components(const VoxelGrid& grid) {
  std::vector<int> label(grid.size(), 0);
  std::vector<std::size_t> stack;
  int next = 0;
  for (std::size_t seed = 0; seed < grid.size(); ++seed) {
    if (grid[seed] <= 0.5f || label[seed] != 0) continue;
    label[seed] = ++next;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const Index3 c = grid.coords(i);
      const Index3 nb[6] = {{c.x - 1, c.y, c.z}, {c.x + 1, c.y, c.z}, {c.x, c.y - 1, c.z},
                            {c.x, c.y + 1, c.z}, {c.x, c.y, c.z - 1}, {c.x, c.y, c.z + 1}};
      for (const Index3& q : nb) {
        if (!grid.contains(q.x, q.y, q.z)) continue;
        const std::size_t j = grid.index(q.x, q.y, q.z);
        if (grid[j] > 0.5f && label[j] == 0) {
          label[j] = next;
          stack.push_back(j);
        }
      }
    }
  }
  return {std::move(label), next};
}

}  // namespace atriamap
