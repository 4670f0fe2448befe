#include <algorithm>
#include <cmath>
#include <numbers>

#include "atriamap/error.hpp"
#include "atriamap/rng.hpp"
#include "atriamap/volume.hpp"

namespace atriamap {
namespace {

constexpr const char* kStage = "phantom";
constexpr double kVeinSpread = 0.45;  // lateral slope of a vein axis relative to x

struct Tube {
  Vec3 origin;
  Vec3 dir;  // unit
  double radius;
};

struct Layout {
  Vec3 centre;
  Vec3 semi;
  std::vector<Tube> tubes;
};

Vec3 grid_centre(Dims d) { return {(d.x - 1) / 2.0, (d.y - 1) / 2.0, (d.z - 1) / 2.0}; }

// Draw order is fixed: centre (3), semi-axes (3), then per vein: angle,
// spread, radius, then the size factor. Nothing is drawn for a zero jitter.
Layout make_layout(const PhantomSpec& spec, Dims dims) {
  const double j = spec.jitter;
  Rng rng(spec.seed);
  auto jit = [&]() { return j > 0.0 ? rng.uniform(-1.0, 1.0) : 0.0; };

  Layout L;
  L.centre = grid_centre(dims);
  for (std::size_t a = 0; a < 3; ++a) L.centre[a] += 0.5 * j * spec.semi_axes[a] * jit();
  for (std::size_t a = 0; a < 3; ++a) L.semi[a] = spec.semi_axes[a] * (1.0 + j * jit());

  const int left = (spec.vein_count + 1) / 2;
  for (int v = 0; v < spec.vein_count; ++v) {
    const bool is_left = v < left;
    const int k = is_left ? v : v - left;
    const int on_side = is_left ? left : spec.vein_count - left;
    double phi = std::numbers::pi / 2 + 2.0 * std::numbers::pi * k / on_side;
    phi += j * jit() * std::numbers::pi / 4;
    const double spread = kVeinSpread * (1.0 + j * jit());
    double radius = 0.5 * (spec.vein_radius_min + spec.vein_radius_max);
    if (j > 0.0) radius = rng.uniform(spec.vein_radius_min, spec.vein_radius_max);
    Vec3 d{is_left ? -1.0 : 1.0, spread * std::cos(phi), spread * std::sin(phi)};
    d = (1.0 / norm(d)) * d;
    L.tubes.push_back({L.centre, d, radius});
  }
  if (spec.scale_jitter > 0.0) {
    const double f = 1.0 + spec.scale_jitter * rng.uniform(-1.0, 1.0);
    L.semi = f * L.semi;
    for (auto& t : L.tubes) t.radius *= f;
  }
  return L;
}

bool inside_tube(const Tube& t, Vec3 p) {
  const Vec3 rel = p - t.origin;
  const double s = dot(rel, t.dir);
  if (s < 0.0) return false;
  const Vec3 off = rel - s * t.dir;
  return dot(off, off) <= t.radius * t.radius;
}

}  // namespace

void PhantomSpec::validate(Dims dims) const {
  if (vein_count < 1) throw Error(ErrorKind::InvalidSpec, kStage, "vein count must be at least 1");
  if (!(jitter >= 0.0 && jitter < 0.5))
    throw Error(ErrorKind::InvalidSpec, kStage, "jitter must lie in [0, 0.5)");
  if (!(scale_jitter >= 0.0 && scale_jitter < 0.5))
    throw Error(ErrorKind::InvalidSpec, kStage, "scale_jitter must lie in [0, 0.5)");
  if (!(vein_radius_min > 0.0 && vein_radius_min <= vein_radius_max))
    throw Error(ErrorKind::InvalidSpec, kStage, "vein radius range must satisfy 0 < min <= max");
  for (std::size_t a = 0; a < 3; ++a) {
    if (dims[a] < 4) throw Error(ErrorKind::InvalidSpec, kStage, "grid too small for a phantom");
    if (!(semi_axes[a] > 0.0))
      throw Error(ErrorKind::InvalidSpec, kStage, "semi-axes must be positive");
    // Worst-case jittered extent plus a one-voxel margin must stay inside.
    const double reach = semi_axes[a] * (1.0 + jitter) * (1.0 + 0.5 * jitter) * (1.0 + scale_jitter) + 1.0;
    if (reach > (dims[a] - 1) / 2.0)
      throw Error(ErrorKind::InvalidSpec, kStage, "ellipsoid does not fit inside the grid",
                  std::to_string(a));
  }
}

VoxelGrid synth_phantom(const PhantomSpec& spec, Dims dims) {
  spec.validate(dims);
  const Layout L = make_layout(spec, dims);
  VoxelGrid g(dims, GridKind::Binary);
  for (std::uint32_t z = 0; z < dims.z; ++z)
    for (std::uint32_t y = 0; y < dims.y; ++y)
      for (std::uint32_t x = 0; x < dims.x; ++x) {
        const Vec3 p{double(x), double(y), double(z)};
        const Vec3 q = p - L.centre;
        bool in = (q.x * q.x) / (L.semi.x * L.semi.x) + (q.y * q.y) / (L.semi.y * L.semi.y) +
                      (q.z * q.z) / (L.semi.z * L.semi.z) <=
                  1.0;
        for (const Tube& t : L.tubes) in = in || inside_tube(t, p);
        if (in) g.set(static_cast<int>(x), static_cast<int>(y), static_cast<int>(z), 1.f);
      }

  // Keep the component holding the body so the phantom is one 6-connected piece.
  auto [labels, count] = label_components(g);
  if (count > 1) {
    std::vector<std::size_t> sizes(count + 1, 0);
    for (int l : labels) ++sizes[l];
    sizes[0] = 0;
    const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (std::size_t i = 0; i < g.size(); ++i)
      if (labels[i] != 0 && labels[i] != keep) g.set(i, 0.f);
  }
  return g;
}

double phantom_reference_volume(const PhantomSpec& spec, Dims dims) {
  PhantomSpec canon = spec;
  canon.jitter = 0.0;
  canon.scale_jitter = 0.0;
  const Layout L = make_layout(canon, dims);
  double vol = 4.0 / 3.0 * std::numbers::pi * L.semi.x * L.semi.y * L.semi.z;
  for (const Tube& t : L.tubes) {
    double t_face = INFINITY;
    for (std::size_t a = 0; a < 3; ++a) {
      if (t.dir[a] > 0) t_face = std::min(t_face, (dims[a] - 0.5 - t.origin[a]) / t.dir[a]);
      if (t.dir[a] < 0) t_face = std::min(t_face, (-0.5 - t.origin[a]) / t.dir[a]);
    }
    const double t_body = 1.0 / std::sqrt(std::pow(t.dir.x / L.semi.x, 2) +
                                          std::pow(t.dir.y / L.semi.y, 2) +
                                          std::pow(t.dir.z / L.semi.z, 2));
    vol += std::numbers::pi * t.radius * t.radius * std::max(0.0, t_face - t_body);
  }
  return vol;
}

}  // namespace atriamap
