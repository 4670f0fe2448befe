#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace atriamap {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend Vec3 operator*(Vec3 a, double s) { return s * a; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline bool is_finite(Vec3 a) { return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z); }

struct Index3 {
  int x = 0, y = 0, z = 0;
  int operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend bool operator==(const Index3&, const Index3&) = default;
};

struct Dims {
  std::uint32_t x = 0, y = 0, z = 0;
  std::size_t count() const { return std::size_t{x} * y * z; }
  std::uint32_t operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Axis-aligned field of view in mapping-system millimetres.
struct FieldOfView {
  Vec3 p_min;
  Vec3 p_max;
  Dims n;

  /// Throws Error(InvalidSpec) unless p_min < p_max per axis and n >= 2.
  void validate() const;
  Vec3 spacing() const;
};

enum class GridKind : std::uint8_t { Binary, Probability };

/// Dense scalar field, x-fastest. Values live in [0, 1]; binary grids hold
/// only 0 and 1. Values and spacing are stored as float so that the AVX1
/// file format round-trips bit-exactly.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(Dims dims, GridKind kind, std::array<float, 3> spacing = {1.f, 1.f, 1.f});
  VoxelGrid(Dims dims, GridKind kind, std::vector<float> values,
            std::array<float, 3> spacing = {1.f, 1.f, 1.f});

  /// Builds a probability grid, clamping nothing: every value must be in [0, 1].
  static VoxelGrid from_probabilities(Dims dims, std::span<const double> values,
                                      std::array<float, 3> spacing = {1.f, 1.f, 1.f});

  Dims dims() const { return dims_; }
  GridKind kind() const { return kind_; }
  bool is_binary() const { return kind_ == GridKind::Binary; }
  const std::array<float, 3>& spacing() const { return spacing_; }
  std::size_t size() const { return values_.size(); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           std::size_t{dims_.x} * (static_cast<std::size_t>(y) + std::size_t{dims_.y} * z);
  }
  Index3 coords(std::size_t i) const {
    const auto x = static_cast<int>(i % dims_.x);
    const auto y = static_cast<int>((i / dims_.x) % dims_.y);
    const auto z = static_cast<int>(i / (std::size_t{dims_.x} * dims_.y));
    return {x, y, z};
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < static_cast<int>(dims_.x) &&
           y < static_cast<int>(dims_.y) && z < static_cast<int>(dims_.z);
  }

  float operator[](std::size_t i) const { return values_[i]; }
  float at(int x, int y, int z) const { return values_[index(x, y, z)]; }
  void set(std::size_t i, float v);
  void set(int x, int y, int z, float v) { set(index(x, y, z), v); }

  std::span<const float> values() const { return values_; }
  std::vector<double> to_doubles() const { return {values_.begin(), values_.end()}; }

  /// Number of cells with value > 0.5.
  std::size_t foreground_count() const;
  /// Binary grid of cells with value > threshold.
  VoxelGrid threshold(double t) const;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  Dims dims_{};
  GridKind kind_ = GridKind::Binary;
  std::array<float, 3> spacing_{1.f, 1.f, 1.f};
  std::vector<float> values_;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Maps a millimetre position to its voxel index. Positions on the upper FOV
/// boundary land in the last voxel.
Index3 voxelize(Vec3 p, const FieldOfView& fov);

enum class FovPolicy { SkipAndCount, Strict };

struct Voxelized {
  VoxelGrid grid;
  std::size_t skipped = 0;  // out-of-FOV points dropped under SkipAndCount
};

Voxelized points_to_grid(const PointCloud& cloud, const FieldOfView& fov,
                         FovPolicy policy = FovPolicy::SkipAndCount);

// AVX1 volume files.
std::vector<std::uint8_t> encode_volume(const VoxelGrid& grid);
VoxelGrid decode_volume(std::span<const std::uint8_t> bytes);
void save_volume(const VoxelGrid& grid, const std::filesystem::path& path);
VoxelGrid load_volume(const std::filesystem::path& path);

/// Crops each grid to its foreground bounding box plus a one-voxel margin and
/// resamples to `target`. Binary grids use a per-cell majority vote with ties
/// going to foreground; probability grids use the cell mean.
VoxelGrid prepare_volume(const VoxelGrid& grid, Dims target);
std::vector<VoxelGrid> prepare_dataset(std::span<const VoxelGrid> grids, Dims target);

struct PhantomSpec {
  std::uint64_t seed = 0;
  Vec3 semi_axes{6.0, 5.0, 4.5};  // voxels
  double vein_radius_min = 1.2;   // voxels
  double vein_radius_max = 1.8;
  int vein_count = 4;
  /// Relative jitter on semi-axes, centre and vein directions. With 0 the
  /// phantom is fully canonical and vein radii take the range midpoint.
  double jitter = 0.2;
  /// Relative jitter on overall size: semi-axes and vein radii share one
  /// factor drawn from [1 - scale_jitter, 1 + scale_jitter].
  double scale_jitter = 0.0;

  void validate(Dims dims) const;
};

/// Synthetic left-atrium stand-in: an ellipsoid body with `vein_count`
/// cylindrical tubes running from the body centre out through the left (-x)
/// and right (+x) grid faces. Deterministic for a fixed seed.
VoxelGrid synth_phantom(const PhantomSpec& spec, Dims dims);

/// Analytic foreground volume used by the phantom tests: ellipsoid volume
/// plus the tube segments lying outside it, with both jitters disabled.
double phantom_reference_volume(const PhantomSpec& spec, Dims dims);

/// 6-connected components of the foreground; returns a label per cell
/// (0 = background, 1..k) and the component count.
std::pair<std::vector<int>, int> label_components(const VoxelGrid& grid);

}  // namespace atriamap
