#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "atriamap/geometry.hpp"
#include "atriamap/rbm.hpp"
#include "atriamap/vae.hpp"
#include "atriamap/volume.hpp"

namespace atriamap {

/// 2|A n B| / (|A| + |B|) over voxels > 0.5. Throws Error(ShapeMismatch) on
/// differing dims and Error(UndefinedMetric) when both sets are empty.
double dice(const VoxelGrid& a, const VoxelGrid& b);

struct EamSimConfig {
  std::size_t n_points = 25;
  double threshold = 1.0;  // voxels
  std::uint64_t seed = 0;

  void validate() const;
};

/// Simulated mapping acquisition: samples n distinct vertices of the truth
/// surface (marching cubes at 0.5) and records every foreground voxel centre
/// within `threshold` of a sampled vertex. Points are voxel coordinates,
/// deduplicated and ordered by linear voxel index. If n exceeds the vertex
/// count it is capped with a warning.
PointCloud simulate_acquisition(const VoxelGrid& truth, const EamSimConfig& config);

using Model = std::variant<RbmModel, VaeModel>;

Dims model_dims(const Model& model);
const char* model_kind(const Model& model);

struct ReconstructOptions {
  std::size_t n_samples = 100;
  std::uint64_t seed = 0;
  PostprocessOptions post{};
};

struct Reconstruction {
  VoxelGrid hull;       // binary seed grid from the point hull
  PosteriorSummary posterior;
  VoxelGrid mean_mask;  // binary, mean > 0.5
  VoxelGrid lower_mask; // binary, clamp(mean - std) > 0.5
  VoxelGrid upper_mask; // binary, clamp(mean + std) > 0.5
  TriangleMesh mean_mesh, lower_mesh, upper_mesh;
};

/// Point hull fill, posterior predictive, threshold at 0.5, marching cubes
/// and postprocessing for the mean and mean -/+ std grids. Points are in
/// voxel coordinates of the model grid.
Reconstruction reconstruct(const PointCloud& points, const Model& model, const ReconstructOptions& options);

/// Trilinear interpolation at a point in voxel coordinates, clamped to the
/// grid.
double sample_trilinear(const VoxelGrid& grid, Vec3 p);

struct NamedVolume {
  std::string id;
  VoxelGrid grid;
};

/// `count` phantoms named phantom_000, phantom_001, ...; phantom i uses
/// `base` with seed derive_seed(seed, 100, i). With supersample > 1 each
/// phantom is synthesized at supersample x dims (semi-axes and vein radii
/// scaled to match) and then cropped and downsampled to dims with
/// prepare_volume, the same preparation applied to segmented volumes.
std::vector<NamedVolume> phantom_corpus(std::uint64_t seed, std::size_t count, Dims dims,
                                        const PhantomSpec& base = {}, std::uint32_t supersample = 1);

struct ExperimentConfig {
  std::vector<std::size_t> point_counts{25, 100, 250};
  CdConfig rbm{};
  VaeTrainConfig vae{};
  bool run_rbm = true;
  bool run_vae = true;
  std::size_t n_samples = 100;
  double sim_threshold = 1.0;
  std::uint64_t seed = 42;
  PostprocessOptions post{};
};

struct CaseResult {
  std::string volume;
  std::string model;  // "rbm" or "vae"
  std::size_t points = 0;
  std::uint64_t acquisition_seed = 0;
  std::uint64_t posterior_seed = 0;
  std::size_t acquired = 0;  // distinct voxel points after acquisition
  std::optional<double> dice;
  std::string error;  // "kind: message" when the case failed
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<std::string> train_ids, test_ids;
  std::uint64_t rbm_seed = 0, vae_seed = 0;
  std::vector<double> rbm_loss, vae_loss;  // per-epoch training curves
  bool vae_diverged = false;
  std::vector<CaseResult> cases;  // ordered by model, volume, point count

  /// Median dice over successful cases; nullopt when there are none.
  std::optional<double> median(const std::string& model, std::size_t points) const;
  std::size_t failures() const;
};

/// Trains the requested models on `train`, then for each test volume and
/// point count simulates an acquisition, reconstructs and scores the
/// thresholded mean grid against the truth. Stage failures are recorded
/// per case. Train and test ids must be disjoint.
ExperimentReport run_experiment(std::span<const NamedVolume> train, std::span<const NamedVolume> test,
                                const ExperimentConfig& config);

/// Evaluation phase only, with already trained models.
ExperimentReport evaluate_models(const std::optional<RbmModel>& rbm, const std::optional<VaeModel>& vae,
                                 std::span<const NamedVolume> test, const ExperimentConfig& config);

/// One JSON object per line: a header record, one record per case, one per
/// median. Contains no timing data, so identical inputs give identical bytes.
std::string report_jsonl(const ExperimentReport& report);
/// Median dice table, models as rows and point counts as columns.
std::string report_table(const ExperimentReport& report);

}  // namespace atriamap
