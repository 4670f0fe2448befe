#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "atriamap/posterior.hpp"
#include "atriamap/rng.hpp"
#include "atriamap/volume.hpp"

namespace atriamap {

/// Binary-binary restricted Boltzmann machine over a flattened voxel grid.
/// Energy: E(v, h) = -b.v - c.h - v^T W h, with b the visible and c the
/// hidden bias.
struct RbmModel {
  std::size_t m = 0;  // visible units (voxels)
  std::size_t n = 0;  // hidden units
  Dims dims;          // voxel layout of the visible layer; dims.count() == m
  std::vector<double> W;  // m x n, row-major
  std::vector<double> b;  // m
  std::vector<double> c;  // n

  static RbmModel zeros(Dims dims, std::size_t hidden);
  double weight(std::size_t i, std::size_t j) const { return W[i * n + j]; }
  /// Throws Error(InvalidInput) on size disagreement or non-finite values.
  void validate() const;
};

struct CdConfig {
  int k = 1;
  double learning_rate = 0.01;
  int epochs = 100;
  int batch_size = 1;
  std::uint64_t seed = 0;
  double weight_init_sigma = 0.01;
  std::size_t hidden = 64;
  /// Start visible biases at the logit of the per-voxel training mean
  /// (clamped to [0.01, 0.99]); otherwise they start at zero.
  bool visible_bias_from_data = true;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double value = 0.0;  // RBM: reconstruction cross-entropy; VAE: mean total loss
  double wall_seconds = 0.0;
};

struct RbmTrainResult {
  RbmModel model;
  std::vector<EpochRecord> log;
};

double sigmoid(double x);

double energy(std::span<const double> v, std::span<const double> h, const RbmModel& model);
/// P(h_j = 1 | v) = sigmoid(W[:, j] . v + c[j])
std::vector<double> hidden_given_visible(std::span<const double> v, const RbmModel& model);
/// P(v_i = 1 | h) = sigmoid(W[i, :] . h + b[i])
std::vector<double> visible_given_hidden(std::span<const double> h, const RbmModel& model);

struct GibbsSample {
  std::vector<double> v;  // binary
  std::vector<double> h;  // binary
};
/// One block-Gibbs sweep: h' ~ P(h | v), then v' ~ P(v | h').
GibbsSample gibbs_step(std::span<const double> v, const RbmModel& model, Rng& rng);

/// Unscaled CD-k parameter update for one training vector, i.e. the
/// positive-phase minus negative-phase statistics. Chain states are binary
/// samples of h; the update products use the mean-field probabilities.
struct RbmGradient {
  std::vector<double> dW, db, dc;
};
RbmGradient cd_gradient(const RbmModel& model, std::span<const double> v0, int k, Rng& rng);

/// Trains with k-step contrastive divergence. Initial weights are
/// Normal(0, weight_init_sigma), hidden biases zero, visible biases per
/// visible_bias_from_data. Each epoch visits the dataset
/// in a seeded random order; each batch applies the batch-averaged update.
RbmTrainResult train_cd(std::span<const VoxelGrid> dataset, const CdConfig& config);

/// Mean-field reconstruction cross-entropy, averaged over voxels.
double reconstruction_cross_entropy(const RbmModel& model, std::span<const double> v);

/// h_s ~ Bernoulli(P(h | v_in)); returns mean and std of P(v | h_s) over
/// n_samples draws. `rng` supplies one base seed; sample s uses its own
/// derived stream.
PosteriorSummary posterior_predictive(const VoxelGrid& v_in, const RbmModel& model, std::size_t n_samples,
                                      Rng& rng);

/// Weight magnitudes of hidden unit j as a grid: the ceil(prune_fraction*m)
/// smallest magnitudes (ties by index) are zeroed, then min-max normalized
/// into [0, 1]; a constant column maps to 0.5. prune_fraction is in [0, 1).
VoxelGrid export_weights(const RbmModel& model, std::size_t j, double prune_fraction);

std::vector<std::uint8_t> encode_rbm(const RbmModel& model);
RbmModel decode_rbm(std::span<const std::uint8_t> bytes);
void save_rbm(const RbmModel& model, const std::filesystem::path& path);
RbmModel load_rbm(const std::filesystem::path& path);

}  // namespace atriamap
