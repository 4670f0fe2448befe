#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atriamap/posterior.hpp"
#include "atriamap/rbm.hpp"
#include "atriamap/rng.hpp"
#include "atriamap/volume.hpp"

namespace atriamap {

/// Dense VAE layout: encoder m -> hidden[0] -> ... -> hidden.back() -> (mu, logvar)
/// and the mirrored decoder d -> hidden.back() -> ... -> hidden[0] -> m.
/// Hidden layers use tanh, the decoder output a sigmoid.
struct VaeArchitecture {
  std::size_t m = 0;
  std::vector<std::size_t> hidden{256, 64};
  std::size_t d = 8;

  void validate() const;
  friend bool operator==(const VaeArchitecture&, const VaeArchitecture&) = default;
};

/// One fully connected layer inside the flat parameter vector: W is
/// out x in row-major at `offset`, followed by b (out).
struct LayerShape {
  std::size_t in = 0, out = 0, offset = 0;
  std::size_t weight_count() const { return in * out; }
  std::size_t bias_offset() const { return offset + in * out; }
  std::size_t end() const { return offset + in * out + out; }
};

/// Layers in declared order: encoder hidden layers, encoder head (out = 2d,
/// mu then logvar), decoder hidden layers, decoder output.
std::vector<LayerShape> layer_shapes(const VaeArchitecture& arch);

struct VaeModel {
  VaeArchitecture arch;
  Dims dims;
  std::vector<double> params;

  /// Zero parameters for the given layout; arch.m is taken from dims.
  static VaeModel zeros(VaeArchitecture arch, Dims dims);
  std::vector<LayerShape> layers() const { return layer_shapes(arch); }
  std::size_t head_layer() const { return arch.hidden.size(); }
  std::size_t output_layer() const { return 2 * arch.hidden.size() + 1; }
  /// Throws Error(InvalidInput) on size disagreement or non-finite values.
  void validate() const;
};

struct Encoding {
  std::vector<double> mu, logvar;
};

Encoding encode(std::span<const double> x, const VaeModel& model);
/// z = mu + exp(logvar / 2) * eps
std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   std::span<const double> eps);
std::vector<double> decode(std::span<const double> z, const VaeModel& model);

/// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
double kl_divergence(std::span<const double> mu, std::span<const double> logvar);

struct ElboTerms {
  double rec = 0.0;  // summed binary cross-entropy
  double kl = 0.0;
  double total = 0.0;  // rec + kl_weight * kl
};

/// Throws Error(Numeric) naming the first layer with a non-finite output.
ElboTerms elbo_loss(std::span<const double> x, const VaeModel& model, std::span<const double> eps,
                    double kl_weight = 1.0);

/// Loss and its gradient with respect to model.params (same layout), for
/// a fixed eps.
struct ElboGradient {
  ElboTerms loss;
  std::vector<double> grad;
};
ElboGradient elbo_gradient(std::span<const double> x, const VaeModel& model, std::span<const double> eps,
                           double kl_weight = 1.0);

struct VaeTrainConfig {
  VaeArchitecture arch;  // arch.m is taken from the dataset
  int epochs = 100;
  int batch_size = 1;
  double learning_rate = 3e-5;
  double momentum = 0.9;
  double kl_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct VaeTrainResult {
  VaeModel model;
  std::vector<EpochRecord> log;
  /// Set when the loss or parameters became non-finite; `model` then holds
  /// the parameters at the end of the last completed epoch.
  bool diverged = false;
  int diverged_epoch = 0;
};

/// Initial parameters: weights Normal(0, 1/fan_in) scaled by 0.1 for the
/// encoder head, zero biases except the decoder output bias, which is set to
/// the logit of the (clamped) per-voxel training mean.
VaeModel initialize_vae(std::span<const VoxelGrid> dataset, const VaeTrainConfig& config);

/// SGD with momentum on the one-sample ELBO estimator, batch-averaged.
VaeTrainResult train_vae(std::span<const VoxelGrid> dataset, const VaeTrainConfig& config);

/// z_s = reparameterize(encode(x_in), eps_s), eps_s ~ N(0, I); mean and std
/// of decode(z_s) over n_samples draws.
PosteriorSummary posterior_predictive_vae(const VoxelGrid& x_in, const VaeModel& model, std::size_t n_samples,
                                          Rng& rng);

/// Standard normal quantile. Rational approximation refined by one Halley
/// step against erfc; the upper half is evaluated as -q(1 - p).
/// Requires 0 < p < 1.
double normal_quantile(double p);

/// Cartesian product of q(linspace(a, b, k)) over d dimensions,
/// lexicographic with the last dimension fastest. Throws
/// Error(BudgetExceeded) if k^d exceeds budget.
std::vector<std::vector<double>> latent_grid(std::size_t d, std::size_t k, double a, double b,
                                             std::size_t budget = 4096);

std::vector<std::uint8_t> encode_vae(const VaeModel& model);
VaeModel decode_vae(std::span<const std::uint8_t> bytes);
void save_vae(const VaeModel& model, const std::filesystem::path& path);
VaeModel load_vae(const std::filesystem::path& path);

}  // namespace atriamap
