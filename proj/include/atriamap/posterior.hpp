#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "atriamap/parallel.hpp"
#include "atriamap/rng.hpp"
#include "atriamap/volume.hpp"

namespace atriamap {

/// Mean and population standard deviation of n posterior-predictive
/// probability samples, per voxel.
struct PosteriorSummary {
  VoxelGrid mean;
  VoxelGrid std;
  std::size_t n_samples = 0;
};

namespace detail {

// Draws n_samples probability vectors of length m with sample_fn(rng, out),
// sample s using stream s of base_seed. Samples are generated in blocks
// (possibly in parallel) and folded in sample order with Welford's update,
// so the result does not depend on the thread count.
template <class SampleFn>
void posterior_moments(std::size_t m, std::size_t n_samples, std::uint64_t base_seed, SampleFn&& sample_fn,
                       std::vector<double>& mean, std::vector<double>& stdev) {
  constexpr std::size_t kBlock = 64;
  mean.assign(m, 0.0);
  std::vector<double> m2(m, 0.0);
  std::vector<std::vector<double>> block(std::min(kBlock, n_samples), std::vector<double>(m));
  std::size_t seen = 0;
  for (std::size_t first = 0; first < n_samples; first += kBlock) {
    const std::size_t count = std::min(kBlock, n_samples - first);
    parallel_for(count, [&](std::size_t i) {
      Rng rng = Rng::stream(base_seed, first + i);
      sample_fn(rng, std::span<double>(block[i]));
    });
    for (std::size_t i = 0; i < count; ++i) {
      ++seen;
      const double inv = 1.0 / static_cast<double>(seen);
      const auto& p = block[i];
      for (std::size_t v = 0; v < m; ++v) {
        const double delta = p[v] - mean[v];
        mean[v] += delta * inv;
        m2[v] += delta * (p[v] - mean[v]);
      }
    }
  }
  stdev.resize(m);
  for (std::size_t v = 0; v < m; ++v) {
    mean[v] = std::clamp(mean[v], 0.0, 1.0);
    stdev[v] = std::sqrt(std::max(0.0, m2[v] / static_cast<double>(n_samples)));
  }
}

}  // namespace detail
}  // namespace atriamap
