#include "atriamap/rbm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "atriamap/error.hpp"
#include "atriamap/kernels.hpp"
#include "byte_io.hpp"

namespace atriamap {

namespace {
constexpr const char* kStage = "rbm";
constexpr const char* kIoStage = "rbm-io";
constexpr char kMagic[4] = {'A', 'R', 'B', 'M'};
constexpr std::uint16_t kVersion = 1;

void check_length(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw Error(ErrorKind::ShapeMismatch, kStage,
                std::string(what) + " has length " + std::to_string(got) + ", expected " + std::to_string(want));
}

void sample_binary(std::span<const double> p, std::span<double> out, Rng& rng) {
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = rng.uniform() < p[i] ? 1.0 : 0.0;
}

void hidden_probs(const RbmModel& model, std::span<const double> v, std::span<double> out) {
  std::copy(model.c.begin(), model.c.end(), out.begin());
  kernels::gemv_t_acc(model.W, model.m, model.n, v, out);
  for (auto& x : out) x = sigmoid(x);
}

void visible_probs(const RbmModel& model, std::span<const double> h, std::span<double> out) {
  kernels::gemv(model.W, model.m, model.n, h, out);
  for (std::size_t i = 0; i < model.m; ++i) out[i] = sigmoid(out[i] + model.b[i]);
}

std::vector<double> as_doubles(const VoxelGrid& g) { return g.to_doubles(); }
}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

RbmModel RbmModel::zeros(Dims dims, std::size_t hidden) {
  RbmModel r;
  r.dims = dims;
  r.m = dims.count();
  r.n = hidden;
  r.W.assign(r.m * r.n, 0.0);
  r.b.assign(r.m, 0.0);
  r.c.assign(r.n, 0.0);
  return r;
}

void RbmModel::validate() const {
  if (m == 0 || n == 0) throw Error(ErrorKind::InvalidInput, kStage, "empty model");
  if (dims.count() != m) throw Error(ErrorKind::InvalidInput, kStage, "dims disagree with visible count");
  if (W.size() != m * n || b.size() != m || c.size() != n)
    throw Error(ErrorKind::InvalidInput, kStage, "parameter sizes disagree with m, n");
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(W) || !finite(b) || !finite(c)) throw Error(ErrorKind::InvalidInput, kStage, "non-finite parameter");
}

void CdConfig::validate() const {
  if (k < 1) throw Error(ErrorKind::InvalidSpec, kStage, "k must be >= 1");
  if (epochs < 0) throw Error(ErrorKind::InvalidSpec, kStage, "epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorKind::InvalidSpec, kStage, "batch_size must be >= 1");
  if (hidden < 1) throw Error(ErrorKind::InvalidSpec, kStage, "hidden must be >= 1");
  if (!std::isfinite(learning_rate) || learning_rate < 0)
    throw Error(ErrorKind::InvalidSpec, kStage, "learning_rate must be finite and >= 0");
  if (!std::isfinite(weight_init_sigma) || weight_init_sigma < 0)
    throw Error(ErrorKind::InvalidSpec, kStage, "weight_init_sigma must be finite and >= 0");
}

double energy(std::span<const double> v, std::span<const double> h, const RbmModel& model) {
  check_length(v.size(), model.m, "v");
  check_length(h.size(), model.n, "h");
  std::vector<double> wh(model.m);
  kernels::gemv(model.W, model.m, model.n, h, wh);
  double e = 0.0;
  for (std::size_t i = 0; i < model.m; ++i) e -= v[i] * (model.b[i] + wh[i]);
  for (std::size_t j = 0; j < model.n; ++j) e -= model.c[j] * h[j];
  return e;
}

std::vector<double> hidden_given_visible(std::span<const double> v, const RbmModel& model) {
  check_length(v.size(), model.m, "v");
  std::vector<double> out(model.n);
  hidden_probs(model, v, out);
  return out;
}

std::vector<double> visible_given_hidden(std::span<const double> h, const RbmModel& model) {
  check_length(h.size(), model.n, "h");
  std::vector<double> out(model.m);
  visible_probs(model, h, out);
  return out;
}

GibbsSample gibbs_step(std::span<const double> v, const RbmModel& model, Rng& rng) {
  GibbsSample s;
  s.h = hidden_given_visible(v, model);
  sample_binary(s.h, s.h, rng);
  s.v = visible_given_hidden(s.h, model);
  sample_binary(s.v, s.v, rng);
  return s;
}

RbmGradient cd_gradient(const RbmModel& model, std::span<const double> v0, int k, Rng& rng) {
  check_length(v0.size(), model.m, "v0");
  if (k < 1) throw Error(ErrorKind::InvalidSpec, kStage, "k must be >= 1");
  const std::size_t m = model.m, n = model.n;
  std::vector<double> h0(n), hstate(n), vk(m), hk(n);
  hidden_probs(model, v0, h0);
  sample_binary(h0, hstate, rng);
  for (int step = 0; step < k; ++step) {
    visible_probs(model, hstate, vk);
    hidden_probs(model, vk, hk);
    if (step + 1 < k) sample_binary(hk, hstate, rng);
  }
  RbmGradient g;
  g.dW.assign(m * n, 0.0);
  kernels::ger(g.dW, m, n, 1.0, v0, h0);
  kernels::ger(g.dW, m, n, -1.0, vk, hk);
  g.db.resize(m);
  for (std::size_t i = 0; i < m; ++i) g.db[i] = v0[i] - vk[i];
  g.dc.resize(n);
  for (std::size_t j = 0; j < n; ++j) g.dc[j] = h0[j] - hk[j];
  return g;
}

double reconstruction_cross_entropy(const RbmModel& model, std::span<const double> v) {
  check_length(v.size(), model.m, "v");
  std::vector<double> h(model.n), r(model.m);
  hidden_probs(model, v, h);
  visible_probs(model, h, r);
  constexpr double eps = 1e-12;
  double ce = 0.0;
  for (std::size_t i = 0; i < model.m; ++i) {
    const double p = std::clamp(r[i], eps, 1.0 - eps);
    ce -= v[i] * std::log(p) + (1.0 - v[i]) * std::log(1.0 - p);
  }
  return ce / static_cast<double>(model.m);
}

RbmTrainResult train_cd(std::span<const VoxelGrid> dataset, const CdConfig& config) {
  config.validate();
  if (dataset.empty()) throw Error(ErrorKind::InvalidInput, kStage, "empty training set");
  const Dims dims = dataset.front().dims();
  for (const auto& g : dataset)
    if (g.dims() != dims) throw Error(ErrorKind::ShapeMismatch, kStage, "training grids differ in dims");

  RbmTrainResult result;
  RbmModel& model = result.model;
  model = RbmModel::zeros(dims, config.hidden);
  Rng init(config.seed, 0);
  for (auto& w : model.W) w = config.weight_init_sigma * init.normal();

  std::vector<std::vector<double>> data;
  data.reserve(dataset.size());
  for (const auto& g : dataset) data.push_back(as_doubles(g));
  // Visible biases start at the logit of the per-voxel training mean, so the
  // hidden units are free to model variation around the mean shape.
  for (std::size_t i = 0; i < model.m && config.visible_bias_from_data; ++i) {
    double mean = 0.0;
    for (const auto& v : data) mean += v[i];
    mean = std::clamp(mean / static_cast<double>(data.size()), 0.01, 0.99);
    model.b[i] = std::log(mean / (1.0 - mean));
  }

  Rng order_rng(config.seed, 1);
  Rng chain_rng(config.seed, 2);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> acc_W(model.W.size()), acc_b(model.m), acc_c(model.n);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(config.batch_size));
      const double scale = config.learning_rate / static_cast<double>(last - first);
      if (last - first == 1) {
        auto g = cd_gradient(model, data[order[first]], config.k, chain_rng);
        kernels::axpy(scale, g.dW, model.W);
        kernels::axpy(scale, g.db, model.b);
        kernels::axpy(scale, g.dc, model.c);
        continue;
      }
      // Batch statistics are taken against the parameters at batch start.
      std::fill(acc_W.begin(), acc_W.end(), 0.0);
      std::fill(acc_b.begin(), acc_b.end(), 0.0);
      std::fill(acc_c.begin(), acc_c.end(), 0.0);
      for (std::size_t p = first; p < last; ++p) {
        auto g = cd_gradient(model, data[order[p]], config.k, chain_rng);
        kernels::axpy(1.0, g.dW, acc_W);
        kernels::axpy(1.0, g.db, acc_b);
        kernels::axpy(1.0, g.dc, acc_c);
      }
      kernels::axpy(scale, acc_W, model.W);
      kernels::axpy(scale, acc_b, model.b);
      kernels::axpy(scale, acc_c, model.c);
    }
    double ce = 0.0;
    for (const auto& v : data) ce += reconstruction_cross_entropy(model, v);
    ce /= static_cast<double>(data.size());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(ce)) throw Error(ErrorKind::Numeric, kStage, "training diverged at epoch " + std::to_string(epoch));
    result.log.push_back({epoch, ce, secs});
    spdlog::debug("rbm epoch {} cross-entropy {:.6f} ({:.3f}s)", epoch, ce, secs);
  }
  return result;
}

PosteriorSummary posterior_predictive(const VoxelGrid& v_in, const RbmModel& model, std::size_t n_samples,
                                      Rng& rng) {
  if (n_samples == 0) throw Error(ErrorKind::InvalidSpec, kStage, "n_samples must be >= 1");
  check_length(v_in.size(), model.m, "v_in");
  const auto v = v_in.to_doubles();
  std::vector<double> ph(model.n);
  hidden_probs(model, v, ph);
  const std::uint64_t base = rng.next();
  std::vector<double> mean, stdev;
  detail::posterior_moments(
      model.m, n_samples, base,
      [&](Rng& r, std::span<double> out) {
        std::vector<double> h(model.n);
        sample_binary(ph, h, r);
        visible_probs(model, h, out);
      },
      mean, stdev);
  const Dims dims = model.dims.count() == model.m ? model.dims : Dims{static_cast<std::uint32_t>(model.m), 1, 1};
  PosteriorSummary s;
  s.mean = VoxelGrid::from_probabilities(dims, mean, v_in.spacing());
  s.std = VoxelGrid::from_probabilities(dims, stdev, v_in.spacing());
  s.n_samples = n_samples;
  return s;
}

VoxelGrid export_weights(const RbmModel& model, std::size_t j, double prune_fraction) {
  if (j >= model.n) throw Error(ErrorKind::IndexOutOfRange, kStage, "hidden unit index out of range");
  if (!(prune_fraction >= 0.0 && prune_fraction < 1.0))
    throw Error(ErrorKind::InvalidSpec, kStage, "prune_fraction must be in [0, 1)");
  const std::size_t m = model.m;
  std::vector<double> mag(m);
  for (std::size_t i = 0; i < m; ++i) mag[i] = std::abs(model.weight(i, j));
  const auto pruned = static_cast<std::size_t>(std::ceil(prune_fraction * static_cast<double>(m)));
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mag[a] < mag[b]; });
  for (std::size_t r = 0; r < std::min(pruned, m); ++r) mag[idx[r]] = 0.0;
  const auto [lo, hi] = std::minmax_element(mag.begin(), mag.end());
  const double mn = *lo, mx = *hi;
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = mx > mn ? (mag[i] - mn) / (mx - mn) : 0.5;
  const Dims dims = model.dims.count() == m ? model.dims : Dims{static_cast<std::uint32_t>(m), 1, 1};
  return VoxelGrid::from_probabilities(dims, out);
}

// "ARBM", u16 version, u16 reserved, u32 m, u32 n, 3 x u32 dims, then f64
// W (row-major m x n), b (m), c (n); little-endian.
std::vector<std::uint8_t> encode_rbm(const RbmModel& model) {
  model.validate();
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(model.m));
  w.u32(static_cast<std::uint32_t>(model.n));
  w.u32(model.dims.x);
  w.u32(model.dims.y);
  w.u32(model.dims.z);
  w.f64s(model.W);
  w.f64s(model.b);
  w.f64s(model.c);
  return w.take();
}

RbmModel decode_rbm(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, kIoStage);
  auto magic = r.take(4, "header");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw Error(ErrorKind::BadMagic, kIoStage, "not an ARBM model");
  if (r.le<std::uint16_t>("header") != kVersion) throw Error(ErrorKind::BadVersion, kIoStage, "unsupported ARBM version");
  r.le<std::uint16_t>("header");
  RbmModel model;
  model.m = r.le<std::uint32_t>("header");
  model.n = r.le<std::uint32_t>("header");
  model.dims.x = r.le<std::uint32_t>("header");
  model.dims.y = r.le<std::uint32_t>("header");
  model.dims.z = r.le<std::uint32_t>("header");
  if (model.m == 0 || model.n == 0 || model.dims.count() != model.m)
    throw Error(ErrorKind::LengthMismatch, kIoStage, "inconsistent header sizes");
  if (model.n > r.remaining() / 8 / model.m)
    throw Error(ErrorKind::TruncatedPayload, kIoStage, "payload shorter than header declares");
  const std::size_t want = (model.m * model.n + model.m + model.n) * 8;
  if (r.remaining() < want) throw Error(ErrorKind::TruncatedPayload, kIoStage, "payload shorter than header declares");
  if (r.remaining() > want) throw Error(ErrorKind::LengthMismatch, kIoStage, "payload longer than header declares");
  model.W = r.f64s(model.m * model.n, "weights");
  model.b = r.f64s(model.m, "visible bias");
  model.c = r.f64s(model.n, "hidden bias");
  model.validate();
  return model;
}

void save_rbm(const RbmModel& model, const std::filesystem::path& path) {
  detail::write_file(path, encode_rbm(model), kIoStage);
}

RbmModel load_rbm(const std::filesystem::path& path) { return decode_rbm(detail::read_file(path, kIoStage)); }

}  // namespace atriamap
