#include "atriamap/vae.hpp"

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
constexpr const char* kStage = "vae";
constexpr const char* kIoStage = "vae-io";
constexpr char kMagic[4] = {'A', 'V', 'A', 'E'};
constexpr std::uint16_t kVersion = 1;

void check_length(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw Error(ErrorKind::ShapeMismatch, kStage,
                std::string(what) + " has length " + std::to_string(got) + ", expected " + std::to_string(want));
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::string layer_name(const VaeModel& model, std::size_t l) {
  const std::size_t H = model.arch.hidden.size();
  if (l < H) return "encoder." + std::to_string(l);
  if (l == H) return "encoder.head";
  if (l == model.output_layer()) return "decoder.output";
  return "decoder." + std::to_string(l - H - 1);
}

// out = W in + b, then a non-finite check naming the layer.
void affine(const VaeModel& model, const std::vector<LayerShape>& shapes, std::size_t l,
            std::span<const double> in, std::vector<double>& out) {
  const auto& s = shapes[l];
  out.resize(s.out);
  const std::span<const double> p(model.params);
  kernels::gemv(p.subspan(s.offset, s.weight_count()), s.out, s.in, in, out);
  for (std::size_t o = 0; o < s.out; ++o) out[o] += model.params[s.bias_offset() + o];
  if (!all_finite(out)) throw Error(ErrorKind::Numeric, kStage, "non-finite output in layer " + layer_name(model, l));
}

void tanh_inplace(std::vector<double>& v) {
  for (auto& x : v) x = std::tanh(x);
}

double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

struct Trace {
  std::vector<std::vector<double>> enc;  // enc[0] = x; enc[l + 1] = hidden activation l
  std::vector<double> head;              // mu (d) then logvar (d)
  std::vector<std::vector<double>> dec;  // dec[0] = z; dec[l + 1] = hidden activation l
  std::vector<double> logits;
};

void run_encoder(std::span<const double> x, const VaeModel& model, const std::vector<LayerShape>& shapes,
                 Trace& t) {
  const std::size_t H = model.arch.hidden.size();
  t.enc.assign(H + 1, {});
  t.enc[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < H; ++l) {
    affine(model, shapes, l, t.enc[l], t.enc[l + 1]);
    tanh_inplace(t.enc[l + 1]);
  }
  affine(model, shapes, H, t.enc[H], t.head);
}

void run_decoder(std::span<const double> z, const VaeModel& model, const std::vector<LayerShape>& shapes,
                 Trace& t) {
  const std::size_t H = model.arch.hidden.size();
  t.dec.assign(H + 1, {});
  t.dec[0].assign(z.begin(), z.end());
  for (std::size_t l = 0; l < H; ++l) {
    affine(model, shapes, H + 1 + l, t.dec[l], t.dec[l + 1]);
    tanh_inplace(t.dec[l + 1]);
  }
  affine(model, shapes, model.output_layer(), t.dec[H], t.logits);
}

ElboTerms loss_from_trace(std::span<const double> x, const Trace& t, std::size_t d, double kl_weight) {
  ElboTerms e;
  for (std::size_t i = 0; i < x.size(); ++i) e.rec += softplus(t.logits[i]) - x[i] * t.logits[i];
  e.kl = kl_divergence(std::span<const double>(t.head).first(d), std::span<const double>(t.head).subspan(d));
  e.total = e.rec + kl_weight * e.kl;
  if (!std::isfinite(e.total)) throw Error(ErrorKind::Numeric, kStage, "non-finite loss");
  return e;
}

void check_input(std::span<const double> x, const VaeModel& model) {
  check_length(x.size(), model.arch.m, "x");
  for (double v : x)
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::InvalidInput, kStage, "input values must lie in [0, 1]");
}

Dims grid_dims(const VaeModel& model) {
  return model.dims.count() == model.arch.m ? model.dims : Dims{static_cast<std::uint32_t>(model.arch.m), 1, 1};
}
}  // namespace

void VaeArchitecture::validate() const {
  if (m == 0) throw Error(ErrorKind::InvalidSpec, kStage, "input size must be >= 1");
  if (d == 0) throw Error(ErrorKind::InvalidSpec, kStage, "latent dimension must be >= 1");
  for (auto h : hidden)
    if (h == 0) throw Error(ErrorKind::InvalidSpec, kStage, "hidden widths must be >= 1");
}

std::vector<LayerShape> layer_shapes(const VaeArchitecture& arch) {
  std::vector<LayerShape> out;
  std::size_t offset = 0;
  auto add = [&](std::size_t in, std::size_t o) {
    out.push_back({in, o, offset});
    offset = out.back().end();
  };
  std::size_t prev = arch.m;
  for (auto h : arch.hidden) {
    add(prev, h);
    prev = h;
  }
  add(prev, 2 * arch.d);
  prev = arch.d;
  for (auto it = arch.hidden.rbegin(); it != arch.hidden.rend(); ++it) {
    add(prev, *it);
    prev = *it;
  }
  add(prev, arch.m);
  return out;
}

VaeModel VaeModel::zeros(VaeArchitecture arch, Dims dims) {
  arch.m = dims.count();
  arch.validate();
  VaeModel model;
  model.arch = std::move(arch);
  model.dims = dims;
  model.params.assign(layer_shapes(model.arch).back().end(), 0.0);
  return model;
}

void VaeModel::validate() const {
  arch.validate();
  if (dims.count() != arch.m) throw Error(ErrorKind::InvalidInput, kStage, "dims disagree with input size");
  if (params.size() != layer_shapes(arch).back().end())
    throw Error(ErrorKind::InvalidInput, kStage, "parameter count disagrees with architecture");
  if (!all_finite(params)) throw Error(ErrorKind::InvalidInput, kStage, "non-finite parameter");
}

Encoding encode(std::span<const double> x, const VaeModel& model) {
  check_input(x, model);
  Trace t;
  run_encoder(x, model, model.layers(), t);
  const auto d = model.arch.d;
  return {{t.head.begin(), t.head.begin() + d}, {t.head.begin() + d, t.head.end()}};
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   std::span<const double> eps) {
  check_length(logvar.size(), mu.size(), "logvar");
  check_length(eps.size(), mu.size(), "eps");
  std::vector<double> z(mu.size());
  for (std::size_t j = 0; j < mu.size(); ++j) z[j] = mu[j] + std::exp(0.5 * logvar[j]) * eps[j];
  return z;
}

std::vector<double> decode(std::span<const double> z, const VaeModel& model) {
  check_length(z.size(), model.arch.d, "z");
  Trace t;
  run_decoder(z, model, model.layers(), t);
  for (auto& a : t.logits) a = sigmoid(a);
  return std::move(t.logits);
}

double kl_divergence(std::span<const double> mu, std::span<const double> logvar) {
  check_length(logvar.size(), mu.size(), "logvar");
  double kl = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) kl += mu[j] * mu[j] + std::exp(logvar[j]) - 1.0 - logvar[j];
  return 0.5 * kl;
}

ElboTerms elbo_loss(std::span<const double> x, const VaeModel& model, std::span<const double> eps,
                    double kl_weight) {
  check_input(x, model);
  check_length(eps.size(), model.arch.d, "eps");
  const auto shapes = model.layers();
  Trace t;
  run_encoder(x, model, shapes, t);
  const auto d = model.arch.d;
  const std::span<const double> head(t.head);
  const auto z = reparameterize(head.first(d), head.subspan(d), eps);
  run_decoder(z, model, shapes, t);
  return loss_from_trace(x, t, d, kl_weight);
}

ElboGradient elbo_gradient(std::span<const double> x, const VaeModel& model, std::span<const double> eps,
                           double kl_weight) {
  check_input(x, model);
  check_length(eps.size(), model.arch.d, "eps");
  const auto shapes = model.layers();
  const std::size_t H = model.arch.hidden.size();
  const std::size_t d = model.arch.d;
  const std::span<const double> params(model.params);

  Trace t;
  run_encoder(x, model, shapes, t);
  const std::span<const double> head(t.head);
  const auto z = reparameterize(head.first(d), head.subspan(d), eps);
  run_decoder(z, model, shapes, t);

  ElboGradient out;
  out.loss = loss_from_trace(x, t, d, kl_weight);
  out.grad.assign(model.params.size(), 0.0);
  const std::span<double> grad(out.grad);

  // Accumulates dW += delta * input^T and db += delta for layer l, and
  // returns W^T delta when requested.
  auto back = [&](std::size_t l, std::span<const double> delta, std::span<const double> input, bool want_input) {
    const auto& s = shapes[l];
    kernels::ger(grad.subspan(s.offset, s.weight_count()), s.out, s.in, 1.0, delta, input);
    for (std::size_t o = 0; o < s.out; ++o) grad[s.bias_offset() + o] += delta[o];
    std::vector<double> dx;
    if (want_input) {
      dx.assign(s.in, 0.0);
      kernels::gemv_t_acc(params.subspan(s.offset, s.weight_count()), s.out, s.in, delta, dx);
    }
    return dx;
  };

  std::vector<double> delta(t.logits.size());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = sigmoid(t.logits[i]) - x[i];
  std::vector<double> dprev = back(model.output_layer(), delta, t.dec[H], true);
  for (std::size_t r = H; r-- > 0;) {
    const auto& a = t.dec[r + 1];
    for (std::size_t o = 0; o < a.size(); ++o) dprev[o] *= 1.0 - a[o] * a[o];
    dprev = back(H + 1 + r, dprev, t.dec[r], true);
  }
  // dprev now holds dL/dz.
  std::vector<double> dhead(2 * d);
  for (std::size_t j = 0; j < d; ++j) {
    const double sigma = std::exp(0.5 * head[d + j]);
    dhead[j] = dprev[j] + kl_weight * head[j];
    dhead[d + j] = dprev[j] * eps[j] * 0.5 * sigma + kl_weight * 0.5 * (sigma * sigma - 1.0);
  }
  dprev = back(H, dhead, t.enc[H], H > 0);
  for (std::size_t r = H; r-- > 0;) {
    const auto& a = t.enc[r + 1];
    for (std::size_t o = 0; o < a.size(); ++o) dprev[o] *= 1.0 - a[o] * a[o];
    dprev = back(r, dprev, t.enc[r], r > 0);
  }
  return out;
}

void VaeTrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::InvalidSpec, kStage, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidSpec, kStage, "batch_size must be >= 1");
  if (!std::isfinite(learning_rate) || learning_rate < 0)
    throw Error(ErrorKind::InvalidSpec, kStage, "learning_rate must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::InvalidSpec, kStage, "momentum must be in [0, 1)");
  if (!std::isfinite(kl_weight) || kl_weight < 0)
    throw Error(ErrorKind::InvalidSpec, kStage, "kl_weight must be finite and >= 0");
}

VaeModel initialize_vae(std::span<const VoxelGrid> dataset, const VaeTrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw Error(ErrorKind::InvalidInput, kStage, "empty training set");
  const Dims dims = dataset.front().dims();
  for (const auto& g : dataset)
    if (g.dims() != dims) throw Error(ErrorKind::ShapeMismatch, kStage, "training grids differ in dims");
  VaeModel model = VaeModel::zeros(config.arch, dims);
  const auto shapes = model.layers();
  Rng rng(config.seed, 0);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    const double scale = (l == model.head_layer() ? 0.1 : 1.0) / std::sqrt(static_cast<double>(s.in));
    for (std::size_t q = 0; q < s.weight_count(); ++q) model.params[s.offset + q] = scale * rng.normal();
  }
  const auto& out = shapes[model.output_layer()];
  for (std::size_t i = 0; i < model.arch.m; ++i) {
    double mean = 0.0;
    for (const auto& g : dataset) mean += g.values()[i];
    mean = std::clamp(mean / static_cast<double>(dataset.size()), 0.01, 0.99);
    model.params[out.bias_offset() + i] = std::log(mean / (1.0 - mean));
  }
  return model;
}

VaeTrainResult train_vae(std::span<const VoxelGrid> dataset, const VaeTrainConfig& config) {
  VaeTrainResult result;
  result.model = initialize_vae(dataset, config);
  VaeModel& model = result.model;
  const std::size_t d = model.arch.d;

  std::vector<std::vector<double>> data;
  data.reserve(dataset.size());
  for (const auto& g : dataset) data.push_back(g.to_doubles());

  Rng order_rng(config.seed, 1);
  Rng eps_rng(config.seed, 2);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> velocity(model.params.size(), 0.0), acc(model.params.size());
  std::vector<double> last_good = model.params;
  std::vector<double> eps(d);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    double loss_sum = 0.0;
    bool ok = true;
    for (std::size_t first = 0; first < order.size() && ok; first += config.batch_size) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(config.batch_size));
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = first; p < last && ok; ++p) {
        for (auto& e : eps) e = eps_rng.normal();
        try {
          auto g = elbo_gradient(data[order[p]], model, eps, config.kl_weight);
          if (!all_finite(g.grad)) ok = false;
          loss_sum += g.loss.total;
          kernels::axpy(1.0, g.grad, acc);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Numeric) throw;
          ok = false;
        }
      }
      if (!ok) break;
      kernels::axpby(-config.learning_rate / static_cast<double>(last - first), acc, config.momentum, velocity);
      kernels::axpy(1.0, velocity, model.params);
    }
    if (!ok || !all_finite(model.params)) {
      model.params = last_good;
      result.diverged = true;
      result.diverged_epoch = epoch;
      spdlog::warn("vae training diverged in epoch {}; keeping epoch {} parameters", epoch, epoch - 1);
      break;
    }
    last_good = model.params;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, loss_sum / static_cast<double>(data.size()), secs});
    spdlog::debug("vae epoch {} loss {:.6f} ({:.3f}s)", epoch, result.log.back().value, secs);
  }
  return result;
}

PosteriorSummary posterior_predictive_vae(const VoxelGrid& x_in, const VaeModel& model, std::size_t n_samples,
                                          Rng& rng) {
  if (n_samples == 0) throw Error(ErrorKind::InvalidSpec, kStage, "n_samples must be >= 1");
  check_length(x_in.size(), model.arch.m, "x_in");
  const auto enc = encode(x_in.to_doubles(), model);
  const auto shapes = model.layers();
  const std::size_t d = model.arch.d;
  const std::uint64_t base = rng.next();
  std::vector<double> mean, stdev;
  detail::posterior_moments(
      model.arch.m, n_samples, base,
      [&](Rng& r, std::span<double> out) {
        std::vector<double> eps(d);
        for (auto& e : eps) e = r.normal();
        Trace t;
        run_decoder(reparameterize(enc.mu, enc.logvar, eps), model, shapes, t);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(t.logits[i]);
      },
      mean, stdev);
  const Dims dims = grid_dims(model);
  PosteriorSummary s;
  s.mean = VoxelGrid::from_probabilities(dims, mean, x_in.spacing());
  s.std = VoxelGrid::from_probabilities(dims, stdev, x_in.spacing());
  s.n_samples = n_samples;
  return s;
}

// "AVAE", u16 version, u16 reserved, u32 m, u32 d, u32 hidden count, hidden
// widths (u32 each), 3 x u32 dims, then every layer's W (row-major) and b as
// f64 in declared layer order; little-endian.
std::vector<std::uint8_t> encode_vae(const VaeModel& model) {
  model.validate();
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(model.arch.m));
  w.u32(static_cast<std::uint32_t>(model.arch.d));
  w.u32(static_cast<std::uint32_t>(model.arch.hidden.size()));
  for (auto h : model.arch.hidden) w.u32(static_cast<std::uint32_t>(h));
  w.u32(model.dims.x);
  w.u32(model.dims.y);
  w.u32(model.dims.z);
  w.f64s(model.params);
  return w.take();
}

VaeModel decode_vae(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, kIoStage);
  auto magic = r.take(4, "header");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw Error(ErrorKind::BadMagic, kIoStage, "not an AVAE model");
  if (r.le<std::uint16_t>("header") != kVersion) throw Error(ErrorKind::BadVersion, kIoStage, "unsupported AVAE version");
  r.le<std::uint16_t>("header");
  VaeModel model;
  model.arch.m = r.le<std::uint32_t>("header");
  model.arch.d = r.le<std::uint32_t>("header");
  const std::uint32_t count = r.le<std::uint32_t>("header");
  if (count > r.remaining() / 4) throw Error(ErrorKind::TruncatedPayload, kIoStage, "truncated layer list");
  model.arch.hidden.resize(count);
  for (auto& h : model.arch.hidden) h = r.le<std::uint32_t>("header");
  model.dims.x = r.le<std::uint32_t>("header");
  model.dims.y = r.le<std::uint32_t>("header");
  model.dims.z = r.le<std::uint32_t>("header");
  try {
    model.arch.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::LengthMismatch, kIoStage, e.detail());
  }
  if (model.dims.count() != model.arch.m) throw Error(ErrorKind::LengthMismatch, kIoStage, "dims disagree with input size");
  {
    // Widths come from the file: compare a lower bound on the parameter
    // count against the payload before sizing anything.
    unsigned __int128 total = 0;
    std::vector<std::size_t> widths{model.arch.m};
    widths.insert(widths.end(), model.arch.hidden.begin(), model.arch.hidden.end());
    widths.push_back(model.arch.d);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
      total += static_cast<unsigned __int128>(widths[l]) * widths[l + 1] * 2;
    if (total > r.remaining() / 8)
      throw Error(ErrorKind::TruncatedPayload, kIoStage, "payload shorter than header declares");
  }
  const std::size_t want = layer_shapes(model.arch).back().end();
  if (r.remaining() / 8 < want) throw Error(ErrorKind::TruncatedPayload, kIoStage, "payload shorter than header declares");
  if (r.remaining() != want * 8) throw Error(ErrorKind::LengthMismatch, kIoStage, "payload longer than header declares");
  model.params = r.f64s(want, "parameters");
  model.validate();
  return model;
}

void save_vae(const VaeModel& model, const std::filesystem::path& path) {
  detail::write_file(path, encode_vae(model), kIoStage);
}

VaeModel load_vae(const std::filesystem::path& path) { return decode_vae(detail::read_file(path, kIoStage)); }

}  // namespace atriamap
