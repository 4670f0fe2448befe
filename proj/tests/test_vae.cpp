#include <algorithm>
#include <cmath>
#include <numbers>

#include "atriamap/error.hpp"
#include "atriamap/parallel.hpp"
#include "atriamap/vae.hpp"
#include "doctest.h"

using namespace atriamap;

namespace {

VaeModel random_vae(std::size_t m, std::vector<std::size_t> hidden, std::size_t d, double scale, Rng& rng) {
  VaeArchitecture arch;
  arch.hidden = std::move(hidden);
  arch.d = d;
  auto model = VaeModel::zeros(arch, {static_cast<std::uint32_t>(m), 1, 1});
  for (auto& p : model.params) p = scale * rng.normal();
  return model;
}

std::vector<double> random_unit(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

std::vector<double> random_normal(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void set_layer(VaeModel& model, std::size_t l, double weight, double bias) {
  const auto s = model.layers()[l];
  std::fill(model.params.begin() + s.offset, model.params.begin() + s.bias_offset(), weight);
  std::fill(model.params.begin() + s.bias_offset(), model.params.begin() + s.end(), bias);
}

// Standard normal CDF from the Maclaurin series of erf; usable for |x| <= 3.
double phi_series(double x) {
  const double t = x / std::numbers::sqrt2;
  double term = t, sum = t;
  for (int n = 1; n < 200; ++n) {
    term *= -t * t / n;
    sum += term / (2 * n + 1);
  }
  return 0.5 + sum / std::sqrt(std::numbers::pi);
}

double quantile_by_bisection(double p) {
  double lo = -3.2, hi = 3.2;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (phi_series(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<VoxelGrid> toy_phantoms(int count, std::uint64_t seed) {
  std::vector<VoxelGrid> out;
  for (int i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.seed = seed + i;
    spec.semi_axes = {4.0, 3.5, 3.0};
    spec.vein_radius_min = 0.8;
    spec.vein_radius_max = 1.2;
    out.push_back(synth_phantom(spec, {14, 14, 14}));
  }
  return out;
}

}  // namespace

TEST_CASE("layer layout mirrors the encoder") {
  VaeArchitecture arch;
  arch.m = 100;
  arch.hidden = {20, 7};
  arch.d = 3;
  const auto s = layer_shapes(arch);
  REQUIRE(s.size() == 6);
  CHECK(s[0].in == 100);
  CHECK(s[0].out == 20);
  CHECK(s[2].in == 7);
  CHECK(s[2].out == 6);
  CHECK(s[3].in == 3);
  CHECK(s[3].out == 7);
  CHECK(s[5].in == 20);
  CHECK(s[5].out == 100);
  for (std::size_t l = 1; l < s.size(); ++l) CHECK(s[l].offset == s[l - 1].end());
  arch.d = 0;
  CHECK_THROWS_AS(arch.validate(), Error);
}

TEST_CASE("encoder head with zero parameters yields the prior") {
  Rng rng(1);
  auto model = random_vae(30, {8, 4}, 3, 0.5, rng);
  set_layer(model, model.head_layer(), 0.0, 0.0);
  for (int t = 0; t < 5; ++t) {
    const auto x = random_unit(30, rng);
    const auto e = encode(x, model);
    for (double v : e.mu) CHECK(v == 0.0);
    for (double v : e.logvar) CHECK(v == 0.0);
  }
}

TEST_CASE("encoder is deterministic and respects the Lipschitz bound from weight norms") {
  Rng rng(2);
  auto model = random_vae(30, {8, 4}, 3, 0.5, rng);
  const auto x = random_unit(30, rng);
  const auto a = encode(x, model), b = encode(x, model);
  CHECK(a.mu == b.mu);
  CHECK(a.logvar == b.logvar);

  // tanh is 1-Lipschitz, so |f(x + eps e_k) - f(x)| <= |W1[:, k]| * prod_l |W_l|_F * eps.
  const auto shapes = model.layers();
  auto frob = [&](std::size_t l) {
    double s = 0;
    for (std::size_t q = 0; q < shapes[l].weight_count(); ++q) s += model.params[shapes[l].offset + q] * model.params[shapes[l].offset + q];
    return std::sqrt(s);
  };
  const double eps = 1e-3;
  for (std::size_t k = 0; k < 30; ++k) {
    double col = 0;
    for (std::size_t o = 0; o < shapes[0].out; ++o) col += std::pow(model.params[shapes[0].offset + o * 30 + k], 2);
    const double L = std::sqrt(col) * frob(1) * frob(2);
    auto xp = x;
    xp[k] = std::clamp(x[k] + (x[k] < 0.5 ? eps : -eps), 0.0, 1.0);
    const auto c = encode(xp, model);
    double diff = 0;
    for (std::size_t j = 0; j < 3; ++j) diff += std::pow(c.mu[j] - a.mu[j], 2) + std::pow(c.logvar[j] - a.logvar[j], 2);
    CHECK(std::sqrt(diff) <= L * eps * (1 + 1e-9));
  }
  std::vector<double> wrong(29, 0.0);
  CHECK_THROWS_AS(encode(wrong, model), Error);
  std::vector<double> out_of_range(30, 0.0);
  out_of_range[3] = 1.5;
  CHECK_THROWS_AS(encode(out_of_range, model), Error);
}

TEST_CASE("reparameterization formula") {
  const std::vector<double> mu{1.0, 2.0}, lv{std::log(4.0), 0.0};
  CHECK(reparameterize(mu, lv, std::vector<double>{0.5, -1.0}) == std::vector<double>{2.0, 1.0});
  CHECK(reparameterize(mu, lv, std::vector<double>{0.0, 0.0}) == mu);
  const std::vector<double> zero{0.0, 0.0};
  const auto z = reparameterize(mu, zero, std::vector<double>{0.25, 3.0});
  CHECK(z[0] == 1.25);
  CHECK(z[1] == 5.0);
  // Affine in eps with slope exp(logvar / 2): two-point evaluation.
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto m = random_normal(4, rng), l = random_normal(4, rng), e = random_normal(4, rng);
    const auto z0 = reparameterize(m, l, std::vector<double>(4, 0.0));
    const auto z1 = reparameterize(m, l, e);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs((z1[j] - z0[j]) - std::exp(0.5 * l[j]) * e[j]) < 1e-12);
  }
  CHECK_THROWS_AS(reparameterize(mu, lv, std::vector<double>{1.0}), Error);
}

TEST_CASE("decoder output stays inside (0, 1)") {
  Rng rng(4);
  auto zero = VaeModel::zeros({0, {6}, 2}, {10, 1, 1});
  for (double p : decode(std::vector<double>{0.3, -2.0}, zero)) CHECK(p == 0.5);
  auto model = random_vae(10, {6}, 2, 1.0, rng);
  for (int t = 0; t < 1000; ++t) {
    const auto z = random_normal(2, rng);
    const auto p = decode(z, model);
    CHECK(p == decode(z, model));
    for (double v : p) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  CHECK_THROWS_AS(decode(std::vector<double>{1.0}, model), Error);
}

TEST_CASE("KL closed form identities") {
  const std::vector<double> zero(5, 0.0), one(5, 1.0);
  CHECK(kl_divergence(zero, zero) == 0.0);
  CHECK(std::abs(kl_divergence(one, zero) - 2.5) < 1e-12);
  CHECK(std::abs(kl_divergence(std::vector<double>{1.0}, std::vector<double>{0.0}) - 0.5) < 1e-12);
  Rng rng(5);
  for (int t = 0; t < 2000; ++t) {
    const auto m = random_normal(3, rng), l = random_normal(3, rng);
    CHECK(kl_divergence(m, l) > 0.0);
  }
}

TEST_CASE("ELBO terms") {
  Rng rng(6);
  auto model = random_vae(8, {4}, 2, 0.5, rng);
  const auto x = random_unit(8, rng);
  const auto eps = random_normal(2, rng);
  const auto e = elbo_loss(x, model, eps, 0.7);
  CHECK(std::abs(e.total - (e.rec + 0.7 * e.kl)) < 1e-12);
  // Independent recount of the reconstruction term.
  const auto enc = encode(x, model);
  const auto p = decode(reparameterize(enc.mu, enc.logvar, eps), model);
  double rec = 0;
  for (std::size_t i = 0; i < 8; ++i) rec -= x[i] * std::log(p[i]) + (1 - x[i]) * std::log(1 - p[i]);
  CHECK(std::abs(e.rec - rec) < 1e-10);
  CHECK(std::abs(e.kl - kl_divergence(enc.mu, enc.logvar)) < 1e-15);

  // Output saturated towards a binary x: reconstruction loss vanishes.
  std::vector<double> xb{1, 0, 1, 1, 0, 0, 1, 0};
  set_layer(model, model.output_layer(), 0.0, 0.0);
  const auto out = model.layers()[model.output_layer()];
  for (std::size_t i = 0; i < 8; ++i) model.params[out.bias_offset() + i] = xb[i] > 0.5 ? 60.0 : -60.0;
  CHECK(elbo_loss(xb, model, eps).rec < 1e-20);

  model.params[model.layers()[0].offset] = 1e308;
  model.params[model.layers()[0].offset + 1] = 1e308;
  std::vector<double> ones(8, 1.0);
  try {
    elbo_loss(ones, model, eps);
    FAIL("expected a numeric error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::Numeric);
    CHECK(std::string(err.what()).find("encoder.0") != std::string::npos);
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(7);
  for (const auto& hidden : {std::vector<std::size_t>{5}, std::vector<std::size_t>{5, 3}, std::vector<std::size_t>{}}) {
    for (int point = 0; point < 10; ++point) {
      auto model = random_vae(12, hidden, 2, 0.6, rng);
      const auto x = random_unit(12, rng);
      const auto eps = random_normal(2, rng);
      const double beta = 0.5 + rng.uniform();
      const auto g = elbo_gradient(x, model, eps, beta);
      CHECK(std::abs(g.loss.total - elbo_loss(x, model, eps, beta).total) < 1e-12);
      const double h = 1e-5;
      int bad = 0;
      for (std::size_t q = 0; q < model.params.size(); ++q) {
        auto mp = model;
        mp.params[q] += h;
        const double up = elbo_loss(x, mp, eps, beta).total;
        mp.params[q] -= 2 * h;
        const double down = elbo_loss(x, mp, eps, beta).total;
        const double fd = (up - down) / (2 * h);
        const double err = std::abs(fd - g.grad[q]);
        if (err > 1e-8 && err > 1e-4 * std::max(std::abs(fd), std::abs(g.grad[q]))) ++bad;
      }
      CHECK(bad == 0);
    }
  }
}

TEST_CASE("zero learning rate leaves the initialization untouched") {
  const auto data = toy_phantoms(2, 10);
  VaeTrainConfig cfg;
  cfg.arch.hidden = {16};
  cfg.arch.d = 2;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  cfg.seed = 9;
  const auto init = initialize_vae(data, cfg);
  const auto res = train_vae(data, cfg);
  CHECK(res.model.params == init.params);
  CHECK(res.log.size() == 3);
  CHECK_FALSE(res.diverged);
}

TEST_CASE("training lowers the loss and is reproducible") {
  const auto data = toy_phantoms(5, 100);
  VaeTrainConfig cfg;
  cfg.arch.hidden = {64, 16};
  cfg.arch.d = 4;
  cfg.epochs = 100;
  cfg.learning_rate = 1e-3;
  int lower = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    cfg.seed = seed;
    const auto res = train_vae(data, cfg);
    REQUIRE_FALSE(res.diverged);
    if (res.log.back().value < res.log.front().value) ++lower;
    if (seed == 1) CHECK(encode_vae(train_vae(data, cfg).model) == encode_vae(res.model));
  }
  CHECK(lower >= 2);
}

TEST_CASE("divergence keeps the last good parameters") {
  const auto data = toy_phantoms(3, 50);
  VaeTrainConfig cfg;
  cfg.arch.hidden = {16};
  cfg.arch.d = 2;
  cfg.epochs = 20;
  cfg.learning_rate = 1e6;
  const auto res = train_vae(data, cfg);
  CHECK(res.diverged);
  CHECK(res.log.size() == static_cast<std::size_t>(res.diverged_epoch - 1));
  CHECK_NOTHROW(res.model.validate());
  if (res.diverged_epoch == 1) CHECK(res.model.params == initialize_vae(data, cfg).params);
}

TEST_CASE("VAE posterior predictive") {
  Rng rng(8);
  auto model = random_vae(27, {6}, 2, 0.8, rng);
  model.dims = {3, 3, 3};
  std::vector<float> xv(27);
  for (auto& v : xv) v = rng.bernoulli(0.5);
  const VoxelGrid x({3, 3, 3}, GridKind::Binary, xv);

  Rng r(1);
  const auto one = posterior_predictive_vae(x, model, 1, r);
  for (float s : one.std.values()) CHECK(s == 0.0f);
  CHECK_THROWS_AS(posterior_predictive_vae(x, model, 0, r), Error);

  const auto many = posterior_predictive_vae(x, model, 300, r);
  for (std::size_t i = 0; i < 27; ++i) {
    CHECK(many.mean.values()[i] >= 0.0f);
    CHECK(many.mean.values()[i] <= 1.0f);
    CHECK(many.std.values()[i] <= 0.5f);
  }

  // Mean estimates with n and 4n samples differ by O(1/sqrt(n)).
  Rng ra(5), rb(6);
  const auto small = posterior_predictive_vae(x, model, 250, ra);
  const auto large = posterior_predictive_vae(x, model, 1000, rb);
  for (std::size_t i = 0; i < 27; ++i)
    CHECK(std::abs(small.mean.values()[i] - large.mean.values()[i]) <= 4.0 * 0.5 / std::sqrt(250.0));

  Rng t1(3), t4(3);
  set_max_threads(1);
  const auto p1 = posterior_predictive_vae(x, model, 150, t1);
  set_max_threads(4);
  const auto p4 = posterior_predictive_vae(x, model, 150, t4);
  set_max_threads(0);
  CHECK(std::ranges::equal(p1.mean.values(), p4.mean.values()));
  CHECK(std::ranges::equal(p1.std.values(), p4.std.values()));

  // A collapsed latent posterior makes every sample identical.
  const auto head = model.layers()[model.head_layer()];
  for (std::size_t o = 2; o < 4; ++o) {
    std::fill(model.params.begin() + head.offset + o * head.in, model.params.begin() + head.offset + (o + 1) * head.in, 0.0);
    model.params[head.bias_offset() + o] = -50.0;
  }
  const auto collapsed = posterior_predictive_vae(x, model, 200, r);
  for (float s : collapsed.std.values()) CHECK(s <= 1e-6f);
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK(std::abs(normal_quantile(0.975) - 1.959963984540054) < 1e-9);
  CHECK(std::abs(normal_quantile(0.025) + 1.959963984540054) < 1e-9);
  for (int i = 1; i < 400; ++i) {
    const double p = 0.0015 + (0.997 * i) / 400.0;
    CHECK(std::abs(normal_quantile(p) - quantile_by_bisection(p)) < 1e-9);
    CHECK(std::abs(normal_quantile(1.0 - p) + normal_quantile(p)) < 1e-12);
  }
  // Deep tails: Phi(q(p)) recovers p.
  for (double p : {1e-12, 1e-9, 1e-6, 1e-4, 1e-3}) {
    const double x = normal_quantile(p);
    CHECK(std::abs(0.5 * std::erfc(-x / std::numbers::sqrt2) - p) < 1e-9 * p);
  }
  CHECK_THROWS_AS(normal_quantile(0.0), Error);
  CHECK_THROWS_AS(normal_quantile(1.0), Error);
}

TEST_CASE("latent grid layout") {
  const auto g1 = latent_grid(1, 3, 0.1, 0.9);
  REQUIRE(g1.size() == 3);
  CHECK(g1[1][0] == 0.0);
  CHECK(g1[0][0] < 0.0);

  const auto g2 = latent_grid(2, 3, 0.1, 0.9);
  REQUIRE(g2.size() == 9);
  const double q = normal_quantile(0.1);
  CHECK(g2[0] == std::vector<double>{q, q});
  CHECK(g2[1] == std::vector<double>{q, 0.0});
  CHECK(g2[3] == std::vector<double>{0.0, q});
  CHECK(std::abs(g2[8][0] + q) < 1e-12);
  CHECK(g2[8][0] == g2[8][1]);

  const auto g3 = latent_grid(3, 4, 0.05, 0.95);
  CHECK(g3.size() == 64);
  for (std::size_t s = 0; s < g3.size(); ++s)
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(g3[s][j] + g3[g3.size() - 1 - s][j]) < 1e-12);
  CHECK(latent_grid(3, 4, 0.05, 0.95) == g3);

  CHECK_THROWS_AS(latent_grid(8, 5, 0.1, 0.9, 1000), Error);
  CHECK_NOTHROW(latent_grid(3, 10, 0.1, 0.9, 1000));
  CHECK_THROWS_AS(latent_grid(2, 1, 0.1, 0.9), Error);
  CHECK_THROWS_AS(latent_grid(2, 3, 0.9, 0.1), Error);
  CHECK_THROWS_AS(latent_grid(2, 3, 0.0, 0.9), Error);
}

TEST_CASE("AVAE encoding round-trips and rejects malformed input") {
  Rng rng(9);
  auto model = random_vae(12, {5, 3}, 2, 1.0, rng);
  model.dims = {2, 3, 2};
  const auto bytes = encode_vae(model);
  CHECK(bytes.size() == 4 + 2 + 2 + 12 + 8 + 12 + 8 * model.params.size());
  const auto back = decode_vae(bytes);
  CHECK(back.params == model.params);
  CHECK(back.arch == model.arch);
  CHECK(back.dims == model.dims);

  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      decode_vae(b);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  auto bad = bytes;
  bad[1] = 'X';
  CHECK(kind_of(bad) == ErrorKind::BadMagic);
  bad = bytes;
  bad[4] = 9;
  CHECK(kind_of(bad) == ErrorKind::BadVersion);
  bad = bytes;
  bad.resize(bad.size() - 8);
  CHECK(kind_of(bad) == ErrorKind::TruncatedPayload);
  bad = bytes;
  bad.push_back(1);
  CHECK(kind_of(bad) == ErrorKind::LengthMismatch);
  bad = bytes;
  bad[20] = 0xFF;  // first hidden width becomes huge
  bad[21] = 0xFF;
  bad[22] = 0xFF;
  CHECK(kind_of(bad) == ErrorKind::TruncatedPayload);
}
