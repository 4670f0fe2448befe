#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "atriamap/error.hpp"
#include "atriamap/eval.hpp"
#include "atriamap/parallel.hpp"

namespace atriamap {

namespace {

constexpr const char* kStage = "experiment";

std::string describe(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return std::string(to_string(err->kind())) + ": " + err->what();
  return std::string("internal: ") + e.what();
}

nlohmann::json config_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["point_counts"] = c.point_counts;
  j["n_samples"] = c.n_samples;
  j["sim_threshold"] = c.sim_threshold;
  j["seed"] = c.seed;
  j["run_rbm"] = c.run_rbm;
  j["run_vae"] = c.run_vae;
  j["rbm"] = {{"hidden", c.rbm.hidden},           {"k", c.rbm.k},
              {"learning_rate", c.rbm.learning_rate}, {"epochs", c.rbm.epochs},
              {"batch_size", c.rbm.batch_size},   {"weight_init_sigma", c.rbm.weight_init_sigma}};
  j["vae"] = {{"hidden", c.vae.arch.hidden},          {"latent", c.vae.arch.d},
              {"learning_rate", c.vae.learning_rate}, {"momentum", c.vae.momentum},
              {"epochs", c.vae.epochs},               {"batch_size", c.vae.batch_size},
              {"kl_weight", c.vae.kl_weight}};
  j["post"] = {{"min_component_fraction", c.post.min_component_fraction},
               {"smooth_iters", c.post.smooth_iters},
               {"smooth_lambda", c.post.smooth_lambda}};
  return j;
}

std::vector<std::string> ids_of(std::span<const NamedVolume> v) {
  std::vector<std::string> out;
  for (const auto& n : v) out.push_back(n.id);
  return out;
}

}  // namespace

std::vector<NamedVolume> phantom_corpus(std::uint64_t seed, std::size_t count, Dims dims, const PhantomSpec& base,
                                        std::uint32_t supersample) {
  if (supersample < 1) throw Error(ErrorKind::InvalidSpec, "phantom", "supersample must be >= 1");
  PhantomSpec scaled = base;
  const double f = supersample;
  scaled.semi_axes = f * base.semi_axes;
  scaled.vein_radius_min = f * base.vein_radius_min;
  scaled.vein_radius_max = f * base.vein_radius_max;
  const Dims fine{dims.x * supersample, dims.y * supersample, dims.z * supersample};
  scaled.validate(fine);
  std::vector<NamedVolume> out(count);
  parallel_for(count, [&](std::size_t i) {
    PhantomSpec spec = scaled;
    spec.seed = derive_seed(seed, 100, i);
    char id[32];
    std::snprintf(id, sizeof id, "phantom_%03zu", i);
    VoxelGrid g = synth_phantom(spec, fine);
    out[i] = {id, supersample == 1 ? std::move(g) : prepare_volume(g, dims)};
  });
  return out;
}

std::optional<double> ExperimentReport::median(const std::string& model, std::size_t points) const {
  std::vector<double> v;
  for (const auto& c : cases)
    if (c.model == model && c.points == points && c.dice) v.push_back(*c.dice);
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::size_t ExperimentReport::failures() const {
  return static_cast<std::size_t>(std::count_if(cases.begin(), cases.end(), [](const CaseResult& c) { return !c.dice; }));
}

ExperimentReport evaluate_models(const std::optional<RbmModel>& rbm, const std::optional<VaeModel>& vae,
                                 std::span<const NamedVolume> test, const ExperimentConfig& config) {
  ExperimentReport report;
  report.config = config;
  report.test_ids = ids_of(test);
  const auto& counts = config.point_counts;
  const std::size_t nv = test.size(), nc = counts.size();

  struct Acq {
    PointCloud cloud;
    std::uint64_t seed = 0;
    std::string error;
  };
  std::vector<Acq> acq(nv * nc);
  parallel_for(acq.size(), [&](std::size_t q) {
    const std::size_t v = q / nc, c = q % nc;
    acq[q].seed = derive_seed(config.seed, 10, v, counts[c]);
    try {
      acq[q].cloud = simulate_acquisition(test[v].grid, {counts[c], config.sim_threshold, acq[q].seed});
    } catch (const std::exception& e) {
      acq[q].error = describe(e);
    }
  });

  std::vector<std::pair<const Model*, std::uint64_t>> models;
  std::vector<Model> storage;
  storage.reserve(2);
  if (rbm) storage.emplace_back(*rbm);
  if (vae) storage.emplace_back(*vae);
  for (std::size_t k = 0; k < storage.size(); ++k)
    models.push_back({&storage[k], std::holds_alternative<RbmModel>(storage[k]) ? 1u : 2u});

  report.cases.resize(models.size() * nv * nc);
  parallel_for(report.cases.size(), [&](std::size_t q) {
    const std::size_t mi = q / (nv * nc), v = (q / nc) % nv, c = q % nc;
    const Model& model = *models[mi].first;
    CaseResult& out = report.cases[q];
    out.volume = test[v].id;
    out.model = model_kind(model);
    out.points = counts[c];
    out.acquisition_seed = acq[v * nc + c].seed;
    out.posterior_seed = derive_seed(config.seed, 20 + models[mi].second, v, counts[c]);
    if (!acq[v * nc + c].error.empty()) {
      out.error = acq[v * nc + c].error;
      return;
    }
    out.acquired = acq[v * nc + c].cloud.points.size();
    try {
      const auto r = reconstruct(acq[v * nc + c].cloud, model, {config.n_samples, out.posterior_seed, config.post});
      out.dice = dice(r.mean_mask, test[v].grid);
    } catch (const std::exception& e) {
      out.error = describe(e);
    }
  });
  for (const auto& c : report.cases)
    if (!c.dice) spdlog::warn("case {}/{}/{} failed: {}", c.model, c.volume, c.points, c.error);
  return report;
}

ExperimentReport run_experiment(std::span<const NamedVolume> train, std::span<const NamedVolume> test,
                                const ExperimentConfig& config) {
  if (train.empty() || test.empty()) throw Error(ErrorKind::InvalidInput, kStage, "train and test sets must be nonempty");
  std::set<std::string> train_ids;
  for (const auto& v : train)
    if (!train_ids.insert(v.id).second) throw Error(ErrorKind::InvalidInput, kStage, "duplicate train id " + v.id);
  std::set<std::string> test_ids;
  for (const auto& v : test) {
    if (train_ids.count(v.id)) throw Error(ErrorKind::InvalidInput, kStage, "volume " + v.id + " is in both train and test sets");
    if (!test_ids.insert(v.id).second) throw Error(ErrorKind::InvalidInput, kStage, "duplicate test id " + v.id);
  }
  if (config.point_counts.empty()) throw Error(ErrorKind::InvalidSpec, kStage, "no point counts");

  std::vector<VoxelGrid> grids;
  for (const auto& v : train) grids.push_back(v.grid);

  const std::uint64_t rbm_seed = derive_seed(config.seed, 1), vae_seed = derive_seed(config.seed, 2);
  std::optional<RbmModel> rbm;
  std::optional<VaeModel> vae;
  std::vector<double> rbm_loss, vae_loss;
  bool diverged = false;
  if (config.run_rbm) {
    CdConfig c = config.rbm;
    c.seed = rbm_seed;
    auto res = train_cd(grids, c);
    for (const auto& e : res.log) rbm_loss.push_back(e.value);
    rbm = std::move(res.model);
  }
  if (config.run_vae) {
    VaeTrainConfig c = config.vae;
    c.seed = vae_seed;
    auto res = train_vae(grids, c);
    for (const auto& e : res.log) vae_loss.push_back(e.value);
    diverged = res.diverged;
    vae = std::move(res.model);
  }
  ExperimentReport report = evaluate_models(rbm, vae, test, config);
  report.train_ids = ids_of(train);
  report.rbm_seed = rbm_seed;
  report.vae_seed = vae_seed;
  report.rbm_loss = std::move(rbm_loss);
  report.vae_loss = std::move(vae_loss);
  report.vae_diverged = diverged;
  return report;
}

std::string report_jsonl(const ExperimentReport& report) {
  std::string out;
  nlohmann::json header = {{"record", "header"},
                           {"train", report.train_ids},
                           {"test", report.test_ids},
                           {"config", config_json(report.config)},
                           {"rbm_seed", report.rbm_seed},
                           {"vae_seed", report.vae_seed},
                           {"rbm_loss", report.rbm_loss},
                           {"vae_loss", report.vae_loss},
                           {"vae_diverged", report.vae_diverged}};
  out += header.dump() + "\n";
  for (const auto& c : report.cases) {
    nlohmann::json j = {{"record", "case"},
                        {"model", c.model},
                        {"volume", c.volume},
                        {"points", c.points},
                        {"acquired", c.acquired},
                        {"acquisition_seed", c.acquisition_seed},
                        {"posterior_seed", c.posterior_seed}};
    if (c.dice)
      j["dice"] = *c.dice;
    else
      j["error"] = c.error;
    out += j.dump() + "\n";
  }
  for (const char* model : {"rbm", "vae"}) {
    if ((std::string(model) == "rbm" && !report.config.run_rbm) || (std::string(model) == "vae" && !report.config.run_vae))
      continue;
    for (auto n : report.config.point_counts) {
      nlohmann::json j = {{"record", "median"}, {"model", model}, {"points", n}};
      const auto m = report.median(model, n);
      j["dice"] = m ? nlohmann::json(*m) : nlohmann::json(nullptr);
      out += j.dump() + "\n";
    }
  }
  return out;
}

std::string report_table(const ExperimentReport& report) {
  std::ostringstream os;
  char buf[64];
  os << "Median dice over " << report.test_ids.size() << " test volumes\n";
  std::snprintf(buf, sizeof buf, "%-6s", "model");
  os << buf;
  for (auto n : report.config.point_counts) {
    std::snprintf(buf, sizeof buf, " %10zu pts", n);
    os << buf;
  }
  os << "\n";
  for (const char* model : {"rbm", "vae"}) {
    if ((std::string(model) == "rbm" && !report.config.run_rbm) || (std::string(model) == "vae" && !report.config.run_vae))
      continue;
    std::snprintf(buf, sizeof buf, "%-6s", std::string(model) == "rbm" ? "RBM" : "VAE");
    os << buf;
    for (auto n : report.config.point_counts) {
      const auto m = report.median(model, n);
      if (m)
        std::snprintf(buf, sizeof buf, " %14.4f", *m);
      else
        std::snprintf(buf, sizeof buf, " %14s", "n/a");
      os << buf;
    }
    os << "\n";
  }
  if (const auto f = report.failures()) os << f << " case(s) failed\n";
  return os.str();
}

}  // namespace atriamap
