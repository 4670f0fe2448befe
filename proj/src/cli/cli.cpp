#include "atriamap/cli.hpp"

#include <openssl/evp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "atriamap/error.hpp"
#include "atriamap/eval.hpp"
#include "atriamap/kernels.hpp"
#include "atriamap/parallel.hpp"
#include "atriamap/service.hpp"

namespace atriamap::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kStage = "cli";

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, kStage, "cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

// One per run, written next to the outputs when the run finishes.
struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;
  json config = json::object();
  json seeds = json::object();
  std::vector<fs::path> inputs, outputs;
  json extra = json::object();

  void write(const fs::path& path, double wall_seconds) const {
    auto files = [](const std::vector<fs::path>& paths) {
      json out = json::array();
      for (const auto& p : paths) {
        json e = {{"path", p.string()}};
        if (fs::is_regular_file(p)) e["sha256"] = sha256_file(p);
        out.push_back(e);
      }
      return out;
    };
    json m = {{"subcommand", subcommand},
              {"argv", argv},
              {"config", config},
              {"seeds", seeds},
              {"inputs", files(inputs)},
              {"outputs", files(outputs)},
              {"threads", max_threads()},
              {"kernels", kernels::to_string(kernels::active_backend())},
              {"wall_seconds", wall_seconds}};
    if (!extra.empty()) m["details"] = extra;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream(path) << m.dump(2) << '\n';
  }
};

json resolved_config(const CLI::App& sub) {
  json out = json::object();
  std::istringstream lines(sub.config_to_str(true, false));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.starts_with('#') || line.starts_with('[')) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\""));
      s.erase(s.find_last_not_of(" \t\"") + 1);
      return s;
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

Dims parse_dims(const std::vector<std::uint32_t>& v) {
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw Error(ErrorKind::InvalidInput, kStage, "dims take one value or three");
}

std::vector<NamedVolume> read_volume_dir(const fs::path& dir, std::vector<fs::path>* inputs) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, kStage, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".avx") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::EmptyVolume, kStage, "no .avx volumes in " + dir.string());
  std::vector<NamedVolume> out;
  for (const auto& f : files) {
    out.push_back({f.stem().string(), load_volume(f)});
    if (inputs) inputs->push_back(f);
  }
  return out;
}

std::vector<VoxelGrid> grids_of(const std::vector<NamedVolume>& v) {
  std::vector<VoxelGrid> out;
  for (const auto& x : v) out.push_back(x.grid);
  return out;
}

Model load_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, kStage, "cannot read " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  const std::string m(magic, 4);
  if (m == "ARBM") return load_rbm(path);
  if (m == "AVAE") return load_vae(path);
  throw Error(ErrorKind::BadMagic, kStage, "not a model file: " + path.string());
}

PointCloud read_points(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, kStage, "cannot read " + path.string());
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    Vec3 p;
    if (!(fields >> p.x)) continue;
    std::string rest;
    if (!(fields >> p.y >> p.z) || (fields >> rest))
      throw Error(ErrorKind::InvalidInput, kStage, "line " + std::to_string(lineno) + " of " + path.string() +
                                                      " is not three coordinates");
    cloud.points.push_back(p);
  }
  return cloud;
}

void write_points(const PointCloud& cloud, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  char buf[96];
  for (const Vec3& p : cloud.points) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.x, p.y, p.z);
    out << buf;
  }
}

std::atomic<service::Server*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

// Config lines become --key=value arguments inserted right after the
// subcommand name, skipped for keys already given on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const std::set<std::string>& subcommands) {
  std::string path;
  std::size_t sub_pos = args.size();
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (sub_pos == args.size() && subcommands.contains(args[i])) sub_pos = i;
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (path.empty() || sub_pos == args.size()) return args;
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot read " + path);
  std::vector<std::string> injected;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string t) {
      t.erase(0, t.find_first_not_of(" \t\r"));
      t.erase(t.find_last_not_of(" \t\r") + 1);
      return t;
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw CLI::ValidationError("--config", "expected key=value, got '" + trim(line) + "'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(),
                                   [&](const std::string& a) { return a == flag || a.starts_with(flag + "="); });
    if (!given) injected.push_back(flag + "=" + value);
  }
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1);
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, args.end());
  return out;
}

spdlog::level::level_enum parse_level(const std::string& s) {
  const auto level = spdlog::level::from_str(s);
  if (level == spdlog::level::off && s != "off")
    throw CLI::ValidationError("--log", "unknown level '" + s + "'");
  return level;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Bayesian surface reconstruction of the left atrium from sparse point clouds."};
  app.name("atriamap");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "atriamap 1.0.0");

  unsigned threads = 0;
  std::string log_level = "info";
  std::string backend = "auto";
  app.add_option("--threads", threads, "Worker thread cap, 0 for all cores")->envname("ATRIAMAP_THREADS");
  app.add_option("--log", log_level, "Log level: trace, debug, info, warn, error, off")->envname("ATRIAMAP_LOG");
  app.add_option("--kernels", backend, "Linear algebra kernels")->check(CLI::IsMember({"auto", "scalar", "avx2"}));

  RunManifest manifest;
  manifest.argv.assign(argv, argv + argc);
  std::function<void()> action;
  std::function<fs::path()> manifest_path;

  std::string config_file;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "Line-oriented key=value file of option defaults; flags take precedence");
  };

  // phantom ------------------------------------------------------------------
  struct {
    std::uint64_t seed = 0;
    fs::path out, out_dir;
    std::size_t count = 1;
    std::vector<std::uint32_t> dims{20};
    std::uint32_t supersample = 2;
    double jitter = 0.2;
  } ph;
  auto* phantom = app.add_subcommand("phantom", "Synthesize phantom volumes (AVX1)");
  add_config(phantom);
  phantom->add_option("--seed", ph.seed, "Phantom seed")->capture_default_str();
  auto* ph_out = phantom->add_option("--out", ph.out, "Output file for a single phantom");
  auto* ph_dir = phantom->add_option("--out-dir", ph.out_dir, "Output directory for --count phantoms");
  ph_out->excludes(ph_dir);
  phantom->add_option("--count", ph.count, "Number of phantoms (with --out-dir)")->capture_default_str()->check(CLI::PositiveNumber);
  phantom->add_option("--dims", ph.dims, "Grid size: one value or three")->capture_default_str()->delimiter(',');
  phantom->add_option("--supersample", ph.supersample, "Synthesis resolution factor before preparation")
      ->capture_default_str()
      ->check(CLI::Range(1u, 8u));
  phantom->add_option("--jitter", ph.jitter, "Relative shape jitter")->capture_default_str();
  phantom->callback([&] {
    if (ph.out.empty() == ph.out_dir.empty()) throw CLI::ValidationError("phantom", "give exactly one of --out, --out-dir");
    if (!ph.out.empty() && ph.count != 1) throw CLI::ValidationError("--count", "--count needs --out-dir");
    action = [&] {
      PhantomSpec spec;
      spec.jitter = ph.jitter;
      const auto corpus = phantom_corpus(ph.seed, ph.count, parse_dims(ph.dims), spec, ph.supersample);
      manifest.seeds["phantom"] = ph.seed;
      if (!ph.out.empty()) {
        if (ph.out.has_parent_path()) fs::create_directories(ph.out.parent_path());
        save_volume(corpus[0].grid, ph.out);
        manifest.outputs.push_back(ph.out);
      } else {
        fs::create_directories(ph.out_dir);
        for (const auto& v : corpus) {
          save_volume(v.grid, ph.out_dir / (v.id + ".avx"));
          manifest.outputs.push_back(ph.out_dir / (v.id + ".avx"));
        }
      }
      spdlog::info("wrote {} phantom(s)", corpus.size());
    };
    manifest_path = [&] { return ph.out.empty() ? ph.out_dir / "manifest.json" : fs::path(ph.out.string() + ".manifest.json"); };
  });

  // prep ---------------------------------------------------------------------
  struct {
    fs::path in_dir, out_dir;
    std::vector<std::uint32_t> dims{20};
  } pr;
  auto* prep = app.add_subcommand("prep", "Crop and downsample a directory of binary volumes");
  add_config(prep);
  prep->add_option("--in-dir", pr.in_dir, "Directory of .avx volumes")->required();
  prep->add_option("--out-dir", pr.out_dir, "Output directory")->required();
  prep->add_option("--dims", pr.dims, "Target grid: one value or three")->capture_default_str()->delimiter(',');
  prep->callback([&] {
    action = [&] {
      const auto in = read_volume_dir(pr.in_dir, &manifest.inputs);
      fs::create_directories(pr.out_dir);
      const Dims target = parse_dims(pr.dims);
      for (const auto& v : in) {
        const auto path = pr.out_dir / (v.id + ".avx");
        save_volume(prepare_volume(v.grid, target), path);
        manifest.outputs.push_back(path);
      }
      spdlog::info("prepared {} volume(s)", in.size());
    };
    manifest_path = [&] { return pr.out_dir / "manifest.json"; };
  });

  // train-rbm ----------------------------------------------------------------
  CdConfig cd;
  fs::path rbm_data, rbm_out, rbm_weights;
  double prune = 0.0;
  auto* train_rbm = app.add_subcommand("train-rbm", "Train an RBM with k-step contrastive divergence");
  add_config(train_rbm);
  train_rbm->add_option("--data-dir", rbm_data, "Directory of prepared .avx volumes")->required();
  train_rbm->add_option("--out", rbm_out, "Model file (ARBM)")->required();
  train_rbm->add_option("--hidden", cd.hidden, "Hidden units")->capture_default_str();
  train_rbm->add_option("--k", cd.k, "Gibbs steps per update")->capture_default_str();
  train_rbm->add_option("--lr", cd.learning_rate, "Learning rate")->capture_default_str();
  train_rbm->add_option("--epochs", cd.epochs, "Epochs")->capture_default_str();
  train_rbm->add_option("--batch", cd.batch_size, "Batch size")->capture_default_str();
  train_rbm->add_option("--init-sigma", cd.weight_init_sigma, "Weight init standard deviation")->capture_default_str();
  train_rbm->add_option("--seed", cd.seed, "Training seed")->capture_default_str();
  train_rbm->add_option("--weights-dir", rbm_weights, "Also export one weight grid per hidden unit here");
  train_rbm->add_option("--prune", prune, "Fraction of smallest weights dropped in the export")->capture_default_str();
  train_rbm->callback([&] {
    action = [&] {
      const auto data = read_volume_dir(rbm_data, &manifest.inputs);
      const auto result = train_cd(grids_of(data), cd);
      if (rbm_out.has_parent_path()) fs::create_directories(rbm_out.parent_path());
      save_rbm(result.model, rbm_out);
      manifest.outputs.push_back(rbm_out);
      manifest.seeds["train"] = cd.seed;
      json loss = json::array();
      for (const auto& e : result.log) loss.push_back(e.value);
      manifest.extra["reconstruction_cross_entropy"] = loss;
      if (!rbm_weights.empty()) {
        fs::create_directories(rbm_weights);
        char name[32];
        for (std::size_t j = 0; j < result.model.n; ++j) {
          std::snprintf(name, sizeof name, "hidden_%03zu.avx", j);
          save_volume(export_weights(result.model, j, prune), rbm_weights / name);
          manifest.outputs.push_back(rbm_weights / name);
        }
      }
      if (!result.log.empty()) spdlog::info("final reconstruction cross-entropy {:.4f}", result.log.back().value);
    };
    manifest_path = [&] { return fs::path(rbm_out.string() + ".manifest.json"); };
  });

  // train-vae ----------------------------------------------------------------
  VaeTrainConfig vc;
  fs::path vae_data, vae_out;
  auto* train_vae_cmd = app.add_subcommand("train-vae", "Train a dense VAE on binary volumes");
  add_config(train_vae_cmd);
  train_vae_cmd->add_option("--data-dir", vae_data, "Directory of prepared .avx volumes")->required();
  train_vae_cmd->add_option("--out", vae_out, "Model file (AVAE)")->required();
  train_vae_cmd->add_option("--hidden", vc.arch.hidden, "Encoder hidden widths; the decoder mirrors them")
      ->capture_default_str()
      ->delimiter(',');
  train_vae_cmd->add_option("--latent", vc.arch.d, "Latent dimension")->capture_default_str();
  train_vae_cmd->add_option("--lr", vc.learning_rate, "Learning rate")->capture_default_str();
  train_vae_cmd->add_option("--momentum", vc.momentum, "SGD momentum")->capture_default_str();
  train_vae_cmd->add_option("--epochs", vc.epochs, "Epochs")->capture_default_str();
  train_vae_cmd->add_option("--batch", vc.batch_size, "Batch size")->capture_default_str();
  train_vae_cmd->add_option("--kl-weight", vc.kl_weight, "Weight of the KL term")->capture_default_str();
  train_vae_cmd->add_option("--seed", vc.seed, "Training seed")->capture_default_str();
  train_vae_cmd->callback([&] {
    action = [&] {
      const auto data = read_volume_dir(vae_data, &manifest.inputs);
      const auto result = train_vae(grids_of(data), vc);
      if (vae_out.has_parent_path()) fs::create_directories(vae_out.parent_path());
      save_vae(result.model, vae_out);
      manifest.outputs.push_back(vae_out);
      manifest.seeds["train"] = vc.seed;
      json loss = json::array();
      for (const auto& e : result.log) loss.push_back(e.value);
      manifest.extra["loss"] = loss;
      manifest.extra["diverged"] = result.diverged;
      if (result.diverged) spdlog::warn("training diverged at epoch {}; kept the last finite parameters", result.diverged_epoch);
    };
    manifest_path = [&] { return fs::path(vae_out.string() + ".manifest.json"); };
  });

  // reconstruct --------------------------------------------------------------
  struct {
    fs::path model, points, out_dir;
    std::size_t samples = 100;
    std::uint64_t seed = 0;
    std::vector<double> fov;
    int smooth = 0;
  } rc;
  auto* recon = app.add_subcommand("reconstruct", "Reconstruct a surface with uncertainty from a point file");
  add_config(recon);
  recon->add_option("--model", rc.model, "Model file (ARBM or AVAE)")->required();
  recon->add_option("--points", rc.points, "Text file, one 'x y z' per line")->required();
  recon->add_option("--out-dir", rc.out_dir, "Output directory")->required();
  recon->add_option("--samples", rc.samples, "Posterior samples")->capture_default_str()->check(CLI::PositiveNumber);
  recon->add_option("--seed", rc.seed, "Posterior sampling seed")->capture_default_str();
  recon->add_option("--fov", rc.fov,
                    "Field of view xmin,ymin,zmin,xmax,ymax,zmax in mm; without it points are voxel coordinates")
      ->delimiter(',')
      ->expected(6);
  recon->add_option("--smooth", rc.smooth, "Laplacian smoothing iterations")->capture_default_str();
  recon->callback([&] {
    action = [&] {
      const Model model = load_model(rc.model);
      PointCloud cloud = read_points(rc.points);
      manifest.inputs = {rc.model, rc.points};
      if (!rc.fov.empty()) {
        const FieldOfView fov{{rc.fov[0], rc.fov[1], rc.fov[2]}, {rc.fov[3], rc.fov[4], rc.fov[5]}, model_dims(model)};
        fov.validate();
        const auto grid = points_to_grid(cloud, fov).grid;
        cloud.points.clear();
        for (std::size_t i = 0; i < grid.size(); ++i)
          if (grid[i] > 0.5f) {
            const Index3 c = grid.coords(i);
            cloud.points.push_back({double(c.x), double(c.y), double(c.z)});
          }
      }
      PostprocessOptions post;
      post.smooth_iters = rc.smooth;
      const auto r = reconstruct(cloud, model, {rc.samples, rc.seed, post});
      fs::create_directories(rc.out_dir);
      const std::pair<const char*, const TriangleMesh*> meshes[] = {
          {"mean.obj", &r.mean_mesh}, {"lower.obj", &r.lower_mesh}, {"upper.obj", &r.upper_mesh}};
      for (const auto& [name, mesh] : meshes) {
        write_obj(*mesh, rc.out_dir / name);
        manifest.outputs.push_back(rc.out_dir / name);
      }
      const std::pair<const char*, const VoxelGrid*> grids[] = {
          {"mean.avx", &r.posterior.mean}, {"std.avx", &r.posterior.std}, {"mask.avx", &r.mean_mask}};
      for (const auto& [name, grid] : grids) {
        save_volume(*grid, rc.out_dir / name);
        manifest.outputs.push_back(rc.out_dir / name);
      }
      manifest.seeds["posterior"] = rc.seed;
      manifest.extra["model"] = model_kind(model);
      manifest.extra["points"] = cloud.size();
      spdlog::info("mean surface: {} vertices, {} triangles", r.mean_mesh.vertices.size(), r.mean_mesh.triangles.size());
    };
    manifest_path = [&] { return rc.out_dir / "manifest.json"; };
  });

  // simulate -----------------------------------------------------------------
  EamSimConfig sim;
  fs::path sim_truth, sim_out;
  auto* simulate = app.add_subcommand("simulate", "Simulate a mapping acquisition on a truth volume");
  add_config(simulate);
  simulate->add_option("--truth", sim_truth, "Binary truth volume (AVX1)")->required();
  simulate->add_option("--out", sim_out, "Point file to write")->required();
  simulate->add_option("--points", sim.n_points, "Surface vertices to sample")->capture_default_str();
  simulate->add_option("--threshold", sim.threshold, "Acquisition radius in voxels")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Acquisition seed")->capture_default_str();
  simulate->callback([&] {
    action = [&] {
      const auto cloud = simulate_acquisition(load_volume(sim_truth), sim);
      write_points(cloud, sim_out);
      manifest.inputs = {sim_truth};
      manifest.outputs = {sim_out};
      manifest.seeds["acquisition"] = sim.seed;
      spdlog::info("recorded {} points", cloud.size());
    };
    manifest_path = [&] { return fs::path(sim_out.string() + ".manifest.json"); };
  });

  // experiment ---------------------------------------------------------------
  ExperimentConfig ex;
  struct {
    fs::path train_dir, test_dir, out_dir;
    std::size_t train_count = 15, test_count = 5;
    std::vector<std::uint32_t> dims{20};
    std::uint32_t supersample = 2;
    std::vector<std::string> models{"rbm", "vae"};
  } eo;
  auto* experiment = app.add_subcommand("experiment", "Train both models and score reconstructions over point counts");
  add_config(experiment);
  auto* ex_train = experiment->add_option("--train-dir", eo.train_dir, "Training volumes; synthesized when omitted");
  auto* ex_test = experiment->add_option("--test-dir", eo.test_dir, "Test volumes; synthesized when omitted");
  ex_train->needs(ex_test);
  ex_test->needs(ex_train);
  experiment->add_option("--out-dir", eo.out_dir, "Writes report.jsonl, table.txt and manifest.json")->required();
  experiment->add_option("--points", ex.point_counts, "Point counts")->capture_default_str()->delimiter(',');
  experiment->add_option("--models", eo.models, "Models to run")
      ->capture_default_str()
      ->delimiter(',')
      ->check(CLI::IsMember({"rbm", "vae"}));
  experiment->add_option("--samples", ex.n_samples, "Posterior samples per case")->capture_default_str();
  experiment->add_option("--threshold", ex.sim_threshold, "Acquisition radius in voxels")->capture_default_str();
  experiment->add_option("--seed", ex.seed, "Master seed")->capture_default_str();
  experiment->add_option("--train-count", eo.train_count, "Synthesized training phantoms")->capture_default_str();
  experiment->add_option("--test-count", eo.test_count, "Synthesized test phantoms")->capture_default_str();
  experiment->add_option("--dims", eo.dims, "Synthesized grid size")->capture_default_str()->delimiter(',');
  experiment->add_option("--supersample", eo.supersample, "Synthesis resolution factor")->capture_default_str();
  experiment->add_option("--rbm-hidden", ex.rbm.hidden, "RBM hidden units")->capture_default_str();
  experiment->add_option("--rbm-k", ex.rbm.k, "RBM Gibbs steps")->capture_default_str();
  experiment->add_option("--rbm-lr", ex.rbm.learning_rate, "RBM learning rate")->capture_default_str();
  experiment->add_option("--rbm-epochs", ex.rbm.epochs, "RBM epochs")->capture_default_str();
  experiment->add_option("--rbm-batch", ex.rbm.batch_size, "RBM batch size")->capture_default_str();
  experiment->add_option("--vae-hidden", ex.vae.arch.hidden, "VAE hidden widths")->capture_default_str()->delimiter(',');
  experiment->add_option("--vae-latent", ex.vae.arch.d, "VAE latent dimension")->capture_default_str();
  experiment->add_option("--vae-lr", ex.vae.learning_rate, "VAE learning rate")->capture_default_str();
  experiment->add_option("--vae-epochs", ex.vae.epochs, "VAE epochs")->capture_default_str();
  experiment->add_option("--vae-batch", ex.vae.batch_size, "VAE batch size")->capture_default_str();
  experiment->callback([&] {
    action = [&] {
      std::vector<NamedVolume> train, test;
      if (!eo.train_dir.empty()) {
        train = read_volume_dir(eo.train_dir, &manifest.inputs);
        test = read_volume_dir(eo.test_dir, &manifest.inputs);
      } else {
        auto corpus = phantom_corpus(ex.seed, eo.train_count + eo.test_count, parse_dims(eo.dims), {}, eo.supersample);
        test.assign(corpus.begin() + static_cast<std::ptrdiff_t>(eo.train_count), corpus.end());
        corpus.resize(eo.train_count);
        train = std::move(corpus);
      }
      ex.run_rbm = std::find(eo.models.begin(), eo.models.end(), "rbm") != eo.models.end();
      ex.run_vae = std::find(eo.models.begin(), eo.models.end(), "vae") != eo.models.end();
      const auto report = run_experiment(train, test, ex);
      fs::create_directories(eo.out_dir);
      std::ofstream(eo.out_dir / "report.jsonl", std::ios::binary) << report_jsonl(report);
      std::ofstream(eo.out_dir / "table.txt", std::ios::binary) << report_table(report);
      manifest.outputs = {eo.out_dir / "report.jsonl", eo.out_dir / "table.txt"};
      manifest.seeds = {{"master", ex.seed}, {"rbm", report.rbm_seed}, {"vae", report.vae_seed}};
      manifest.extra["failures"] = report.failures();
      std::cout << report_table(report);
      if (report.failures() > 0) spdlog::warn("{} case(s) failed; see report.jsonl", report.failures());
    };
    manifest_path = [&] { return eo.out_dir / "manifest.json"; };
  });

  // latent-grid --------------------------------------------------------------
  struct {
    fs::path model, out_dir;
    std::size_t k = 3;
    double a = 0.05, b = 0.95;
    std::vector<std::size_t> axes;
    std::size_t budget = 4096;
  } lg;
  auto* latent = app.add_subcommand("latent-grid", "Decode a quantile grid over VAE latent axes to meshes");
  add_config(latent);
  latent->add_option("--model", lg.model, "VAE model file (AVAE)")->required();
  latent->add_option("--out-dir", lg.out_dir, "Output directory")->required();
  latent->add_option("--k", lg.k, "Grid points per axis")->capture_default_str()->check(CLI::Range(2, 64));
  latent->add_option("--from", lg.a, "Lower quantile")->capture_default_str();
  latent->add_option("--to", lg.b, "Upper quantile")->capture_default_str();
  latent->add_option("--axes", lg.axes, "Latent axes to vary (default: the first three); others stay at 0")->delimiter(',');
  latent->add_option("--budget", lg.budget, "Maximum number of grid points")->capture_default_str();
  latent->callback([&] {
    action = [&] {
      const Model model = load_model(lg.model);
      const auto* vae = std::get_if<VaeModel>(&model);
      if (!vae) throw Error(ErrorKind::InvalidInput, kStage, "latent-grid needs a VAE model");
      const std::size_t d = vae->arch.d;
      if (lg.axes.empty())
        for (std::size_t i = 0; i < std::min<std::size_t>(d, 3); ++i) lg.axes.push_back(i);
      for (std::size_t a : lg.axes)
        if (a >= d) throw Error(ErrorKind::IndexOutOfRange, kStage, "latent axis " + std::to_string(a) + " >= d");
      const auto points = latent_grid(lg.axes.size(), lg.k, lg.a, lg.b, lg.budget);
      fs::create_directories(lg.out_dir);
      std::vector<TriangleMesh> meshes(points.size());
      parallel_for(points.size(), [&](std::size_t i) {
        std::vector<double> z(d, 0.0);
        for (std::size_t j = 0; j < lg.axes.size(); ++j) z[lg.axes[j]] = points[i][j];
        const auto probs = decode(z, *vae);
        const auto grid = VoxelGrid::from_probabilities(vae->dims, probs).threshold(0.5);
        const auto mesh = marching_cubes(grid, 0.5);
        meshes[i] = mesh.empty() ? mesh : postprocess(mesh);
      });
      json entries = json::array();
      for (std::size_t i = 0; i < points.size(); ++i) {
        std::string name = "grid";
        std::vector<std::size_t> tuple;
        std::size_t rem = i;
        for (std::size_t j = lg.axes.size(); j-- > 0;) {
          tuple.insert(tuple.begin(), rem % lg.k);
          rem /= lg.k;
        }
        for (auto t : tuple) name += "_" + std::to_string(t);
        name += ".obj";
        write_obj(meshes[i], lg.out_dir / name);
        manifest.outputs.push_back(lg.out_dir / name);
        entries.push_back({{"file", name}, {"index", tuple}, {"z", points[i]}, {"triangles", meshes[i].triangles.size()}});
      }
      manifest.inputs = {lg.model};
      manifest.extra = {{"axes", lg.axes}, {"grid", entries}};
      spdlog::info("wrote {} latent grid meshes", points.size());
    };
    manifest_path = [&] { return lg.out_dir / "manifest.json"; };
  });

  // serve --------------------------------------------------------------------
  service::ServerOptions so;
  service::ServiceConfig sc;
  std::vector<std::string> model_specs;
  auto* serve = app.add_subcommand("serve", "Run the interactive mapping HTTP service");
  add_config(serve);
  serve->add_option("--model", model_specs, "Model as id=path; repeatable")->required();
  serve->add_option("--host", so.host, "Bind address")->capture_default_str();
  serve->add_option("--port", so.port, "Port, 0 for any free port")->capture_default_str();
  serve->add_option("--static-dir", so.static_dir, "Directory served at /");
  serve->add_option("--snapshot-dir", so.snapshot_dir, "Restore sessions from here on start and save them on shutdown");
  serve->add_option("--http-threads", so.threads, "HTTP worker threads")->capture_default_str();
  serve->add_option("--voxel-mm", sc.voxel_mm, "Voxel edge length in mm")->capture_default_str();
  serve->add_option("--samples", sc.default_samples, "Default posterior samples")->capture_default_str();
  serve->add_option("--max-samples", sc.max_samples, "Largest accepted samples parameter")->capture_default_str();
  serve->add_option("--supersample", sc.supersample, "Phantom synthesis resolution factor")->capture_default_str();
  serve->add_option("--seed", sc.seed, "Seed for session ids and default reconstruction seeds")->capture_default_str();
  serve->callback([&] {
    action = [&] {
      std::map<std::string, Model> models;
      for (const auto& spec : model_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0)
          throw Error(ErrorKind::InvalidInput, kStage, "--model expects id=path, got '" + spec + "'");
        models.emplace(spec.substr(0, eq), load_model(spec.substr(eq + 1)));
        manifest.inputs.push_back(spec.substr(eq + 1));
      }
      service::SessionManager sessions(std::move(models), sc);
      service::Server server(sessions, so);
      const int port = server.bind();
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << so.host << ":" << port << "/v1" << std::endl;
      server.run();
      g_server = nullptr;
    };
    manifest_path = [&] { return so.snapshot_dir ? *so.snapshot_dir / "manifest.json" : fs::path(); };
  });

  spdlog::set_default_logger(
      std::make_shared<spdlog::logger>("atriamap", std::make_shared<spdlog::sinks::stderr_color_sink_mt>()));

  try {
    std::set<std::string> names;
    for (const auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) names.insert(sub->get_name());
    auto args = expand_config(manifest.argv, names);
    args.erase(args.begin());
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    spdlog::set_level(parse_level(log_level));
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    set_max_threads(threads);
    kernels::set_backend(kernels::parse_backend(backend));
    const CLI::App* sub = app.get_subcommands().front();
    manifest.subcommand = sub->get_name();
    manifest.config = resolved_config(*sub);
    action();
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (const auto path = manifest_path(); !path.empty()) manifest.write(path, wall);
    return 0;
  } catch (const Error& e) {
    json err = {{"error", {{"kind", to_string(e.kind())}, {"stage", e.stage()}, {"message", e.what()}}}};
    if (!e.detail().empty()) err["error"]["detail"] = e.detail();
    std::cerr << err.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"stage", kStage}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
}

}  // namespace atriamap::cli
