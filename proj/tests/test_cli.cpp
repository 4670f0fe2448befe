#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "doctest.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

// Runs the CLI in `dir`, capturing stdout and stderr separately.
Run cli(const fs::path& dir, const std::string& args, const std::string& env = "") {
  const auto err_file = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" ATRIAMAP_CLI "' --log warn " + args + " 2>'" +
                          err_file.string() + "'";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  TempDir t("atriamap_cli_usage");
  CHECK(cli(t.path, "").code == 2);
  CHECK(cli(t.path, "frobnicate").code == 2);
  CHECK(cli(t.path, "phantom --seed 1 --out a.avx --nope").code == 2);
  CHECK(cli(t.path, "phantom --seed x --out a.avx").code == 2);
  CHECK(cli(t.path, "phantom --seed 1").code == 2);  // needs --out or --out-dir
  CHECK(cli(t.path, "--kernels fortran phantom --out a.avx").code == 2);
  CHECK(!fs::exists(t.path / "a.avx"));
}

TEST_CASE("cli: help documents every flag") {
  TempDir t("atriamap_cli_help");
  const auto top = cli(t.path, "--help");
  CHECK(top.code == 0);
  for (const char* sub : {"phantom", "prep", "train-rbm", "train-vae", "reconstruct", "simulate", "experiment",
                          "latent-grid", "serve"}) {
    CHECK(top.out.find(sub) != std::string::npos);
    const auto h = cli(t.path, std::string(sub) + " --help");
    CHECK(h.code == 0);
    CHECK(h.out.find("--config") != std::string::npos);
  }
  const auto rbm = cli(t.path, "train-rbm --help").out;
  for (const char* flag : {"--data-dir", "--out", "--hidden", "--k", "--lr", "--epochs", "--batch", "--seed", "--prune"})
    CHECK(rbm.find(flag) != std::string::npos);
}

TEST_CASE("cli: phantom generation is deterministic and writes a manifest") {
  TempDir t("atriamap_cli_phantom");
  REQUIRE(cli(t.path, "phantom --seed 7 --out a.avx").code == 0);
  REQUIRE(cli(t.path, "phantom --seed 7 --out b.avx").code == 0);
  REQUIRE(cli(t.path, "phantom --seed 8 --out c.avx").code == 0);
  CHECK(slurp(t.path / "a.avx") == slurp(t.path / "b.avx"));
  CHECK(slurp(t.path / "a.avx") != slurp(t.path / "c.avx"));
  const auto ma = read_json(t.path / "a.avx.manifest.json"), mb = read_json(t.path / "b.avx.manifest.json");
  CHECK(ma["subcommand"] == "phantom");
  CHECK(ma["outputs"][0]["sha256"] == mb["outputs"][0]["sha256"]);
  CHECK(ma["outputs"][0]["sha256"].get<std::string>().size() == 64);
  CHECK(ma["config"]["seed"] == "7");
  CHECK(ma["config"]["dims"] == "[20]");

  REQUIRE(cli(t.path, "phantom --seed 3 --count 3 --out-dir corpus").code == 0);
  CHECK(fs::exists(t.path / "corpus" / "phantom_002.avx"));
  CHECK(read_json(t.path / "corpus" / "manifest.json")["outputs"].size() == 3);
}

TEST_CASE("cli: config file sits between flags and defaults") {
  TempDir t("atriamap_cli_config");
  REQUIRE(cli(t.path, "phantom --seed 1 --count 3 --dims 20 --supersample 1 --out-dir data").code == 0);
  std::ofstream(t.path / "run.cfg") << "# comment\nepochs = 4\nhidden=5\n\nseed=11\n";
  REQUIRE(cli(t.path, "train-rbm --config run.cfg --seed 12 --data-dir data --out m.arbm").code == 0);
  const auto m = read_json(t.path / "m.arbm.manifest.json");
  CHECK(m["config"]["epochs"] == "4");
  CHECK(m["config"]["hidden"] == "5");
  CHECK(m["config"]["seed"] == "12");
  CHECK(m["config"]["lr"] == "0.01");
  CHECK(m["details"]["reconstruction_cross_entropy"].size() == 4);
  std::ofstream(t.path / "bad.cfg") << "no_such_option=1\n";
  CHECK(cli(t.path, "train-rbm --config bad.cfg --data-dir data --out m2.arbm").code == 2);
}

TEST_CASE("cli: simulate, reconstruct and error reporting") {
  TempDir t("atriamap_cli_pipeline");
  REQUIRE(cli(t.path, "phantom --seed 2 --count 4 --dims 20 --supersample 1 --out-dir data").code == 0);
  REQUIRE(cli(t.path, "train-rbm --data-dir data --out m.arbm --epochs 3 --hidden 8 --weights-dir w --prune 0.5").code == 0);
  CHECK(fs::exists(t.path / "w" / "hidden_007.avx"));
  REQUIRE(cli(t.path, "simulate --truth data/phantom_000.avx --points 20 --seed 4 --out pts.txt").code == 0);
  const auto a = slurp(t.path / "pts.txt");
  REQUIRE(cli(t.path, "simulate --truth data/phantom_000.avx --points 20 --seed 4 --out pts2.txt").code == 0);
  CHECK(a == slurp(t.path / "pts2.txt"));

  const auto r = cli(t.path, "reconstruct --model m.arbm --points pts.txt --samples 8 --seed 1 --out-dir rec", "ATRIAMAP_THREADS=2");
  REQUIRE(r.code == 0);
  for (const char* f : {"mean.obj", "lower.obj", "upper.obj", "mean.avx", "std.avx", "mask.avx", "manifest.json"})
    CHECK(fs::exists(t.path / "rec" / f));
  const auto m = read_json(t.path / "rec" / "manifest.json");
  CHECK(m["threads"] == 2);
  CHECK(m["outputs"].size() == 6);
  CHECK(m["inputs"][0]["sha256"].is_string());

  std::ofstream(t.path / "three.txt") << "1 1 1\n5,1,1\n1 5 1\n";
  const auto bad = cli(t.path, "reconstruct --model m.arbm --points three.txt --out-dir rec3");
  CHECK(bad.code == 1);
  const auto err = json::parse(bad.err.substr(bad.err.find('{')));
  CHECK(err["error"]["kind"] == "degenerate-input");
  CHECK(err["error"]["stage"] == "geometry");

  std::ofstream(t.path / "junk.txt") << "1 2\n";
  CHECK(cli(t.path, "reconstruct --model m.arbm --points junk.txt --out-dir rec4").code == 1);
  CHECK(cli(t.path, "reconstruct --model data/phantom_000.avx --points pts.txt --out-dir rec5").code == 1);
  CHECK(cli(t.path, "simulate --truth missing.avx --out p.txt").code == 1);
}

TEST_CASE("cli: experiment report cardinality and rerun determinism") {
  TempDir t("atriamap_cli_experiment");
  REQUIRE(cli(t.path, "phantom --seed 5 --count 4 --dims 20 --supersample 1 --out-dir train").code == 0);
  REQUIRE(cli(t.path, "phantom --seed 6 --count 2 --dims 20 --supersample 1 --out-dir test").code == 0);
  for (const char* id : {"phantom_000", "phantom_001"})
    fs::rename(t.path / "test" / (std::string(id) + ".avx"), t.path / "test" / (std::string("t_") + id + ".avx"));
  const std::string args =
      "experiment --train-dir train --test-dir test --points 10,20,40 --rbm-epochs 2 --rbm-hidden 8 "
      "--vae-epochs 1 --vae-hidden 16 --vae-latent 2 --samples 4 --out-dir ";
  const auto r1 = cli(t.path, args + "r1");
  REQUIRE(r1.code == 0);
  CHECK(r1.out.find("RBM") != std::string::npos);
  REQUIRE(cli(t.path, args + "r2", "ATRIAMAP_THREADS=1").code == 0);
  const auto report = slurp(t.path / "r1" / "report.jsonl");
  CHECK(report == slurp(t.path / "r2" / "report.jsonl"));
  std::size_t cases = 0;
  std::istringstream lines(report);
  std::string line;
  while (std::getline(lines, line))
    if (json::parse(line)["record"] == "case") ++cases;
  CHECK(cases == 2 * 2 * 3);
  CHECK(fs::exists(t.path / "r1" / "manifest.json"));
  CHECK(cli(t.path, "experiment --train-dir train --test-dir train --out-dir r3").code == 1);
}

TEST_CASE("cli: latent grid export") {
  TempDir t("atriamap_cli_latent");
  REQUIRE(cli(t.path, "phantom --seed 5 --count 3 --dims 20 --supersample 1 --out-dir data").code == 0);
  REQUIRE(cli(t.path, "train-vae --data-dir data --out v.avae --epochs 1 --hidden 16 --latent 3").code == 0);
  REQUIRE(cli(t.path, "latent-grid --model v.avae --out-dir lg --k 3 --axes 0,2").code == 0);
  const auto m = read_json(t.path / "lg" / "manifest.json");
  REQUIRE(m["details"]["grid"].size() == 9);
  CHECK(m["details"]["grid"][5]["file"] == "grid_1_2.obj");
  CHECK(fs::exists(t.path / "lg" / "grid_2_2.obj"));
  CHECK(cli(t.path, "latent-grid --model v.avae --out-dir lg2 --k 3 --axes 5").code == 1);
  CHECK(cli(t.path, "latent-grid --model v.avae --out-dir lg3 --k 64 --budget 100").code == 1);
}
