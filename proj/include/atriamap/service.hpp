#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "atriamap/eval.hpp"

namespace atriamap::service {

struct ServiceConfig {
  PhantomSpec phantom{};         // base spec; the session seed replaces spec.seed
  std::uint32_t supersample = 2; // phantoms are built like the experiment corpus
  double voxel_mm = 2.0;         // isotropic voxel edge length
  std::size_t default_samples = 100;
  std::size_t max_samples = 2000;
  PostprocessOptions post{};
  std::uint64_t seed = 0;        // session ids and default reconstruction seeds
};

struct AcquireResult {
  Vec3 requested;  // mm
  Index3 voxel;
  Vec3 point;      // recorded voxel centre, mm
  double surface_distance = 0.0;  // voxels, recorded point to truth surface vertex
  std::uint64_t revision = 0;
  bool replayed = false;
};

struct SessionView {
  std::string id;
  std::string model;
  std::uint64_t revision = 0;
  Dims dims;
  FieldOfView fov;
  std::uint64_t phantom_seed = 0;
  std::vector<Vec3> points;  // mm
};

struct MeshView {
  std::vector<Vec3> vertices;  // mm
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

struct ReconstructionView {
  enum class Status { Ok, NeedsMorePoints };
  Status status = Status::Ok;
  std::uint64_t revision = 0;
  std::size_t point_count = 0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::string model;
  MeshView mean, lower, upper;
  std::vector<double> vertex_std;  // one per mean vertex
  double mean_std = 0.0;           // over the whole grid
  double max_std = 0.0;
  std::size_t foreground = 0;      // voxels in the mean mask
  double score = 0.0;              // dice of the mean mask against the hidden truth
  bool closed = true;
};

struct ReconstructionQuery {
  std::optional<std::size_t> samples;
  std::optional<std::uint64_t> revision;
  std::optional<std::uint64_t> seed;
};

/// In-memory session store. Mutations on one session are serialized by a
/// per-session mutex; reconstructions read a snapshot taken at a revision
/// and are cached by (revision, samples, seed).
class SessionManager {
 public:
  SessionManager(std::map<std::string, Model> models, ServiceConfig config);
  ~SessionManager();

  const ServiceConfig& config() const { return config_; }
  std::vector<std::string> model_ids() const;

  /// New session on a phantom built from `phantom_seed`. Throws
  /// Error(NotFound) for an unknown model.
  SessionView create(const std::string& model_id, std::uint64_t phantom_seed);
  /// New session on a caller-supplied truth volume, prepared to the model
  /// grid when dims differ.
  SessionView create(const std::string& model_id, const VoxelGrid& truth);

  /// Projects `position_mm` to the nearest truth-surface vertex and records
  /// the foreground voxel centre closest to that vertex. A repeated
  /// idempotency key returns the first result without a new revision.
  AcquireResult acquire(const std::string& id, Vec3 position_mm, const std::string& idempotency_key = {});

  SessionView get(const std::string& id) const;
  std::shared_ptr<const ReconstructionView> reconstruction(const std::string& id, const ReconstructionQuery& q);
  void remove(const std::string& id);
  std::size_t size() const;

  /// Hidden truth, for offline scoring; never served over HTTP.
  VoxelGrid truth(const std::string& id) const;

  /// Writes truth.avx, points.json and manifest.json per session under dir/<id>/.
  void save_snapshots(const std::filesystem::path& dir) const;
  /// Restores sessions written by save_snapshots; returns how many were loaded.
  std::size_t load_snapshots(const std::filesystem::path& dir);

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;
  SessionView add(const std::string& model_id, VoxelGrid truth, std::uint64_t phantom_seed);

  std::map<std::string, Model> models_;
  ServiceConfig config_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t created_ = 0;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;
  std::optional<std::filesystem::path> snapshot_dir;
  int threads = 4;
};

/// HTTP front end under /v1. bind() then run() blocks until stop().
class Server {
 public:
  Server(SessionManager& sessions, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Returns the bound port.
  int bind();
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace atriamap::service
