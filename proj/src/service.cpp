#include "atriamap/service.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <httplib.h>
#include <json.hpp>
#include <limits>
#include <tuple>

#include "atriamap/error.hpp"

namespace atriamap::service {

namespace {

constexpr const char* kStage = "service";
constexpr std::size_t kMinPoints = 4;

using json = nlohmann::json;

std::string hex_id(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Vec3 to_mm(Vec3 v, const FieldOfView& fov) {
  const Vec3 s = fov.spacing();
  return {fov.p_min.x + (v.x + 0.5) * s.x, fov.p_min.y + (v.y + 0.5) * s.y, fov.p_min.z + (v.z + 0.5) * s.z};
}

Vec3 to_voxel(Vec3 p, const FieldOfView& fov) {
  const Vec3 s = fov.spacing();
  return {(p.x - fov.p_min.x) / s.x - 0.5, (p.y - fov.p_min.y) / s.y - 0.5, (p.z - fov.p_min.z) / s.z - 0.5};
}

MeshView to_view(const TriangleMesh& mesh, const FieldOfView& fov) {
  MeshView out;
  out.vertices.reserve(mesh.vertices.size());
  for (const Vec3& v : mesh.vertices) out.vertices.push_back(to_mm(v, fov));
  out.triangles = mesh.triangles;
  return out;
}

json vec_json(Vec3 v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number())
    throw Error(ErrorKind::InvalidInput, kStage, std::string(what) + " must be an array of three numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

struct SessionManager::Session {
  std::string id;
  std::string model_id;
  std::uint64_t phantom_seed = 0;
  std::uint64_t session_seed = 0;
  VoxelGrid truth;
  TriangleMesh surface;  // truth surface, voxel coordinates
  FieldOfView fov;

  mutable std::mutex mu;
  std::uint64_t revision = 0;
  std::vector<Index3> voxels;
  std::vector<std::pair<std::string, AcquireResult>> log;  // key (may be empty), result
  std::map<std::string, AcquireResult> by_key;
  std::map<std::tuple<std::uint64_t, std::size_t, std::uint64_t>, std::shared_ptr<const ReconstructionView>> cache;
};

SessionManager::SessionManager(std::map<std::string, Model> models, ServiceConfig config)
    : models_(std::move(models)), config_(std::move(config)) {
  if (models_.empty()) throw Error(ErrorKind::InvalidSpec, kStage, "no models registered");
  if (!(config_.voxel_mm > 0.0) || !std::isfinite(config_.voxel_mm))
    throw Error(ErrorKind::InvalidSpec, kStage, "voxel_mm must be positive");
  if (config_.default_samples == 0 || config_.default_samples > config_.max_samples)
    throw Error(ErrorKind::InvalidSpec, kStage, "default_samples must be in [1, max_samples]");
  if (config_.supersample == 0) throw Error(ErrorKind::InvalidSpec, kStage, "supersample must be >= 1");
}

SessionManager::~SessionManager() = default;

std::vector<std::string> SessionManager::model_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, m] : models_) ids.push_back(id);
  return ids;
}

SessionView SessionManager::create(const std::string& model_id, std::uint64_t phantom_seed) {
  const auto it = models_.find(model_id);
  if (it == models_.end()) throw Error(ErrorKind::NotFound, kStage, "unknown model '" + model_id + "'");
  auto corpus = phantom_corpus(phantom_seed, 1, model_dims(it->second), config_.phantom, config_.supersample);
  return add(model_id, std::move(corpus[0].grid), phantom_seed);
}

SessionView SessionManager::create(const std::string& model_id, const VoxelGrid& truth) {
  const auto it = models_.find(model_id);
  if (it == models_.end()) throw Error(ErrorKind::NotFound, kStage, "unknown model '" + model_id + "'");
  if (!truth.is_binary()) throw Error(ErrorKind::InvalidInput, kStage, "truth volume must be binary");
  const Dims dims = model_dims(it->second);
  return add(model_id, truth.dims() == dims ? truth : prepare_volume(truth, dims), 0);
}

SessionView SessionManager::add(const std::string& model_id, VoxelGrid truth, std::uint64_t phantom_seed) {
  if (truth.foreground_count() == 0) throw Error(ErrorKind::EmptyVolume, kStage, "truth volume is empty");
  auto s = std::make_shared<Session>();
  s->model_id = model_id;
  s->phantom_seed = phantom_seed;
  s->surface = marching_cubes(truth, 0.5);
  if (s->surface.vertices.empty()) throw Error(ErrorKind::EmptySurface, kStage, "truth volume has no surface");
  const Dims d = truth.dims();
  s->fov = {{0, 0, 0}, {d.x * config_.voxel_mm, d.y * config_.voxel_mm, d.z * config_.voxel_mm}, d};
  s->truth = std::move(truth);

  std::lock_guard lock(mu_);
  for (;;) {
    const std::uint64_t n = created_++;
    s->session_seed = derive_seed(config_.seed, 200, n);
    s->id = hex_id(derive_seed(config_.seed, 300, n));
    if (!sessions_.contains(s->id)) break;
  }
  sessions_.emplace(s->id, s);
  spdlog::info("session {} created (model {}, phantom seed {})", s->id, model_id, phantom_seed);
  return {s->id, s->model_id, 0, s->truth.dims(), s->fov, s->phantom_seed, {}};
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorKind::NotFound, kStage, "no session '" + id + "'");
  return it->second;
}

AcquireResult SessionManager::acquire(const std::string& id, Vec3 position_mm, const std::string& key) {
  const auto s = find(id);
  std::lock_guard lock(s->mu);
  if (!key.empty()) {
    if (const auto it = s->by_key.find(key); it != s->by_key.end()) {
      AcquireResult r = it->second;
      r.replayed = true;
      return r;
    }
  }
  voxelize(position_mm, s->fov);  // throws OutOfFov

  const Vec3 q = to_voxel(position_mm, s->fov);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s->surface.vertices.size(); ++i) {
    const double d = norm(s->surface.vertices[i] - q);
    if (d < best_d) best_d = d, best = i;
  }
  const Vec3 v = s->surface.vertices[best];

  // Nearest foreground voxel centre to the vertex; ties go to the lower index.
  Index3 pick{};
  double pick_d = std::numeric_limits<double>::infinity();
  std::size_t pick_i = std::numeric_limits<std::size_t>::max();
  const int cx = static_cast<int>(std::floor(v.x)), cy = static_cast<int>(std::floor(v.y)),
            cz = static_cast<int>(std::floor(v.z));
  for (int z = cz - 1; z <= cz + 2; ++z)
    for (int y = cy - 1; y <= cy + 2; ++y)
      for (int x = cx - 1; x <= cx + 2; ++x) {
        if (!s->truth.contains(x, y, z) || s->truth.at(x, y, z) <= 0.5f) continue;
        const double d = norm(Vec3{double(x), double(y), double(z)} - v);
        const std::size_t li = s->truth.index(x, y, z);
        if (d < pick_d || (d == pick_d && li < pick_i)) pick = {x, y, z}, pick_d = d, pick_i = li;
      }
  if (!std::isfinite(pick_d))
    throw Error(ErrorKind::EmptySurface, kStage, "no foreground voxel next to the surface vertex");

  s->voxels.push_back(pick);
  ++s->revision;
  std::erase_if(s->cache, [&](const auto& kv) { return std::get<0>(kv.first) < s->revision; });
  AcquireResult r{position_mm, pick, to_mm({double(pick.x), double(pick.y), double(pick.z)}, s->fov), pick_d,
                  s->revision, false};
  s->log.emplace_back(key, r);
  if (!key.empty()) s->by_key.emplace(key, r);
  return r;
}

SessionView SessionManager::get(const std::string& id) const {
  const auto s = find(id);
  std::lock_guard lock(s->mu);
  SessionView v{s->id, s->model_id, s->revision, s->truth.dims(), s->fov, s->phantom_seed, {}};
  for (const Index3& p : s->voxels) v.points.push_back(to_mm({double(p.x), double(p.y), double(p.z)}, s->fov));
  return v;
}

std::shared_ptr<const ReconstructionView> SessionManager::reconstruction(const std::string& id,
                                                                         const ReconstructionQuery& q) {
  const auto s = find(id);
  const std::size_t n = q.samples.value_or(config_.default_samples);
  if (n == 0 || n > config_.max_samples)
    throw Error(ErrorKind::InvalidInput, kStage,
                "samples must be in [1, " + std::to_string(config_.max_samples) + "]");

  std::uint64_t revision;
  std::vector<Index3> voxels;
  std::uint64_t seed;
  {
    std::lock_guard lock(s->mu);
    revision = s->revision;
    if (q.revision && *q.revision != revision)
      throw Error(ErrorKind::Conflict, kStage,
                  "revision " + std::to_string(*q.revision) + " is stale; current is " + std::to_string(revision),
                  std::to_string(revision));
    seed = q.seed.value_or(derive_seed(s->session_seed, revision));
    if (const auto it = s->cache.find({revision, n, seed}); it != s->cache.end()) return it->second;
    voxels = s->voxels;
  }

  auto view = std::make_shared<ReconstructionView>();
  view->revision = revision;
  view->point_count = voxels.size();
  view->n_samples = n;
  view->seed = seed;
  view->model = s->model_id;

  PointCloud cloud;
  for (const Index3& p : voxels) cloud.points.push_back({double(p.x), double(p.y), double(p.z)});
  std::optional<Reconstruction> rec;
  if (voxels.size() < kMinPoints) {
    view->status = ReconstructionView::Status::NeedsMorePoints;
  } else {
    try {
      rec = reconstruct(cloud, models_.at(s->model_id), {n, seed, config_.post});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateInput) throw;
      view->status = ReconstructionView::Status::NeedsMorePoints;
    }
  }
  if (rec) {
    view->mean = to_view(rec->mean_mesh, s->fov);
    view->lower = to_view(rec->lower_mesh, s->fov);
    view->upper = to_view(rec->upper_mesh, s->fov);
    for (const Vec3& v : rec->mean_mesh.vertices) view->vertex_std.push_back(sample_trilinear(rec->posterior.std, v));
    double sum = 0.0;
    for (float x : rec->posterior.std.values()) {
      sum += x;
      view->max_std = std::max(view->max_std, double(x));
    }
    view->mean_std = sum / static_cast<double>(rec->posterior.std.size());
    view->foreground = rec->mean_mask.foreground_count();
    view->score = dice(rec->mean_mask, s->truth);
    view->closed = rec->mean_mesh.empty() || topology(rec->mean_mesh).closed();
  }

  std::lock_guard lock(s->mu);
  if (s->revision == revision) s->cache.emplace(std::make_tuple(revision, n, seed), view);
  return view;
}

void SessionManager::remove(const std::string& id) {
  std::lock_guard lock(mu_);
  if (sessions_.erase(id) == 0) throw Error(ErrorKind::NotFound, kStage, "no session '" + id + "'");
  spdlog::info("session {} deleted", id);
}

std::size_t SessionManager::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

VoxelGrid SessionManager::truth(const std::string& id) const { return find(id)->truth; }

void SessionManager::save_snapshots(const std::filesystem::path& dir) const {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, s] : sessions_) all.push_back(s);
  }
  for (const auto& s : all) {
    std::lock_guard lock(s->mu);
    const auto sub = dir / s->id;
    std::filesystem::create_directories(sub);
    save_volume(s->truth, sub / "truth.avx");
    json log = json::array();
    for (const auto& [key, r] : s->log)
      log.push_back({{"key", key},
                     {"requested", vec_json(r.requested)},
                     {"voxel", {r.voxel.x, r.voxel.y, r.voxel.z}},
                     {"surface_distance", r.surface_distance},
                     {"revision", r.revision}});
    const json manifest = {{"id", s->id},           {"model", s->model_id},
                           {"revision", s->revision}, {"phantom_seed", s->phantom_seed},
                           {"session_seed", s->session_seed}, {"voxel_mm", config_.voxel_mm},
                           {"files", {"truth.avx", "points.json"}}};
    std::ofstream(sub / "points.json") << log.dump(2) << '\n';
    std::ofstream(sub / "manifest.json") << manifest.dump(2) << '\n';
  }
  spdlog::info("saved {} session snapshot(s) to {}", all.size(), dir.string());
}

std::size_t SessionManager::load_snapshots(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) return 0;
  std::vector<std::filesystem::path> subs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (std::filesystem::exists(e.path() / "manifest.json")) subs.push_back(e.path());
  std::sort(subs.begin(), subs.end());
  std::size_t loaded = 0;
  for (const auto& sub : subs) {
    try {
      json manifest, log;
      std::ifstream(sub / "manifest.json") >> manifest;
      std::ifstream(sub / "points.json") >> log;
      auto s = std::make_shared<Session>();
      s->id = manifest.at("id").get<std::string>();
      s->model_id = manifest.at("model").get<std::string>();
      if (!models_.contains(s->model_id))
        throw Error(ErrorKind::NotFound, kStage, "unknown model '" + s->model_id + "'");
      s->phantom_seed = manifest.at("phantom_seed").get<std::uint64_t>();
      s->session_seed = manifest.at("session_seed").get<std::uint64_t>();
      s->revision = manifest.at("revision").get<std::uint64_t>();
      s->truth = load_volume(sub / "truth.avx");
      if (s->truth.dims() != model_dims(models_.at(s->model_id)))
        throw Error(ErrorKind::ShapeMismatch, kStage, "snapshot truth does not match the model grid");
      s->surface = marching_cubes(s->truth, 0.5);
      const Dims d = s->truth.dims();
      s->fov = {{0, 0, 0}, {d.x * config_.voxel_mm, d.y * config_.voxel_mm, d.z * config_.voxel_mm}, d};
      for (const auto& rec : log) {
        const auto& vx = rec.at("voxel");
        AcquireResult r;
        r.requested = vec_from_json(rec.at("requested"), "requested");
        r.voxel = {vx.at(0).get<int>(), vx.at(1).get<int>(), vx.at(2).get<int>()};
        if (!s->truth.contains(r.voxel.x, r.voxel.y, r.voxel.z))
          throw Error(ErrorKind::IndexOutOfRange, kStage, "snapshot point outside the grid");
        r.point = to_mm({double(r.voxel.x), double(r.voxel.y), double(r.voxel.z)}, s->fov);
        r.surface_distance = rec.at("surface_distance").get<double>();
        r.revision = rec.at("revision").get<std::uint64_t>();
        const auto key = rec.at("key").get<std::string>();
        s->voxels.push_back(r.voxel);
        s->log.emplace_back(key, r);
        if (!key.empty()) s->by_key.emplace(key, r);
      }
      if (s->voxels.size() != s->revision)
        throw Error(ErrorKind::LengthMismatch, kStage, "snapshot revision does not match its point count");
      std::lock_guard lock(mu_);
      if (sessions_.contains(s->id)) continue;
      sessions_.emplace(s->id, s);
      ++loaded;
    } catch (const std::exception& e) {
      spdlog::warn("skipping snapshot {}: {}", sub.string(), e.what());
    }
  }
  return loaded;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Conflict: return 409;
    case ErrorKind::Numeric:
    case ErrorKind::Io: return 500;
    default: return 400;
  }
}

void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& stage,
                const std::string& message, const std::string& detail = {}) {
  json body = {{"error", {{"kind", kind}, {"stage", stage}, {"message", message}}}};
  if (!detail.empty()) body["error"]["detail"] = detail;
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json session_json(const SessionView& v) {
  json pts = json::array();
  for (const Vec3& p : v.points) pts.push_back(vec_json(p));
  return {{"id", v.id},
          {"model", v.model},
          {"revision", v.revision},
          {"phantom_seed", v.phantom_seed},
          {"dims", {v.dims.x, v.dims.y, v.dims.z}},
          {"fov", {{"min", vec_json(v.fov.p_min)}, {"max", vec_json(v.fov.p_max)}, {"voxel_mm", v.fov.spacing().x}}},
          {"points", pts}};
}

json mesh_json(const MeshView& m) {
  json verts = json::array(), tris = json::array();
  for (const Vec3& v : m.vertices) verts.push_back(vec_json(v));
  for (const auto& t : m.triangles) tris.push_back({t[0], t[1], t[2]});
  return {{"vertices", verts}, {"triangles", tris}};
}

json reconstruction_json(const ReconstructionView& r) {
  if (r.status == ReconstructionView::Status::NeedsMorePoints)
    return {{"status", "needs_more_points"},
            {"revision", r.revision},
            {"points", r.point_count},
            {"required", kMinPoints}};
  json mean = mesh_json(r.mean);
  mean["std"] = r.vertex_std;
  return {{"status", "ok"},
          {"revision", r.revision},
          {"points", r.point_count},
          {"samples", r.n_samples},
          {"seed", r.seed},
          {"model", r.model},
          {"mesh", mean},
          {"lower", mesh_json(r.lower)},
          {"upper", mesh_json(r.upper)},
          {"stats", {{"mean_std", r.mean_std}, {"max_std", r.max_std}, {"foreground", r.foreground}, {"closed", r.closed}}},
          {"score", r.score}};
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::string clean;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  if (clean.size() % 4 != 0) throw Error(ErrorKind::InvalidInput, kStage, "volume is not valid base64");
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw Error(ErrorKind::InvalidInput, kStage, "volume is not valid base64");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::optional<std::uint64_t> query_u64(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const std::string v = req.get_param_value(name);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw Error(ErrorKind::InvalidInput, kStage, std::string("query parameter '") + name + "' must be an unsigned integer");
  return out;
}

bool wants_stl(const httplib::Request& req) {
  const std::string accept = req.get_header_value("Accept");
  return accept.find("model/stl") != std::string::npos || accept.find("application/sla") != std::string::npos;
}

}  // namespace

struct Server::Impl {
  SessionManager& sessions;
  ServerOptions options;
  httplib::Server http;
  std::mutex run_mu;

  Impl(SessionManager& s, ServerOptions o) : sessions(s), options(std::move(o)) {}

  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.kind()), to_string(e.kind()), e.stage(), e.what(), e.detail());
      } catch (const json::exception& e) {
        send_error(res, 400, "invalid-input", kStage, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", kStage, e.what());
      }
    };
  }

  void routes() {
    http.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    http.Get("/v1/models", guarded([this](const httplib::Request&, httplib::Response& res) {
      res.set_content(json{{"models", sessions.model_ids()}}.dump(), "application/json");
    }));
    http.Post("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      const std::string model = body.at("model").get<std::string>();
      SessionView v;
      if (body.contains("volume")) {
        const auto bytes = base64_decode(body.at("volume").get<std::string>());
        v = sessions.create(model, decode_volume(bytes));
      } else {
        v = sessions.create(model, body.value("phantom_seed", std::uint64_t{0}));
      }
      res.status = 201;
      res.set_content(session_json(v).dump(), "application/json");
    }));
    http.Get("/v1/sessions/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      res.set_content(session_json(sessions.get(req.path_params.at("id"))).dump(), "application/json");
    }));
    http.Delete("/v1/sessions/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      sessions.remove(req.path_params.at("id"));
      res.status = 204;
    }));
    http.Post("/v1/sessions/:id/points", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      std::string key = req.get_header_value("Idempotency-Key");
      if (body.contains("idempotency_key")) key = body.at("idempotency_key").get<std::string>();
      const AcquireResult r =
          sessions.acquire(req.path_params.at("id"), vec_from_json(body.at("position"), "position"), key);
      const json out = {{"requested", vec_json(r.requested)},
                        {"point", vec_json(r.point)},
                        {"voxel", {r.voxel.x, r.voxel.y, r.voxel.z}},
                        {"surface_distance", r.surface_distance},
                        {"revision", r.revision},
                        {"replayed", r.replayed}};
      res.status = r.replayed ? 200 : 201;
      res.set_content(out.dump(), "application/json");
    }));
    http.Get("/v1/sessions/:id/reconstruction", guarded([this](const httplib::Request& req, httplib::Response& res) {
      ReconstructionQuery q;
      if (auto n = query_u64(req, "samples")) q.samples = static_cast<std::size_t>(*n);
      q.revision = query_u64(req, "rev");
      q.seed = query_u64(req, "seed");
      const auto view = sessions.reconstruction(req.path_params.at("id"), q);
      res.set_header("X-Revision", std::to_string(view->revision));
      if (wants_stl(req) && view->status == ReconstructionView::Status::Ok) {
        TriangleMesh mm{view->mean.vertices, view->mean.triangles};
        const auto bytes = to_stl(mm);
        res.set_content(std::string(bytes.begin(), bytes.end()), "model/stl");
        return;
      }
      res.set_content(reconstruction_json(*view).dump(), "application/json");
    }));
    if (options.static_dir && !http.set_mount_point("/", options.static_dir->string()))
      throw Error(ErrorKind::Io, kStage, "static directory not found: " + options.static_dir->string());
  }
};

Server::Server(SessionManager& sessions, ServerOptions options)
    : impl_(std::make_unique<Impl>(sessions, std::move(options))) {
  const int threads = std::max(1, impl_->options.threads);
  impl_->http.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  impl_->routes();
  if (impl_->options.snapshot_dir) {
    const auto n = sessions.load_snapshots(*impl_->options.snapshot_dir);
    if (n > 0) spdlog::info("restored {} session(s)", n);
  }
}

Server::~Server() { stop(); }

int Server::bind() {
  auto& o = impl_->options;
  if (o.port == 0) {
    o.port = impl_->http.bind_to_any_port(o.host);
    if (o.port < 0) throw Error(ErrorKind::Io, kStage, "could not bind " + o.host);
  } else if (!impl_->http.bind_to_port(o.host, o.port)) {
    throw Error(ErrorKind::Io, kStage, "could not bind " + o.host + ":" + std::to_string(o.port));
  }
  spdlog::info("listening on http://{}:{}/v1", o.host, o.port);
  return o.port;
}

void Server::run() {
  impl_->http.listen_after_bind();
  if (impl_->options.snapshot_dir) impl_->sessions.save_snapshots(*impl_->options.snapshot_dir);
}

void Server::stop() {
  if (impl_->http.is_running()) impl_->http.stop();
}

}  // namespace atriamap::service
