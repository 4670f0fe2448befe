#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "atriamap/error.hpp"
#include "atriamap/geometry.hpp"
#include "byte_io.hpp"

namespace atriamap {
namespace {
constexpr const char* kStage = "mesh-io";
}

std::string to_obj(const TriangleMesh& mesh) {
  std::string out;
  char buf[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
    out += buf;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(buf, sizeof buf, "f %u %u %u\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out += buf;
  }
  return out;
}

TriangleMesh from_obj(const std::string& text) {
  TriangleMesh mesh;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z)) throw Error(ErrorKind::InvalidInput, kStage, "bad vertex line: " + line);
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<std::uint32_t, 3> t{};
      for (auto& i : t) {
        std::string tok;
        if (!(ls >> tok)) throw Error(ErrorKind::InvalidInput, kStage, "face needs 3 indices: " + line);
        long idx = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), idx);  // stops at '/'
        if (ec != std::errc{} || idx < 1) throw Error(ErrorKind::InvalidInput, kStage, "bad face index: " + line);
        i = static_cast<std::uint32_t>(idx - 1);
      }
      mesh.triangles.push_back(t);
    }
  }
  mesh.validate();
  return mesh;
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  const std::string text = to_obj(mesh);
  detail::write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}, kStage);
}

TriangleMesh read_obj(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path, kStage);
  return from_obj(std::string(bytes.begin(), bytes.end()));
}

// Binary STL: 80-byte header, u32 count, then per triangle normal + 3
// vertices as f32 and a zero u16 attribute.
std::vector<std::uint8_t> to_stl(const TriangleMesh& mesh) {
  detail::ByteWriter w;
  char header[80] = "atriamap binary STL";
  w.bytes(header, sizeof header);
  w.u32(static_cast<std::uint32_t>(mesh.triangles.size()));
  for (const auto& t : mesh.triangles) {
    const Vec3 a = mesh.vertices[t[0]], b = mesh.vertices[t[1]], c = mesh.vertices[t[2]];
    Vec3 n = cross(b - a, c - a);
    const double len = norm(n);
    if (len > 0) n = (1.0 / len) * n;
    for (const Vec3& v : {n, a, b, c}) {
      w.f32(static_cast<float>(v.x));
      w.f32(static_cast<float>(v.y));
      w.f32(static_cast<float>(v.z));
    }
    w.u16(0);
  }
  return w.take();
}

void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path) {
  detail::write_file(path, to_stl(mesh), kStage);
}

}  // namespace atriamap
