#include <algorithm>
#include <fstream>
#include <iterator>

#include "atriamap/volume.hpp"
#include "byte_io.hpp"

namespace atriamap {
namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path, const std::string& stage) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, stage, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes,
                const std::string& stage) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, stage, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, stage, "write failed for " + path.string());
}

}  // namespace detail

namespace {
constexpr const char* kStage = "volume-io";
constexpr char kMagic[4] = {'A', 'V', 'X', '1'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kFlagBinary = 1;
}  // namespace

// Header (32 bytes, little-endian): "AVX1", u16 version, u16 flags,
// 3 x u32 dims, 3 x f32 spacing. Payload: one byte per cell for binary
// grids, otherwise f32 per cell; x-fastest.
std::vector<std::uint8_t> encode_volume(const VoxelGrid& grid) {
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u16(grid.is_binary() ? kFlagBinary : 0);
  w.u32(grid.dims().x);
  w.u32(grid.dims().y);
  w.u32(grid.dims().z);
  for (float s : grid.spacing()) w.f32(s);
  if (grid.is_binary()) {
    for (float v : grid.values()) w.u8(v > 0.5f ? 1 : 0);
  } else {
    for (float v : grid.values()) w.f32(v);
  }
  return w.take();
}

VoxelGrid decode_volume(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, kStage);
  auto magic = r.take(4, "header");
  if (!std::equal(magic.begin(), magic.end(), kMagic))
    throw Error(ErrorKind::BadMagic, kStage, "not an AVX1 volume");
  r.need(28, "header");
  if (r.le<std::uint16_t>("header") != kVersion)
    throw Error(ErrorKind::BadVersion, kStage, "unsupported AVX1 version");
  const auto flags = r.le<std::uint16_t>("header");
  Dims dims;
  dims.x = r.le<std::uint32_t>("header");
  dims.y = r.le<std::uint32_t>("header");
  dims.z = r.le<std::uint32_t>("header");
  std::array<float, 3> spacing{};
  for (auto& s : spacing) s = r.le<float>("header");

  const bool binary = flags & kFlagBinary;
  const std::size_t cell = binary ? 1 : 4;
  const std::size_t cells = dims.count();
  if (dims.x == 0 || dims.y == 0 || dims.z == 0 || cells / dims.x / dims.y != dims.z)
    throw Error(ErrorKind::LengthMismatch, kStage, "invalid dims in header");
  if (r.remaining() / cell < cells)
    throw Error(ErrorKind::TruncatedPayload, kStage, "payload shorter than dims declare");
  if (r.remaining() != cells * cell)
    throw Error(ErrorKind::LengthMismatch, kStage, "payload longer than dims declare");

  std::vector<float> values(cells);
  if (binary) {
    auto raw = r.take(cells, "payload");
    for (std::size_t i = 0; i < cells; ++i) {
      if (raw[i] > 1) throw Error(ErrorKind::InvalidInput, kStage, "binary payload byte not 0/1");
      values[i] = raw[i];
    }
  } else {
    for (auto& v : values) v = r.le<float>("payload");
  }
  return VoxelGrid(dims, binary ? GridKind::Binary : GridKind::Probability, std::move(values), spacing);
}

void save_volume(const VoxelGrid& grid, const std::filesystem::path& path) {
  detail::write_file(path, encode_volume(grid), kStage);
}

VoxelGrid load_volume(const std::filesystem::path& path) {
  return decode_volume(detail::read_file(path, kStage));
}

}  // namespace atriamap
