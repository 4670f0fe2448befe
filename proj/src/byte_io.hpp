#pragma once

// Little-endian serialization helpers shared by the file formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atriamap/error.hpp"

namespace atriamap::detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes(raw, sizeof(T));
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void f32(float v) { le(v); }
  void f64(double v) { le(v); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string stage)
      : data_(data), stage_(std::move(stage)) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw Error(ErrorKind::TruncatedPayload, stage_, std::string("truncated ") + what);
  }
  template <class T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s(std::size_t n, const char* what) {
    if (n > remaining() / 8 + 1) need(n * 8, what);
    std::vector<double> out(n);
    for (auto& x : out) x = le<double>(what);
    return out;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string stage_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path, const std::string& stage);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes,
                const std::string& stage);

}  // namespace atriamap::detail
