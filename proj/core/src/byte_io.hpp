#pragma once

// Little-endian encoding helpers shared by the cache and trace serializers.

#include "squat/error.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace squat::detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  }
  return v;
}

inline float get_f32(std::span<const std::uint8_t> in, std::size_t at) {
  return std::bit_cast<float>(get_u32(in, at));
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) {
    throw FormatError("failed writing " + path.string());
  }
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw FormatError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Sequential reader that reports byte offsets on truncation.
class Reader {
public:
  Reader(std::string name, std::vector<std::uint8_t> bytes)
      : name_(std::move(name)), bytes_(std::move(bytes)) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(name_ + " is truncated: need bytes [" + std::to_string(pos_) + ", " +
                        std::to_string(pos_ + n) + ") but the blob holds " +
                        std::to_string(bytes_.size()) + " bytes");
    }
    auto s = std::span<const std::uint8_t>(bytes_).subspan(pos_, n);
    pos_ += n;
    return s;
  }

  float f32() { return get_f32(take(4), 0); }
  std::int32_t i32() { return static_cast<std::int32_t>(get_u32(take(4), 0)); }

  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(name_ + " has " + std::to_string(bytes_.size() - pos_) +
                        " trailing bytes after offset " + std::to_string(pos_));
    }
  }

private:
  std::string name_;
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

} // namespace squat::detail
