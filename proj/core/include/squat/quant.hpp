#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace squat {

inline constexpr int kMinBits = 1;
inline constexpr int kMaxBits = 8;

/// Affine parameters of one quantization group: x ~ code * scale + zero_point.
/// Stored as 32-bit floats; all arithmetic on them is done in double.
struct QuantParams {
  int bits = 2;
  float zero_point = 0.0f;
  float scale = 0.0f;

  /// Largest representable code, 2^bits - 1.
  [[nodiscard]] std::uint32_t max_code() const noexcept {
    return (1u << bits) - 1u;
  }

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Bit-packed b-bit codes of one group plus the parameters needed to
/// dequantize them.
///
/// Layout of `packed`: codes are laid out LSB-first, code i occupying bits
/// [i*b, (i+1)*b) of the little-endian byte stream, padded with zero bits to a
/// byte boundary.
struct QuantizedGroup {
  QuantParams params;
  std::size_t len = 0;
  std::vector<std::uint8_t> packed;

  [[nodiscard]] std::vector<std::uint8_t> codes() const;

  friend bool operator==(const QuantizedGroup&, const QuantizedGroup&) = default;
};

/// Number of bytes needed to pack `len` codes of `bits` bits each.
[[nodiscard]] constexpr std::size_t packed_size(std::size_t len, int bits) noexcept {
  return (len * static_cast<std::size_t>(bits) + 7) / 8;
}

[[nodiscard]] std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits);

/// Throws FormatError when `packed` does not hold exactly packed_size(len, bits) bytes.
[[nodiscard]] std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed,
                                                     int bits, std::size_t len);

/// Min/max parameters for a group. zero_point = min, scale = (max - min) / (2^b - 1),
/// both rounded to float. A constant group gets scale 0.
[[nodiscard]] QuantParams fit_params(std::span<const double> values, int bits);

/// Round-half-away-from-zero onto the grid of `params`, clamped to [0, 2^b - 1].
[[nodiscard]] std::uint8_t quantize_value(double x, const QuantParams& params) noexcept;

[[nodiscard]] double dequantize_value(std::uint8_t code, const QuantParams& params) noexcept;

/// Quantize a group with min/max parameters fitted to it.
[[nodiscard]] QuantizedGroup quantize_group(std::span<const double> values, int bits);

/// Quantize a group onto an existing grid.
[[nodiscard]] QuantizedGroup quantize_with_params(std::span<const double> values,
                                                  const QuantParams& params);

[[nodiscard]] std::vector<double> dequantize_group(const QuantizedGroup& group);

/// Same as dequantize_group but writes into `out`, which must have group.len elements.
void dequantize_group_into(const QuantizedGroup& group, std::span<double> out);

} // namespace squat
