#include "squat/quant.hpp"

#include "squat/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace squat {

namespace {

void check_bits(int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw InvalidArgument("quantization bits must be in [1, 8], got " + std::to_string(bits));
  }
}

void check_values(std::span<const double> values) {
  if (values.empty()) {
    throw InvalidArgument("cannot quantize an empty group");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw InvalidArgument("non-finite value at index " + std::to_string(i) +
                            " in quantization group");
    }
  }
}

} // namespace

std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits) {
  check_bits(bits);
  std::vector<std::uint8_t> out(packed_size(codes.size(), bits), 0);
  const unsigned mask = (1u << bits) - 1u;
  std::size_t bit = 0;
  for (const std::uint8_t code : codes) {
    const unsigned value = code & mask;
    for (int k = 0; k < bits; ++k, ++bit) {
      if ((value >> k) & 1u) {
        out[bit / 8] = static_cast<std::uint8_t>(out[bit / 8] | (1u << (bit % 8)));
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed, int bits,
                                       std::size_t len) {
  check_bits(bits);
  const std::size_t expected = packed_size(len, bits);
  if (packed.size() != expected) {
    throw FormatError("bit-packed group holds " + std::to_string(packed.size()) +
                      " bytes, expected " + std::to_string(expected) + " for " +
                      std::to_string(len) + " codes of " + std::to_string(bits) + " bits");
  }
  std::vector<std::uint8_t> codes(len, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < len; ++i) {
    unsigned value = 0;
    for (int k = 0; k < bits; ++k, ++bit) {
      value |= ((packed[bit / 8] >> (bit % 8)) & 1u) << k;
    }
    codes[i] = static_cast<std::uint8_t>(value);
  }
  return codes;
}

std::vector<std::uint8_t> QuantizedGroup::codes() const {
  return unpack_codes(packed, params.bits, len);
}

QuantParams fit_params(std::span<const double> values, int bits) {
  check_bits(bits);
  check_values(values);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  QuantParams p;
  p.bits = bits;
  p.zero_point = static_cast<float>(*lo);
  if (*hi > *lo) {
    p.scale = static_cast<float>((*hi - *lo) / static_cast<double>(p.max_code()));
  }
  return p;
}

std::uint8_t quantize_value(double x, const QuantParams& params) noexcept {
  if (params.scale == 0.0f) {
    return 0;
  }
  const double q = std::round((x - static_cast<double>(params.zero_point)) /
                              static_cast<double>(params.scale));
  const double clamped = std::clamp(q, 0.0, static_cast<double>(params.max_code()));
  return static_cast<std::uint8_t>(clamped);
}

double dequantize_value(std::uint8_t code, const QuantParams& params) noexcept {
  return static_cast<double>(code) * static_cast<double>(params.scale) +
         static_cast<double>(params.zero_point);
}

QuantizedGroup quantize_with_params(std::span<const double> values, const QuantParams& params) {
  check_bits(params.bits);
  check_values(values);
  if (!(params.scale >= 0.0f) || !std::isfinite(params.zero_point) ||
      !std::isfinite(params.scale)) {
    throw InvalidArgument("quantization scale must be finite and non-negative");
  }
  std::vector<std::uint8_t> codes(values.size());
  std::transform(values.begin(), values.end(), codes.begin(),
                 [&](double x) { return quantize_value(x, params); });
  QuantizedGroup group;
  group.params = params;
  group.len = values.size();
  group.packed = pack_codes(codes, params.bits);
  return group;
}

QuantizedGroup quantize_group(std::span<const double> values, int bits) {
  return quantize_with_params(values, fit_params(values, bits));
}

void dequantize_group_into(const QuantizedGroup& group, std::span<double> out) {
  if (out.size() != group.len) {
    throw InvalidArgument("output span length does not match group length");
  }
  const auto codes = group.codes();
  for (std::size_t i = 0; i < codes.size(); ++i) {
    out[i] = dequantize_value(codes[i], group.params);
  }
}

std::vector<double> dequantize_group(const QuantizedGroup& group) {
  std::vector<double> out(group.len);
  dequantize_group_into(group, out);
  return out;
}

} // namespace squat
