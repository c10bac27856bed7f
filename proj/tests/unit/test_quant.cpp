#include <squat/error.hpp>
#include <squat/quant.hpp>
#include <squat/random.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <vector>

using namespace squat;

TEST(Quant, GridPointsQuantizeExactly) {
  const std::vector<double> x{0, 1, 2, 3};
  const auto g = quantize_group(x, 2);
  EXPECT_EQ(g.codes(), (std::vector<std::uint8_t>{0, 1, 2, 3}));
  EXPECT_EQ(g.params.zero_point, 0.0f);
  EXPECT_EQ(g.params.scale, 1.0f);
  EXPECT_EQ(dequantize_group(g), x);
}

TEST(Quant, ConstantGroupHasZeroScale) {
  const std::vector<double> x{5, 5, 5, 5};
  const auto g = quantize_group(x, 2);
  EXPECT_EQ(g.codes(), (std::vector<std::uint8_t>(4, 0)));
  EXPECT_EQ(g.params.zero_point, 5.0f);
  EXPECT_EQ(g.params.scale, 0.0f);
  EXPECT_EQ(dequantize_group(g), x);
}

TEST(Quant, DequantizeSingleCode) {
  QuantizedGroup g;
  g.params = {2, 0.0f, 1.0f};
  g.len = 1;
  g.packed = pack_codes(std::vector<std::uint8_t>{3}, 2);
  EXPECT_EQ(dequantize_group(g), std::vector<double>{3.0});

  QuantizedGroup c;
  c.params = {2, 5.0f, 0.0f};
  c.len = 2;
  c.packed = pack_codes(std::vector<std::uint8_t>{0, 0}, 2);
  EXPECT_EQ(dequantize_group(c), (std::vector<double>{5.0, 5.0}));
}

TEST(Quant, ErrorWithinHalfStep) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = 1 + trial % 8;
    std::vector<double> x(32);
    for (auto& v : x) {
      v = rng.uniform(-1.0, 1.0);
    }
    const auto g = quantize_group(x, bits);
    const auto y = dequantize_group(g);
    const double step = g.params.scale;
    ASSERT_GT(step, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      // Storing min/scale as float moves the grid by ~1e-7; allow for it.
      ASSERT_LE(std::abs(y[i] - x[i]), step / 2 + 1e-9 + 1e-6 * step * (1 << bits)) << i;
    }
  }
}

TEST(Quant, MatchesScalarReference) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int bits = 1 + trial % 8;
    std::vector<double> x(1 + static_cast<std::size_t>(rng.integer(0, 63)));
    for (auto& v : x) {
      v = rng.normal() * 3.0;
    }
    const auto g = quantize_group(x, bits);
    const auto ref = oracle::plain_quantize(x, bits);
    ASSERT_EQ(g.params.zero_point, ref.zero_point);
    ASSERT_EQ(g.params.scale, ref.scale);
    ASSERT_EQ(g.codes(), ref.codes);
    ASSERT_EQ(dequantize_group(g), ref.dequantized);
  }
}

TEST(Quant, TiesRoundAwayFromZero) {
  const QuantParams p{2, 0.0f, 1.0f};
  EXPECT_EQ(quantize_value(0.5, p), 1);
  EXPECT_EQ(quantize_value(1.5, p), 2);
  EXPECT_EQ(quantize_value(2.5, p), 3);
  EXPECT_EQ(quantize_value(-0.5, p), 0);
  EXPECT_EQ(quantize_value(7.0, p), 3);
}

TEST(Quant, CodesAreStableUnderRequantization) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const int bits = 1 + trial % 8;
    std::vector<double> x(40);
    for (auto& v : x) {
      v = rng.normal();
    }
    const auto g = quantize_group(x, bits);
    const auto y = dequantize_group(g);
    const auto again = quantize_with_params(y, g.params);
    ASSERT_EQ(again.codes(), g.codes());
    ASSERT_EQ(dequantize_group(again), y);
  }
}

TEST(Quant, PackRoundTripAllWidthsAndLengths) {
  Rng rng(3);
  for (int bits = 1; bits <= 8; ++bits) {
    for (std::size_t len = 1; len <= 256; ++len) {
      std::vector<std::uint8_t> codes(len);
      for (auto& c : codes) {
        c = static_cast<std::uint8_t>(rng.integer(0, (1 << bits) - 1));
      }
      const auto packed = pack_codes(codes, bits);
      ASSERT_EQ(packed.size(), (len * static_cast<std::size_t>(bits) + 7) / 8);
      ASSERT_EQ(unpack_codes(packed, bits, len), codes);
    }
  }
}

TEST(Quant, PackLayoutIsLsbFirst) {
  const auto packed = pack_codes(std::vector<std::uint8_t>{1, 2, 3, 0, 3}, 2);
  ASSERT_EQ(packed.size(), 2u);
  EXPECT_EQ(packed[0], 0b00'11'10'01);
  EXPECT_EQ(packed[1], 0b00000011);
}

TEST(Quant, Errors) {
  EXPECT_THROW((void)quantize_group(std::vector<double>{}, 2), InvalidArgument);
  EXPECT_THROW((void)quantize_group(std::vector<double>{1.0, NAN}, 2), InvalidArgument);
  EXPECT_THROW((void)quantize_group(std::vector<double>{1.0, INFINITY}, 2), InvalidArgument);
  EXPECT_THROW((void)quantize_group(std::vector<double>{1.0}, 0), InvalidArgument);
  EXPECT_THROW((void)quantize_group(std::vector<double>{1.0}, 9), InvalidArgument);

  auto g = quantize_group(std::vector<double>{0, 1, 2, 3, 4}, 3);
  g.packed.pop_back();
  EXPECT_THROW((void)dequantize_group(g), FormatError);
}
