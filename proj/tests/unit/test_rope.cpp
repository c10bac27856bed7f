#include <squat/error.hpp>
#include <squat/random.hpp>
#include <squat/rope.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace squat;
using Eigen::VectorXd;

TEST(Rope, PositionZeroIsIdentity) {
  Rng rng(1);
  const VectorXd x = oracle::gaussian_vector(rng, 16);
  EXPECT_EQ(apply_rope(x, 0), x);
}

TEST(Rope, IsometryAndInverse) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const VectorXd x = oracle::gaussian_vector(rng, 2 * (1 + trial % 64));
    const auto pos = rng.integer(-5000, 5000);
    const VectorXd y = apply_rope(x, pos);
    ASSERT_NEAR(y.norm(), x.norm(), 1e-9);
    ASSERT_LE((apply_rope(y, -pos) - x).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Rope, PairAngles) {
  VectorXd x = VectorXd::Zero(4);
  x(0) = 1.0;
  x(2) = 1.0;
  const VectorXd y = apply_rope(x, 3, 100.0);
  // pair 0 turns by 3 rad, pair 1 by 3 / 100^(2/4) = 0.3 rad.
  EXPECT_NEAR(y(0), std::cos(3.0), 1e-15);
  EXPECT_NEAR(y(1), std::sin(3.0), 1e-15);
  EXPECT_NEAR(y(2), std::cos(0.3), 1e-15);
  EXPECT_NEAR(y(3), std::sin(0.3), 1e-15);
}

TEST(Rope, RelativePositionProperty) {
  Rng rng(3);
  const VectorXd q = oracle::gaussian_vector(rng, 32);
  const VectorXd k = oracle::gaussian_vector(rng, 32);
  const double a = apply_rope(q, 40).dot(apply_rope(k, 30));
  const double b = apply_rope(q, 110).dot(apply_rope(k, 100));
  EXPECT_NEAR(a, b, 1e-9);
}

TEST(Rope, RowsMatchVectorForm) {
  Rng rng(4);
  Eigen::MatrixXd m = oracle::gaussian(rng, 5, 8);
  const Eigen::MatrixXd orig = m;
  const std::vector<std::int64_t> pos{0, 3, 7, 100, 2};
  apply_rope_rows(m, pos);
  for (Eigen::Index i = 0; i < 5; ++i) {
    EXPECT_LE((m.row(i).transpose() - apply_rope(orig.row(i).transpose(), pos[i])).norm(), 1e-15);
  }
  EXPECT_THROW(apply_rope_rows(m, std::vector<std::int64_t>{1, 2}), InvalidArgument);
}

TEST(Rope, OddDimensionRejected) {
  EXPECT_THROW((void)apply_rope(VectorXd::Ones(5), 1), InvalidArgument);
}
