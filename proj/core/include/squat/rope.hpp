#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>

namespace squat {

inline constexpr double kDefaultRopeTheta = 10000.0;

/// Rotary position embedding: the pair (x[2i], x[2i+1]) is rotated by
/// position * theta^(-2i/d). A negative position undoes the rotation.
[[nodiscard]] Eigen::VectorXd apply_rope(const Eigen::VectorXd& x, std::int64_t position,
                                         double theta_base = kDefaultRopeTheta);

/// Rotates row i of `rows` in place by positions[i].
void apply_rope_rows(Eigen::Ref<Eigen::MatrixXd> rows, std::span<const std::int64_t> positions,
                     double theta_base = kDefaultRopeTheta);

} // namespace squat
