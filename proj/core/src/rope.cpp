#include "squat/rope.hpp"

#include "squat/error.hpp"

#include <cmath>
#include <string>

namespace squat {

namespace {

void check_even(Eigen::Index d) {
  if (d % 2 != 0) {
    throw InvalidArgument("rotary embedding needs an even dimension, got " + std::to_string(d));
  }
}

template <typename Row>
void rotate_in_place(Row&& x, std::int64_t position, double theta_base) {
  const Eigen::Index d = x.size();
  for (Eigen::Index i = 0; i < d / 2; ++i) {
    const double freq = std::pow(theta_base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    const double angle = static_cast<double>(position) * freq;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double a = x[2 * i];
    const double b = x[2 * i + 1];
    x[2 * i] = a * c - b * s;
    x[2 * i + 1] = a * s + b * c;
  }
}

} // namespace

Eigen::VectorXd apply_rope(const Eigen::VectorXd& x, std::int64_t position, double theta_base) {
  check_even(x.size());
  Eigen::VectorXd out = x;
  if (position != 0) {
    rotate_in_place(out, position, theta_base);
  }
  return out;
}

void apply_rope_rows(Eigen::Ref<Eigen::MatrixXd> rows, std::span<const std::int64_t> positions,
                     double theta_base) {
  check_even(rows.cols());
  if (static_cast<std::size_t>(rows.rows()) != positions.size()) {
    throw InvalidArgument("one position per row is required");
  }
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    if (positions[static_cast<std::size_t>(i)] != 0) {
      rotate_in_place(rows.row(i), positions[static_cast<std::size_t>(i)], theta_base);
    }
  }
}

} // namespace squat
