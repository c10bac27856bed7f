#pragma once

// Reference implementations used only by tests. They are written
// independently of the library code they check: different decompositions,
// extended precision, or a plain scalar loop.

#include <squat/random.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd gaussian(squat::Rng& rng, Index rows, Index cols, double sigma = 1.0) {
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      m(i, j) = sigma * rng.normal();
    }
  }
  return m;
}

inline VectorXd gaussian_vector(squat::Rng& rng, Index n, double sigma = 1.0) {
  return gaussian(rng, n, 1, sigma).col(0);
}

inline MatrixXd random_spd(squat::Rng& rng, Index n) {
  const MatrixXd a = gaussian(rng, n, n);
  return a * a.transpose() / static_cast<double>(n) + 0.5 * MatrixXd::Identity(n, n);
}

/// Inverse of the leading n x n block through a column-pivoted QR.
inline MatrixXd leading_block_inverse(const MatrixXd& m, Index n) {
  return m.topLeftCorner(n, n).colPivHouseholderQr().inverse();
}

inline double relative_frobenius(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// Solves min delta^T P delta s.t. delta[0, prefix) = 0 and
/// delta[prefix, prefix + g) = target - k[prefix, prefix + g) through the
/// saddle-point system [[2P, -E^T], [E, 0]], factored with a column-pivoted QR.
inline VectorXd kkt_saddle(const VectorXd& k, Index prefix, const VectorXd& target,
                           const MatrixXd& q_hat, double lambda) {
  const Index d = k.size();
  const Index m = prefix + target.size();
  const MatrixXd p = MatrixXd::Identity(d, d) + lambda * q_hat.transpose() * q_hat;
  MatrixXd e = MatrixXd::Zero(m, d);
  e.leftCols(m).setIdentity();
  MatrixXd kkt = MatrixXd::Zero(d + m, d + m);
  kkt.topLeftCorner(d, d) = 2.0 * p;
  kkt.topRightCorner(d, m) = -e.transpose();
  kkt.bottomLeftCorner(m, d) = e;
  VectorXd rhs = VectorXd::Zero(d + m);
  rhs.segment(d + prefix, target.size()) = target - k.segment(prefix, target.size());
  const VectorXd sol = kkt.colPivHouseholderQr().solve(rhs);
  return k + sol.head(d);
}

/// Mean deviation of the unit-normalized rows of `eval` from the top-r right
/// singular subspace of `fit`, for r = 1..max_rank, via a Jacobi SVD.
inline std::vector<double> deviation_curve_jacobi(const MatrixXd& fit, const MatrixXd& eval,
                                                  Index max_rank) {
  Eigen::JacobiSVD<MatrixXd> svd(fit, Eigen::ComputeThinV);
  const MatrixXd v = svd.matrixV();
  std::vector<double> out;
  for (Index r = 1; r <= max_rank; ++r) {
    const MatrixXd basis = v.leftCols(r);
    double sum = 0.0;
    for (Index i = 0; i < eval.rows(); ++i) {
      const VectorXd q = eval.row(i).transpose().normalized();
      sum += (q - basis * (basis.transpose() * q)).norm();
    }
    out.push_back(sum / static_cast<double>(eval.rows()));
  }
  return out;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

/// Plain per-channel min/max round-to-nearest, one scalar at a time.
struct PlainChannel {
  float zero_point = 0.0f;
  float scale = 0.0f;
  std::vector<std::uint8_t> codes;
  std::vector<double> dequantized;
};

inline PlainChannel plain_quantize(const std::vector<double>& x, int bits) {
  PlainChannel out;
  double lo = x[0];
  double hi = x[0];
  for (double v : x) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double levels = static_cast<double>((1 << bits) - 1);
  out.zero_point = static_cast<float>(lo);
  out.scale = static_cast<float>((hi - lo) / levels);
  const double m = out.zero_point;
  const double s = out.scale;
  for (double v : x) {
    double code = 0.0;
    if (s > 0.0) {
      const double u = (v - m) / s;
      const double whole = std::trunc(u);
      code = whole;
      if (std::fabs(u - whole) >= 0.5) {
        code += u > 0 ? 1.0 : -1.0;
      }
      code = std::clamp(code, 0.0, levels);
    }
    out.codes.push_back(static_cast<std::uint8_t>(code));
    out.dequantized.push_back(code * s + m);
  }
  return out;
}

/// Per-channel plain quantization of a tokens x d key group.
inline MatrixXd plain_quantize_keys(const MatrixXd& keys, int bits) {
  MatrixXd out(keys.rows(), keys.cols());
  for (Index c = 0; c < keys.cols(); ++c) {
    std::vector<double> col(keys.col(c).data(), keys.col(c).data() + keys.rows());
    const auto q = plain_quantize(col, bits);
    for (Index i = 0; i < keys.rows(); ++i) {
      out(i, c) = q.dequantized[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

/// softmax(q K^T / sqrt(d)) V in long double, with an explicit exp-normalize.
inline VectorXd attend_extended(const VectorXd& q, const MatrixXd& keys, const MatrixXd& values) {
  using LD = long double;
  const Index n = keys.rows();
  const Index d = q.size();
  std::vector<LD> logits(static_cast<std::size_t>(n));
  LD top = -INFINITY;
  for (Index i = 0; i < n; ++i) {
    LD s = 0;
    for (Index j = 0; j < d; ++j) {
      s += static_cast<LD>(q(j)) * static_cast<LD>(keys(i, j));
    }
    logits[static_cast<std::size_t>(i)] = s / std::sqrt(static_cast<LD>(d));
    top = std::max(top, logits[static_cast<std::size_t>(i)]);
  }
  LD z = 0;
  for (auto& l : logits) {
    l = std::exp(l - top);
    z += l;
  }
  VectorXd out(values.cols());
  for (Index j = 0; j < values.cols(); ++j) {
    LD acc = 0;
    for (Index i = 0; i < n; ++i) {
      acc += logits[static_cast<std::size_t>(i)] / z * static_cast<LD>(values(i, j));
    }
    out(j) = static_cast<double>(acc);
  }
  return out;
}

/// Total size of the regular files directly inside `dir` whose names match.
inline std::uintmax_t bytes_on_disk(const std::filesystem::path& dir,
                                    const std::vector<std::string>& names) {
  std::uintmax_t total = 0;
  for (const auto& n : names) {
    total += std::filesystem::file_size(dir / n);
  }
  return total;
}

} // namespace oracle
