#include "squat/subspace.hpp"

#include "squat/error.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <string>

namespace squat {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

QuerySpectrum analyze_queries(const MatrixXd& queries) {
  if (queries.rows() == 0 || queries.cols() == 0) {
    throw InvalidArgument("query matrix is empty");
  }
  if (!queries.allFinite()) {
    throw InvalidArgument("query matrix contains non-finite values");
  }

  Eigen::BDCSVD<MatrixXd> svd(queries, Eigen::ComputeThinV);

  QuerySpectrum spectrum;
  spectrum.dim = queries.cols();
  spectrum.singular_values = svd.singularValues();
  spectrum.right_vectors = svd.matrixV().transpose();

  for (Index i = 0; i < spectrum.right_vectors.rows(); ++i) {
    Index pivot = 0;
    spectrum.right_vectors.row(i).cwiseAbs().maxCoeff(&pivot);
    if (spectrum.right_vectors(i, pivot) < 0.0) {
      spectrum.right_vectors.row(i) *= -1.0;
    }
  }

  const auto& sigma = spectrum.singular_values;
  if (sigma.size() > 0 && sigma[0] > 0.0) {
    const double cutoff = kRankTolerance * sigma[0];
    spectrum.numerical_rank = (sigma.array() > cutoff).count();
  }
  return spectrum;
}

QuerySubspace truncate(const QuerySpectrum& spectrum, Index rank) {
  if (rank < 1 || rank > spectrum.dim) {
    throw InvalidArgument("subspace rank must be in [1, " + std::to_string(spectrum.dim) +
                          "], got " + std::to_string(rank));
  }
  QuerySubspace sub;
  sub.dim = spectrum.dim;
  sub.requested_rank = rank;
  sub.rank = std::min(rank, spectrum.numerical_rank);

  sub.orthonormal_basis = spectrum.right_vectors.topRows(sub.rank);
  sub.singular_values = VectorXd::Zero(rank);
  sub.singular_values.head(sub.rank) = spectrum.singular_values.head(sub.rank);
  sub.basis = MatrixXd::Zero(rank, sub.dim);
  sub.basis.topRows(sub.rank) =
      sub.singular_values.head(sub.rank).asDiagonal() * sub.orthonormal_basis;
  return sub;
}

QuerySubspace build_subspace(const MatrixXd& queries, Index rank) {
  if (queries.rows() == 0 || queries.cols() == 0) {
    throw InvalidArgument("query matrix is empty");
  }
  if (rank < 1 || rank > queries.cols()) {
    throw InvalidArgument("subspace rank must be in [1, " + std::to_string(queries.cols()) +
                          "], got " + std::to_string(rank));
  }
  return truncate(analyze_queries(queries), rank);
}

MatrixXd stack_queries(std::span<const MatrixXd> per_head) {
  if (per_head.empty()) {
    throw InvalidArgument("no query heads to stack");
  }
  const Index d = per_head.front().cols();
  Index rows = 0;
  for (const auto& m : per_head) {
    if (m.cols() != d) {
      throw InvalidArgument("query heads disagree on head dimension");
    }
    rows += m.rows();
  }
  MatrixXd out(rows, d);
  Index at = 0;
  for (const auto& m : per_head) {
    out.middleRows(at, m.rows()) = m;
    at += m.rows();
  }
  return out;
}

namespace {

void check_dim(const VectorXd& q, const QuerySubspace& sub) {
  if (q.size() != sub.dim) {
    throw InvalidArgument("vector has dimension " + std::to_string(q.size()) +
                          ", subspace dimension is " + std::to_string(sub.dim));
  }
}

} // namespace

VectorXd project(const VectorXd& q, const QuerySubspace& sub) {
  check_dim(q, sub);
  if (sub.rank == 0) {
    return VectorXd::Zero(q.size());
  }
  return sub.orthonormal_basis.transpose() * (sub.orthonormal_basis * q);
}

double deviation(const VectorXd& q, const QuerySubspace& sub) {
  return (q - project(q, sub)).norm();
}

std::vector<double> deviation_curve(const QuerySpectrum& spectrum, const MatrixXd& queries,
                                    Index max_rank) {
  if (queries.cols() != spectrum.dim) {
    throw InvalidArgument("evaluation queries do not match the spectrum dimension");
  }
  max_rank = std::min(max_rank, spectrum.dim);
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(std::max<Index>(max_rank, 0)));

  // Residual energy after removing the first r directions; row-normalized.
  MatrixXd unit = queries;
  for (Index i = 0; i < unit.rows(); ++i) {
    const double n = unit.row(i).norm();
    if (n > 0.0) {
      unit.row(i) /= n;
    }
  }
  VectorXd remaining = unit.rowwise().squaredNorm();
  const Index usable = std::min<Index>(spectrum.numerical_rank, spectrum.right_vectors.rows());
  for (Index r = 1; r <= max_rank; ++r) {
    if (r <= usable) {
      const VectorXd coeff = unit * spectrum.right_vectors.row(r - 1).transpose();
      remaining -= coeff.cwiseAbs2();
    }
    curve.push_back(remaining.cwiseMax(0.0).cwiseSqrt().mean());
  }
  return curve;
}

} // namespace squat
