#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

namespace squat {

/// Thin SVD of a query matrix, with a deterministic sign convention: every
/// right singular vector is flipped so that its largest-magnitude component is
/// positive.
struct QuerySpectrum {
  Eigen::VectorXd singular_values;  // descending, length min(n, d)
  Eigen::MatrixXd right_vectors;    // min(n, d) x d, row i pairs with singular_values[i]
  Eigen::Index numerical_rank = 0;  // count of sigma_i > 1e-10 * sigma_1
  Eigen::Index dim = 0;
};

/// Task-relevant query subspace.
///
/// `basis` is the r x d matrix whose row i is sigma_i * v_i; this is the matrix
/// that enters the key-quantization regularizer. Rows past the effective rank
/// are zero. `orthonormal_basis` holds only the `rank` unscaled directions and
/// is what projections use.
struct QuerySubspace {
  Eigen::MatrixXd basis;
  Eigen::MatrixXd orthonormal_basis;
  Eigen::VectorXd singular_values;  // length requested_rank, zero-padded
  Eigen::Index requested_rank = 0;
  Eigen::Index rank = 0;
  Eigen::Index dim = 0;
};

/// Relative cutoff below which singular values are treated as zero.
inline constexpr double kRankTolerance = 1e-10;

[[nodiscard]] QuerySpectrum analyze_queries(const Eigen::MatrixXd& queries);

/// Subspace made of the top `rank` directions of an existing spectrum. Subspaces
/// taken from one spectrum are nested.
[[nodiscard]] QuerySubspace truncate(const QuerySpectrum& spectrum, Eigen::Index rank);

/// SVD of the n x d query matrix followed by truncation to `rank`. The effective
/// rank is min(rank, n, d, numerical rank).
[[nodiscard]] QuerySubspace build_subspace(const Eigen::MatrixXd& queries, Eigen::Index rank);

/// Row-stacks the query matrices of the query heads that share one KV head.
[[nodiscard]] Eigen::MatrixXd stack_queries(std::span<const Eigen::MatrixXd> per_head);

[[nodiscard]] Eigen::VectorXd project(const Eigen::VectorXd& q, const QuerySubspace& sub);

/// Euclidean distance of q from the subspace, ||q - project(q)||.
[[nodiscard]] double deviation(const Eigen::VectorXd& q, const QuerySubspace& sub);

/// Mean deviation of the (row-normalized) rows of `queries` from the nested
/// subspaces of `spectrum`, for r = 1..max_rank. Entry r-1 belongs to rank r.
[[nodiscard]] std::vector<double> deviation_curve(const QuerySpectrum& spectrum,
                                                  const Eigen::MatrixXd& queries,
                                                  Eigen::Index max_rank);

} // namespace squat
