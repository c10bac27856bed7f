#include "squat/solver.hpp"

#include "squat/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace squat {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void symmetrize(MatrixXd& m) {
  m = 0.5 * (m + m.transpose()).eval();
}

MatrixXd dense_inverse_spd(const MatrixXd& m) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("matrix is not positive definite");
  }
  MatrixXd inv = llt.solve(MatrixXd::Identity(m.rows(), m.cols()));
  symmetrize(inv);
  return inv;
}

MatrixXd woodbury_inverse(const MatrixXd& q_hat, double lambda) {
  // (I + lambda Q^T Q)^{-1} = I - lambda Q^T (I_r + lambda Q Q^T)^{-1} Q
  const Index d = q_hat.cols();
  const Index r = q_hat.rows();
  MatrixXd small = MatrixXd::Identity(r, r) + lambda * q_hat * q_hat.transpose();
  Eigen::LLT<MatrixXd> llt(small);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Woodbury capacitance matrix is not positive definite");
  }
  MatrixXd inv = MatrixXd::Identity(d, d) - lambda * q_hat.transpose() * llt.solve(q_hat);
  symmetrize(inv);
  return inv;
}

} // namespace

MatrixXd downdate(const MatrixXd& a_inv_next, Index block) {
  const Index n = a_inv_next.rows();
  if (a_inv_next.cols() != n) {
    throw InvalidArgument("downdate input must be square");
  }
  if (block < 1 || block >= n) {
    throw InvalidArgument("downdate block must be in [1, " + std::to_string(n - 1) + "], got " +
                          std::to_string(block));
  }
  const Index keep = n - block;
  const auto m = a_inv_next.topLeftCorner(keep, keep);
  const MatrixXd nblk = a_inv_next.bottomLeftCorner(block, keep);
  const MatrixXd o = a_inv_next.bottomRightCorner(block, block);

  Eigen::PartialPivLU<MatrixXd> lu(o);
  const double rcond = lu.rcond();
  if (!(rcond * kMaxDowndateCondition >= 1.0)) {
    std::ostringstream msg;
    msg << "trailing " << block << "x" << block
        << " block is singular or badly conditioned (condition estimate "
        << (rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity()) << ")";
    throw NumericalError(msg.str());
  }

  MatrixXd out = m - nblk.transpose() * lu.solve(nblk);
  symmetrize(out);
  return out;
}

SolverState precompute(const MatrixXd& q_hat, double lambda, Index block,
                       const SolverOptions& options) {
  const Index d = q_hat.cols();
  if (d < 1) {
    throw InvalidArgument("subspace dimension must be positive");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw InvalidArgument("lambda must be finite and non-negative");
  }
  if (block < 1 || d % block != 0) {
    throw InvalidArgument("block size " + std::to_string(block) +
                          " must divide the head dimension " + std::to_string(d));
  }

  SolverState s;
  s.lambda = lambda;
  s.dim = d;
  s.block = block;
  s.iterations = d / block;

  s.p = MatrixXd::Identity(d, d);
  if (q_hat.rows() > 0) {
    s.p.noalias() += lambda * q_hat.transpose() * q_hat;
  }
  symmetrize(s.p);

  bool use_woodbury = false;
  switch (options.pinv) {
    case PinvMethod::automatic: use_woodbury = 4 * q_hat.rows() < d; break;
    case PinvMethod::dense: use_woodbury = false; break;
    case PinvMethod::woodbury: use_woodbury = true; break;
  }
  s.p_inv = (use_woodbury && q_hat.rows() > 0) ? woodbury_inverse(q_hat, lambda)
                                               : dense_inverse_spd(s.p);

  const Index T = s.iterations;
  s.h.resize(static_cast<std::size_t>(T));
  s.correction.resize(static_cast<std::size_t>(T));
  if (options.keep_inverse_sequence) {
    s.a_inv_seq.resize(static_cast<std::size_t>(T));
  }

  auto record = [&](Index t, MatrixXd&& a_inv) {
    const Index tg = t * block;
    const auto idx = static_cast<std::size_t>(t - 1);
    s.h[idx] = a_inv.rightCols(block);
    if (t < T) {
      s.correction[idx] = s.p_inv.bottomLeftCorner(d - tg, tg) * s.h[idx];
    } else {
      s.correction[idx].resize(0, block);
    }
    if (options.keep_inverse_sequence) {
      s.a_inv_seq[idx] = std::move(a_inv);
    }
  };

  if (options.inverse == InverseMethod::downdate) {
    MatrixXd current = s.p;
    for (Index t = T; t >= 1; --t) {
      MatrixXd next = t > 1 ? downdate(current, block) : MatrixXd();
      record(t, std::move(current));
      current = std::move(next);
    }
  } else {
    for (Index t = T; t >= 1; --t) {
      const Index tg = t * block;
      if (t == T) {
        record(t, MatrixXd(s.p));
        continue;
      }
      // Reference path: a general full-pivoting inverse of every leading block,
      // no reuse between iterations and no use of symmetry.
      Eigen::FullPivLU<MatrixXd> lu(s.p_inv.topLeftCorner(tg, tg));
      if (!lu.isInvertible()) {
        throw NumericalError("leading block of P_inv is singular");
      }
      MatrixXd inv = lu.inverse();
      symmetrize(inv);
      record(t, std::move(inv));
    }
  }
  return s;
}

SolverState precompute(const QuerySubspace& sub, double lambda, Index block,
                       const SolverOptions& options) {
  if (sub.basis.cols() != sub.dim) {
    throw InvalidArgument("subspace basis does not match its dimension");
  }
  return precompute(sub.basis, lambda, block, options);
}

void propagate_block_residual(const SolverState& state, Index t, const MatrixXd& residual,
                              Eigen::Ref<MatrixXd> keys) {
  if (t < 1 || t > state.iterations) {
    throw InvalidArgument("iteration index out of range");
  }
  if (t == state.iterations) {
    return;
  }
  if (keys.cols() != state.dim || residual.rows() != keys.rows() ||
      residual.cols() != state.block) {
    throw InvalidArgument("residual/keys shape does not match solver state");
  }
  const Index tg = t * state.block;
  keys.rightCols(state.dim - tg).noalias() +=
      residual * state.correction[static_cast<std::size_t>(t - 1)].transpose();
}

KeyBlockResult quantize_key_block(const MatrixXd& keys, const SolverState& state, int bits,
                                  const IterationObserver& observer) {
  if (keys.cols() != state.dim) {
    throw InvalidArgument("key rows have dimension " + std::to_string(keys.cols()) +
                          ", solver state expects " + std::to_string(state.dim));
  }
  if (keys.rows() == 0) {
    throw InvalidArgument("key group is empty");
  }
  const Index g = state.block;
  const Index tokens = keys.rows();

  KeyBlockResult out;
  out.channels.resize(static_cast<std::size_t>(state.dim));
  out.dequantized = keys;
  MatrixXd& k = out.dequantized;
  MatrixXd residual(tokens, g);
  MatrixXd before;

  for (Index t = 1; t <= state.iterations; ++t) {
    if (observer) {
      before = k;
    }
    const Index first = (t - 1) * g;
    for (Index j = 0; j < g; ++j) {
      const Index c = first + j;
      std::span<double> column(k.col(c).data(), static_cast<std::size_t>(tokens));
      auto group = quantize_group(column, bits);
      std::vector<double> deq(static_cast<std::size_t>(tokens));
      dequantize_group_into(group, deq);
      for (Index i = 0; i < tokens; ++i) {
        residual(i, j) = deq[static_cast<std::size_t>(i)] - k(i, c);
        k(i, c) = deq[static_cast<std::size_t>(i)];
      }
      out.channels[static_cast<std::size_t>(c)] = std::move(group);
    }
    propagate_block_residual(state, t, residual, k);
    if (observer) {
      observer(t, before, k);
    }
  }
  return out;
}

VectorXd kkt_oracle(const VectorXd& k_prev, Index prefix_len, const VectorXd& block_values,
                    const MatrixXd& q_hat, double lambda) {
  const Index d = k_prev.size();
  const Index g = block_values.size();
  const Index tg = prefix_len + g;
  if (prefix_len < 0 || g < 1 || tg > d) {
    throw InvalidArgument("fixed prefix plus quantized block exceeds the key dimension");
  }
  if (q_hat.rows() > 0 && q_hat.cols() != d) {
    throw InvalidArgument("subspace dimension does not match the key dimension");
  }

  MatrixXd p = MatrixXd::Identity(d, d);
  if (q_hat.rows() > 0) {
    p += lambda * q_hat.transpose() * q_hat;
  }

  // [ 2P  -T^T ] [delta]   [0]
  // [ T    0   ] [ mu  ] = [b]
  const Index n = d + tg;
  MatrixXd kkt = MatrixXd::Zero(n, n);
  kkt.topLeftCorner(d, d) = 2.0 * p;
  kkt.block(0, d, tg, tg) = -MatrixXd::Identity(tg, tg);
  kkt.block(d, 0, tg, tg) = MatrixXd::Identity(tg, tg);

  VectorXd rhs = VectorXd::Zero(n);
  rhs.segment(d + prefix_len, g) = block_values - k_prev.segment(prefix_len, g);

  Eigen::FullPivLU<MatrixXd> lu(kkt);
  if (!lu.isInvertible()) {
    throw NumericalError("KKT system is singular");
  }
  const VectorXd sol = lu.solve(rhs);
  return k_prev + sol.head(d);
}

double update_objective(const VectorXd& delta, const MatrixXd& q_hat, double lambda) {
  double value = delta.squaredNorm();
  if (q_hat.rows() > 0) {
    value += lambda * (q_hat * delta).squaredNorm();
  }
  return value;
}

} // namespace squat
