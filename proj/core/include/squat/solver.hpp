#pragma once

#include "squat/quant.hpp"
#include "squat/subspace.hpp"

#include <Eigen/Core>

#include <functional>
#include <vector>

namespace squat {

/// How the inverses of the leading principal blocks of P_inv are obtained.
enum class InverseMethod {
  downdate,  // Schur-complement recursion from A_T^{-1} = I + lambda Q^T Q, O(d^3) total
  direct,    // invert every leading block of P_inv independently, O(d^4 / g) total
};

/// How P_inv = (I + lambda Q^T Q)^{-1} is formed.
enum class PinvMethod {
  automatic,  // Woodbury when r < d / 4, dense Cholesky otherwise
  dense,
  woodbury,
};

struct SolverOptions {
  InverseMethod inverse = InverseMethod::downdate;
  PinvMethod pinv = PinvMethod::automatic;
  /// Keep every A_t^{-1}. Quantization only needs H_t and B_t H_t, so this can
  /// be turned off to save O(d^3 / g) memory.
  bool keep_inverse_sequence = true;
};

/// Everything the key quantizer needs, precomputed once per subspace and shared
/// read-only by every token group (and every sample of a batch).
///
/// Iterations are numbered t = 1..T with T = dim / block. Index t - 1 of the
/// per-iteration vectors belongs to iteration t.
struct SolverState {
  double lambda = 0.0;
  Eigen::Index dim = 0;
  Eigen::Index block = 1;
  Eigen::Index iterations = 0;

  Eigen::MatrixXd p;      // I + lambda Q^T Q, which is also A_T^{-1}
  Eigen::MatrixXd p_inv;  // (I + lambda Q^T Q)^{-1}

  std::vector<Eigen::MatrixXd> a_inv_seq;   // A_t^{-1}, tg x tg; empty unless kept
  std::vector<Eigen::MatrixXd> h;           // H_t: last g columns of A_t^{-1}, tg x g
  std::vector<Eigen::MatrixXd> correction;  // B_t H_t, (d - tg) x g; empty matrix at t = T
};

/// Condition-number ceiling for the trailing block inverted by a downdate.
inline constexpr double kMaxDowndateCondition = 1e12;

[[nodiscard]] SolverState precompute(const Eigen::MatrixXd& q_hat, double lambda,
                                     Eigen::Index block, const SolverOptions& options = {});

[[nodiscard]] SolverState precompute(const QuerySubspace& sub, double lambda, Eigen::Index block,
                                     const SolverOptions& options = {});

/// Given the inverse of a leading (t+1)g x (t+1)g block, return the inverse of
/// its leading tg x tg block: M - N^T O^{-1} N, where O is the trailing g x g
/// block and N the g x tg block below M. Throws NumericalError when O is
/// singular or its condition estimate exceeds kMaxDowndateCondition.
[[nodiscard]] Eigen::MatrixXd downdate(const Eigen::MatrixXd& a_inv_next, Eigen::Index block);

/// Adds B_t H_t d to the free channels [tg, d) of every row of `keys`, where
/// row i of `residual` (G x g) is the quantization residual d of token i on
/// the channels of block t. No-op at t = T.
void propagate_block_residual(const SolverState& state, Eigen::Index t,
                              const Eigen::MatrixXd& residual, Eigen::Ref<Eigen::MatrixXd> keys);

struct KeyBlockResult {
  std::vector<QuantizedGroup> channels;  // one per channel, each over all tokens of the group
  Eigen::MatrixXd dequantized;           // tokens x d, final k-hat
};

/// Called after every iteration with the token-group matrix before and after it.
using IterationObserver =
    std::function<void(Eigen::Index t, const Eigen::MatrixXd& before, const Eigen::MatrixXd& after)>;

/// Quantizes a group of key rows (tokens x d) block by block. Each channel is
/// quantized per-channel across the tokens with min/max parameters fitted to
/// its current (already corrected) values; the residual is then pushed onto
/// the not-yet-quantized channels.
[[nodiscard]] KeyBlockResult quantize_key_block(const Eigen::MatrixXd& keys,
                                                const SolverState& state, int bits,
                                                const IterationObserver& observer = {});

/// Reference solution of one iteration by solving the full KKT system of
///   min delta^T (I + lambda Q^T Q) delta
///   s.t. delta[0, prefix) = 0, delta[prefix, prefix + g) = block_values - k_prev[prefix, prefix + g)
/// with a dense LU factorization. Returns k_prev + delta.
[[nodiscard]] Eigen::VectorXd kkt_oracle(const Eigen::VectorXd& k_prev, Eigen::Index prefix_len,
                                         const Eigen::VectorXd& block_values,
                                         const Eigen::MatrixXd& q_hat, double lambda);

/// delta^T delta + lambda ||Q delta||^2.
[[nodiscard]] double update_objective(const Eigen::VectorXd& delta, const Eigen::MatrixXd& q_hat,
                                      double lambda);

} // namespace squat
