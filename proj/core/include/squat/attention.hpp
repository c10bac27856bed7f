#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace squat {

struct AttentionConfig {
  Eigen::Index head_dim = 1;
  bool causal = true;

  [[nodiscard]] double scale() const;
};

/// q K^T / sqrt(d).
[[nodiscard]] Eigen::VectorXd attention_logits(const Eigen::VectorXd& q, const Eigen::MatrixXd& keys);

/// Max-subtracted softmax.
[[nodiscard]] Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// softmax(q K^T / sqrt(d)) V for the newest (last-row) query of a causal
/// sequence: q attends to every row of keys/values.
[[nodiscard]] Eigen::VectorXd attend(const Eigen::VectorXd& q, const Eigen::MatrixXd& keys,
                                     const Eigen::MatrixXd& values);

/// Output-deviation bounds for one query against full-precision and
/// dequantized caches.
///
///   value_error_sum  = sum_i ||v_i - v_i^deq||
///   key_ip_error_sum = sum_i |q (k_i - k_i^deq)^T|
///   bound_stated     = value_error_sum / (2 sqrt d) * key_ip_error_sum + value_error_sum
///   bound_proof      = ||V^deq||_F   / (2 sqrt d) * key_ip_error_sum + value_error_sum
///
/// Only bound_proof follows from the Lipschitz argument; the stated form is
/// reported alongside it.
struct BoundTerms {
  double bound_stated = 0.0;
  double bound_proof = 0.0;
  double value_error_sum = 0.0;
  double key_ip_error_sum = 0.0;
};

[[nodiscard]] BoundTerms theorem1_bound(const Eigen::VectorXd& q, const Eigen::MatrixXd& keys_fp,
                                        const Eigen::MatrixXd& keys_deq,
                                        const Eigen::MatrixXd& values_fp,
                                        const Eigen::MatrixXd& values_deq);

struct StepReport {
  Eigen::Index step = 0;  // token index of the decoding query
  Eigen::Index layer = 0;
  Eigen::Index head = 0;  // query head
  double actual_deviation = 0.0;
  BoundTerms bounds;
  std::vector<double> score_abs_diff;  // |softmax_fp - softmax_deq| per attended token
  std::vector<double> logit_abs_diff;  // |logit_fp - logit_deq| per attended token
};

struct ReportSummary {
  Eigen::Index steps = 0;
  double mean_score_diff = 0.0;
  double p95_score_diff = 0.0;
  double max_score_diff = 0.0;
  double mean_logit_diff = 0.0;
  double mean_actual_deviation = 0.0;
  double max_actual_deviation = 0.0;
  Eigen::Index bound_violations = 0;  // steps with actual > bound_proof + 1e-6
};

struct DeviationReport {
  std::vector<StepReport> steps;

  [[nodiscard]] ReportSummary summary() const;
};

/// Tolerance used when counting bound violations.
inline constexpr double kBoundTolerance = 1e-6;

/// One step of the replay: q against the first rows of both caches.
[[nodiscard]] StepReport compare_step(const Eigen::VectorXd& q, const Eigen::MatrixXd& keys_fp,
                                      const Eigen::MatrixXd& values_fp,
                                      const Eigen::MatrixXd& keys_deq,
                                      const Eigen::MatrixXd& values_deq);

/// JSON document: {"version", "summary", "steps": [...]}.
[[nodiscard]] std::string report_to_json(const DeviationReport& report, bool include_vectors = true);

/// Long-format CSV with a versioned comment header, columns step,layer,head,metric,value.
[[nodiscard]] std::string report_to_csv(const DeviationReport& report);

} // namespace squat
