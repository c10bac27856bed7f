#include "squat/attention.hpp"

#include "squat/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace squat {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double AttentionConfig::scale() const {
  if (head_dim < 1) {
    throw InvalidArgument("attention head_dim must be positive");
  }
  return 1.0 / std::sqrt(static_cast<double>(head_dim));
}

VectorXd attention_logits(const VectorXd& q, const MatrixXd& keys) {
  if (keys.cols() != q.size()) {
    throw InvalidArgument("query and key dimensions differ");
  }
  return (keys * q) * AttentionConfig{q.size()}.scale();
}

VectorXd softmax(const VectorXd& logits) {
  if (logits.size() == 0) {
    throw InvalidArgument("softmax of an empty vector");
  }
  const VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

VectorXd attend(const VectorXd& q, const MatrixXd& keys, const MatrixXd& values) {
  if (keys.rows() == 0) {
    throw InvalidArgument("attention over an empty cache");
  }
  if (values.rows() != keys.rows()) {
    throw InvalidArgument("keys and values have different token counts");
  }
  return values.transpose() * softmax(attention_logits(q, keys));
}

BoundTerms theorem1_bound(const VectorXd& q, const MatrixXd& keys_fp, const MatrixXd& keys_deq,
                          const MatrixXd& values_fp, const MatrixXd& values_deq) {
  if (keys_fp.rows() != keys_deq.rows() || keys_fp.cols() != keys_deq.cols() ||
      values_fp.rows() != values_deq.rows() || values_fp.cols() != values_deq.cols() ||
      keys_fp.rows() != values_fp.rows() || keys_fp.cols() != q.size()) {
    throw InvalidArgument("shape mismatch between query, caches and their dequantized forms");
  }
  const double d = static_cast<double>(q.size());
  BoundTerms b;
  b.value_error_sum = (values_fp - values_deq).rowwise().norm().sum();
  b.key_ip_error_sum = ((keys_fp - keys_deq) * q).cwiseAbs().sum();
  const double denom = 2.0 * std::sqrt(d);
  b.bound_stated = b.value_error_sum / denom * b.key_ip_error_sum + b.value_error_sum;
  b.bound_proof = values_deq.norm() / denom * b.key_ip_error_sum + b.value_error_sum;
  return b;
}

StepReport compare_step(const VectorXd& q, const MatrixXd& keys_fp, const MatrixXd& values_fp,
                        const MatrixXd& keys_deq, const MatrixXd& values_deq) {
  StepReport r;
  const VectorXd logit_fp = attention_logits(q, keys_fp);
  const VectorXd logit_deq = attention_logits(q, keys_deq);
  const VectorXd p_fp = softmax(logit_fp);
  const VectorXd p_deq = softmax(logit_deq);
  r.actual_deviation = (values_fp.transpose() * p_fp - values_deq.transpose() * p_deq).norm();
  r.bounds = theorem1_bound(q, keys_fp, keys_deq, values_fp, values_deq);
  const VectorXd sd = (p_fp - p_deq).cwiseAbs();
  const VectorXd ld = (logit_fp - logit_deq).cwiseAbs();
  r.score_abs_diff.assign(sd.data(), sd.data() + sd.size());
  r.logit_abs_diff.assign(ld.data(), ld.data() + ld.size());
  return r;
}

ReportSummary DeviationReport::summary() const {
  ReportSummary s;
  s.steps = static_cast<Index>(steps.size());
  std::vector<double> scores;
  double logit_sum = 0.0;
  std::size_t logit_count = 0;
  for (const auto& st : steps) {
    scores.insert(scores.end(), st.score_abs_diff.begin(), st.score_abs_diff.end());
    for (double x : st.logit_abs_diff) {
      logit_sum += x;
    }
    logit_count += st.logit_abs_diff.size();
    s.mean_actual_deviation += st.actual_deviation;
    s.max_actual_deviation = std::max(s.max_actual_deviation, st.actual_deviation);
    if (st.actual_deviation > st.bounds.bound_proof + kBoundTolerance) {
      ++s.bound_violations;
    }
  }
  if (!steps.empty()) {
    s.mean_actual_deviation /= static_cast<double>(steps.size());
  }
  if (logit_count > 0) {
    s.mean_logit_diff = logit_sum / static_cast<double>(logit_count);
  }
  if (!scores.empty()) {
    double sum = 0.0;
    for (double x : scores) {
      sum += x;
    }
    s.mean_score_diff = sum / static_cast<double>(scores.size());
    std::sort(scores.begin(), scores.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(scores.size())));
    s.p95_score_diff = scores[std::max<std::size_t>(rank, 1) - 1];
    s.max_score_diff = scores.back();
  }
  return s;
}

namespace {

nlohmann::json summary_json(const ReportSummary& s) {
  return {{"steps", s.steps},
          {"mean_score_diff", s.mean_score_diff},
          {"p95_score_diff", s.p95_score_diff},
          {"max_score_diff", s.max_score_diff},
          {"mean_logit_diff", s.mean_logit_diff},
          {"mean_actual_deviation", s.mean_actual_deviation},
          {"max_actual_deviation", s.max_actual_deviation},
          {"bound_violations", s.bound_violations}};
}

} // namespace

std::string report_to_json(const DeviationReport& report, bool include_vectors) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& st : report.steps) {
    nlohmann::json j{{"step", st.step},
                     {"layer", st.layer},
                     {"head", st.head},
                     {"actual_deviation", st.actual_deviation},
                     {"bound_stated", st.bounds.bound_stated},
                     {"bound_proof", st.bounds.bound_proof},
                     {"value_error_sum", st.bounds.value_error_sum},
                     {"key_ip_error_sum", st.bounds.key_ip_error_sum}};
    if (include_vectors) {
      j["score_abs_diff"] = st.score_abs_diff;
      j["logit_abs_diff"] = st.logit_abs_diff;
    }
    steps.push_back(std::move(j));
  }
  const nlohmann::json doc{{"format", "squat-deviation-report"},
                           {"version", 1},
                           {"summary", summary_json(report.summary())},
                           {"steps", steps}};
  return doc.dump(2) + "\n";
}

std::string report_to_csv(const DeviationReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "# squat-deviation-report v1\n";
  out << "step,layer,head,metric,value\n";
  for (const auto& st : report.steps) {
    const auto row = [&](const char* metric, double value) {
      out << st.step << ',' << st.layer << ',' << st.head << ',' << metric << ',' << value << '\n';
    };
    double mean_score = 0.0, max_score = 0.0, mean_logit = 0.0;
    for (double x : st.score_abs_diff) {
      mean_score += x;
      max_score = std::max(max_score, x);
    }
    for (double x : st.logit_abs_diff) {
      mean_logit += x;
    }
    if (!st.score_abs_diff.empty()) {
      mean_score /= static_cast<double>(st.score_abs_diff.size());
      mean_logit /= static_cast<double>(st.logit_abs_diff.size());
    }
    row("actual_deviation", st.actual_deviation);
    row("bound_stated", st.bounds.bound_stated);
    row("bound_proof", st.bounds.bound_proof);
    row("value_error_sum", st.bounds.value_error_sum);
    row("key_ip_error_sum", st.bounds.key_ip_error_sum);
    row("mean_score_diff", mean_score);
    row("max_score_diff", max_score);
    row("mean_logit_diff", mean_logit);
  }
  return out.str();
}

} // namespace squat
