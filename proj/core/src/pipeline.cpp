#include "squat/pipeline.hpp"

#include "squat/error.hpp"
#include "squat/rope.hpp"

#include <chrono>
#include <numeric>

namespace squat {

using Eigen::Index;
using Eigen::MatrixXd;

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

} // namespace

QuantizedTrace quantize_trace(const Trace& trace, const CacheConfig& config) {
  trace.validate_shapes();
  const auto& m = trace.manifest;
  config.validate_for_dim(m.head_dim);
  if (m.prompt_len < 1) {
    throw InvalidArgument("trace prompt_len must be at least 1 to build the query subspace");
  }

  QuantizedTrace out;
  out.cache.config = config;
  out.cache.layers = m.layers;
  out.cache.kv_heads = m.kv_heads;
  out.cache.dim = m.head_dim;

  const Index factor = m.group_factor();
  for (Index layer = 0; layer < m.layers; ++layer) {
    for (Index h = 0; h < m.kv_heads; ++h) {
      PromptTensors prompt;
      prompt.keys = trace.keys(layer, h, 0, m.prompt_len);
      prompt.values = trace.values(layer, h, 0, m.prompt_len);
      for (Index qh = h * factor; qh < (h + 1) * factor; ++qh) {
        prompt.queries.push_back(trace.queries(layer, qh, 0, m.prompt_len));
      }

      auto start = std::chrono::steady_clock::now();
      auto pre = prefill(prompt, config);
      out.prefill_ms += elapsed_ms(start);

      start = std::chrono::steady_clock::now();
      const MatrixXd keys = trace.keys(layer, h);
      const MatrixXd values = trace.values(layer, h);
      for (Index t = m.prompt_len; t < m.tokens; ++t) {
        append_decode(pre.cache, *pre.solver, config, keys.row(t).transpose(),
                      values.row(t).transpose(), static_cast<std::int32_t>(t));
      }
      out.decode_ms += elapsed_ms(start);

      out.cache.heads.push_back(std::move(pre.cache));
      out.subspaces.push_back(std::move(pre.subspace));
    }
  }
  return out;
}

DeviationReport replay(const Trace& trace, const KVCache& cache) {
  trace.validate_shapes();
  const auto& m = trace.manifest;
  if (cache.layers != m.layers || cache.kv_heads != m.kv_heads || cache.dim != m.head_dim ||
      static_cast<Index>(cache.heads.size()) != m.layers * m.kv_heads) {
    throw InvalidArgument("cache shape (layers/kv_heads/head_dim) does not match the trace");
  }
  for (const auto& head : cache.heads) {
    if (head.token_count() != m.tokens) {
      throw InvalidArgument("cache holds " + std::to_string(head.token_count()) +
                            " tokens per head, trace has " + std::to_string(m.tokens));
    }
  }

  std::vector<std::int64_t> positions(static_cast<std::size_t>(m.tokens));
  std::iota(positions.begin(), positions.end(), std::int64_t{0});
  const double theta = cache.config.rope_theta;

  DeviationReport report;
  const Index factor = m.group_factor();
  for (Index layer = 0; layer < m.layers; ++layer) {
    for (Index h = 0; h < m.kv_heads; ++h) {
      const auto deq = materialize(cache.at(layer, h), cache.config);
      MatrixXd keys_fp = trace.keys(layer, h);
      apply_rope_rows(keys_fp, positions, theta);
      const MatrixXd values_fp = trace.values(layer, h);

      for (Index qh = h * factor; qh < (h + 1) * factor; ++qh) {
        MatrixXd queries = trace.queries(layer, qh);
        apply_rope_rows(queries, positions, theta);
        for (Index t = m.prompt_len; t < m.tokens; ++t) {
          const Index n = t + 1;
          auto step = compare_step(queries.row(t).transpose(), keys_fp.topRows(n),
                                   values_fp.topRows(n), deq.keys.topRows(n),
                                   deq.values.topRows(n));
          step.step = t;
          step.layer = layer;
          step.head = qh;
          report.steps.push_back(std::move(step));
        }
      }
    }
  }
  return report;
}

Comparison compare_quantizers(const Trace& trace, const CacheConfig& squat_config,
                              const CacheConfig& baseline_config) {
  Comparison c;
  c.squat = replay(trace, quantize_trace(trace, squat_config).cache);
  c.baseline = replay(trace, quantize_trace(trace, baseline_config).cache);
  c.squat_summary = c.squat.summary();
  c.baseline_summary = c.baseline.summary();
  return c;
}

} // namespace squat
