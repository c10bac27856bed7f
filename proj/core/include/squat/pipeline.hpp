#pragma once

#include "squat/attention.hpp"
#include "squat/cache.hpp"
#include "squat/trace.hpp"

#include <vector>

namespace squat {

struct QuantizedTrace {
  KVCache cache;
  std::vector<QuerySubspace> subspaces;  // one per (layer, KV head), same order as cache.heads
  double prefill_ms = 0.0;
  double decode_ms = 0.0;
};

/// Runs the cache protocol over a trace: prefill on the first prompt_len
/// tokens of every (layer, KV head), then one decode step per remaining token.
/// Token positions are token indices.
[[nodiscard]] QuantizedTrace quantize_trace(const Trace& trace, const CacheConfig& config);

/// Attention replay of every decoding query (token index >= prompt_len) of
/// every query head, against the full-precision trace and the dequantized
/// cache.
[[nodiscard]] DeviationReport replay(const Trace& trace, const KVCache& cache);

struct Comparison {
  DeviationReport squat;
  DeviationReport baseline;
  ReportSummary squat_summary;
  ReportSummary baseline_summary;
};

/// Quantizes the trace twice and replays both caches.
[[nodiscard]] Comparison compare_quantizers(const Trace& trace, const CacheConfig& squat_config,
                                            const CacheConfig& baseline_config);

} // namespace squat
