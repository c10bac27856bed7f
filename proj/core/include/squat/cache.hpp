#pragma once

#include "squat/quant.hpp"
#include "squat/rope.hpp"
#include "squat/solver.hpp"
#include "squat/subspace.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace squat {

/// Where the rotary embedding sits relative to quantization. Cache inputs are
/// always un-rotated keys and queries.
enum class RopeMode {
  post_rope,  // rotate keys/queries, then build the subspace and quantize
  pre_rope,   // quantize un-rotated keys, rotate after dequantization
};

[[nodiscard]] std::string to_string(RopeMode mode);
[[nodiscard]] RopeMode parse_rope_mode(const std::string& text);

struct CacheConfig {
  int bits = 2;
  Eigen::Index group_size = 32;    // G: tokens per key group, channels per value group
  Eigen::Index residual_len = 32;  // R
  Eigen::Index block = 64;         // g: channels quantized per solver iteration
  double lambda = 1e-3;
  Eigen::Index rank = 5;
  RopeMode mode = RopeMode::post_rope;
  double rope_theta = kDefaultRopeTheta;
  /// Batch > 1: build one solver per sample instead of sharing sample 0's.
  bool per_sample_solver = false;

  /// Throws InvalidArgument naming the violated constraint.
  void validate() const;
  void validate_for_dim(Eigen::Index dim) const;
};

/// G consecutive tokens of keys, quantized per channel.
struct KeyGroup {
  Eigen::Index tokens = 0;
  std::vector<QuantizedGroup> channels;  // size dim, each of length `tokens`

  friend bool operator==(const KeyGroup&, const KeyGroup&) = default;
};

/// One token's value row, quantized in runs of G channels.
struct ValueToken {
  std::vector<QuantizedGroup> groups;  // ceil(dim / G) groups

  friend bool operator==(const ValueToken&, const ValueToken&) = default;
};

/// Cache of one (layer, KV head).
///
/// Keys: quantized groups, then a full-precision buffer flushed in one go when
/// it reaches R rows. Values: quantized tokens, then a sliding window of the R
/// most recent rows; the oldest row is quantized when the window overflows.
struct HeadCache {
  Eigen::Index dim = 0;
  std::vector<KeyGroup> key_groups;
  std::vector<ValueToken> value_tokens;
  std::vector<float> key_residual;    // row-major, residual_key_tokens() x dim
  std::vector<float> value_residual;  // row-major, residual_value_tokens() x dim
  std::vector<std::int32_t> positions;  // one per appended token, in token order

  [[nodiscard]] Eigen::Index token_count() const noexcept {
    return static_cast<Eigen::Index>(positions.size());
  }
  [[nodiscard]] Eigen::Index quantized_key_tokens() const noexcept;
  [[nodiscard]] Eigen::Index residual_key_tokens() const noexcept {
    return dim == 0 ? 0 : static_cast<Eigen::Index>(key_residual.size()) / dim;
  }
  [[nodiscard]] Eigen::Index quantized_value_tokens() const noexcept {
    return static_cast<Eigen::Index>(value_tokens.size());
  }
  [[nodiscard]] Eigen::Index residual_value_tokens() const noexcept {
    return dim == 0 ? 0 : static_cast<Eigen::Index>(value_residual.size()) / dim;
  }

  friend bool operator==(const HeadCache&, const HeadCache&) = default;
};

/// Prompt tensors of one (layer, KV head). Queries are given per query head
/// (several under grouped-query attention) and are row-stacked before the SVD.
struct PromptTensors {
  Eigen::MatrixXd keys;    // l x d, un-rotated
  Eigen::MatrixXd values;  // l x d
  std::vector<Eigen::MatrixXd> queries;  // each l_q x d, un-rotated
  std::vector<std::int32_t> positions;   // empty means 0..l-1 (also used for queries)
};

struct PrefillResult {
  HeadCache cache;
  std::shared_ptr<const SolverState> solver;
  QuerySubspace subspace;
};

/// Builds the query subspace from the prompt queries and precomputes the
/// solver state for the head.
[[nodiscard]] std::pair<QuerySubspace, std::shared_ptr<const SolverState>> build_solver(
    const PromptTensors& prompt, const CacheConfig& config);

/// Prefill with an existing solver state (batch sharing).
[[nodiscard]] HeadCache prefill_with_solver(const PromptTensors& prompt, const CacheConfig& config,
                                            const SolverState& solver);

/// Prefill: subspace + solver precompute, then the first l - (l mod R) key
/// tokens quantized in groups of G and the remainder kept in full precision.
[[nodiscard]] PrefillResult prefill(const PromptTensors& prompt, const CacheConfig& config);

/// Prefill for a batch of samples of the same head. Sample 0's solver is shared
/// by every sample unless config.per_sample_solver is set.
[[nodiscard]] std::vector<PrefillResult> prefill_batch(std::span<const PromptTensors> samples,
                                                       const CacheConfig& config);

/// Appends one decoded token. Keys flush when the buffer reaches R rows; the
/// oldest value row is quantized once the value window exceeds R rows.
void append_decode(HeadCache& cache, const SolverState& solver, const CacheConfig& config,
                   const Eigen::VectorXd& key, const Eigen::VectorXd& value,
                   std::int32_t position);

struct Materialized {
  Eigen::MatrixXd keys;    // n x d, rotated (what attention consumes)
  Eigen::MatrixXd values;  // n x d
};

/// Dequantized rows followed by residual rows, in token order.
[[nodiscard]] Materialized materialize(const HeadCache& cache, const CacheConfig& config);

/// Multi-layer, multi-head cache. heads[layer * kv_heads + head].
struct KVCache {
  CacheConfig config;
  Eigen::Index layers = 0;
  Eigen::Index kv_heads = 0;
  Eigen::Index dim = 0;
  std::vector<HeadCache> heads;

  [[nodiscard]] HeadCache& at(Eigen::Index layer, Eigen::Index head);
  [[nodiscard]] const HeadCache& at(Eigen::Index layer, Eigen::Index head) const;
};

// --- serialization -------------------------------------------------------

/// Writes `cache.json` plus little-endian blobs (key/value codes, f32
/// zero-point/scale pairs, f32 residual rows, i32 positions) into `dir`.
void save_cache(const KVCache& cache, const std::filesystem::path& dir);
[[nodiscard]] KVCache load_cache(const std::filesystem::path& dir);

/// Bytes of every blob save_cache would write (the manifest excluded).
[[nodiscard]] std::uint64_t serialized_payload_bytes(const KVCache& cache);

/// Blob file names produced by save_cache.
[[nodiscard]] std::span<const char* const> cache_blob_names();

// --- memory accounting ---------------------------------------------------

/// 2 * batch * seq_len * layers * heads * head_dim * bytes_per_param.
[[nodiscard]] std::uint64_t estimate_memory(std::uint64_t batch, std::uint64_t seq_len,
                                            std::uint64_t layers, std::uint64_t heads,
                                            std::uint64_t head_dim, std::uint64_t bytes_per_param);

struct TokenSplit {
  Eigen::Index quantized_keys = 0;
  Eigen::Index residual_keys = 0;
  Eigen::Index quantized_values = 0;
  Eigen::Index residual_values = 0;
};

/// Token counts after prefilling `prompt_len` tokens and decoding up to
/// `tokens` in total.
[[nodiscard]] TokenSplit expected_split(const CacheConfig& config, Eigen::Index prompt_len,
                                        Eigen::Index tokens);

/// Payload bytes of a cache built with `config`: codes, zero-points, scales,
/// residual rows and positions. Equals serialized_payload_bytes for such a cache.
[[nodiscard]] std::uint64_t estimate_quantized_size(const CacheConfig& config,
                                                    Eigen::Index prompt_len, Eigen::Index tokens,
                                                    Eigen::Index layers, Eigen::Index kv_heads,
                                                    Eigen::Index dim);

} // namespace squat
