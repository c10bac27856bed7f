#pragma once

#include "squat/subspace.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace squat {

/// Shape description stored as `manifest.json` next to the tensor blobs.
struct TraceManifest {
  Eigen::Index layers = 1;
  Eigen::Index kv_heads = 1;
  Eigen::Index query_heads = 1;
  Eigen::Index head_dim = 0;
  Eigen::Index tokens = 0;
  Eigen::Index prompt_len = 0;
  std::string dtype = "f32";
  std::string layout = "row-major";
  std::string endianness = "little";

  void validate() const;
  /// Query heads served by one KV head.
  [[nodiscard]] Eigen::Index group_factor() const noexcept { return query_heads / kv_heads; }

  friend bool operator==(const TraceManifest&, const TraceManifest&) = default;
};

/// Un-rotated Q/K/V of one layer, each laid out [token, head, dim].
struct LayerTensors {
  std::vector<float> q;  // tokens x query_heads x head_dim
  std::vector<float> k;  // tokens x kv_heads x head_dim
  std::vector<float> v;  // tokens x kv_heads x head_dim

  friend bool operator==(const LayerTensors&, const LayerTensors&) = default;
};

struct Trace {
  TraceManifest manifest;
  std::vector<LayerTensors> layers;

  /// Throws InvalidArgument when a tensor's size disagrees with the manifest.
  void validate_shapes() const;

  /// Rows [begin, begin + count) of one head as a count x head_dim matrix;
  /// count < 0 means "to the last token".
  [[nodiscard]] Eigen::MatrixXd queries(Eigen::Index layer, Eigen::Index query_head,
                                        Eigen::Index begin = 0, Eigen::Index count = -1) const;
  [[nodiscard]] Eigen::MatrixXd keys(Eigen::Index layer, Eigen::Index kv_head,
                                     Eigen::Index begin = 0, Eigen::Index count = -1) const;
  [[nodiscard]] Eigen::MatrixXd values(Eigen::Index layer, Eigen::Index kv_head,
                                       Eigen::Index begin = 0, Eigen::Index count = -1) const;

  friend bool operator==(const Trace&, const Trace&) = default;
};

/// Directory layout: manifest.json, q_layer{i}.bin, k_layer{i}.bin, v_layer{i}.bin.
void write_trace(const Trace& trace, const std::filesystem::path& dir);
[[nodiscard]] Trace read_trace(const std::filesystem::path& dir);

/// Synthetic trace whose queries lie near a low-dimensional subspace.
struct SyntheticSpec {
  Eigen::Index tokens = 256;
  Eigen::Index dim = 64;
  Eigen::Index true_rank = 5;
  double noise_level = 0.05;
  std::uint64_t seed = 0;
  Eigen::Index prompt_len = -1;  // < 0: half of the tokens
  Eigen::Index layers = 1;
  Eigen::Index kv_heads = 1;
  Eigen::Index query_heads = 1;
  bool normalize_queries = false;

  void validate() const;
};

/// Queries of each query head: (tokens x rank)(rank x d) factors with unit
/// entry variance plus noise_level * N(0, 1), optionally row-normalized. Keys
/// and values are i.i.d. Gaussian rescaled to unit RMS per layer.
[[nodiscard]] Trace gen_synthetic(const SyntheticSpec& spec);

/// `<stem>.json` (rank, dim, singular values) plus `<stem>.bin` holding the f32
/// orthonormal basis rows.
void save_subspace(const QuerySubspace& sub, const std::filesystem::path& dir,
                   const std::string& stem);
[[nodiscard]] QuerySubspace load_subspace(const std::filesystem::path& dir, const std::string& stem);

} // namespace squat
