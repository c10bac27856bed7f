#include "squat/cache.hpp"

#include "squat/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace squat {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(RopeMode mode) {
  return mode == RopeMode::post_rope ? "post-rope" : "pre-rope";
}

RopeMode parse_rope_mode(const std::string& text) {
  if (text == "post-rope") {
    return RopeMode::post_rope;
  }
  if (text == "pre-rope") {
    return RopeMode::pre_rope;
  }
  throw InvalidArgument("unknown RoPE mode '" + text + "' (expected post-rope or pre-rope)");
}

void CacheConfig::validate() const {
  if (bits < kMinBits || bits > kMaxBits) {
    throw InvalidArgument("bits must be in [1, 8], got " + std::to_string(bits));
  }
  if (group_size < 1) {
    throw InvalidArgument("group size G must be positive");
  }
  if (residual_len < 1) {
    throw InvalidArgument("residual length R must be positive");
  }
  if (residual_len % group_size != 0) {
    throw InvalidArgument("residual length R=" + std::to_string(residual_len) +
                          " must be divisible by group size G=" + std::to_string(group_size));
  }
  if (block < 1) {
    throw InvalidArgument("block size g must be positive");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw InvalidArgument("lambda must be finite and non-negative");
  }
  if (rank < 1) {
    throw InvalidArgument("subspace rank r must be positive");
  }
  if (!(rope_theta > 0.0)) {
    throw InvalidArgument("RoPE theta base must be positive");
  }
}

void CacheConfig::validate_for_dim(Index dim) const {
  validate();
  if (dim < 1) {
    throw InvalidArgument("head dimension must be positive");
  }
  if (dim % block != 0) {
    throw InvalidArgument("block size g=" + std::to_string(block) +
                          " must divide head dimension d=" + std::to_string(dim));
  }
  if (rank > dim) {
    throw InvalidArgument("subspace rank r=" + std::to_string(rank) +
                          " exceeds head dimension d=" + std::to_string(dim));
  }
  if (dim % 2 != 0) {
    throw InvalidArgument("head dimension d=" + std::to_string(dim) +
                          " must be even for the rotary embedding");
  }
}

Index HeadCache::quantized_key_tokens() const noexcept {
  Index n = 0;
  for (const auto& g : key_groups) {
    n += g.tokens;
  }
  return n;
}

namespace {

std::vector<std::int32_t> resolve_positions(const std::vector<std::int32_t>& given, Index rows) {
  if (given.empty()) {
    std::vector<std::int32_t> out(static_cast<std::size_t>(rows));
    for (Index i = 0; i < rows; ++i) {
      out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
    }
    return out;
  }
  if (static_cast<Index>(given.size()) != rows) {
    throw InvalidArgument("prompt positions do not match the prompt length");
  }
  return given;
}

void rotate(Eigen::Ref<MatrixXd> rows, const std::vector<std::int32_t>& positions, double theta) {
  std::vector<std::int64_t> wide(positions.begin(), positions.end());
  apply_rope_rows(rows, wide, theta);
}

// Cache inputs live in f32; everything quantized goes through that rounding
// first so prefill and token-by-token decoding see identical inputs.
MatrixXd round_to_f32(const MatrixXd& m) {
  return m.cast<float>().cast<double>();
}

void append_rows(std::vector<float>& dst, const MatrixXd& rows) {
  for (Index i = 0; i < rows.rows(); ++i) {
    for (Index j = 0; j < rows.cols(); ++j) {
      dst.push_back(static_cast<float>(rows(i, j)));
    }
  }
}

MatrixXd rows_of(const std::vector<float>& src, Index dim) {
  const Index n = static_cast<Index>(src.size()) / dim;
  MatrixXd out(n, dim);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < dim; ++j) {
      out(i, j) = static_cast<double>(src[static_cast<std::size_t>(i * dim + j)]);
    }
  }
  return out;
}

void quantize_key_rows(HeadCache& cache, const MatrixXd& rows, const SolverState& solver,
                       const CacheConfig& config) {
  const Index G = config.group_size;
  for (Index start = 0; start + G <= rows.rows(); start += G) {
    auto result = quantize_key_block(rows.middleRows(start, G), solver, config.bits);
    cache.key_groups.push_back(KeyGroup{G, std::move(result.channels)});
  }
}

ValueToken quantize_value_row(const VectorXd& row, const CacheConfig& config) {
  ValueToken token;
  const Index d = row.size();
  for (Index c = 0; c < d; c += config.group_size) {
    const Index len = std::min(config.group_size, d - c);
    token.groups.push_back(quantize_group(
        std::span<const double>(row.data() + c, static_cast<std::size_t>(len)), config.bits));
  }
  return token;
}

void check_solver(const SolverState& solver, const CacheConfig& config, Index dim) {
  if (solver.dim != dim || solver.block != config.block) {
    throw InvalidArgument("solver state does not match the cache dimension/block size");
  }
}

} // namespace

std::pair<QuerySubspace, std::shared_ptr<const SolverState>> build_solver(
    const PromptTensors& prompt, const CacheConfig& config) {
  if (prompt.queries.empty()) {
    throw InvalidArgument("prompt has no query tensors to build the subspace from");
  }
  const Index d = prompt.queries.front().cols();
  config.validate_for_dim(d);

  std::vector<MatrixXd> heads;
  heads.reserve(prompt.queries.size());
  for (const auto& q : prompt.queries) {
    if (q.rows() == 0) {
      throw InvalidArgument("prompt query matrix is empty");
    }
    MatrixXd m = q;
    if (config.mode == RopeMode::post_rope) {
      const auto pos = (static_cast<Index>(prompt.positions.size()) == q.rows())
                           ? prompt.positions
                           : resolve_positions({}, q.rows());
      rotate(m, pos, config.rope_theta);
    }
    heads.push_back(std::move(m));
  }
  auto sub = build_subspace(stack_queries(heads), config.rank);
  SolverOptions opts;
  opts.keep_inverse_sequence = false;
  auto solver = std::make_shared<const SolverState>(precompute(sub, config.lambda, config.block, opts));
  return {std::move(sub), std::move(solver)};
}

HeadCache prefill_with_solver(const PromptTensors& prompt, const CacheConfig& config,
                              const SolverState& solver) {
  const Index l = prompt.keys.rows();
  const Index d = prompt.keys.cols();
  if (l < 1) {
    throw InvalidArgument("prompt must contain at least one token");
  }
  if (prompt.values.rows() != l || prompt.values.cols() != d) {
    throw InvalidArgument("prompt keys and values have different shapes");
  }
  config.validate_for_dim(d);
  check_solver(solver, config, d);

  HeadCache cache;
  cache.dim = d;
  cache.positions = resolve_positions(prompt.positions, l);

  MatrixXd keys = prompt.keys;
  if (config.mode == RopeMode::post_rope) {
    rotate(keys, cache.positions, config.rope_theta);
  }
  keys = round_to_f32(keys);
  const MatrixXd values = round_to_f32(prompt.values);

  const Index remainder = l % config.residual_len;
  const Index quantized = l - remainder;
  quantize_key_rows(cache, keys.topRows(quantized), solver, config);
  append_rows(cache.key_residual, keys.bottomRows(remainder));

  const Index keep = std::min(l, config.residual_len);
  for (Index i = 0; i < l - keep; ++i) {
    cache.value_tokens.push_back(quantize_value_row(values.row(i).transpose(), config));
  }
  append_rows(cache.value_residual, values.bottomRows(keep));
  return cache;
}

PrefillResult prefill(const PromptTensors& prompt, const CacheConfig& config) {
  auto [sub, solver] = build_solver(prompt, config);
  if (solver->dim != prompt.keys.cols()) {
    throw InvalidArgument("query and key head dimensions differ");
  }
  PrefillResult out;
  out.cache = prefill_with_solver(prompt, config, *solver);
  out.solver = std::move(solver);
  out.subspace = std::move(sub);
  return out;
}

std::vector<PrefillResult> prefill_batch(std::span<const PromptTensors> samples,
                                         const CacheConfig& config) {
  std::vector<PrefillResult> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i == 0 || config.per_sample_solver) {
      out.push_back(prefill(samples[i], config));
    } else {
      PrefillResult r;
      r.cache = prefill_with_solver(samples[i], config, *out.front().solver);
      r.solver = out.front().solver;
      r.subspace = out.front().subspace;
      out.push_back(std::move(r));
    }
  }
  return out;
}

void append_decode(HeadCache& cache, const SolverState& solver, const CacheConfig& config,
                   const VectorXd& key, const VectorXd& value, std::int32_t position) {
  if (key.size() != cache.dim || value.size() != cache.dim) {
    throw InvalidArgument("decoded key/value dimension does not match the cache");
  }
  check_solver(solver, config, cache.dim);

  MatrixXd k = key.transpose();
  if (config.mode == RopeMode::post_rope) {
    rotate(k, {position}, config.rope_theta);
  }
  cache.positions.push_back(position);
  append_rows(cache.key_residual, k);
  if (cache.residual_key_tokens() == config.residual_len) {
    quantize_key_rows(cache, rows_of(cache.key_residual, cache.dim), solver, config);
    cache.key_residual.clear();
  }

  append_rows(cache.value_residual, value.transpose());
  if (cache.residual_value_tokens() > config.residual_len) {
    const MatrixXd oldest = rows_of(
        std::vector<float>(cache.value_residual.begin(), cache.value_residual.begin() + cache.dim),
        cache.dim);
    cache.value_tokens.push_back(quantize_value_row(oldest.row(0).transpose(), config));
    cache.value_residual.erase(cache.value_residual.begin(),
                               cache.value_residual.begin() + cache.dim);
  }
}

Materialized materialize(const HeadCache& cache, const CacheConfig& config) {
  const Index d = cache.dim;
  const Index n = cache.token_count();
  Materialized out;
  out.keys.resize(n, d);
  out.values.resize(n, d);
  if (n == 0) {
    return out;
  }

  Index row = 0;
  std::vector<double> column;
  for (const auto& group : cache.key_groups) {
    column.resize(static_cast<std::size_t>(group.tokens));
    for (Index c = 0; c < d; ++c) {
      dequantize_group_into(group.channels[static_cast<std::size_t>(c)], column);
      for (Index i = 0; i < group.tokens; ++i) {
        out.keys(row + i, c) = column[static_cast<std::size_t>(i)];
      }
    }
    row += group.tokens;
  }
  out.keys.bottomRows(n - row) = rows_of(cache.key_residual, d);
  if (config.mode == RopeMode::pre_rope) {
    rotate(out.keys, cache.positions, config.rope_theta);
  }

  row = 0;
  for (const auto& token : cache.value_tokens) {
    Index c = 0;
    for (const auto& group : token.groups) {
      const auto deq = dequantize_group(group);
      for (std::size_t j = 0; j < deq.size(); ++j) {
        out.values(row, c + static_cast<Index>(j)) = deq[j];
      }
      c += static_cast<Index>(group.len);
    }
    ++row;
  }
  out.values.bottomRows(n - row) = rows_of(cache.value_residual, d);
  return out;
}

HeadCache& KVCache::at(Index layer, Index head) {
  return const_cast<HeadCache&>(std::as_const(*this).at(layer, head));
}

const HeadCache& KVCache::at(Index layer, Index head) const {
  if (layer < 0 || layer >= layers || head < 0 || head >= kv_heads) {
    throw InvalidArgument("cache head index out of range");
  }
  return heads.at(static_cast<std::size_t>(layer * kv_heads + head));
}

std::uint64_t estimate_memory(std::uint64_t batch, std::uint64_t seq_len, std::uint64_t layers,
                              std::uint64_t heads, std::uint64_t head_dim,
                              std::uint64_t bytes_per_param) {
  return 2ull * batch * seq_len * layers * heads * head_dim * bytes_per_param;
}

TokenSplit expected_split(const CacheConfig& config, Index prompt_len, Index tokens) {
  config.validate();
  if (prompt_len < 0 || tokens < prompt_len) {
    throw InvalidArgument("token count must be at least the prompt length");
  }
  const Index R = config.residual_len;
  TokenSplit s;
  const Index remainder = prompt_len % R;
  const Index buffered = remainder + (tokens - prompt_len);
  s.quantized_keys = prompt_len - remainder + R * (buffered / R);
  s.residual_keys = buffered % R;
  s.residual_values = std::min(tokens, R);
  s.quantized_values = tokens - s.residual_values;
  return s;
}

std::uint64_t estimate_quantized_size(const CacheConfig& config, Index prompt_len, Index tokens,
                                      Index layers, Index kv_heads, Index dim) {
  const TokenSplit s = expected_split(config, prompt_len, tokens);
  const auto G = static_cast<std::uint64_t>(config.group_size);
  const auto d = static_cast<std::uint64_t>(dim);
  constexpr std::uint64_t kParamBytes = 2 * sizeof(float);

  std::uint64_t per_head = 0;
  const auto key_groups = static_cast<std::uint64_t>(s.quantized_keys) / G;
  per_head += key_groups * d * (packed_size(G, config.bits) + kParamBytes);

  std::uint64_t per_value_token = 0;
  for (std::uint64_t c = 0; c < d; c += G) {
    per_value_token += packed_size(std::min(G, d - c), config.bits) + kParamBytes;
  }
  per_head += static_cast<std::uint64_t>(s.quantized_values) * per_value_token;
  per_head += static_cast<std::uint64_t>(s.residual_keys + s.residual_values) * d * sizeof(float);
  per_head += static_cast<std::uint64_t>(tokens) * sizeof(std::int32_t);
  return per_head * static_cast<std::uint64_t>(layers) * static_cast<std::uint64_t>(kv_heads);
}

} // namespace squat
