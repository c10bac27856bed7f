// squat: command-line driver for the KV-cache quantizer.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or input error.

#include <squat/squat.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Dense>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using json = nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;

struct CacheFlags {
  int bits = 2;
  Index group_size = 32;
  Index residual = 32;
  Index block = 64;
  double lambda = 1e-3;
  Index rank = 5;
  std::string mode = "post-rope";
  double rope_theta = squat::kDefaultRopeTheta;

  void add_to(CLI::App& app) {
    app.add_option("--bits", bits, "Bits per code")->capture_default_str();
    app.add_option("--group-size", group_size, "G: tokens per key group / channels per value group")
        ->capture_default_str();
    app.add_option("--residual", residual, "R: full-precision residual length")->capture_default_str();
    app.add_option("--block", block, "g: channels per solver iteration")->capture_default_str();
    app.add_option("--lambda", lambda, "Subspace regularization weight")->capture_default_str();
    app.add_option("--rank", rank, "Query subspace rank r")->capture_default_str();
    app.add_option("--mode", mode, "Quantize after or before the rotary embedding")
        ->check(CLI::IsMember({"post-rope", "pre-rope"}))
        ->capture_default_str();
    app.add_option("--rope-theta", rope_theta, "Rotary embedding base")->capture_default_str();
  }

  [[nodiscard]] squat::CacheConfig config() const {
    squat::CacheConfig c;
    c.bits = bits;
    c.group_size = group_size;
    c.residual_len = residual;
    c.block = block;
    c.lambda = lambda;
    c.rank = rank;
    c.mode = squat::parse_rope_mode(mode);
    c.rope_theta = rope_theta;
    c.validate();
    return c;
  }
};

json config_json(const squat::CacheConfig& c) {
  return {{"bits", c.bits},         {"group_size", c.group_size}, {"residual_len", c.residual_len},
          {"block", c.block},       {"lambda", c.lambda},         {"rank", c.rank},
          {"mode", squat::to_string(c.mode)}, {"rope_theta", c.rope_theta}};
}

json summary_json(const squat::ReportSummary& s) {
  return {{"steps", s.steps},
          {"mean_score_diff", s.mean_score_diff},
          {"p95_score_diff", s.p95_score_diff},
          {"max_score_diff", s.max_score_diff},
          {"mean_logit_diff", s.mean_logit_diff},
          {"mean_actual_deviation", s.mean_actual_deviation},
          {"max_actual_deviation", s.max_actual_deviation},
          {"bound_violations", s.bound_violations}};
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw squat::InvalidArgument("cannot write " + path);
  }
  f << text;
}

// --- gen -------------------------------------------------------------------

struct GenArgs {
  squat::SyntheticSpec spec;
  std::string out;
};

int run_gen(const GenArgs& a) {
  const auto trace = squat::gen_synthetic(a.spec);
  squat::write_trace(trace, a.out);
  const auto& m = trace.manifest;
  const json j{{"out", a.out},
               {"layers", m.layers},
               {"kv_heads", m.kv_heads},
               {"query_heads", m.query_heads},
               {"head_dim", m.head_dim},
               {"tokens", m.tokens},
               {"prompt_len", m.prompt_len},
               {"true_rank", a.spec.true_rank},
               {"noise", a.spec.noise_level},
               {"seed", a.spec.seed}};
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

// --- quantize --------------------------------------------------------------

struct QuantizeArgs {
  std::string trace;
  std::string out;
  CacheFlags flags;
  bool baseline = false;
  bool save_subspaces = false;
};

int run_quantize(const QuantizeArgs& a) {
  auto config = a.flags.config();
  if (a.baseline) {
    config.lambda = 0.0;
  }
  const auto trace = squat::read_trace(a.trace);
  const auto& m = trace.manifest;
  config.validate_for_dim(m.head_dim);

  auto q = squat::quantize_trace(trace, config);
  const auto t0 = std::chrono::steady_clock::now();
  squat::save_cache(q.cache, a.out);
  const double save_ms = ms_since(t0);
  if (a.save_subspaces) {
    for (Index l = 0; l < m.layers; ++l) {
      for (Index h = 0; h < m.kv_heads; ++h) {
        squat::save_subspace(q.subspaces[static_cast<std::size_t>(l * m.kv_heads + h)],
                             std::filesystem::path(a.out) / "subspaces",
                             "layer" + std::to_string(l) + "_head" + std::to_string(h));
      }
    }
  }

  const std::uint64_t payload = squat::serialized_payload_bytes(q.cache);
  const std::uint64_t fp16 = static_cast<std::uint64_t>(m.tokens) * m.head_dim * 2 * m.kv_heads *
                             m.layers * 2;
  const auto split = squat::expected_split(config, m.prompt_len, m.tokens);
  const json j{
      {"out", a.out},
      {"config", config_json(config)},
      {"tokens", m.tokens},
      {"prompt_len", m.prompt_len},
      {"layers", m.layers},
      {"kv_heads", m.kv_heads},
      {"head_dim", m.head_dim},
      {"token_counts",
       {{"quantized_keys", split.quantized_keys},
        {"residual_keys", split.residual_keys},
        {"quantized_values", split.quantized_values},
        {"residual_values", split.residual_values}}},
      {"payload_bytes", payload},
      {"fp16_bytes", fp16},
      {"ratio", fp16 == 0 ? 0.0 : static_cast<double>(payload) / static_cast<double>(fp16)},
      {"timings_ms",
       {{"prefill", q.prefill_ms}, {"decode", q.decode_ms}, {"save", save_ms}}}};
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

// --- replay / compare ------------------------------------------------------

struct ReplayArgs {
  std::string trace;
  std::string cache;
  std::string out;
  std::string format = "json";
  bool no_vectors = false;
};

int run_replay(const ReplayArgs& a) {
  const auto trace = squat::read_trace(a.trace);
  const auto cache = squat::load_cache(a.cache);
  const auto report = squat::replay(trace, cache);
  emit(a.format == "csv" ? squat::report_to_csv(report)
                         : squat::report_to_json(report, !a.no_vectors),
       a.out);
  if (!a.out.empty() && a.out != "-") {
    std::cout << json{{"out", a.out}, {"summary", summary_json(report.summary())}}.dump(2) << '\n';
  }
  return kExitOk;
}

struct CompareArgs {
  std::string trace;
  CacheFlags flags;
  std::string out;
  std::string format = "json";
};

int run_compare(const CompareArgs& a) {
  const auto config = a.flags.config();
  auto baseline = config;
  baseline.lambda = 0.0;
  const auto trace = squat::read_trace(a.trace);
  const auto cmp = squat::compare_quantizers(trace, config, baseline);
  if (a.format == "csv") {
    std::ostringstream out;
    out << "# squat-compare v1\n";
    out << "quantizer,metric,value\n";
    out.precision(17);
    for (const auto& [name, s] :
         {std::pair{"squat", cmp.squat_summary}, std::pair{"baseline", cmp.baseline_summary}}) {
      const json fields = summary_json(s);
      for (const auto& [key, value] : fields.items()) {
        out << name << ',' << key << ',' << value.dump() << '\n';
      }
    }
    emit(out.str(), a.out);
  } else {
    const json j{{"config", config_json(config)},
                 {"squat", summary_json(cmp.squat_summary)},
                 {"baseline", summary_json(cmp.baseline_summary)}};
    emit(j.dump(2) + "\n", a.out);
  }
  return kExitOk;
}

// --- verify ----------------------------------------------------------------

struct VerifyArgs {
  std::vector<Index> dims{8, 16, 32};
  std::vector<Index> ranks{2, 4, 8};
  std::vector<Index> blocks{1, 2, 4, 8};
  std::vector<double> lambdas{1e-4, 1e-3, 1e-2};
  int instances = 500;
  std::uint64_t seed = 0;
  double kkt_tol = 1e-8;
  double downdate_tol = 1e-9;
};

struct Combo {
  Index d, r, g;
  double lambda;
};

int run_verify(const VerifyArgs& a) {
  for (double l : a.lambdas) {
    if (!(l >= 0.0)) {
      throw squat::InvalidArgument("lambda must be non-negative, got " + std::to_string(l));
    }
  }
  std::vector<Combo> combos;
  for (Index d : a.dims) {
    for (Index r : a.ranks) {
      for (Index g : a.blocks) {
        for (double l : a.lambdas) {
          if (d >= 1 && r >= 1 && r <= d && g >= 1 && d % g == 0) {
            combos.push_back({d, r, g, l});
          }
        }
      }
    }
  }
  if (combos.empty() || a.instances < 1) {
    throw squat::InvalidArgument("no valid (d, r, g, lambda) combination to verify");
  }

  double kkt_max = 0.0;
  double down_max = 0.0;
  json failure;
  for (int i = 0; i < a.instances && failure.is_null(); ++i) {
    const Combo c = combos[static_cast<std::size_t>(i) % combos.size()];
    const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(i);
    squat::Rng rng(seed);
    auto gaussian = [&](Index rows, Index cols, double s) {
      MatrixXd m(rows, cols);
      for (Index x = 0; x < rows; ++x) {
        for (Index y = 0; y < cols; ++y) {
          m(x, y) = s * rng.normal();
        }
      }
      return m;
    };
    const MatrixXd q_hat = gaussian(c.r, c.d, rng.uniform(1.0, 10.0));
    const MatrixXd keys = gaussian(4, c.d, 1.0);
    const int bits = static_cast<int>(rng.integer(2, 4));

    squat::SolverOptions opts;
    const auto state = squat::precompute(q_hat, c.lambda, c.g, opts);

    double kkt = 0.0;
    (void)squat::quantize_key_block(
        keys, state, bits, [&](Index t, const MatrixXd& before, const MatrixXd& after) {
          const Index prefix = (t - 1) * c.g;
          for (Index row = 0; row < before.rows(); ++row) {
            const Eigen::VectorXd ref = squat::kkt_oracle(
                before.row(row).transpose(), prefix,
                after.row(row).segment(prefix, c.g).transpose(), q_hat, c.lambda);
            kkt = std::max(kkt, (after.row(row).transpose() - ref).cwiseAbs().maxCoeff());
          }
        });

    double down = 0.0;
    for (Index t = 1; t <= state.iterations; ++t) {
      const Index tg = t * c.g;
      const MatrixXd ref = state.p_inv.topLeftCorner(tg, tg).colPivHouseholderQr().inverse();
      const auto& got = state.a_inv_seq[static_cast<std::size_t>(t - 1)];
      down = std::max(down, (got - ref).norm() / ref.norm());
    }
    kkt_max = std::max(kkt_max, kkt);
    down_max = std::max(down_max, down);
    if (!(kkt <= a.kkt_tol) || !(down <= a.downdate_tol)) {
      failure = {{"seed", seed},    {"d", c.d},           {"r", c.r},
                 {"g", c.g},        {"lambda", c.lambda}, {"kkt_residual", kkt},
                 {"downdate_residual", down}};
    }
  }

  json j{{"instances", a.instances},
         {"kkt", {{"max_residual", kkt_max}, {"tolerance", a.kkt_tol}}},
         {"downdate", {{"max_relative_error", down_max}, {"tolerance", a.downdate_tol}}},
         {"passed", failure.is_null()}};
  if (!failure.is_null()) {
    j["failure"] = failure;
  }
  std::cout << j.dump(2) << '\n';
  return failure.is_null() ? kExitOk : kExitVerifyFailed;
}

// --- estimate --------------------------------------------------------------

struct EstimateArgs {
  std::uint64_t batch = 4;
  std::uint64_t len = 2048;
  std::uint64_t layers = 32;
  std::uint64_t heads = 32;
  std::uint64_t head_dim = 128;
  std::uint64_t bytes = 2;
  std::int64_t prompt_len = -1;
  bool quantized = false;
  CacheFlags flags;
};

std::string human_bytes(std::uint64_t n) {
  constexpr const char* units[] = {"B", "KiB", "MiB", "GiB", "TiB"};
  double v = static_cast<double>(n);
  int u = 0;
  while (v >= 1024.0 && u < 4) {
    v /= 1024.0;
    ++u;
  }
  char buf[64];
  if (v == static_cast<double>(static_cast<std::uint64_t>(v))) {
    std::snprintf(buf, sizeof buf, "%llu %s", static_cast<unsigned long long>(v), units[u]);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f %s", v, units[u]);
  }
  return buf;
}

int run_estimate(const EstimateArgs& a) {
  const std::uint64_t fp = squat::estimate_memory(a.batch, a.len, a.layers, a.heads, a.head_dim,
                                                  a.bytes);
  json j{{"batch", a.batch},   {"len", a.len},         {"layers", a.layers},
         {"heads", a.heads},   {"head_dim", a.head_dim}, {"bytes_per_param", a.bytes},
         {"bytes", fp},        {"human", human_bytes(fp)}};
  if (a.quantized) {
    const auto config = a.flags.config();
    const auto len = static_cast<Index>(a.len);
    const Index prompt = a.prompt_len < 0 ? len : static_cast<Index>(a.prompt_len);
    const std::uint64_t q =
        a.batch * squat::estimate_quantized_size(config, prompt, len, static_cast<Index>(a.layers),
                                                 static_cast<Index>(a.heads),
                                                 static_cast<Index>(a.head_dim));
    j["quantized"] = {{"config", config_json(config)},
                      {"prompt_len", prompt},
                      {"bytes", q},
                      {"human", human_bytes(q)},
                      {"ratio_vs_fp16",
                       fp == 0 ? 0.0
                               : static_cast<double>(q) /
                                     static_cast<double>(squat::estimate_memory(
                                         a.batch, a.len, a.layers, a.heads, a.head_dim, 2))}};
  }
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"SQuat KV-cache quantizer and attention replay harness"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic low-rank-query trace");
  gen_cmd->add_option("--tokens", gen.spec.tokens, "Tokens per sequence")->capture_default_str();
  gen_cmd->add_option("--dim", gen.spec.dim, "Head dimension")->capture_default_str();
  gen_cmd->add_option("--rank", gen.spec.true_rank, "Rank of the query structure")
      ->capture_default_str();
  gen_cmd->add_option("--noise", gen.spec.noise_level, "Gaussian noise level on queries")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--prompt-len", gen.spec.prompt_len, "Prompt tokens (default: half)");
  gen_cmd->add_option("--layers", gen.spec.layers)->capture_default_str();
  gen_cmd->add_option("--kv-heads", gen.spec.kv_heads)->capture_default_str();
  gen_cmd->add_option("--query-heads", gen.spec.query_heads)->capture_default_str();
  gen_cmd->add_flag("--normalize", gen.spec.normalize_queries, "Unit-normalize query rows");
  gen_cmd->add_option("--out", gen.out, "Output trace directory")->required();

  QuantizeArgs quant;
  auto* quant_cmd = app.add_subcommand("quantize", "Run prefill + decode over a trace, save the cache");
  quant_cmd->add_option("--trace", quant.trace, "Trace directory")->required();
  quant_cmd->add_option("--out", quant.out, "Cache output directory")->required();
  quant.flags.add_to(*quant_cmd);
  quant_cmd->add_flag("--baseline", quant.baseline, "Plain quantization (forces lambda = 0)");
  quant_cmd->add_flag("--save-subspaces", quant.save_subspaces,
                      "Also write the per-head query subspaces");

  ReplayArgs rep;
  auto* rep_cmd = app.add_subcommand("replay", "Attention replay of a trace against a saved cache");
  rep_cmd->add_option("--trace", rep.trace, "Trace directory")->required();
  rep_cmd->add_option("--cache", rep.cache, "Cache directory")->required();
  rep_cmd->add_option("--out", rep.out, "Report file (default: stdout)");
  rep_cmd->add_option("--format", rep.format)
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  rep_cmd->add_flag("--no-vectors", rep.no_vectors, "Omit per-token score/logit vectors in JSON");

  CompareArgs cmp;
  auto* cmp_cmd =
      app.add_subcommand("compare", "Replay the configured quantizer and its lambda = 0 baseline");
  cmp_cmd->add_option("--trace", cmp.trace, "Trace directory")->required();
  cmp.flags.add_to(*cmp_cmd);
  cmp_cmd->add_option("--out", cmp.out, "Output file (default: stdout)");
  cmp_cmd->add_option("--format", cmp.format)
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  VerifyArgs ver;
  auto* ver_cmd = app.add_subcommand("verify", "Check closed-form updates against the KKT and inverse oracles");
  ver_cmd->add_option("--dims", ver.dims)->delimiter(',')->capture_default_str();
  ver_cmd->add_option("--ranks", ver.ranks)->delimiter(',')->capture_default_str();
  ver_cmd->add_option("--blocks", ver.blocks)->delimiter(',')->capture_default_str();
  ver_cmd->add_option("--lambda", ver.lambdas, "One or more lambdas")
      ->delimiter(',')
      ->capture_default_str();
  ver_cmd->add_option("--instances", ver.instances)->capture_default_str();
  ver_cmd->add_option("--seed", ver.seed)->capture_default_str();
  ver_cmd->add_option("--kkt-tol", ver.kkt_tol)->capture_default_str();
  ver_cmd->add_option("--downdate-tol", ver.downdate_tol)->capture_default_str();

  EstimateArgs est;
  auto* est_cmd = app.add_subcommand("estimate", "KV-cache memory for a model shape");
  est_cmd->add_option("--batch", est.batch)->capture_default_str();
  est_cmd->add_option("--len", est.len, "Sequence length")->capture_default_str();
  est_cmd->add_option("--layers", est.layers)->capture_default_str();
  est_cmd->add_option("--heads", est.heads, "KV heads")->capture_default_str();
  est_cmd->add_option("--head-dim", est.head_dim)->capture_default_str();
  est_cmd->add_option("--bytes", est.bytes, "Bytes per parameter")->capture_default_str();
  est_cmd->add_flag("--quantized", est.quantized, "Also estimate the quantized cache size");
  est_cmd->add_option("--prompt-len", est.prompt_len, "Prompt length for the quantized estimate");
  est.flags.add_to(*est_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    (void)app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*quant_cmd) return run_quantize(quant);
    if (*rep_cmd) return run_replay(rep);
    if (*cmp_cmd) return run_compare(cmp);
    if (*ver_cmd) return run_verify(ver);
    if (*est_cmd) return run_estimate(est);
  } catch (const squat::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
