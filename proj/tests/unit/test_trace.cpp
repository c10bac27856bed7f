#include <squat/error.hpp>
#include <squat/random.hpp>
#include <squat/subspace.hpp>
#include <squat/trace.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>

using namespace squat;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("squat_trace_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

Trace random_trace(Rng& rng, const TraceManifest& m) {
  Trace t;
  t.manifest = m;
  for (Index l = 0; l < m.layers; ++l) {
    LayerTensors lt;
    auto fill = [&](std::vector<float>& v, Index heads) {
      v.resize(static_cast<std::size_t>(m.tokens * heads * m.head_dim));
      for (auto& x : v) {
        x = static_cast<float>(rng.normal());
      }
    };
    fill(lt.q, m.query_heads);
    fill(lt.k, m.kv_heads);
    fill(lt.v, m.kv_heads);
    t.layers.push_back(std::move(lt));
  }
  return t;
}

} // namespace

TEST(Trace, RoundTripFuzz) {
  Rng rng(1);
  const auto dir = temp_dir("fuzz");
  for (int trial = 0; trial < 100; ++trial) {
    TraceManifest m;
    m.layers = rng.integer(1, 3);
    m.kv_heads = rng.integer(1, 3);
    m.query_heads = m.kv_heads * rng.integer(1, 3);
    m.head_dim = rng.integer(1, 16);
    m.tokens = rng.integer(0, 20);
    m.prompt_len = rng.integer(0, m.tokens);
    const auto t = random_trace(rng, m);
    std::filesystem::remove_all(dir);
    write_trace(t, dir);
    ASSERT_EQ(read_trace(dir), t) << trial;
  }
}

TEST(Trace, EmptyTrace) {
  TraceManifest m;
  m.head_dim = 8;
  m.tokens = 0;
  Rng rng(2);
  const auto t = random_trace(rng, m);
  const auto dir = temp_dir("empty");
  write_trace(t, dir);
  EXPECT_EQ(std::filesystem::file_size(dir / "k_layer0.bin"), 0u);
  EXPECT_EQ(read_trace(dir), t);
}

TEST(Trace, HeadSlicing) {
  TraceManifest m;
  m.kv_heads = 2;
  m.query_heads = 4;
  m.head_dim = 3;
  m.tokens = 5;
  Rng rng(3);
  const auto t = random_trace(rng, m);
  const MatrixXd k1 = t.keys(0, 1);
  ASSERT_EQ(k1.rows(), 5);
  for (Index tok = 0; tok < 5; ++tok) {
    for (Index j = 0; j < 3; ++j) {
      EXPECT_EQ(k1(tok, j), t.layers[0].k[static_cast<std::size_t>((tok * 2 + 1) * 3 + j)]);
    }
  }
  EXPECT_EQ(t.queries(0, 3, 2, 2), t.queries(0, 3).middleRows(2, 2));
  EXPECT_EQ(m.group_factor(), 2);
  EXPECT_THROW((void)t.keys(0, 2), InvalidArgument);
  EXPECT_THROW((void)t.values(0, 0, 4, 3), InvalidArgument);
}

TEST(Trace, CorruptManifestNamesTheBlob) {
  SyntheticSpec s;
  s.tokens = 16;
  s.dim = 8;
  const auto dir = temp_dir("corrupt");
  write_trace(gen_synthetic(s), dir);
  nlohmann::json j;
  {
    std::ifstream f(dir / "manifest.json");
    f >> j;
  }
  j["tokens"] = 17;
  {
    std::ofstream f(dir / "manifest.json");
    f << j.dump();
  }
  try {
    (void)read_trace(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("q_layer0.bin"), std::string::npos) << msg;
    EXPECT_NE(msg.find("offset"), std::string::npos) << msg;
  }
}

TEST(Trace, TruncatedBlob) {
  SyntheticSpec s;
  s.tokens = 16;
  s.dim = 8;
  const auto dir = temp_dir("trunc");
  write_trace(gen_synthetic(s), dir);
  std::filesystem::resize_file(dir / "v_layer0.bin", 100);
  try {
    (void)read_trace(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("v_layer0.bin"), std::string::npos) << msg;
    EXPECT_NE(msg.find("100"), std::string::npos) << msg;
  }
}

TEST(Trace, ShapeMismatchOnWrite) {
  TraceManifest m;
  m.head_dim = 4;
  m.tokens = 3;
  Rng rng(4);
  auto t = random_trace(rng, m);
  t.layers[0].v.pop_back();
  EXPECT_THROW(write_trace(t, temp_dir("bad")), InvalidArgument);
  TraceManifest g;
  g.kv_heads = 2;
  g.query_heads = 3;
  g.head_dim = 4;
  EXPECT_THROW(g.validate(), InvalidArgument);
}

TEST(Trace, GeneratorIsDeterministic) {
  SyntheticSpec s;
  s.tokens = 64;
  s.dim = 16;
  s.seed = 99;
  s.layers = 2;
  s.kv_heads = 2;
  s.query_heads = 4;
  EXPECT_EQ(gen_synthetic(s), gen_synthetic(s));
  auto other = s;
  other.seed = 100;
  EXPECT_NE(gen_synthetic(s).layers[0].q, gen_synthetic(other).layers[0].q);
}

TEST(Trace, NoiselessQueriesHaveExactRank) {
  SyntheticSpec s;
  s.tokens = 128;
  s.dim = 32;
  s.true_rank = 3;
  s.noise_level = 0.0;
  const auto t = gen_synthetic(s);
  const auto spec = analyze_queries(t.queries(0, 0));
  EXPECT_LE(spec.singular_values(3) / spec.singular_values(0), 1e-6);
  EXPECT_GT(spec.singular_values(2) / spec.singular_values(0), 1e-2);
}

TEST(Trace, KeysAndValuesHaveUnitRms) {
  SyntheticSpec s;
  s.tokens = 100;
  s.dim = 16;
  const auto t = gen_synthetic(s);
  double sum = 0.0;
  for (float x : t.layers[0].k) {
    sum += static_cast<double>(x) * x;
  }
  EXPECT_NEAR(std::sqrt(sum / static_cast<double>(t.layers[0].k.size())), 1.0, 1e-6);
  EXPECT_EQ(t.manifest.prompt_len, 50);
}

TEST(Trace, DeviationCurveFlattensAfterTrueRank) {
  SyntheticSpec s;
  s.tokens = 256;
  s.dim = 64;
  s.true_rank = 5;
  s.noise_level = 0.05;
  const auto t = gen_synthetic(s);
  const MatrixXd q = t.queries(0, 0);
  const auto curve = deviation_curve(analyze_queries(q), q, 30);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    EXPECT_LE(curve[i], curve[i - 1]);
  }
  const double drop_before = curve[0] - curve[4];
  const double drop_after = curve[4] - curve[29];
  EXPECT_GT(drop_before, 5.0 * drop_after);
}

TEST(Trace, SubspaceRoundTrip) {
  Rng rng(5);
  const auto sub = build_subspace(oracle::gaussian(rng, 40, 12), 4);
  const auto dir = temp_dir("sub");
  save_subspace(sub, dir, "layer0_head0");
  const auto back = load_subspace(dir, "layer0_head0");
  EXPECT_EQ(back.rank, sub.rank);
  EXPECT_EQ(back.dim, 12);
  EXPECT_LE((back.orthonormal_basis - sub.orthonormal_basis).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_LE((back.basis - sub.basis).cwiseAbs().maxCoeff(), 1e-6 * sub.singular_values(0));
}
