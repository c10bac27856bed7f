#include <squat/error.hpp>
#include <squat/pipeline.hpp>

#include <gtest/gtest.h>

using namespace squat;

namespace {

Trace small_trace(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.tokens = 96;
  s.dim = 16;
  s.true_rank = 3;
  s.seed = seed;
  s.layers = 2;
  s.kv_heads = 2;
  s.query_heads = 4;
  s.prompt_len = 40;
  return gen_synthetic(s);
}

CacheConfig small_config() {
  CacheConfig c;
  c.group_size = 8;
  c.residual_len = 16;
  c.block = 4;
  c.rank = 4;
  return c;
}

} // namespace

TEST(Pipeline, QuantizeTraceCounts) {
  const auto t = small_trace();
  const auto q = quantize_trace(t, small_config());
  ASSERT_EQ(q.cache.heads.size(), 4u);
  ASSERT_EQ(q.subspaces.size(), 4u);
  const auto split = expected_split(small_config(), 40, 96);
  for (const auto& h : q.cache.heads) {
    EXPECT_EQ(h.token_count(), 96);
    EXPECT_EQ(h.quantized_key_tokens(), split.quantized_keys);
    EXPECT_EQ(h.residual_value_tokens(), split.residual_values);
    EXPECT_EQ(h.positions.back(), 95);
  }
  EXPECT_GE(q.prefill_ms, 0.0);
}

TEST(Pipeline, ReplayCoversEveryDecodeQuery) {
  const auto t = small_trace();
  const auto q = quantize_trace(t, small_config());
  const auto report = replay(t, q.cache);
  ASSERT_EQ(report.steps.size(), static_cast<std::size_t>(2 * 4 * (96 - 40)));
  const auto& first = report.steps.front();
  EXPECT_EQ(first.step, 40);
  EXPECT_EQ(first.score_abs_diff.size(), 41u);
  EXPECT_EQ(report.summary().bound_violations, 0);
  EXPECT_GT(report.summary().mean_score_diff, 0.0);
}

TEST(Pipeline, SameQuantizerGivesIdenticalReports) {
  const auto t = small_trace();
  auto c = small_config();
  c.lambda = 0.0;
  const auto cmp = compare_quantizers(t, c, c);
  ASSERT_EQ(cmp.squat.steps.size(), cmp.baseline.steps.size());
  for (std::size_t i = 0; i < cmp.squat.steps.size(); ++i) {
    ASSERT_EQ(cmp.squat.steps[i].score_abs_diff, cmp.baseline.steps[i].score_abs_diff);
    ASSERT_EQ(cmp.squat.steps[i].actual_deviation, cmp.baseline.steps[i].actual_deviation);
  }
}

TEST(Pipeline, UnquantizedCacheReplaysExactly) {
  const auto t = small_trace();
  auto c = small_config();
  c.residual_len = 128;
  c.mode = RopeMode::pre_rope;
  // Keys never flush; values still slide past R = 128 > 96 tokens, so nothing is quantized.
  const auto report = replay(t, quantize_trace(t, c).cache);
  for (const auto& s : report.steps) {
    for (double x : s.score_abs_diff) {
      ASSERT_EQ(x, 0.0);
    }
    ASSERT_EQ(s.actual_deviation, 0.0);
  }

  c.mode = RopeMode::post_rope;
  const auto post = replay(t, quantize_trace(t, c).cache);
  EXPECT_LE(post.summary().max_score_diff, 1e-6);
}

TEST(Pipeline, ShapeMismatchIsRejected) {
  const auto t = small_trace();
  auto q = quantize_trace(t, small_config());
  auto other = t;
  other.manifest.head_dim = 8;
  EXPECT_THROW((void)replay(other, q.cache), InvalidArgument);
  q.cache.heads[0].positions.pop_back();
  EXPECT_THROW((void)replay(t, q.cache), InvalidArgument);

  auto no_prompt = t;
  no_prompt.manifest.prompt_len = 0;
  EXPECT_THROW((void)quantize_trace(no_prompt, small_config()), InvalidArgument);
}
