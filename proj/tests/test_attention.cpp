#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "yolo_former/gradcheck.hpp"

using namespace yf;
using namespace fixture;

namespace {

const CsamVariant kAll[] = {CsamVariant::single_head, CsamVariant::multi_branch, CsamVariant::multi_head,
                            CsamVariant::multi_head_multi_branch};

}  // namespace

TEST(Csam, PreservesShapeForEveryVariant) {
  for (auto v : kAll) {
    ParamStore<float> store;
    SeededRng rng(1);
    Csam<float> csam(store, "csam", CsamConfig{v, 8}, rng);
    Context<float> ctx;
    ctx.mode = Mode::train;
    auto y = csam(ctx, random_input<float>({2, 8, 6, 6}, rng));
    EXPECT_EQ(y.shape(), (Shape{2, 8, 6, 6})) << to_string(v);
  }
}

TEST(Csam, ConfigValidation) {
  EXPECT_THROW((CsamConfig{CsamVariant::multi_head, 6}.validate()), std::invalid_argument);
  EXPECT_THROW((CsamConfig{CsamVariant::single_head, 8, 4, true}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((CsamConfig{CsamVariant::multi_head_multi_branch, 8, 4, true}.validate()));
  EXPECT_THROW((TransformerConfig{4, 16, CsamConfig{CsamVariant::single_head, 8}}.validate()), std::invalid_argument);
  EXPECT_EQ(parse_variant("mhmb"), CsamVariant::multi_head_multi_branch);
  EXPECT_THROW(parse_variant("xx"), std::invalid_argument);
}

TEST(Csam, ShakeCoefficientsOnNonBranchVariantAreRejected) {
  ParamStore<float> store;
  SeededRng rng(2);
  Csam<float> csam(store, "csam", CsamConfig{CsamVariant::multi_head, 8}, rng);
  Context<float> ctx;
  ctx.shake_override = ShakeCoefficients{};
  EXPECT_THROW(csam(ctx, random_input<float>({1, 8, 4, 4}, rng)), std::invalid_argument);
}

TEST(Csam, ZeroedConv4IsBitIdentity) {
  for (auto v : kAll) EXPECT_TRUE(run_bypass(v, 3, 10)) << to_string(v);
}

TEST(Csam, ZeroQueryAndKeyGatesGiveHalfAttention) {
  ParamStore<double> store;
  SeededRng rng(4);
  Csam<double> csam(store, "csam", CsamConfig{CsamVariant::single_head, 8}, rng);
  randomize(store, rng);
  for (auto& p : store.params())
    if (p.name.starts_with("csam.q.") || p.name.starts_with("csam.k.")) fill(p, 0.0);
  for (auto& b : store.buffers())
    if (b.name.starts_with("csam.q.") || b.name.starts_with("csam.k."))
      std::fill(b.values.begin(), b.values.end(), b.name.ends_with("running_var") ? 1.0 : 0.0);
  Context<double> ctx;
  CsamTrace<double> trace;
  (void)csam(ctx, random_input<double>({2, 8, 5, 5}, rng), &trace);
  for (double a : trace.attention.values()) ASSERT_EQ(a, 0.5);
  for (std::size_t i = 0; i < trace.value.numel(); ++i) ASSERT_EQ(trace.gated.values()[i], 0.5 * trace.value.values()[i]);
}

TEST(Csam, AttentionMapStrictlyInsideUnitInterval) {
  for (auto v : kAll) {
    ParamStore<float> store;
    SeededRng rng(5);
    Csam<float> csam(store, "csam", CsamConfig{v, 8}, rng);
    randomize(store, rng, 2.0);
    Context<float> ctx;
    CsamTrace<float> trace;
    (void)csam(ctx, random_input<float>({2, 8, 6, 6}, rng, 10.0), &trace);
    for (float a : trace.attention.values()) {
      ASSERT_GT(a, 0.0f);
      ASSERT_LT(a, 1.0f);
    }
  }
}

TEST(Csam, VariantCollapse) {
  for (Mode mode : {Mode::eval, Mode::train}) {
    const auto r = run_collapse(6, mode);
    EXPECT_TRUE(r.mb_to_sh);
    EXPECT_TRUE(r.mhmb_to_mh);
    EXPECT_LE(r.block_diagonal, 1e-5);
  }
}

TEST(Shake, CoefficientSampling) {
  SeededRng a(7, 1, 5), b(7, 1, 5);
  const auto ca = sample_shake_coefficients(a, Mode::train), cb = sample_shake_coefficients(b, Mode::train);
  EXPECT_EQ(ca.forward, cb.forward);
  EXPECT_EQ(ca.backward, cb.backward);
  EXPECT_NE(ca.forward, ca.backward);
  const auto e = sample_shake_coefficients(a, Mode::eval);
  EXPECT_EQ(e.forward, (std::array<double, 2>{0.5, 0.5}));
  EXPECT_EQ(e.backward, (std::array<double, 2>{0.5, 0.5}));

  SeededRng rng(8);
  double fwd = 0, bwd = 0;
  for (int i = 0; i < 10000; ++i) {
    fwd += sample_shake_pair(rng, ShakePhase::train_forward)[0];
    bwd += sample_shake_pair(rng, ShakePhase::train_backward)[1];
  }
  EXPECT_NEAR(fwd / 10000, 0.5, 0.02);
  EXPECT_NEAR(bwd / 10000, 0.5, 0.02);
}

TEST(Shake, EvalIsDeterministicAndTrainIsLinearInCoefficients) {
  ParamStore<double> store;
  SeededRng rng(9);
  CsamConfig cfg{CsamVariant::multi_branch, 8, 4, true};
  Psi<double> psi(store, "psi", cfg, rng);
  randomize(store, rng);
  const auto x = random_input<double>({2, 8, 5, 5}, rng);
  Context<double> ev;
  auto e1 = psi(ev, x), e2 = psi(ev, x);
  for (std::size_t i = 0; i < e1.numel(); ++i) ASSERT_EQ(e1.values()[i], e2.values()[i]);

  auto with = [&](double p, double q) {
    Context<double> ctx;
    ctx.mode = Mode::train;
    ctx.bn.update_running_stats = false;
    ctx.shake_override = ShakeCoefficients{{p, q}, {p, q}, Mode::train};
    return psi(ctx, x);
  };
  const double alpha = 0.3;
  auto mixed = with(alpha, 1 - alpha), only_b = with(1, 0), only_c = with(0, 1);
  for (std::size_t i = 0; i < mixed.numel(); ++i)
    ASSERT_NEAR(mixed.values()[i], alpha * only_b.values()[i] + (1 - alpha) * only_c.values()[i], 1e-12);
}

TEST(Transformer, ShapeAndDoubleResidualPassThrough) {
  ParamStore<float> store;
  SeededRng rng(10);
  TransformerConfig cfg{4, 16, CsamConfig{CsamVariant::single_head, 16}};
  TransformerModule<float> tf(store, "tf", cfg, rng);
  randomize(store, rng);
  const auto x = random_input<float>({2, 4, 8, 8}, rng);
  Context<float> ctx;
  EXPECT_EQ(tf(ctx, x).shape(), (Shape{2, 16, 8, 8}));

  // CSAM bypassed and both dense-replacement convs zeroed. The first residual
  // adds CSAM's input, BN1(p), to p, so BN1 must emit zeros as well.
  zero_conv(tf.csam().conv4());
  zero_conv(tf.conv2());
  zero_conv(tf.conv3());
  fill(tf.bn1().gamma(), 0.0);
  fill(tf.bn1().beta(), 0.0);
  auto y = tf(ctx, x);
  auto p = tf.conv1()(ctx, x);
  EXPECT_TRUE(bit_equal(y, p));
}

class Gradcheck : public ::testing::TestWithParam<std::string> {};

TEST_P(Gradcheck, MatchesCentralDifferences) {
  const auto r = run_gradcheck(GetParam());
  EXPECT_TRUE(r.passed) << r.name << " max rel " << r.max_rel_error << " at " << r.worst;
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GT(r.checked, 0u);
}

INSTANTIATE_TEST_SUITE_P(Suites, Gradcheck, ::testing::ValuesIn(gradcheck_suites()),
                         [](const auto& info) { return info.param; });
