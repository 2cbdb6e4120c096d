#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fgs/entropy.hpp"
#include "fgs/error.hpp"
#include "fgs/fgs_model.hpp"
#include "test_util.hpp"

using namespace fgs;
using fgs::testing::random_tensor;

namespace {

ModelConfig small_config(bool mem = true) {
  ModelConfig c = ModelConfig::toy();
  c.c1 = 8;
  c.c2 = 6;
  c.hyper_channels = 4;
  c.base_width = 8;
  c.downsample = 4;
  c.toggles.mem = mem;
  return c;
}

// Unit-bin Gaussian mass by composite Simpson quadrature of the density.
double quadrature_bits(double y, double mu, double sigma) {
  const int n = 2000;
  const double a = y - 0.5, b = y + 0.5, h = (b - a) / n;
  auto pdf = [&](double t) {
    const double z = (t - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2 * M_PI));
  };
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4 : 2);
  // Same 1e-9 likelihood floor as the model.
  return std::min(-std::log2(s * h / 3), -std::log2(1e-9));
}

}  // namespace

TEST(Quantize, RoundsHalfAwayFromZero) {
  EXPECT_EQ(round_half_away(2.5), 3.0);
  EXPECT_EQ(round_half_away(-2.5), -3.0);
  EXPECT_EQ(round_half_away(0.49), 0.0);
  EXPECT_EQ(round_half_away(-0.5), -1.0);
  Tensor t({1, 1, 1, 4}, std::vector<double>{1.5, -1.5, 0.2, -7.7});
  EXPECT_EQ(quantize(t, QuantMode::kEvalRound),
            Tensor({1, 1, 1, 4}, std::vector<double>{2, -2, 0, -8}));
}

TEST(Quantize, NoiseStaysWithinHalfUnit) {
  NoiseSource noise(3);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({1, 4, 8, 8}, rng, -5, 5);
  const Tensor q = quantize(x, QuantMode::kTrainNoise, &noise);
  double mean = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_LE(std::abs(q[i] - x[i]), 0.5);
    mean += q[i] - x[i];
  }
  EXPECT_LT(std::abs(mean / x.size()), 0.05);
  NoiseSource again(3);
  EXPECT_EQ(quantize(x, QuantMode::kTrainNoise, &again), q);
}

TEST(Quantize, RejectsNonFiniteAndMissingNoise) {
  Tensor t({1, 1, 1, 1}, std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(quantize(t, QuantMode::kEvalRound), RangeError);
  EXPECT_ANY_THROW(quantize(Tensor({1, 1, 1, 1}), QuantMode::kTrainNoise, nullptr));
}

TEST(Quantize, NoiseProxyPassesGradientThrough) {
  NoiseSource noise(4);
  Var x(Tensor({1, 1, 2, 2}, 0.3), true);
  ad::backward(ad::sum(quantize(x, QuantMode::kTrainNoise, &noise)));
  for (double g : x.grad().values()) EXPECT_EQ(g, 1.0);
}

TEST(Hyper, ShapesFollowTwoStrideTwoStages) {
  ModelConfig c = small_config();
  c.c1 = 32;
  c.hyper_channels = 16;
  Initializer init(5);
  EntropyModel em(c, init);
  const Var l = ad::constant(Tensor({1, 32, 4, 4}));
  const Var z = em.hyper_encode_basic(l);
  EXPECT_EQ(z.shape(), (Shape{1, 16, 1, 1}));
  EXPECT_EQ(em.hyper_decode_basic(z, 4, 4).shape(), (Shape{1, 64, 4, 4}));
  // Odd latent sizes round up through both stages and crop back.
  const Var z_odd = em.hyper_encode_basic(ad::constant(Tensor({1, 32, 5, 3})));
  EXPECT_EQ(z_odd.shape(), (Shape{1, 16, 2, 1}));
  EXPECT_EQ(em.hyper_decode_basic(z_odd, 5, 3).shape(), (Shape{1, 64, 5, 3}));
}

TEST(Hyper, ScalableContextShapes) {
  const ModelConfig c = small_config();
  Initializer init(6);
  EntropyModel em(c, init);
  const Var z = em.hyper_encode_scalable(ad::constant(Tensor({1, c.c2, 4, 4})));
  const Var ctx = em.hyper_decode_scalable(z, 4, 4);
  EXPECT_EQ(ctx.shape(), (Shape{1, 2 * c.c2, 4, 4}));
  const auto [mu, sigma] = em.gaussian_params_mem(ctx, ad::constant(Tensor({1, c.c1, 4, 4})));
  EXPECT_EQ(mu.shape(), (Shape{1, c.c2, 4, 4}));
  EXPECT_EQ(sigma.shape(), mu.shape());
}

TEST(Mem, SigmaRespectsFloor) {
  const ModelConfig c = small_config();
  Initializer init(7);
  EntropyModel em(c, init);
  std::mt19937_64 rng(7);
  const Var ctx = ad::constant(random_tensor({1, 2 * c.c2, 3, 3}, rng, -30, 30));
  const Var l_b = ad::constant(random_tensor({1, c.c1, 3, 3}, rng, -30, 30));
  const auto params = em.gaussian_params_mem(ctx, l_b);
  for (double s : params.second.value().values()) EXPECT_GE(s, kSigmaFloor);
}

TEST(Mem, ParamsDependOnlyOnDecodedInformation) {
  // The scalable parameters are computed from (z_s_hat, l_b_hat); changing
  // l_s_hat itself must not move them.
  FgsModel model(small_config(), 8);
  std::mt19937_64 rng(8);
  const Image img = Image::from_tensor(random_tensor({1, 3, 16, 16}, rng, 0, 1));
  const Analysis a = model.analyze(img);
  const EntropyParams p = model.scalable_params(a.pack.z_s_hat, a.pack.l_b_hat);
  EXPECT_EQ(p.mu, a.params_s.mu);
  EXPECT_EQ(p.sigma, a.params_s.sigma);
  Tensor permuted = a.pack.l_s_hat;
  std::reverse(permuted.values().begin(), permuted.values().end());
  LatentPack pack = a.pack;
  pack.l_s_hat = permuted;
  const EntropyParams q = model.scalable_params(pack.z_s_hat, pack.l_b_hat);
  EXPECT_EQ(q.mu, p.mu);
}

TEST(Mem, ConditionsOnBasicLatentOnlyWhenEnabled) {
  std::mt19937_64 rng(9);
  for (bool mem : {true, false}) {
    const ModelConfig c = small_config(mem);
    Initializer init(9);
    EntropyModel em(c, init);
    const Var ctx = ad::constant(random_tensor({1, 2 * c.c2, 2, 2}, rng));
    const Var l1 = ad::constant(random_tensor({1, c.c1, 2, 2}, rng, -4, 4));
    const Var l2 = ad::constant(random_tensor({1, c.c1, 2, 2}, rng, -4, 4));
    const Tensor m1 = em.gaussian_params_mem(ctx, l1).first.value();
    const Tensor m2 = em.gaussian_params_mem(ctx, l2).first.value();
    EXPECT_EQ(m1 == m2, !mem) << "mem " << mem;
  }
}

TEST(GaussianRate, MatchesQuadratureOracle) {
  std::mt19937_64 rng(10);
  Tensor y = random_tensor({1, 3, 2, 2}, rng, -6, 6);
  for (auto& v : y.values()) v = std::round(v);
  EntropyParams p{random_tensor({1, 3, 2, 2}, rng, -2, 2), random_tensor({1, 3, 2, 2}, rng, 0.2, 3)};
  std::vector<double> per_channel;
  Tensor per_element;
  const double total = gaussian_rate(y, p, &per_channel, &per_element);
  double oracle = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double b = quadrature_bits(y[i], p.mu[i], p.sigma[i]);
    EXPECT_NEAR(per_element[i], b, 1e-6) << i;
    oracle += b;
  }
  EXPECT_NEAR(total, oracle, 1e-5);
  EXPECT_NEAR(std::accumulate(per_channel.begin(), per_channel.end(), 0.0), total, 1e-9);
}

TEST(GaussianRate, FloorsSigma) {
  EntropyParams p{Tensor({1, 1, 1, 1}), Tensor({1, 1, 1, 1}, 0.01)};
  const double b = gaussian_rate(Tensor({1, 1, 1, 1}, 1.0), p);
  EXPECT_NEAR(b, quadrature_bits(1.0, 0.0, kSigmaFloor), 1e-6);
}

TEST(FactorizedPrior, IsAMonotoneDistribution) {
  Initializer init(11);
  FactorizedPrior prior(3, init);
  for (int c = 0; c < 3; ++c) {
    double total = 0;
    for (int v = -200; v <= 200; ++v) total += prior.bin_mass(c, v);
    EXPECT_NEAR(total, 1.0, 1e-6);
    for (double v = -20; v < 20; v += 0.37) EXPECT_LE(prior.logit(c, v), prior.logit(c, v + 0.37));
  }
  const Var z = ad::constant(Tensor({1, 3, 1, 1}, std::vector<double>{0, 2, -3}));
  const Tensor bits = prior.bits(z).value();
  for (int c = 0; c < 3; ++c) {
    const double v = z.value()[c];
    EXPECT_NEAR(bits[c], -std::log2(prior.bin_mass(c, v)), 1e-9);
  }
}

TEST(FactorizedPrior, GradientMatchesFiniteDifferences) {
  Initializer init(12);
  FactorizedPrior prior(2, init);
  std::mt19937_64 rng(12);
  const Tensor z = random_tensor({1, 2, 2, 2}, rng, -3, 3);
  // Differentiate the bit total with respect to the input only; parameter
  // gradients are covered by the end-to-end probe in the training tests.
  fgs::testing::expect_gradients_match(
      [&](std::vector<Var>& v) { return ad::sum(prior.bits(v[0])); }, {z});
}

TEST(RateReport, DecompositionIsConsistent) {
  std::mt19937_64 rng(13);
  const Tensor lb = random_tensor({1, 4, 3, 3}, rng, 0, 5);
  const Tensor ls = random_tensor({1, 5, 3, 3}, rng, 0, 5);
  const Tensor zb = random_tensor({1, 2, 1, 1}, rng, 0, 5);
  const Tensor zs = random_tensor({1, 2, 1, 1}, rng, 0, 5);
  for (PadUnit unit : {PadUnit::kChannel, PadUnit::kHalfChannel}) {
    const RateReport r = rate_report(lb, ls, zb, zs, 144, unit);
    EXPECT_NEAR(r.bits_base, r.bits_lb + r.bits_zb, 1e-9);
    EXPECT_NEAR(r.bits_lb, lb.sum(), 1e-9);
    EXPECT_NEAR(std::accumulate(r.per_channel_ls.begin(), r.per_channel_ls.end(), 0.0), ls.sum(),
                1e-9);
    const int n = unit == PadUnit::kChannel ? 5 : 10;
    ASSERT_EQ(static_cast<int>(r.per_unit_ls.size()), n);
    ASSERT_EQ(static_cast<int>(r.bits_scalable_prefix.size()), n + 1);
    EXPECT_NEAR(r.bits_scalable_prefix[0], r.bits_zs, 1e-9);
    for (int j = 1; j <= n; ++j) {
      EXPECT_NEAR(r.bits_scalable_prefix[j] - r.bits_scalable_prefix[j - 1], r.per_unit_ls[j - 1],
                  1e-9);
    }
    EXPECT_NEAR(r.total_bits(n), lb.sum() + ls.sum() + zb.sum() + zs.sum(), 1e-9);
    EXPECT_NEAR(r.bpp(0) * 144, r.bits_base + r.bits_zs, 1e-9);
  }
}
