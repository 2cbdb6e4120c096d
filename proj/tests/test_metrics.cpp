#include <gtest/gtest.h>

#include <cmath>

#include "fgs/error.hpp"
#include "fgs/metrics.hpp"
#include "test_util.hpp"

using namespace fgs;
using fgs::testing::random_tensor;

namespace {

using Plane = std::vector<std::vector<double>>;

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Image::from_tensor(random_tensor({1, 3, h, w}, rng, 0, 1));
}

Plane plane_of(const Image& img, int c) {
  Plane p(img.height(), std::vector<double>(img.width()));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) p[y][x] = img.at(c, y, x);
  return p;
}

Plane halve(const Plane& p) {
  Plane out(p.size() / 2, std::vector<double>(p[0].size() / 2));
  for (std::size_t y = 0; y < out.size(); ++y)
    for (std::size_t x = 0; x < out[0].size(); ++x)
      out[y][x] = (p[2 * y][2 * x] + p[2 * y][2 * x + 1] + p[2 * y + 1][2 * x] +
                   p[2 * y + 1][2 * x + 1]) / 4;
  return out;
}

// Direct 2D-window SSIM terms: returns {mean(l*cs), mean(cs)}.
std::pair<double, double> ssim_terms(const Plane& a, const Plane& b) {
  double g[11][11], total = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) total += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  const double c1 = 1e-4, c2 = 9e-4;
  const int oh = static_cast<int>(a.size()) - 10, ow = static_cast<int>(a[0].size()) - 10;
  double sum_full = 0, sum_cs = 0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double w = g[i][j] / total, va = a[y + i][x + j], vb = b[y + i][x + j];
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double cs = (2 * (sab - ma * mb) + c2) / (saa - ma * ma + sbb - mb * mb + c2);
      const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
      sum_full += l * cs;
      sum_cs += cs;
    }
  return {sum_full / (oh * ow), sum_cs / (oh * ow)};
}

double oracle_ms_ssim(const Image& a, const Image& b) {
  const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int scales = 0;
  for (int side = std::min(a.height(), a.width()); scales < 5 && side >= 11; side /= 2) ++scales;
  double wsum = 0;
  for (int i = 0; i < scales; ++i) wsum += weights[i];
  double mean = 0;
  for (int c = 0; c < 3; ++c) {
    Plane pa = plane_of(a, c), pb = plane_of(b, c);
    double prod = 1;
    for (int s = 0; s < scales; ++s) {
      const auto [full, cs] = ssim_terms(pa, pb);
      prod *= std::pow(std::max(s + 1 < scales ? cs : full, 0.0), weights[s] / wsum);
      if (s + 1 < scales) {
        pa = halve(pa);
        pb = halve(pb);
      }
    }
    mean += prod / 3;
  }
  return mean;
}

}  // namespace

TEST(Psnr, SpotValues) {
  Image a(8, 8, 0.5);
  Image b = a;
  for (auto& v : b.pixels()) v += 1.0 / 255;  // MSE_255 = 1
  EXPECT_NEAR(psnr(a, b), 48.1308, 1e-4);
  for (auto& v : b.pixels()) v = 0.5 + 10.0 / 255;  // MSE_255 = 100
  EXPECT_NEAR(psnr(a, b), 28.1308, 1e-4);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_THROW(psnr(a, Image(8, 9)), ShapeError);
}

TEST(MsSsim, IdentityAndSymmetry) {
  const Image a = random_image(64, 64, 1);
  const Image b = random_image(64, 64, 2);
  EXPECT_NEAR(ms_ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ms_ssim(a, b), ms_ssim(b, a), 1e-12);
  EXPECT_LT(ms_ssim(a, b), 0.5);
}

TEST(MsSsim, MatchesDirectWindowOracle) {
  const Image a = random_image(48, 56, 3);
  Image b = a;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 0.05);
  for (auto& v : b.pixels()) v = std::clamp(v + n(rng), 0.0, 1.0);
  EXPECT_NEAR(ms_ssim(a, b), oracle_ms_ssim(a, b), 1e-9);
  const Image big = random_image(176, 176, 5);
  Image big_b = big;
  for (auto& v : big_b.pixels()) v = std::clamp(v * 0.9 + 0.03, 0.0, 1.0);
  EXPECT_NEAR(ms_ssim(big, big_b), oracle_ms_ssim(big, big_b), 1e-9);
}

TEST(MsSsim, ScaleCount) {
  EXPECT_EQ(ms_ssim_scales(256), 5);
  EXPECT_EQ(ms_ssim_scales(176), 5);
  EXPECT_EQ(ms_ssim_scales(175), 4);
  EXPECT_EQ(ms_ssim_scales(32), 2);
  EXPECT_EQ(ms_ssim_scales(10), 0);
  EXPECT_THROW(ms_ssim(Image(8, 8), Image(8, 8)), ShapeError);
}

TEST(MsSsim, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const Tensor a = random_tensor({1, 3, 24, 24}, rng, 0.2, 0.8);
  Tensor b = a;
  for (auto& v : b.values()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  fgs::testing::expect_gradients_match(
      [&](std::vector<ad::Var>& v) { return ad::sum(ms_ssim(v[0], ad::constant(a))); }, {b}, 1e-4,
      1e-8, 1e-6, 32);
}

TEST(Mse, DifferentiableMatchesImageVersion) {
  const Image a = random_image(12, 12, 7);
  const Image b = random_image(12, 12, 8);
  const double d =
      mse_255(ad::constant(a.to_tensor()), ad::constant(b.to_tensor())).value()[0];
  EXPECT_NEAR(d, mse_255(a, b), 1e-9);
}
