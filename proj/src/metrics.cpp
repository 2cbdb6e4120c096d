#include "fgs/metrics.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <iostream>

#include "fgs/error.hpp"

namespace fgs {
namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr std::array<double, 5> kScaleWeights = {0.0448, 0.2856, 0.3001, 0.2363,
                                                 0.1333};
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> taps{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    taps[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

void check_same_dims(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("image dimensions differ");
  }
}

std::atomic<bool> warned_scales{false};

}  // namespace

double mse_255(const Image& a, const Image& b) {
  check_same_dims(a, b);
  double acc = 0.0;
  const auto& pa = a.pixels();
  const auto& pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = (pa[i] - pb[i]) * 255.0;
    acc += d * d;
  }
  return acc / static_cast<double>(pa.size());
}

double psnr_from_mse_255(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse_255(mse_255(a, b)); }

int ms_ssim_scales(int min_side) {
  int scales = 0;
  while (scales < static_cast<int>(kScaleWeights.size()) &&
         (min_side >> scales) >= kWindow) {
    ++scales;
  }
  return scales;
}

ad::Var ms_ssim(const ad::Var& a, const ad::Var& b) {
  using namespace ad;
  const Shape& s = a.shape();
  if (!(s == b.shape())) throw ShapeError("ms_ssim: shape mismatch");
  const int scales = ms_ssim_scales(std::min(s.h, s.w));
  if (scales == 0) {
    throw ShapeError("ms_ssim: images smaller than the 11-pixel window");
  }
  if (scales < static_cast<int>(kScaleWeights.size()) &&
      !warned_scales.exchange(true)) {
    std::cerr << "warning: ms_ssim using " << scales
              << " scales for images of " << s.h << "x" << s.w << "\n";
  }
  double weight_sum = 0.0;
  for (int i = 0; i < scales; ++i) weight_sum += kScaleWeights[i];

  const auto taps = gaussian_taps();
  const double c1 = kK1 * kK1;
  const double c2 = kK2 * kK2;
  Var x = a;
  Var y = b;
  Var result;  // (N, C, 1, 1) running product
  for (int level = 0; level < scales; ++level) {
    const Var mu_x = separable_filter_valid(x, taps);
    const Var mu_y = separable_filter_valid(y, taps);
    const Var mu_xx = square(mu_x);
    const Var mu_yy = square(mu_y);
    const Var mu_xy = mul(mu_x, mu_y);
    const Var var_x = sub(separable_filter_valid(square(x), taps), mu_xx);
    const Var var_y = sub(separable_filter_valid(square(y), taps), mu_yy);
    const Var cov = sub(separable_filter_valid(mul(x, y), taps), mu_xy);
    const Var cs_map = div(add_scalar(scale(cov, 2.0), c2),
                           add_scalar(add(var_x, var_y), c2));
    const double w = kScaleWeights[level] / weight_sum;
    Var term;
    if (level + 1 < scales) {
      term = mean_spatial(cs_map);
    } else {
      const Var lum = div(add_scalar(scale(mu_xy, 2.0), c1),
                          add_scalar(add(mu_xx, mu_yy), c1));
      term = mean_spatial(mul(lum, cs_map));
    }
    term = pow_positive(relu(term), w);
    result = result.defined() ? mul(result, term) : term;
    if (level + 1 < scales) {
      x = avg_pool2(x);
      y = avg_pool2(y);
    }
  }
  return mean_channels(result);
}

ad::Var mse_255(const ad::Var& a, const ad::Var& b) {
  return ad::scale(ad::mean_per_sample(ad::square(ad::sub(a, b))), 255.0 * 255.0);
}

double ms_ssim(const Image& a, const Image& b) {
  check_same_dims(a, b);
  return ms_ssim(ad::constant(a.to_tensor()), ad::constant(b.to_tensor())).value()[0];
}

}  // namespace fgs
