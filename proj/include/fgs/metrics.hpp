#pragma once

#include "fgs/autodiff.hpp"
#include "fgs/image.hpp"

namespace fgs {

// Reported when two images are identical.
inline constexpr double kPsnrCap = 100.0;

// Mean squared error on the 0-255 scale.
double mse_255(const Image& a, const Image& b);

// 10 log10(255^2 / MSE_255), capped at kPsnrCap.
double psnr(const Image& a, const Image& b);
double psnr_from_mse_255(double mse);

// Multi-scale SSIM with an 11-tap Gaussian window (sigma 1.5) and the
// standard five-scale weights. Images too small for five dyadic scales use
// as many scales as fit (weights renormalized) and warn once on stderr.
double ms_ssim(const Image& a, const Image& b);

// Number of scales that fit an image whose shorter side is `min_side`.
int ms_ssim_scales(int min_side);

// Differentiable per-sample MS-SSIM of two (N, 3, H, W) batches in [0, 1];
// returns (N, 1, 1, 1).
ad::Var ms_ssim(const ad::Var& a, const ad::Var& b);

// Differentiable per-sample 255^2 * MSE; returns (N, 1, 1, 1).
ad::Var mse_255(const ad::Var& a, const ad::Var& b);

}  // namespace fgs
