#pragma once

// Quantization, hyperprior transforms, the factorized prior over
// hyper-latents and the Gaussian entropy parameters for both latents. The
// scalable branch is conditioned on the decoded basic latent (mutual entropy
// model) unless the toggle is off.

#include <cstdint>
#include <random>
#include <vector>

#include "fgs/core_model.hpp"
#include "fgs/layers.hpp"
#include "fgs/model_config.hpp"

namespace fgs {

inline constexpr double kSigmaFloor = 0.11;

enum class QuantMode { kTrainNoise, kEvalRound };

// Counter-based uniform source so noise draws are a pure function of
// (seed, stream position).
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : rng_(seed) {}
  double uniform01();  // [0, 1)
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Round half away from zero.
double round_half_away(double v);

// train_noise adds U(-0.5, 0.5); eval_round rounds half away from zero.
// Throws RangeError on non-finite input.
Tensor quantize(const Tensor& x, QuantMode mode, NoiseSource* noise = nullptr);
// Differentiable variant: noise is added as a constant (identity gradient);
// rounding produces a constant.
Var quantize(const Var& x, QuantMode mode, NoiseSource* noise = nullptr);

struct EntropyParams {
  Tensor mu;
  Tensor sigma;
  double sigma_floor = kSigmaFloor;
};

// Two stride-2 stages from latent to hyper-latent.
class HyperAnalysis : public Layer {
 public:
  HyperAnalysis() = default;
  HyperAnalysis(int in, int hyper, Initializer& init);
  Var operator()(const Var& l) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;

 private:
  Conv2d first_;
  Conv2d down1_;
  Conv2d down2_;
};

// Two subpixel stages back to latent resolution, cropped to (h, w).
class HyperSynthesis : public Layer {
 public:
  HyperSynthesis() = default;
  HyperSynthesis(int hyper, int out, Initializer& init);
  Var operator()(const Var& z, int h, int w) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;

 private:
  SubpixelConv up1_;
  SubpixelConv up2_;
  Conv2d out_;
};

// Per-channel learned monotone CDF: a chain of 1-3-3-3-1 affine maps with
// positive weights and tanh residual nonlinearities, squashed by a sigmoid.
class FactorizedPrior : public Layer {
 public:
  static constexpr int kLayers = 4;

  FactorizedPrior() = default;
  FactorizedPrior(int channels, Initializer& init, double init_scale = 10.0);

  int channels() const { return channels_; }
  // Per-element bits -log2(P[v - 0.5 < Z < v + 0.5]) with mass floored at
  // 1e-9. z is (N, channels, h, w).
  Var bits(const Var& z) const;
  // Probability of the unit bin around v for channel c.
  double bin_mass(int channel, double v) const;
  // Cumulative logit f(v) for channel c.
  double logit(int channel, double v) const;

  void visit(const std::string& prefix, const ParamVisitor& f) override;

 private:
  int channels_ = 0;
  // matrices_[k]: (C, d_{k+1}, d_k, 1); biases_[k], factors_[k]: (C, d_{k+1}, 1, 1)
  std::vector<Var> matrices_;
  std::vector<Var> biases_;
  std::vector<Var> factors_;
};

// (mu, sigma) from context: two 1x1 conv layers; sigma = max(softplus, floor).
class ParamHead : public Layer {
 public:
  ParamHead() = default;
  ParamHead(int in, int latent_channels, int layers, Initializer& init);
  // Returns {mu, sigma}, each (N, latent_channels, h, w).
  std::pair<Var, Var> operator()(const Var& features) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;

 private:
  int latent_channels_ = 0;
  std::vector<Conv2d> convs_;
};

// Rate of one image's latents in bits.
struct RateReport {
  double bits_lb = 0.0;
  double bits_zb = 0.0;
  double bits_zs = 0.0;
  std::vector<double> per_channel_ls;  // c2 entries
  std::vector<double> per_unit_ls;     // per truncation unit
  double bits_base = 0.0;              // bits_lb + bits_zb
  // bits_scalable_prefix[j] = bits_zs + sum of the first j units.
  std::vector<double> bits_scalable_prefix;
  std::size_t pixels = 0;

  // Rate at truncation j including the base layer.
  double total_bits(int j) const { return bits_base + bits_scalable_prefix.at(j); }
  double bpp(int j) const { return total_bits(j) / static_cast<double>(pixels); }
};

// Per-element Gaussian bits of l_hat under params; returns the total.
// Fills per_channel (size C) when non-null. Single-image tensors.
double gaussian_rate(const Tensor& l_hat, const EntropyParams& params,
                     std::vector<double>* per_channel = nullptr,
                     Tensor* per_element = nullptr);

// Builds a RateReport from per-element bit maps of a single image.
RateReport rate_report(const Tensor& bits_lb, const Tensor& bits_ls,
                       const Tensor& bits_zb, const Tensor& bits_zs,
                       std::size_t pixels, PadUnit unit = PadUnit::kChannel);

class EntropyModel {
 public:
  EntropyModel(const ModelConfig& cfg, Initializer& init);

  const ModelConfig& config() const { return cfg_; }
  bool mem_enabled() const { return cfg_.toggles.mem; }

  Var hyper_encode_basic(const Var& l) const;
  Var hyper_encode_scalable(const Var& l) const;
  // Context at latent resolution (h, w): 2*c1 or 2*c2 channels.
  Var hyper_decode_basic(const Var& z_hat, int h, int w) const;
  Var hyper_decode_scalable(const Var& z_hat, int h, int w) const;

  std::pair<Var, Var> gaussian_params_base(const Var& ctx_b) const;
  // Depends on (ctx_s, l_b_hat) only; on ctx_s alone when MEM is off.
  std::pair<Var, Var> gaussian_params_mem(const Var& ctx_s, const Var& l_b_hat) const;

  const FactorizedPrior& prior_basic() const { return prior_b_; }
  const FactorizedPrior& prior_scalable() const { return prior_s_; }

  void visit(const ParamVisitor& f);

 private:
  ModelConfig cfg_;
  HyperAnalysis hyper_enc_b_;
  HyperAnalysis hyper_enc_s_;
  HyperSynthesis hyper_dec_b_;
  HyperSynthesis hyper_dec_s_;
  FactorizedPrior prior_b_;
  FactorizedPrior prior_s_;
  ParamHead head_b_;
  ParamHead head_s_;
};

}  // namespace fgs
