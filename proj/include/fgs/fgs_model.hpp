#pragma once

// The complete scalable codec model: backbone plus entropy model, with the
// training forward pass, the encoder-side analysis used by the bitstream
// writer, and the decoder-side parameter reconstruction.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fgs/core_model.hpp"
#include "fgs/entropy.hpp"
#include "fgs/image.hpp"

namespace fgs {

// Quantized latents of one image.
struct LatentPack {
  Tensor l_b_hat;  // (1, c1, h, w)
  Tensor l_s_hat;  // (1, c2, h, w)
  Tensor z_b_hat;  // (1, hyper, h/4, w/4)
  Tensor z_s_hat;
};

// Outputs of one differentiable forward pass over a batch.
struct ForwardOutputs {
  Var x_hat_base;    // g_s(l_b, zeros), unclamped
  Var x_hat_prefix;  // g_s(l_b, first j units of l_s), unclamped
  Var l_b;           // quantized (or noise-proxy) latents
  Var l_s;
  Var bits_lb;  // per-element bit maps
  Var bits_ls;
  Var bits_zb;
  Var bits_zs;
  int units = 0;
  PadUnit unit = PadUnit::kChannel;
};

struct Analysis {
  LatentPack pack;
  EntropyParams params_b;
  EntropyParams params_s;
};

struct NamedParam {
  std::string name;
  Var* var;
};

class FgsModel {
 public:
  FgsModel(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  CoreModel& core() { return *core_; }
  const CoreModel& core() const { return *core_; }
  EntropyModel& entropy() { return *entropy_; }
  const EntropyModel& entropy() const { return *entropy_; }

  // Full forward with `units` scalable units decoded for the prefix
  // reconstruction. `noise` is required for kTrainNoise.
  ForwardOutputs forward(const Var& x, QuantMode mode, int units,
                         NoiseSource* noise,
                         PadUnit unit = PadUnit::kChannel) const;

  // Encoder-side eval-round analysis of one image.
  Analysis analyze(const Image& image) const;

  // Decoder-side entropy parameters from already decoded side information.
  EntropyParams base_params(const Tensor& z_b_hat, int h, int w) const;
  EntropyParams scalable_params(const Tensor& z_s_hat, const Tensor& l_b_hat) const;

  // Clamped reconstruction from l_b and an already zero-padded l_s.
  Image reconstruct(const Tensor& l_b_hat, const Tensor& l_s_padded) const;
  // Clamped reconstruction keeping the first `units` units of l_s_hat.
  Image reconstruct_prefix(const LatentPack& pack, int units,
                           PadUnit unit = PadUnit::kChannel) const;

  // Estimated rates of an analysed image (eval-round latents).
  RateReport rate_report(const Analysis& a, PadUnit unit = PadUnit::kChannel) const;

  std::vector<NamedParam> parameters();
  void project();
  // FNV-1a over parameter bytes in name order.
  std::uint64_t weights_hash();

  void save(const std::string& path);
  static std::unique_ptr<FgsModel> load(const std::string& path);
  // Throws FormatError if the stored config differs from `expected`.
  static std::unique_ptr<FgsModel> load(const std::string& path,
                                        const ModelConfig& expected);
  void load_weights(const std::map<std::string, Tensor>& tensors);

 private:
  ModelConfig cfg_;
  std::unique_ptr<CoreModel> core_;
  std::unique_ptr<EntropyModel> entropy_;
};

}  // namespace fgs
