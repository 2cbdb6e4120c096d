#pragma once

// Feature-separation backbone: basic and scalable analysis transforms, the
// redundancy-removal gate, and the single synthesis transform shared by the
// base-only and base+scalable decode paths.

#include <optional>

#include "fgs/layers.hpp"
#include "fgs/model_config.hpp"

namespace fgs {

// Truncation granularity of the scalable latent.
enum class PadUnit { kChannel, kHalfChannel };

// Number of units a c2-channel latent splits into.
int unit_count(int c2, PadUnit unit);

// Raster positions belonging to the first half of a plane of `plane` pixels.
inline int first_half_size(int plane) { return (plane + 1) / 2; }

// Mask (1, c2, h, w) with ones on the first `units` units and zeros elsewhere.
// Throws RangeError when units is outside [0, unit_count].
Tensor prefix_mask(int c2, int h, int w, int units, PadUnit unit);

// Keeps the first `units` units of l_s and zeroes the rest.
Tensor zero_pad_channels(const Tensor& l_s, int units,
                         PadUnit unit = PadUnit::kChannel);
Var zero_pad_channels(const Var& l_s, int units,
                      PadUnit unit = PadUnit::kChannel);

// Stride-2 analysis transform: per stage a 3x3 stride-2 conv, then GDN and a
// residual block on all but the last stage.
class AnalysisTransform : public Layer {
 public:
  AnalysisTransform() = default;
  AnalysisTransform(int in, int width, int out, int stages, Initializer& init);
  Var operator()(const Var& x) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;
  void project();

 private:
  std::vector<Conv2d> down_;
  std::vector<Gdn> gdn_;
  std::vector<ResidualBlock> res_;
};

// Mirror of AnalysisTransform with subpixel upsampling and inverse GDN.
class SynthesisTransform : public Layer {
 public:
  SynthesisTransform() = default;
  SynthesisTransform(int in, int width, int stages, Initializer& init);
  Var operator()(const Var& x) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;
  void project();

 private:
  std::vector<SubpixelConv> up_;
  std::vector<Gdn> igdn_;
  std::vector<ResidualBlock> res_;
};

class CoreModel {
 public:
  // Channels of the residual input to the scalable encoder.
  static constexpr int kResidualChannels = 3;

  CoreModel(const ModelConfig& cfg, Initializer& init);

  const ModelConfig& config() const { return cfg_; }

  // g_a: image batch (N, 3, H, W) -> (N, c1, H/d, W/d), pre-quantization.
  Var basic_encode(const Var& image) const;
  // F_conv(x || x_hat): (N, 3, H, W) x 2 -> (N, 3, H, W).
  Var residual_features(const Var& x, const Var& x_hat) const;
  // g_a1: (N, 3, H, W) -> (N, c2, H/d, W/d).
  Var scalable_encode(const Var& x_s) const;
  // l_s' scaled by channel and spatial gates computed from l_b.
  Var frr_gate(const Var& l_s_raw, const Var& l_b) const;
  // l_in scaled by gates computed from the (possibly zero-padded) l_s.
  Var ffm_fuse(const Var& l_in, const Var& l_s) const;
  // g_s on l_b || l_s; an absent l_s is replaced by zeros. Unclamped.
  Var shared_decode(const Var& l_b, const std::optional<Var>& l_s) const;

  // Gate values for inspection: channel (N, c2, 1, 1) and spatial (N, 1, h, w).
  Var frr_channel_gate(const Var& l_b) const { return frr_.channel_gate(l_b); }
  Var frr_spatial_gate(const Var& l_b) const { return frr_.spatial_gate(l_b); }
  Var ffm_channel_gate(const Var& l_s) const { return ffm_.channel_gate(l_s); }
  Var ffm_spatial_gate(const Var& l_s) const { return ffm_.spatial_gate(l_s); }

  void visit(const ParamVisitor& f);
  void project();

 private:
  void check_image_dims(const Shape& s) const;

  ModelConfig cfg_;
  AnalysisTransform basic_encoder_;
  AnalysisTransform scalable_encoder_;
  Conv2d squeeze_;
  GuidedGating frr_;
  GuidedGating ffm_;
  SynthesisTransform decoder_;
};

}  // namespace fgs
