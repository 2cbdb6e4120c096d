#pragma once

// Trainable building blocks shared by the transforms.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fgs/autodiff.hpp"

namespace fgs {

using ad::Var;

// Visitor over (qualified name, parameter) pairs.
using ParamVisitor = std::function<void(const std::string&, Var&)>;

class Layer {
 public:
  virtual ~Layer() = default;
  virtual void visit(const std::string& prefix, const ParamVisitor& f) = 0;
};

// Deterministic initializer shared by all layers of a model.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  // Uniform(-bound, bound).
  double uniform(double bound);

 private:
  std::mt19937_64 rng_;
};

Var make_param(Tensor value);

class Conv2d : public Layer {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, Initializer& init);
  Var operator()(const Var& x) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;
  int out_channels() const { return out_; }

 private:
  int out_ = 0;
  int stride_ = 1;
  int pad_ = 0;
  Var weight_;
  Var bias_;
};

// Divisive normalization; `inverse` multiplies instead of divides.
class Gdn : public Layer {
 public:
  static constexpr double kBetaMin = 1e-6;

  Gdn() = default;
  Gdn(int channels, bool inverse);
  Var operator()(const Var& x) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;
  // Projects beta >= kBetaMin and gamma >= 0 after an optimizer update.
  void project();

 private:
  bool inverse_ = false;
  Var beta_;
  Var gamma_;
};

// x + conv(leaky(conv(x))) with 3x3 kernels.
class ResidualBlock : public Layer {
 public:
  ResidualBlock() = default;
  ResidualBlock(int channels, Initializer& init);
  Var operator()(const Var& x) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;

 private:
  Conv2d first_;
  Conv2d second_;
};

// 3x3 convolution to out*r*r channels followed by pixel shuffle.
class SubpixelConv : public Layer {
 public:
  SubpixelConv() = default;
  SubpixelConv(int in, int out, int r, Initializer& init);
  Var operator()(const Var& x) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;

 private:
  int r_ = 2;
  Conv2d conv_;
};

// Sigmoid-gated two-layer perceptron applied to pooled channel statistics.
class ChannelGate : public Layer {
 public:
  ChannelGate() = default;
  ChannelGate(int in, int hidden, int out, Initializer& init);
  // guide (N, in, h, w) -> gate (N, out, 1, 1) in (0, 1).
  Var operator()(const Var& guide) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;

 private:
  Conv2d expand_;
  Conv2d reduce_;
};

// Channel-mean map widened by a 1x1 conv and squeezed back to one plane.
class SpatialGate : public Layer {
 public:
  SpatialGate() = default;
  SpatialGate(int width, Initializer& init);
  // guide (N, C, h, w) -> gate (N, 1, h, w) in (0, 1).
  Var operator()(const Var& guide) const;
  void visit(const std::string& prefix, const ParamVisitor& f) override;

 private:
  Conv2d expand_;
  Conv2d reduce_;
};

// target * channel_gate(guide) * spatial_gate(guide).
class GuidedGating : public Layer {
 public:
  GuidedGating() = default;
  GuidedGating(int guide_channels, int hidden, int target_channels, int width,
               Initializer& init);
  Var operator()(const Var& target, const Var& guide) const;
  Var channel_gate(const Var& guide) const { return channel_(guide); }
  Var spatial_gate(const Var& guide) const { return spatial_(guide); }
  void visit(const std::string& prefix, const ParamVisitor& f) override;

 private:
  ChannelGate channel_;
  SpatialGate spatial_;
};

}  // namespace fgs
