#pragma once

// Tape-free reverse-mode differentiation over NCHW tensors.
//
// Every op returns a Var whose node remembers its inputs and a closure that
// pushes the node's gradient back to them. Nodes whose inputs carry no
// gradient are recorded as constants, so inference builds no graph.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fgs/tensor.hpp"

namespace fgs::ad {

struct Node;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }

  // Accumulated gradient; empty tensor if nothing flowed here.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

// Seeds d(root)/d(root) = 1 and propagates. Root must hold one element.
void backward(const Var& root);

Var constant(Tensor value);
Var scalar(double v);

// Convolution with square kernel. weight (Cout, Cin, K, K), bias (1, Cout, 1,
// 1) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int pad);
// (N, C*r*r, H, W) -> (N, C, H*r, W*r)
Var pixel_shuffle(const Var& x, int r);
// y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2), or x_i * sqrt(...) when
// inverse. beta (1, C, 1, 1), gamma (C, C, 1, 1).
Var gdn(const Var& x, const Var& beta, const Var& gamma, bool inverse);

// Elementwise with broadcasting over unit dimensions.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.01);
Var softplus(const Var& x);
Var square(const Var& x);
// x^p for x > 0; non-positive inputs are clamped to eps first.
Var pow_positive(const Var& x, double p, double eps = 1e-8);
// max(x, bound); gradient passes where x > bound or where it would push x up.
Var lower_bound(const Var& x, double bound);
Var clamp(const Var& x, double lo, double hi);

// (N, C, H, W) -> (N, 1, H, W)
Var mean_channels(const Var& x);
// (N, C, H, W) -> (N, C, 1, 1)
Var mean_spatial(const Var& x);
// (N, C, H, W) -> (N, 1, 1, 1)
Var mean_per_sample(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);

Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& x, int first, int count);
Var crop_spatial(const Var& x, int h, int w);

// 2x2 average pooling with stride 2 (odd trailing row/col dropped).
Var avg_pool2(const Var& x);
// Depthwise separable filtering with the same 1-D kernel along both axes,
// valid padding.
Var separable_filter_valid(const Var& x, std::span<const double> taps);

// Per-element bits of integer-bin Gaussian likelihood,
// -log2(Phi((|y-mu|+.5)/s) - Phi((|y-mu|-.5)/s)) with mass floored at 1e-9.
Var gaussian_bits(const Var& y, const Var& mu, const Var& sigma);

// Probability mass of the unit bin around y under N(mu, sigma^2).
double gaussian_bin_mass(double y, double mu, double sigma);

inline constexpr double kLikelihoodFloor = 1e-9;

}  // namespace fgs::ad
