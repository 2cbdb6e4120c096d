#include "fgs/layers.hpp"

#include <algorithm>
#include <cmath>

#include "fgs/error.hpp"

namespace fgs {

double Initializer::uniform(double bound) {
  // 53 random mantissa bits; independent of the standard library's
  // distribution implementation.
  const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  return (2.0 * u - 1.0) * bound;
}

Var make_param(Tensor value) { return Var(std::move(value), true); }

Conv2d::Conv2d(int in, int out, int kernel, int stride, Initializer& init)
    : out_(out), stride_(stride), pad_(kernel / 2) {
  Tensor w(Shape{out, in, kernel, kernel});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  for (double& v : w.values()) v = init.uniform(bound);
  Tensor b(Shape{1, out, 1, 1});
  for (double& v : b.values()) v = init.uniform(bound);
  weight_ = make_param(std::move(w));
  bias_ = make_param(std::move(b));
}

Var Conv2d::operator()(const Var& x) const {
  return ad::conv2d(x, weight_, bias_, stride_, pad_);
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".weight", weight_);
  f(prefix + ".bias", bias_);
}

Gdn::Gdn(int channels, bool inverse) : inverse_(inverse) {
  beta_ = make_param(Tensor(Shape{1, channels, 1, 1}, 1.0));
  Tensor g(Shape{channels, channels, 1, 1}, 0.0);
  for (int i = 0; i < channels; ++i) g[static_cast<std::size_t>(i) * channels + i] = 0.1;
  gamma_ = make_param(std::move(g));
}

Var Gdn::operator()(const Var& x) const {
  return ad::gdn(x, beta_, gamma_, inverse_);
}

void Gdn::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".beta", beta_);
  f(prefix + ".gamma", gamma_);
}

void Gdn::project() {
  for (double& b : beta_.mutable_value().values()) b = std::max(b, kBetaMin);
  for (double& g : gamma_.mutable_value().values()) g = std::max(g, 0.0);
}

ResidualBlock::ResidualBlock(int channels, Initializer& init)
    : first_(channels, channels, 3, 1, init),
      second_(channels, channels, 3, 1, init) {}

Var ResidualBlock::operator()(const Var& x) const {
  return ad::add(x, second_(ad::leaky_relu(first_(x))));
}

void ResidualBlock::visit(const std::string& prefix, const ParamVisitor& f) {
  first_.visit(prefix + ".conv1", f);
  second_.visit(prefix + ".conv2", f);
}

SubpixelConv::SubpixelConv(int in, int out, int r, Initializer& init)
    : r_(r), conv_(in, out * r * r, 3, 1, init) {}

Var SubpixelConv::operator()(const Var& x) const {
  return ad::pixel_shuffle(conv_(x), r_);
}

void SubpixelConv::visit(const std::string& prefix, const ParamVisitor& f) {
  conv_.visit(prefix + ".conv", f);
}

ChannelGate::ChannelGate(int in, int hidden, int out, Initializer& init)
    : expand_(in, hidden, 1, 1, init), reduce_(hidden, out, 1, 1, init) {}

Var ChannelGate::operator()(const Var& guide) const {
  return ad::sigmoid(reduce_(ad::relu(expand_(ad::mean_spatial(guide)))));
}

void ChannelGate::visit(const std::string& prefix, const ParamVisitor& f) {
  expand_.visit(prefix + ".fc1", f);
  reduce_.visit(prefix + ".fc2", f);
}

SpatialGate::SpatialGate(int width, Initializer& init)
    : expand_(1, width, 1, 1, init), reduce_(width, 1, 1, 1, init) {}

Var SpatialGate::operator()(const Var& guide) const {
  return ad::sigmoid(reduce_(ad::relu(expand_(ad::mean_channels(guide)))));
}

void SpatialGate::visit(const std::string& prefix, const ParamVisitor& f) {
  expand_.visit(prefix + ".expand", f);
  reduce_.visit(prefix + ".reduce", f);
}

GuidedGating::GuidedGating(int guide_channels, int hidden,
                           int target_channels, int width, Initializer& init)
    : channel_(guide_channels, hidden, target_channels, init),
      spatial_(width, init) {}

Var GuidedGating::operator()(const Var& target, const Var& guide) const {
  return ad::mul(ad::mul(target, channel_(guide)), spatial_(guide));
}

void GuidedGating::visit(const std::string& prefix, const ParamVisitor& f) {
  channel_.visit(prefix + ".mlp", f);
  spatial_.visit(prefix + ".st", f);
}

}  // namespace fgs
