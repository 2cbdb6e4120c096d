#include "fgs/entropy.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "fgs/error.hpp"

namespace fgs {

double NoiseSource::uniform01() {
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

double round_half_away(double v) { return std::round(v); }

Tensor quantize(const Tensor& x, QuantMode mode, NoiseSource* noise) {
  if (!x.all_finite()) throw RangeError("quantize: non-finite input");
  Tensor out = x;
  if (mode == QuantMode::kEvalRound) {
    for (double& v : out.values()) v = round_half_away(v);
    return out;
  }
  if (noise == nullptr) throw RangeError("quantize: train_noise needs a source");
  for (double& v : out.values()) {
    // Open interval: reject the single value that would give exactly -0.5.
    double u = noise->uniform01();
    while (u == 0.0) u = noise->uniform01();
    v += u - 0.5;
  }
  return out;
}

Var quantize(const Var& x, QuantMode mode, NoiseSource* noise) {
  if (mode == QuantMode::kEvalRound) {
    return ad::constant(quantize(x.value(), mode, noise));
  }
  Tensor offsets = quantize(x.value(), mode, noise);
  for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] -= x.value()[i];
  return ad::add(x, ad::constant(std::move(offsets)));
}

HyperAnalysis::HyperAnalysis(int in, int hyper, Initializer& init)
    : first_(in, hyper, 3, 1, init),
      down1_(hyper, hyper, 3, 2, init),
      down2_(hyper, hyper, 3, 2, init) {}

Var HyperAnalysis::operator()(const Var& l) const {
  Var h = ad::leaky_relu(first_(l));
  h = ad::leaky_relu(down1_(h));
  return down2_(h);
}

void HyperAnalysis::visit(const std::string& prefix, const ParamVisitor& f) {
  first_.visit(prefix + ".conv0", f);
  down1_.visit(prefix + ".down1", f);
  down2_.visit(prefix + ".down2", f);
}

HyperSynthesis::HyperSynthesis(int hyper, int out, Initializer& init)
    : up1_(hyper, hyper, 2, init),
      up2_(hyper, out, 2, init),
      out_(out, out, 3, 1, init) {}

Var HyperSynthesis::operator()(const Var& z, int h, int w) const {
  Var u = ad::leaky_relu(up1_(z));
  u = ad::leaky_relu(up2_(u));
  const Shape& s = u.shape();
  if (s.h < h || s.w < w) {
    throw ShapeError("hyper_decode: context " + s.str() + " smaller than latent");
  }
  return out_(ad::crop_spatial(u, h, w));
}

void HyperSynthesis::visit(const std::string& prefix, const ParamVisitor& f) {
  up1_.visit(prefix + ".up1", f);
  up2_.visit(prefix + ".up2", f);
  out_.visit(prefix + ".out", f);
}

namespace {

constexpr std::array<int, FactorizedPrior::kLayers + 1> kDims = {1, 3, 3, 3, 1};

double softplus_scalar(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }
double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// d sigmoid(t) / dt, stable for large |t|.
double sigmoid_slope(double t) {
  const double e = std::exp(-std::abs(t));
  return e / ((1.0 + e) * (1.0 + e));
}

// Views of one channel's parameters with positive weights pre-computed.
struct ChannelChain {
  std::array<std::array<double, 9>, FactorizedPrior::kLayers> weight{};  // softplus(raw)
  std::array<std::array<double, 3>, FactorizedPrior::kLayers> bias{};
  std::array<std::array<double, 3>, FactorizedPrior::kLayers> gain{};  // tanh(raw)
};

struct ChainTrace {
  std::array<std::array<double, 3>, FactorizedPrior::kLayers + 1> act{};
  std::array<std::array<double, 3>, FactorizedPrior::kLayers> pre{};
};

double run_chain(const ChannelChain& ch, double x, ChainTrace* trace) {
  std::array<double, 3> cur{x, 0, 0};
  if (trace) trace->act[0] = cur;
  for (int k = 0; k < FactorizedPrior::kLayers; ++k) {
    const int din = kDims[k];
    const int dout = kDims[k + 1];
    std::array<double, 3> next{};
    for (int i = 0; i < dout; ++i) {
      double acc = ch.bias[k][i];
      for (int j = 0; j < din; ++j) acc += ch.weight[k][i * din + j] * cur[j];
      next[i] = acc;
    }
    if (trace) trace->pre[k] = next;
    if (k + 1 < FactorizedPrior::kLayers) {
      for (int i = 0; i < dout; ++i) next[i] += ch.gain[k][i] * std::tanh(next[i]);
    }
    cur = next;
    if (trace) trace->act[k + 1] = cur;
  }
  return cur[0];
}

}  // namespace

FactorizedPrior::FactorizedPrior(int channels, Initializer& init,
                                 double init_scale)
    : channels_(channels) {
  const double scale = std::pow(init_scale, 1.0 / kLayers);
  for (int k = 0; k < kLayers; ++k) {
    const int din = kDims[k];
    const int dout = kDims[k + 1];
    const double w0 = std::log(std::expm1(1.0 / scale / dout));
    matrices_.push_back(make_param(Tensor(Shape{channels, dout, din, 1}, w0)));
    Tensor b(Shape{channels, dout, 1, 1});
    for (double& v : b.values()) v = init.uniform(0.5);
    biases_.push_back(make_param(std::move(b)));
    if (k + 1 < kLayers) {
      factors_.push_back(make_param(Tensor(Shape{channels, dout, 1, 1}, 0.0)));
    }
  }
}

namespace {

ChannelChain load_chain(const std::vector<Var>& matrices,
                        const std::vector<Var>& biases,
                        const std::vector<Var>& factors, int c) {
  ChannelChain ch;
  for (int k = 0; k < FactorizedPrior::kLayers; ++k) {
    const int din = kDims[k];
    const int dout = kDims[k + 1];
    const double* m = matrices[k].value().data() + static_cast<std::size_t>(c) * din * dout;
    for (int i = 0; i < din * dout; ++i) ch.weight[k][i] = softplus_scalar(m[i]);
    const double* b = biases[k].value().data() + static_cast<std::size_t>(c) * dout;
    for (int i = 0; i < dout; ++i) ch.bias[k][i] = b[i];
    if (k + 1 < FactorizedPrior::kLayers) {
      const double* f = factors[k].value().data() + static_cast<std::size_t>(c) * dout;
      for (int i = 0; i < dout; ++i) ch.gain[k][i] = std::tanh(f[i]);
    }
  }
  return ch;
}

}  // namespace

double FactorizedPrior::logit(int channel, double v) const {
  return run_chain(load_chain(matrices_, biases_, factors_, channel), v, nullptr);
}

double FactorizedPrior::bin_mass(int channel, double v) const {
  const ChannelChain ch = load_chain(matrices_, biases_, factors_, channel);
  const double lo = run_chain(ch, v - 0.5, nullptr);
  const double hi = run_chain(ch, v + 0.5, nullptr);
  const double sign = (lo + hi) > 0.0 ? -1.0 : 1.0;
  return std::abs(sigmoid_scalar(sign * hi) - sigmoid_scalar(sign * lo));
}

Var FactorizedPrior::bits(const Var& z) const {
  const Shape s = z.shape();
  if (s.c != channels_) {
    throw ShapeError("factorized prior: expected " + std::to_string(channels_) +
                     " channels, got " + s.str());
  }
  const std::size_t plane = s.plane();
  std::vector<ChannelChain> chains;
  for (int c = 0; c < channels_; ++c) {
    chains.push_back(load_chain(matrices_, biases_, factors_, c));
  }
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = z.value().plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double lo = run_chain(chains[c], src[i] - 0.5, nullptr);
        const double hi = run_chain(chains[c], src[i] + 0.5, nullptr);
        const double sign = (lo + hi) > 0.0 ? -1.0 : 1.0;
        const double mass = std::abs(sigmoid_scalar(sign * hi) - sigmoid_scalar(sign * lo));
        dst[i] = -std::log2(std::max(mass, ad::kLikelihoodFloor));
      }
    }
  }

  std::vector<Var> inputs{z};
  inputs.insert(inputs.end(), matrices_.begin(), matrices_.end());
  inputs.insert(inputs.end(), biases_.begin(), biases_.end());
  inputs.insert(inputs.end(), factors_.begin(), factors_.end());
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Var& v) { return v.requires_grad(); });
  auto node = std::make_shared<ad::Node>();
  node->value = std::move(out);
  if (!any) return Var::from_node(std::move(node));

  node->requires_grad = true;
  for (const auto& v : inputs) node->inputs.push_back(v.node());
  node->backward = [s, plane, chains = std::move(chains)](ad::Node& self) {
    constexpr int L = FactorizedPrior::kLayers;
    ad::Node& zn = *self.inputs[0];
    auto input = [&](int group, int k) -> ad::Node& {
      // group 0: matrices, 1: biases, 2: factors
      const int offset = group == 0 ? 1 : group == 1 ? 1 + L : 1 + 2 * L;
      return *self.inputs[offset + k];
    };
    const bool grad_z = zn.requires_grad;
    const bool grad_params = input(0, 0).requires_grad;

    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const ChannelChain& ch = chains[c];
        const double* src = zn.value.plane(n, c);
        const double* gout = self.grad.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          ChainTrace lo_trace;
          ChainTrace hi_trace;
          const double lo = run_chain(ch, src[i] - 0.5, &lo_trace);
          const double hi = run_chain(ch, src[i] + 0.5, &hi_trace);
          const double sign = (lo + hi) > 0.0 ? -1.0 : 1.0;
          const double mass = std::abs(sigmoid_scalar(sign * hi) - sigmoid_scalar(sign * lo));
          if (mass < ad::kLikelihoodFloor) continue;
          const double dbits = -gout[i] / (mass * std::numbers::ln2);
          const double seeds[2] = {-dbits * sigmoid_slope(lo), dbits * sigmoid_slope(hi)};
          const ChainTrace* traces[2] = {&lo_trace, &hi_trace};
          for (int side = 0; side < 2; ++side) {
            const ChainTrace& tr = *traces[side];
            std::array<double, 3> g{seeds[side], 0, 0};
            for (int k = L - 1; k >= 0; --k) {
              const int din = kDims[k];
              const int dout = kDims[k + 1];
              std::array<double, 3> gpre{};
              for (int o = 0; o < dout; ++o) {
                if (k + 1 < L) {
                  const double t = std::tanh(tr.pre[k][o]);
                  gpre[o] = g[o] * (1.0 + ch.gain[k][o] * (1.0 - t * t));
                  if (grad_params) {
                    const double gain = ch.gain[k][o];
                    input(2, k).grad_buffer()[static_cast<std::size_t>(c) * dout + o] +=
                        g[o] * t * (1.0 - gain * gain);
                  }
                } else {
                  gpre[o] = g[o];
                }
              }
              std::array<double, 3> gin{};
              for (int o = 0; o < dout; ++o) {
                if (grad_params) {
                  input(1, k).grad_buffer()[static_cast<std::size_t>(c) * dout + o] += gpre[o];
                }
                for (int j = 0; j < din; ++j) {
                  const double w = ch.weight[k][o * din + j];
                  if (grad_params) {
                    // softplus'(raw) = 1 - exp(-softplus(raw))
                    const double slope = -std::expm1(-w);
                    input(0, k).grad_buffer()[(static_cast<std::size_t>(c) * dout + o) * din + j] +=
                        gpre[o] * tr.act[k][j] * slope;
                  }
                  gin[j] += w * gpre[o];
                }
              }
              g = gin;
            }
            if (grad_z) zn.grad_buffer().plane(n, c)[i] += g[0];
          }
        }
      }
    }
  };
  return Var::from_node(std::move(node));
}

void FactorizedPrior::visit(const std::string& prefix, const ParamVisitor& f) {
  for (int k = 0; k < kLayers; ++k) {
    f(prefix + ".matrix" + std::to_string(k), matrices_[k]);
    f(prefix + ".bias" + std::to_string(k), biases_[k]);
    if (k + 1 < kLayers) f(prefix + ".factor" + std::to_string(k), factors_[k]);
  }
}

ParamHead::ParamHead(int in, int latent_channels, int layers, Initializer& init)
    : latent_channels_(latent_channels) {
  const int width = 2 * latent_channels;
  for (int k = 0; k < layers; ++k) {
    convs_.emplace_back(k == 0 ? in : width, width, 1, 1, init);
  }
}

std::pair<Var, Var> ParamHead::operator()(const Var& features) const {
  Var h = features;
  for (std::size_t k = 0; k < convs_.size(); ++k) {
    h = convs_[k](h);
    if (k + 1 < convs_.size()) h = ad::leaky_relu(h);
  }
  Var mu = ad::slice_channels(h, 0, latent_channels_);
  Var sigma = ad::lower_bound(
      ad::softplus(ad::slice_channels(h, latent_channels_, latent_channels_)),
      kSigmaFloor);
  return {mu, sigma};
}

void ParamHead::visit(const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t k = 0; k < convs_.size(); ++k) {
    convs_[k].visit(prefix + ".conv" + std::to_string(k), f);
  }
}

double gaussian_rate(const Tensor& l_hat, const EntropyParams& params,
                     std::vector<double>* per_channel, Tensor* per_element) {
  const Shape& s = l_hat.shape();
  if (!(params.mu.shape() == s) || !(params.sigma.shape() == s)) {
    throw ShapeError("gaussian_rate: parameter shapes must match latent");
  }
  Tensor sigma = params.sigma;
  for (auto& v : sigma.values()) v = std::max(v, params.sigma_floor);
  const Tensor bits =
      ad::gaussian_bits(ad::constant(l_hat), ad::constant(params.mu),
                        ad::constant(sigma))
          .value();
  if (per_channel) {
    per_channel->assign(s.c, 0.0);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double* p = bits.plane(n, c);
        double acc = 0.0;
        for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
        (*per_channel)[c] += acc;
      }
  }
  if (per_element) *per_element = bits;
  return bits.sum();
}

RateReport rate_report(const Tensor& bits_lb, const Tensor& bits_ls,
                       const Tensor& bits_zb, const Tensor& bits_zs,
                       std::size_t pixels, PadUnit unit) {
  const Shape& s = bits_ls.shape();
  if (s.n != 1) throw ShapeError("rate_report expects single-image tensors");
  RateReport r;
  r.pixels = pixels;
  r.bits_lb = bits_lb.sum();
  r.bits_zb = bits_zb.sum();
  r.bits_zs = bits_zs.sum();
  r.bits_base = r.bits_lb + r.bits_zb;
  const int plane = static_cast<int>(s.plane());
  const int half = first_half_size(plane);
  r.per_channel_ls.assign(s.c, 0.0);
  for (int c = 0; c < s.c; ++c) {
    const double* p = bits_ls.plane(0, c);
    double first = 0.0;
    double second = 0.0;
    for (int i = 0; i < plane; ++i) (i < half ? first : second) += p[i];
    r.per_channel_ls[c] = first + second;
    if (unit == PadUnit::kChannel) {
      r.per_unit_ls.push_back(first + second);
    } else {
      r.per_unit_ls.push_back(first);
      r.per_unit_ls.push_back(second);
    }
  }
  r.bits_scalable_prefix.push_back(r.bits_zs);
  for (double u : r.per_unit_ls) {
    r.bits_scalable_prefix.push_back(r.bits_scalable_prefix.back() + u);
  }
  return r;
}

EntropyModel::EntropyModel(const ModelConfig& cfg, Initializer& init) : cfg_(cfg) {
  const int hc = cfg.hyper_channels;
  hyper_enc_b_ = HyperAnalysis(cfg.c1, hc, init);
  hyper_enc_s_ = HyperAnalysis(cfg.c2, hc, init);
  hyper_dec_b_ = HyperSynthesis(hc, 2 * cfg.c1, init);
  hyper_dec_s_ = HyperSynthesis(hc, 2 * cfg.c2, init);
  prior_b_ = FactorizedPrior(hc, init);
  prior_s_ = FactorizedPrior(hc, init);
  head_b_ = ParamHead(2 * cfg.c1, cfg.c1, 2, init);
  head_s_ = ParamHead(2 * cfg.c2 + (cfg.toggles.mem ? cfg.c1 : 0), cfg.c2, 3, init);
}

Var EntropyModel::hyper_encode_basic(const Var& l) const {
  if (l.shape().c != cfg_.c1) throw ShapeError("hyper_encode(basic): " + l.shape().str());
  return hyper_enc_b_(l);
}

Var EntropyModel::hyper_encode_scalable(const Var& l) const {
  if (l.shape().c != cfg_.c2) throw ShapeError("hyper_encode(scalable): " + l.shape().str());
  return hyper_enc_s_(l);
}

Var EntropyModel::hyper_decode_basic(const Var& z_hat, int h, int w) const {
  if (z_hat.shape().c != cfg_.hyper_channels) throw ShapeError("hyper_decode: " + z_hat.shape().str());
  return hyper_dec_b_(z_hat, h, w);
}

Var EntropyModel::hyper_decode_scalable(const Var& z_hat, int h, int w) const {
  if (z_hat.shape().c != cfg_.hyper_channels) throw ShapeError("hyper_decode: " + z_hat.shape().str());
  return hyper_dec_s_(z_hat, h, w);
}

std::pair<Var, Var> EntropyModel::gaussian_params_base(const Var& ctx_b) const {
  return head_b_(ctx_b);
}

std::pair<Var, Var> EntropyModel::gaussian_params_mem(const Var& ctx_s,
                                                      const Var& l_b_hat) const {
  if (!cfg_.toggles.mem) return head_s_(ctx_s);
  const Shape& a = ctx_s.shape();
  const Shape& b = l_b_hat.shape();
  if (a.n != b.n || a.h != b.h || a.w != b.w || b.c != cfg_.c1) {
    throw ShapeError("gaussian_params_mem: ctx " + a.str() + " vs l_b " + b.str());
  }
  const Var parts[] = {ctx_s, l_b_hat};
  return head_s_(ad::concat_channels(parts));
}

void EntropyModel::visit(const ParamVisitor& f) {
  hyper_enc_b_.visit("h_a_b", f);
  hyper_enc_s_.visit("h_a_s", f);
  hyper_dec_b_.visit("h_s_b", f);
  hyper_dec_s_.visit("h_s_s", f);
  prior_b_.visit("prior_b", f);
  prior_s_.visit("prior_s", f);
  head_b_.visit("params_b", f);
  head_s_.visit("params_s", f);
}

}  // namespace fgs
