#include "fgs/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "fgs/error.hpp"

namespace fgs::ad {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Var make(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Var& v) { return v.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    for (const auto& v : inputs) node->inputs.push_back(v.node());
    node->backward = std::move(fn);
  }
  return Var::from_node(std::move(node));
}

Var make_n(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Var& v) { return v.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    for (const auto& v : inputs) node->inputs.push_back(v.node());
    node->backward = std::move(fn);
  }
  return Var::from_node(std::move(node));
}

bool wants(const Node& self, std::size_t i) {
  return self.inputs[i] && self.inputs[i]->requires_grad;
}

// Unary elementwise op given f(x) and f'(x, y).
template <typename F, typename D>
Var unary(const Var& x, F f, D df) {
  Tensor out(x.shape());
  const Tensor& in = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make(std::move(out), {x}, [df](Node& self) {
    Node& in_node = *self.inputs[0];
    Tensor& g = in_node.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df(in_node.value[i], self.value[i]);
    }
  });
}

struct Broadcast {
  Shape out;
  std::size_t sa[4];
  std::size_t sb[4];
  bool same;
};

Broadcast broadcast(const Shape& a, const Shape& b) {
  const int da[4] = {a.n, a.c, a.h, a.w};
  const int db[4] = {b.n, b.c, b.h, b.w};
  int dout[4];
  for (int k = 0; k < 4; ++k) {
    if (da[k] != db[k] && da[k] != 1 && db[k] != 1) {
      throw ShapeError("cannot broadcast " + a.str() + " with " + b.str());
    }
    dout[k] = std::max(da[k], db[k]);
  }
  Broadcast bc{};
  bc.out = Shape{dout[0], dout[1], dout[2], dout[3]};
  bc.same = a == b;
  std::size_t stride_a = 1;
  std::size_t stride_b = 1;
  for (int k = 3; k >= 0; --k) {
    bc.sa[k] = da[k] == 1 ? 0 : stride_a;
    bc.sb[k] = db[k] == 1 ? 0 : stride_b;
    stride_a *= da[k];
    stride_b *= db[k];
  }
  return bc;
}

// Visits (out index, a index, b index) triples.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F f) {
  const Shape& s = bc.out;
  if (bc.same) {
    const std::size_t n = s.numel();
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int h = 0; h < s.h; ++h) {
        std::size_t ia = n * bc.sa[0] + c * bc.sa[1] + h * bc.sa[2];
        std::size_t ib = n * bc.sb[0] + c * bc.sb[1] + h * bc.sb[2];
        for (int w = 0; w < s.w; ++w, ++o) {
          f(o, ia, ib);
          ia += bc.sa[3];
          ib += bc.sb[3];
        }
      }
    }
  }
}

void im2col(const double* x, int channels, int height, int width, int k,
            int stride, int pad, int out_h, int out_w, double* col) {
  const int pixels = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = col + static_cast<std::size_t>((c * k + ki) * k + kj) *
                                pixels;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ki;
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * height + iy) *
                                      width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, int height, int width, int k,
            int stride, int pad, int out_h, int out_w, double* x) {
  const int pixels = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row =
            col + static_cast<std::size_t>((c * k + ki) * k + kj) * pixels;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= height) continue;
          double* dst = x + (static_cast<std::size_t>(c) * height + iy) * width;
          const double* src = row + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

struct BinMass {
  double mass;
  double bits;
  double d_mass_d_abs;    // d mass / d |y - mu|
  double d_mass_d_sigma;  // d mass / d sigma
};

BinMass gaussian_bin(double y, double mu, double sigma) {
  const double d = std::abs(y - mu);
  const double a = (0.5 - d) / sigma;
  const double b = (-0.5 - d) / sigma;
  BinMass r{};
  if (a > 0.0) {
    // Mass close to one: track the two excluded tails for precision.
    const double q = normal_cdf(-a) + normal_cdf(b);
    r.mass = 1.0 - q;
    r.bits = -std::log1p(-q) / std::numbers::ln2;
  } else {
    r.mass = normal_cdf(a) - normal_cdf(b);
    r.bits = -std::log2(std::max(r.mass, kLikelihoodFloor));
  }
  const double pa = normal_pdf(a);
  const double pb = normal_pdf(b);
  r.d_mass_d_abs = (-pa + pb) / sigma;
  r.d_mass_d_sigma = (-a * pa + b * pb) / sigma;
  return r;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw ShapeError("backward needs a single-element root");
  }
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

Var scalar(double v) { return Var(Tensor(Shape{1, 1, 1, 1}, v), false); }

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw ShapeError("conv2d: input " + xs.str() + " vs weight " + ws.str());
  }
  const int k = ws.h;
  const int out_c = ws.n;
  const int out_h = (xs.h + 2 * pad - k) / stride + 1;
  const int out_w = (xs.w + 2 * pad - k) / stride + 1;
  if (out_h <= 0 || out_w <= 0) throw ShapeError("conv2d: empty output");
  const int pixels = out_h * out_w;
  const int patch = xs.c * k * k;
  const bool direct = k == 1 && stride == 1 && pad == 0;

  Tensor out(Shape{xs.n, out_c, out_h, out_w});
  ConstMapMat wm(weight.value().data(), out_c, patch);
  Buffer col(direct ? 0 : static_cast<std::size_t>(patch) * pixels);
  for (int n = 0; n < xs.n; ++n) {
    const double* xn = x.value().plane(n, 0);
    if (!direct) {
      im2col(xn, xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w, col.data());
    }
    ConstMapMat cm(direct ? xn : col.data(), patch, pixels);
    MapMat om(out.plane(n, 0), out_c, pixels);
    om.noalias() = wm * cm;
    if (bias.defined()) {
      for (int c = 0; c < out_c; ++c) om.row(c).array() += bias.value()[c];
    }
  }

  const bool has_bias = bias.defined();
  auto fn = [=](Node& self) {
    Node& xn_node = *self.inputs[0];
    Node& w_node = *self.inputs[1];
    const bool gx = xn_node.requires_grad;
    const bool gw = w_node.requires_grad;
    const bool gb = has_bias && wants(self, 2);
    ConstMapMat wmat(w_node.value.data(), out_c, patch);
    Buffer colbuf(direct ? 0
                                      : static_cast<std::size_t>(patch) *
                                            pixels);
    Buffer gcol(static_cast<std::size_t>(patch) * pixels);
    for (int n = 0; n < xs.n; ++n) {
      ConstMapMat g(self.grad.plane(n, 0), out_c, pixels);
      if (gw) {
        const double* xn = xn_node.value.plane(n, 0);
        if (!direct) {
          im2col(xn, xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w,
                 colbuf.data());
        }
        ConstMapMat cm(direct ? xn : colbuf.data(), patch, pixels);
        MapMat gwm(w_node.grad_buffer().data(), out_c, patch);
        gwm.noalias() += g * cm.transpose();
      }
      if (gb) {
        Tensor& gbias = self.inputs[2]->grad_buffer();
        for (int c = 0; c < out_c; ++c) gbias[c] += g.row(c).sum();
      }
      if (gx) {
        Tensor& gxt = xn_node.grad_buffer();
        if (direct) {
          MapMat gxm(gxt.plane(n, 0), patch, pixels);
          gxm.noalias() += wmat.transpose() * g;
        } else {
          MapMat gcm(gcol.data(), patch, pixels);
          gcm.noalias() = wmat.transpose() * g;
          col2im(gcol.data(), xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w,
                 gxt.plane(n, 0));
        }
      }
    }
  };
  if (has_bias) return make(std::move(out), {x, weight, bias}, fn);
  return make(std::move(out), {x, weight}, fn);
}

Var pixel_shuffle(const Var& x, int r) {
  const Shape s = x.shape();
  if (s.c % (r * r) != 0) throw ShapeError("pixel_shuffle: channels % r^2");
  const int oc = s.c / (r * r);
  Tensor out(Shape{s.n, oc, s.h * r, s.w * r});
  auto index_in = [=](int n, int c, int i, int j, int y, int xx) {
    return ((static_cast<std::size_t>(n) * s.c + (c * r + i) * r + j) * s.h +
            y) * s.w + xx;
  };
  const Tensor& in = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < oc; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx)
              out.at(n, c, y * r + i, xx * r + j) =
                  in[index_in(n, c, i, j, y, xx)];
  return make(std::move(out), {x}, [=](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < oc; ++c)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < r; ++j)
            for (int y = 0; y < s.h; ++y)
              for (int xx = 0; xx < s.w; ++xx)
                g[index_in(n, c, i, j, y, xx)] +=
                    self.grad.at(n, c, y * r + i, xx * r + j);
  });
}

Var gdn(const Var& x, const Var& beta, const Var& gamma, bool inverse) {
  const Shape s = x.shape();
  const int c = s.c;
  if (beta.value().size() != static_cast<std::size_t>(c) ||
      gamma.value().size() != static_cast<std::size_t>(c) * c) {
    throw ShapeError("gdn: parameter shapes do not match channels");
  }
  for (double b : beta.value().values()) {
    if (!(b > 0.0)) throw RangeError("gdn: beta must be positive");
  }
  const int p = static_cast<int>(s.plane());
  const double e = inverse ? 0.5 : -0.5;
  Tensor out(s);
  Tensor norm(s);  // beta + gamma x^2
  ConstMapMat gm(gamma.value().data(), c, c);
  Eigen::Map<const Eigen::VectorXd> bv(beta.value().data(), c);
  RowMat sq(c, p);
  for (int n = 0; n < s.n; ++n) {
    ConstMapMat xm(x.value().plane(n, 0), c, p);
    sq = xm.array().square();
    MapMat nm(norm.plane(n, 0), c, p);
    nm.noalias() = gm * sq;
    nm.colwise() += bv;
    MapMat om(out.plane(n, 0), c, p);
    om = xm.array() * nm.array().pow(e);
  }
  return make(std::move(out), {x, beta, gamma},
              [=, norm = std::move(norm)](Node& self) {
                Node& xn = *self.inputs[0];
                ConstMapMat gmat(self.inputs[2]->value.data(), c, c);
                RowMat t(c, p);
                RowMat sqx(c, p);
                for (int n = 0; n < s.n; ++n) {
                  ConstMapMat xm(xn.value.plane(n, 0), c, p);
                  ConstMapMat nm(norm.plane(n, 0), c, p);
                  ConstMapMat g(self.grad.plane(n, 0), c, p);
                  // dL/dnorm
                  t = g.array() * xm.array() * e * nm.array().pow(e - 1.0);
                  if (xn.requires_grad) {
                    MapMat gx(xn.grad_buffer().plane(n, 0), c, p);
                    gx.array() += g.array() * nm.array().pow(e) +
                                  2.0 * xm.array() *
                                      (gmat.transpose() * t).array();
                  }
                  if (wants(self, 1)) {
                    Tensor& gb = self.inputs[1]->grad_buffer();
                    for (int i = 0; i < c; ++i) gb[i] += t.row(i).sum();
                  }
                  if (wants(self, 2)) {
                    sqx = xm.array().square();
                    MapMat gg(self.inputs[2]->grad_buffer().data(), c, c);
                    gg.noalias() += t * sqx.transpose();
                  }
                }
              });
}

Var add(const Var& a, const Var& b) {
  const Broadcast bc = broadcast(a.shape(), b.shape());
  Tensor out(bc.out);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = av[ia] + bv[ib];
  });
  return make(std::move(out), {a, b}, [bc](Node& self) {
    const bool ga = wants(self, 0);
    const bool gb = wants(self, 1);
    Tensor* ta = ga ? &self.inputs[0]->grad_buffer() : nullptr;
    Tensor* tb = gb ? &self.inputs[1]->grad_buffer() : nullptr;
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) (*ta)[ia] += self.grad[o];
      if (gb) (*tb)[ib] += self.grad[o];
    });
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  const Broadcast bc = broadcast(a.shape(), b.shape());
  Tensor out(bc.out);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = av[ia] * bv[ib];
  });
  return make(std::move(out), {a, b}, [bc](Node& self) {
    const bool ga = wants(self, 0);
    const bool gb = wants(self, 1);
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    Tensor* ta = ga ? &self.inputs[0]->grad_buffer() : nullptr;
    Tensor* tb = gb ? &self.inputs[1]->grad_buffer() : nullptr;
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) (*ta)[ia] += self.grad[o] * bv[ib];
      if (gb) (*tb)[ib] += self.grad[o] * av[ia];
    });
  });
}

Var div(const Var& a, const Var& b) {
  const Broadcast bc = broadcast(a.shape(), b.shape());
  Tensor out(bc.out);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = av[ia] / bv[ib];
  });
  return make(std::move(out), {a, b}, [bc](Node& self) {
    const bool ga = wants(self, 0);
    const bool gb = wants(self, 1);
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    Tensor* ta = ga ? &self.inputs[0]->grad_buffer() : nullptr;
    Tensor* tb = gb ? &self.inputs[1]->grad_buffer() : nullptr;
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) (*ta)[ia] += self.grad[o] / bv[ib];
      if (gb) (*tb)[ib] -= self.grad[o] * av[ia] / (bv[ib] * bv[ib]);
    });
  });
}

Var scale(const Var& x, double s) {
  return unary(
      x, [s](double v) { return v * s; },
      [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return unary(
      x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var softplus(const Var& x) {
  return unary(
      x,
      [](double v) {
        return v > 30.0 ? v : std::log1p(std::exp(v));
      },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var square(const Var& x) {
  return unary(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Var pow_positive(const Var& x, double p, double eps) {
  return unary(
      x, [p, eps](double v) { return std::pow(std::max(v, eps), p); },
      [p, eps](double v, double) {
        return v > eps ? p * std::pow(v, p - 1.0) : 0.0;
      });
}

Var lower_bound(const Var& x, double bound) {
  Tensor out(x.shape());
  const Tensor& in = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(in[i], bound);
  return make(std::move(out), {x}, [bound](Node& self) {
    Node& in_node = *self.inputs[0];
    Tensor& g = in_node.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = self.grad[i];
      if (in_node.value[i] >= bound || gi < 0.0) g[i] += gi;
    }
  });
}

Var clamp(const Var& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var mean_channels(const Var& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  const std::size_t p = s.plane();
  for (int n = 0; n < s.n; ++n) {
    double* o = out.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const double* src = x.value().plane(n, c);
      for (std::size_t i = 0; i < p; ++i) o[i] += src[i];
    }
    for (std::size_t i = 0; i < p; ++i) o[i] /= s.c;
  }
  return make(std::move(out), {x}, [s, p](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      const double* go = self.grad.plane(n, 0);
      for (int c = 0; c < s.c; ++c) {
        double* dst = g.plane(n, c);
        for (std::size_t i = 0; i < p; ++i) dst[i] += go[i] / s.c;
      }
    }
  });
}

Var mean_spatial(const Var& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, 1, 1});
  const std::size_t p = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x.value().plane(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < p; ++i) acc += src[i];
      out.at(n, c, 0, 0) = acc / static_cast<double>(p);
    }
  }
  return make(std::move(out), {x}, [s, p](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double go = self.grad.at(n, c, 0, 0) / static_cast<double>(p);
        double* dst = g.plane(n, c);
        for (std::size_t i = 0; i < p; ++i) dst[i] += go;
      }
    }
  });
}

Var mean_per_sample(const Var& x) {
  const Shape s = x.shape();
  const std::size_t per = s.numel() / s.n;
  Tensor out(Shape{s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    const double* src = x.value().data() + n * per;
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += src[i];
    out[n] = acc / static_cast<double>(per);
  }
  return make(std::move(out), {x}, [s, per](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      const double go = self.grad[n] / static_cast<double>(per);
      double* dst = g.data() + n * per;
      for (std::size_t i = 0; i < per; ++i) dst[i] += go;
    }
  });
}

Var sum(const Var& x) {
  Tensor out(Shape{1, 1, 1, 1}, x.value().sum());
  return make(std::move(out), {x}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double go = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
  });
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape s = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
      throw ShapeError("concat_channels: " + ps.str() + " vs " + s.str());
    }
    total += ps.c;
  }
  s.c = total;
  Tensor out(s);
  const std::size_t plane = s.plane();
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const Shape& ps = p.shape();
    for (int n = 0; n < s.n; ++n) {
      std::copy_n(p.value().plane(n, 0), ps.c * plane, out.plane(n, off));
    }
    off += ps.c;
  }
  return make_n(std::move(out), parts, [s, plane, offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (!wants(self, k)) continue;
      Tensor& g = self.inputs[k]->grad_buffer();
      const int pc = g.shape().c;
      for (int n = 0; n < s.n; ++n) {
        const double* src = self.grad.plane(n, offsets[k]);
        double* dst = g.plane(n, 0);
        for (std::size_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice_channels(const Var& x, int first, int count) {
  const Shape s = x.shape();
  if (first < 0 || count < 0 || first + count > s.c) {
    throw ShapeError("slice_channels out of range");
  }
  Tensor out(Shape{s.n, count, s.h, s.w});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(x.value().plane(n, first), count * plane, out.plane(n, 0));
  }
  return make(std::move(out), {x}, [=](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      const double* src = self.grad.plane(n, 0);
      double* dst = g.plane(n, first);
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

Var crop_spatial(const Var& x, int h, int w) {
  const Shape s = x.shape();
  if (h > s.h || w > s.w) throw ShapeError("crop larger than input");
  if (h == s.h && w == s.w) return x;
  Tensor out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) out.at(n, c, y, xx) = x.value().at(n, c, y, xx);
  return make(std::move(out), {x}, [=](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) g.at(n, c, y, xx) += self.grad.at(n, c, y, xx);
  });
}

Var avg_pool2(const Var& x) {
  const Shape s = x.shape();
  const int oh = s.h / 2;
  const int ow = s.w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("avg_pool2 on too small input");
  Tensor out(Shape{s.n, s.c, oh, ow});
  const Tensor& in = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
          out.at(n, c, y, xx) =
              0.25 * (in.at(n, c, 2 * y, 2 * xx) + in.at(n, c, 2 * y, 2 * xx + 1) +
                      in.at(n, c, 2 * y + 1, 2 * xx) +
                      in.at(n, c, 2 * y + 1, 2 * xx + 1));
  return make(std::move(out), {x}, [=](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) {
            const double go = 0.25 * self.grad.at(n, c, y, xx);
            g.at(n, c, 2 * y, 2 * xx) += go;
            g.at(n, c, 2 * y, 2 * xx + 1) += go;
            g.at(n, c, 2 * y + 1, 2 * xx) += go;
            g.at(n, c, 2 * y + 1, 2 * xx + 1) += go;
          }
  });
}

Var separable_filter_valid(const Var& x, std::span<const double> taps) {
  const Shape s = x.shape();
  const int k = static_cast<int>(taps.size());
  const int oh = s.h - k + 1;
  const int ow = s.w - k + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("filter larger than input");
  std::vector<double> kern(taps.begin(), taps.end());
  Tensor out(Shape{s.n, s.c, oh, ow});
  Buffer tmp(static_cast<std::size_t>(s.h) * ow);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x.value().plane(n, c);
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (int t = 0; t < k; ++t) acc += kern[t] * src[y * s.w + xx + t];
          tmp[y * ow + xx] = acc;
        }
      double* dst = out.plane(n, c);
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (int t = 0; t < k; ++t) acc += kern[t] * tmp[(y + t) * ow + xx];
          dst[y * ow + xx] = acc;
        }
    }
  }
  return make(std::move(out), {x}, [=](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    Buffer gtmp(static_cast<std::size_t>(s.h) * ow);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        std::fill(gtmp.begin(), gtmp.end(), 0.0);
        const double* go = self.grad.plane(n, c);
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx)
            for (int t = 0; t < k; ++t)
              gtmp[(y + t) * ow + xx] += kern[t] * go[y * ow + xx];
        double* dst = g.plane(n, c);
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < ow; ++xx)
            for (int t = 0; t < k; ++t)
              dst[y * s.w + xx + t] += kern[t] * gtmp[y * ow + xx];
      }
    }
  });
}

double gaussian_bin_mass(double y, double mu, double sigma) {
  return gaussian_bin(y, mu, sigma).mass;
}

Var gaussian_bits(const Var& y, const Var& mu, const Var& sigma) {
  const Shape s = y.shape();
  if (!(mu.shape() == s) || !(sigma.shape() == s)) {
    throw ShapeError("gaussian_bits: parameter shapes must match latent");
  }
  Tensor out(s);
  const Tensor& yv = y.value();
  const Tensor& mv = mu.value();
  const Tensor& sv = sigma.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = gaussian_bin(yv[i], mv[i], sv[i]).bits;
  }
  return make(std::move(out), {y, mu, sigma}, [](Node& self) {
    const Tensor& yv = self.inputs[0]->value;
    const Tensor& mv = self.inputs[1]->value;
    const Tensor& sv = self.inputs[2]->value;
    Tensor* gy = wants(self, 0) ? &self.inputs[0]->grad_buffer() : nullptr;
    Tensor* gm = wants(self, 1) ? &self.inputs[1]->grad_buffer() : nullptr;
    Tensor* gs = wants(self, 2) ? &self.inputs[2]->grad_buffer() : nullptr;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const BinMass b = gaussian_bin(yv[i], mv[i], sv[i]);
      if (b.mass < kLikelihoodFloor) continue;
      const double dbits = -self.grad[i] / (b.mass * std::numbers::ln2);
      const double sign = yv[i] >= mv[i] ? 1.0 : -1.0;
      const double d_abs = dbits * b.d_mass_d_abs;
      if (gy) (*gy)[i] += sign * d_abs;
      if (gm) (*gm)[i] -= sign * d_abs;
      if (gs) (*gs)[i] += dbits * b.d_mass_d_sigma;
    }
  });
}

}  // namespace fgs::ad
