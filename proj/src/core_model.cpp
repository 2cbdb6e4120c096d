#include "fgs/core_model.hpp"

#include <string>

#include "fgs/error.hpp"

namespace fgs {

int unit_count(int c2, PadUnit unit) {
  return unit == PadUnit::kChannel ? c2 : 2 * c2;
}

Tensor prefix_mask(int c2, int h, int w, int units, PadUnit unit) {
  if (units < 0 || units > unit_count(c2, unit)) {
    throw RangeError("prefix of " + std::to_string(units) +
                     " units outside [0, " +
                     std::to_string(unit_count(c2, unit)) + "]");
  }
  Tensor mask(Shape{1, c2, h, w}, 0.0);
  const int plane = h * w;
  if (unit == PadUnit::kChannel) {
    std::fill_n(mask.data(), static_cast<std::size_t>(units) * plane, 1.0);
    return mask;
  }
  const int half = first_half_size(plane);
  std::fill_n(mask.data(), static_cast<std::size_t>(units / 2) * plane, 1.0);
  if (units % 2 == 1) std::fill_n(mask.plane(0, units / 2), half, 1.0);
  return mask;
}

Tensor zero_pad_channels(const Tensor& l_s, int units, PadUnit unit) {
  const Shape& s = l_s.shape();
  const Tensor mask = prefix_mask(s.c, s.h, s.w, units, unit);
  Tensor out = l_s;
  const std::size_t per = mask.size();
  for (int n = 0; n < s.n; ++n) {
    double* dst = out.data() + n * per;
    for (std::size_t i = 0; i < per; ++i) dst[i] *= mask[i];
  }
  return out;
}

Var zero_pad_channels(const Var& l_s, int units, PadUnit unit) {
  const Shape& s = l_s.shape();
  return ad::mul(l_s, ad::constant(prefix_mask(s.c, s.h, s.w, units, unit)));
}

AnalysisTransform::AnalysisTransform(int in, int width, int out, int stages,
                                     Initializer& init) {
  for (int s = 0; s < stages; ++s) {
    const bool last = s + 1 == stages;
    down_.emplace_back(s == 0 ? in : width, last ? out : width, 3, 2, init);
    if (!last) {
      gdn_.emplace_back(width, false);
      res_.emplace_back(width, init);
    }
  }
}

Var AnalysisTransform::operator()(const Var& x) const {
  Var h = x;
  for (std::size_t s = 0; s < down_.size(); ++s) {
    h = down_[s](h);
    if (s < gdn_.size()) h = res_[s](gdn_[s](h));
  }
  return h;
}

void AnalysisTransform::visit(const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t s = 0; s < down_.size(); ++s) {
    const std::string p = prefix + "." + std::to_string(s);
    down_[s].visit(p + ".down", f);
    if (s < gdn_.size()) {
      gdn_[s].visit(p + ".gdn", f);
      res_[s].visit(p + ".res", f);
    }
  }
}

void AnalysisTransform::project() {
  for (auto& g : gdn_) g.project();
}

SynthesisTransform::SynthesisTransform(int in, int width, int stages,
                                       Initializer& init) {
  for (int s = 0; s < stages; ++s) {
    const bool last = s + 1 == stages;
    up_.emplace_back(s == 0 ? in : width, last ? 3 : width, 2, init);
    if (!last) {
      igdn_.emplace_back(width, true);
      res_.emplace_back(width, init);
    }
  }
}

Var SynthesisTransform::operator()(const Var& x) const {
  Var h = x;
  for (std::size_t s = 0; s < up_.size(); ++s) {
    h = up_[s](h);
    if (s < igdn_.size()) h = res_[s](igdn_[s](h));
  }
  return h;
}

void SynthesisTransform::visit(const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t s = 0; s < up_.size(); ++s) {
    const std::string p = prefix + "." + std::to_string(s);
    up_[s].visit(p + ".up", f);
    if (s < igdn_.size()) {
      igdn_[s].visit(p + ".igdn", f);
      res_[s].visit(p + ".res", f);
    }
  }
}

void SynthesisTransform::project() {
  for (auto& g : igdn_) g.project();
}

CoreModel::CoreModel(const ModelConfig& cfg, Initializer& init) : cfg_(cfg) {
  cfg_.validate();
  const int stages = cfg_.stages();
  basic_encoder_ = AnalysisTransform(3, cfg_.base_width, cfg_.c1, stages, init);
  scalable_encoder_ = AnalysisTransform(kResidualChannels, cfg_.base_width,
                                        cfg_.c2, stages, init);
  squeeze_ = Conv2d(6, kResidualChannels, 3, 1, init);
  frr_ = GuidedGating(cfg_.c1, cfg_.c2, cfg_.c2, cfg_.base_width, init);
  ffm_ = GuidedGating(cfg_.c2, cfg_.c2, cfg_.c1 + cfg_.c2, cfg_.base_width, init);
  decoder_ = SynthesisTransform(cfg_.c1 + cfg_.c2, cfg_.base_width, stages, init);
}

void CoreModel::check_image_dims(const Shape& s) const {
  if (s.c != 3) throw ShapeError("expected 3-channel image, got " + s.str());
  if (s.h % cfg_.downsample != 0 || s.w % cfg_.downsample != 0) {
    throw ShapeError("image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " not divisible by downsample " +
                     std::to_string(cfg_.downsample));
  }
}

Var CoreModel::basic_encode(const Var& image) const {
  check_image_dims(image.shape());
  return basic_encoder_(image);
}

Var CoreModel::residual_features(const Var& x, const Var& x_hat) const {
  if (!(x.shape() == x_hat.shape())) {
    throw ShapeError("residual_features: " + x.shape().str() + " vs " +
                     x_hat.shape().str());
  }
  const Var both[] = {x, x_hat};
  return squeeze_(ad::concat_channels(both));
}

Var CoreModel::scalable_encode(const Var& x_s) const {
  const Shape& s = x_s.shape();
  if (s.c != kResidualChannels || s.h % cfg_.downsample != 0 ||
      s.w % cfg_.downsample != 0) {
    throw ShapeError("scalable_encode: bad residual shape " + s.str());
  }
  return scalable_encoder_(x_s);
}

Var CoreModel::frr_gate(const Var& l_s_raw, const Var& l_b) const {
  const Shape& a = l_s_raw.shape();
  const Shape& b = l_b.shape();
  if (a.c != cfg_.c2 || b.c != cfg_.c1 || a.n != b.n || a.h != b.h ||
      a.w != b.w) {
    throw ShapeError("frr_gate: " + a.str() + " vs guide " + b.str());
  }
  if (!cfg_.toggles.frr) return l_s_raw;
  return frr_(l_s_raw, l_b);
}

Var CoreModel::ffm_fuse(const Var& l_in, const Var& l_s) const {
  const Shape& a = l_in.shape();
  const Shape& b = l_s.shape();
  if (a.c != cfg_.c1 + cfg_.c2 || b.c != cfg_.c2 || a.n != b.n || a.h != b.h ||
      a.w != b.w) {
    throw ShapeError("ffm_fuse: " + a.str() + " vs guide " + b.str());
  }
  if (!cfg_.toggles.ffm) return l_in;
  return ffm_(l_in, l_s);
}

Var CoreModel::shared_decode(const Var& l_b, const std::optional<Var>& l_s) const {
  const Shape& b = l_b.shape();
  if (b.c != cfg_.c1) throw ShapeError("shared_decode: l_b " + b.str());
  Var scalable = l_s ? *l_s
                     : ad::constant(Tensor(Shape{b.n, cfg_.c2, b.h, b.w}, 0.0));
  const Shape& s = scalable.shape();
  if (s.c != cfg_.c2 || s.n != b.n || s.h != b.h || s.w != b.w) {
    throw ShapeError("shared_decode: l_s " + s.str() + " vs l_b " + b.str());
  }
  const Var parts[] = {l_b, scalable};
  return decoder_(ffm_fuse(ad::concat_channels(parts), scalable));
}

void CoreModel::visit(const ParamVisitor& f) {
  basic_encoder_.visit("g_a", f);
  scalable_encoder_.visit("g_a1", f);
  squeeze_.visit("squeeze", f);
  frr_.visit("frr", f);
  ffm_.visit("ffm", f);
  decoder_.visit("g_s", f);
}

void CoreModel::project() {
  basic_encoder_.project();
  scalable_encoder_.project();
  decoder_.project();
}

}  // namespace fgs
