#include "fgs/fgs_model.hpp"

#include <algorithm>
#include <cstring>

#include "fgs/archive.hpp"
#include "fgs/error.hpp"

namespace fgs {

FgsModel::FgsModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Initializer init(init_seed);
  core_ = std::make_unique<CoreModel>(cfg_, init);
  entropy_ = std::make_unique<EntropyModel>(cfg_, init);
}

ForwardOutputs FgsModel::forward(const Var& x, QuantMode mode, int units,
                                 NoiseSource* noise, PadUnit unit) const {
  ForwardOutputs out;
  out.units = units;
  out.unit = unit;

  const Var y_b = core_->basic_encode(x);
  const int h = y_b.shape().h;
  const int w = y_b.shape().w;
  out.l_b = quantize(y_b, mode, noise);
  const Var z_b = quantize(entropy_->hyper_encode_basic(y_b), mode, noise);
  auto [mu_b, sigma_b] =
      entropy_->gaussian_params_base(entropy_->hyper_decode_basic(z_b, h, w));
  out.bits_lb = ad::gaussian_bits(out.l_b, mu_b, sigma_b);
  out.bits_zb = entropy_->prior_basic().bits(z_b);

  out.x_hat_base = core_->shared_decode(out.l_b, std::nullopt);
  const Var x_s = core_->residual_features(x, out.x_hat_base);
  const Var y_s = core_->frr_gate(core_->scalable_encode(x_s), out.l_b);
  out.l_s = quantize(y_s, mode, noise);
  const Var z_s = quantize(entropy_->hyper_encode_scalable(y_s), mode, noise);
  auto [mu_s, sigma_s] = entropy_->gaussian_params_mem(
      entropy_->hyper_decode_scalable(z_s, h, w), out.l_b);
  out.bits_ls = ad::gaussian_bits(out.l_s, mu_s, sigma_s);
  out.bits_zs = entropy_->prior_scalable().bits(z_s);

  if (units == 0) {
    out.x_hat_prefix = out.x_hat_base;
  } else {
    out.x_hat_prefix =
        core_->shared_decode(out.l_b, zero_pad_channels(out.l_s, units, unit));
  }
  return out;
}

Analysis FgsModel::analyze(const Image& image) const {
  const Var x = ad::constant(image.to_tensor());
  const Var y_b = core_->basic_encode(x);
  const int h = y_b.shape().h;
  const int w = y_b.shape().w;

  Analysis a;
  a.pack.l_b_hat = quantize(y_b.value(), QuantMode::kEvalRound);
  a.pack.z_b_hat =
      quantize(entropy_->hyper_encode_basic(y_b).value(), QuantMode::kEvalRound);
  const Var l_b = ad::constant(a.pack.l_b_hat);
  const Var x_hat = core_->shared_decode(l_b, std::nullopt);
  const Var y_s = core_->frr_gate(
      core_->scalable_encode(core_->residual_features(x, x_hat)), l_b);
  a.pack.l_s_hat = quantize(y_s.value(), QuantMode::kEvalRound);
  a.pack.z_s_hat =
      quantize(entropy_->hyper_encode_scalable(y_s).value(), QuantMode::kEvalRound);

  a.params_b = base_params(a.pack.z_b_hat, h, w);
  a.params_s = scalable_params(a.pack.z_s_hat, a.pack.l_b_hat);
  return a;
}

EntropyParams FgsModel::base_params(const Tensor& z_b_hat, int h, int w) const {
  auto [mu, sigma] = entropy_->gaussian_params_base(
      entropy_->hyper_decode_basic(ad::constant(z_b_hat), h, w));
  return EntropyParams{mu.value(), sigma.value(), kSigmaFloor};
}

EntropyParams FgsModel::scalable_params(const Tensor& z_s_hat,
                                        const Tensor& l_b_hat) const {
  const Shape& s = l_b_hat.shape();
  auto [mu, sigma] = entropy_->gaussian_params_mem(
      entropy_->hyper_decode_scalable(ad::constant(z_s_hat), s.h, s.w),
      ad::constant(l_b_hat));
  return EntropyParams{mu.value(), sigma.value(), kSigmaFloor};
}

Image FgsModel::reconstruct(const Tensor& l_b_hat, const Tensor& l_s_padded) const {
  const Var x_hat = core_->shared_decode(ad::constant(l_b_hat),
                                         ad::constant(l_s_padded));
  return Image::from_tensor(x_hat.value());
}

Image FgsModel::reconstruct_prefix(const LatentPack& pack, int units,
                                   PadUnit unit) const {
  return reconstruct(pack.l_b_hat, zero_pad_channels(pack.l_s_hat, units, unit));
}

RateReport FgsModel::rate_report(const Analysis& a, PadUnit unit) const {
  Tensor bits_lb;
  Tensor bits_ls;
  gaussian_rate(a.pack.l_b_hat, a.params_b, nullptr, &bits_lb);
  gaussian_rate(a.pack.l_s_hat, a.params_s, nullptr, &bits_ls);
  const Tensor bits_zb = entropy_->prior_basic().bits(ad::constant(a.pack.z_b_hat)).value();
  const Tensor bits_zs =
      entropy_->prior_scalable().bits(ad::constant(a.pack.z_s_hat)).value();
  const std::size_t pixels = static_cast<std::size_t>(a.pack.l_b_hat.shape().h) *
                             a.pack.l_b_hat.shape().w * cfg_.downsample *
                             cfg_.downsample;
  return fgs::rate_report(bits_lb, bits_ls, bits_zb, bits_zs, pixels, unit);
}

std::vector<NamedParam> FgsModel::parameters() {
  std::vector<NamedParam> out;
  auto collect = [&out](const std::string& name, Var& v) {
    out.push_back({name, &v});
  };
  core_->visit(collect);
  entropy_->visit(collect);
  std::sort(out.begin(), out.end(),
            [](const NamedParam& a, const NamedParam& b) { return a.name < b.name; });
  return out;
}

void FgsModel::project() { core_->project(); }

std::uint64_t FgsModel::weights_hash() {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : parameters()) {
    for (char ch : p.name) {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
    const Tensor& t = p.var->value();
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void FgsModel::save(const std::string& path) {
  Archive a;
  a.kind = "fgs-model";
  a.meta["config"] = cfg_;
  for (const auto& p : parameters()) a.tensors.emplace(p.name, p.var->value());
  a.save(path);
}

void FgsModel::load_weights(const std::map<std::string, Tensor>& tensors) {
  for (const auto& p : parameters()) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw FormatError("checkpoint lacks tensor " + p.name);
    if (!(it->second.shape() == p.var->value().shape())) {
      throw FormatError("checkpoint tensor " + p.name + " has shape " +
                        it->second.shape().str() + ", expected " +
                        p.var->value().shape().str());
    }
    p.var->mutable_value() = it->second;
  }
}

std::unique_ptr<FgsModel> FgsModel::load(const std::string& path) {
  const Archive a = Archive::load(path);
  if (a.kind != "fgs-model" && a.kind != "fgs-train-state") {
    throw FormatError(path + ": not a model checkpoint");
  }
  const ModelConfig cfg = a.meta.at("config").get<ModelConfig>();
  auto model = std::make_unique<FgsModel>(cfg, 0);
  model->load_weights(a.tensors);
  return model;
}

std::unique_ptr<FgsModel> FgsModel::load(const std::string& path,
                                         const ModelConfig& expected) {
  const Archive a = Archive::load(path);
  const ModelConfig cfg = a.meta.at("config").get<ModelConfig>();
  if (!(cfg == expected)) {
    throw FormatError(path + ": checkpoint config " + nlohmann::json(cfg).dump() +
                      " does not match expected " + nlohmann::json(expected).dump());
  }
  auto model = std::make_unique<FgsModel>(cfg, 0);
  model->load_weights(a.tensors);
  return model;
}

}  // namespace fgs
