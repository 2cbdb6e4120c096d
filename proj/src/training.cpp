#include "fgs/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "fgs/archive.hpp"
#include "fgs/metrics.hpp"

namespace fgs {
namespace {

const std::set<std::string> kModelKeys = {"c1",  "c2",  "downsample", "hyper_channels",
                                          "base_width", "frr", "ffm", "mem"};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t tag) {
  return splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ a);
}

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

Distortion distortion_from_string(const std::string& s) {
  if (s == "mse") return Distortion::kMse;
  if (s == "ms_ssim" || s == "ms-ssim") return Distortion::kMsSsim;
  throw FormatError("unknown distortion '" + s + "' (expected mse or ms_ssim)");
}

std::string to_string(Distortion d) { return d == Distortion::kMse ? "mse" : "ms_ssim"; }

}  // namespace

void TrainConfig::validate(const ModelConfig& model) const {
  if (crop <= 0 || crop % model.downsample != 0) {
    throw RangeError("crop " + std::to_string(crop) + " must be a positive multiple of " +
                     std::to_string(model.downsample));
  }
  if (distortion == Distortion::kMsSsim && crop < 11) {
    throw RangeError("ms_ssim training needs crop >= 11");
  }
  if (!(lr_initial > 0) || !(lr_reduced > 0)) throw RangeError("learning rates must be positive");
  if (!(lambda > 0)) throw RangeError("lambda must be positive");
  if (batch <= 0) throw RangeError("batch must be positive");
  if (steps < 0) throw RangeError("steps must be non-negative");
  if (clip_norm < 0) throw RangeError("clip_norm must be non-negative");
  if (log_every <= 0) throw RangeError("log_every must be positive");
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig cfg = ModelConfig::toy();
  auto it = model_overrides.find("preset");
  if (it != model_overrides.end()) {
    if (it->second == "paper") cfg = ModelConfig::paper_default();
    else if (it->second != "toy") throw FormatError("unknown preset '" + it->second + "'");
  }
  apply_overrides(cfg, model_overrides);
  cfg.lambda = lambda;
  cfg.w_schedule = w_schedule;
  cfg.validate();
  return cfg;
}

nlohmann::json train_signature(const TrainConfig& cfg) {
  return {{"crop", cfg.crop},
          {"batch", cfg.batch},
          {"lr_initial", cfg.lr_initial},
          {"lr_reduced", cfg.lr_reduced},
          {"lr_switch_step", cfg.lr_switch_step},
          {"clip_norm", cfg.clip_norm},
          {"distortion", to_string(cfg.distortion)},
          {"seed", cfg.seed}};
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  for (const auto& [key, value] : parse_key_values(text)) {
    try {
      if (key == "lambda") cfg.lambda = std::stod(value);
      else if (key == "w_schedule") cfg.w_schedule = weight_schedule_from_string(value);
      else if (key == "crop") cfg.crop = std::stoi(value);
      else if (key == "batch") cfg.batch = std::stoi(value);
      else if (key == "steps") cfg.steps = std::stoi(value);
      else if (key == "lr_initial") cfg.lr_initial = std::stod(value);
      else if (key == "lr_reduced") cfg.lr_reduced = std::stod(value);
      else if (key == "lr_switch_step") cfg.lr_switch_step = std::stoi(value);
      else if (key == "clip_norm") cfg.clip_norm = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "dataset") cfg.dataset_dir = value;
      else if (key == "distortion") cfg.distortion = distortion_from_string(value);
      else if (key == "log_every") cfg.log_every = std::stoi(value);
      else if (kModelKeys.count(key) || key == "preset") cfg.model_overrides[key] = value;
      else throw FormatError("unknown training key '" + key + "'");
    } catch (const std::logic_error&) {
      throw FormatError("bad value for '" + key + "': '" + value + "'");
    }
  }
  return cfg;
}

TrainConfig read_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

int sample_channels(std::mt19937_64& rng, int c2) {
  // Rejection sampling keeps the draw exactly uniform and independent of the
  // standard library's distribution implementation.
  const std::uint64_t n = static_cast<std::uint64_t>(c2) + 1;
  const std::uint64_t limit = (~0ULL) - (~0ULL) % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<int>(r % n);
}

double weight_w(int j, WeightSchedule schedule) {
  if (schedule == WeightSchedule::kLinear8) return 1.0 + j / 8.0;
  return 1.0 + static_cast<double>(j) * j / 64.0;
}

LossTerms rd_loss(const ad::Var& x, const ForwardOutputs& fwd, double lambda,
                  WeightSchedule schedule, Distortion distortion) {
  using namespace ad;
  const Shape& s = x.shape();
  const double pixels = static_cast<double>(s.n) * s.h * s.w;
  const int j = fwd.units;
  if (fwd.unit != PadUnit::kChannel) throw RangeError("rd_loss expects channel units");

  const Var rate_b = scale(add(sum(fwd.bits_lb), sum(fwd.bits_zb)), 1.0 / pixels);
  Var rate_s_bits = sum(fwd.bits_zs);
  if (j > 0) rate_s_bits = add(rate_s_bits, sum(slice_channels(fwd.bits_ls, 0, j)));
  const Var rate_s = scale(rate_s_bits, 1.0 / pixels);

  Var d_base;
  Var d_prefix;
  if (distortion == Distortion::kMse) {
    d_base = mse_255(x, fwd.x_hat_base);
    d_prefix = j == 0 ? d_base : mse_255(x, fwd.x_hat_prefix);
  } else {
    d_base = add_scalar(scale(ms_ssim(x, fwd.x_hat_base), -1.0), 1.0);
    d_prefix = j == 0 ? d_base
                      : add_scalar(scale(ms_ssim(x, fwd.x_hat_prefix), -1.0), 1.0);
  }

  LossTerms out;
  const Var base_term = add(rate_b, scale(mean(d_base), lambda));
  const Var prefix_term =
      add(add(rate_b, rate_s), scale(mean(d_prefix), lambda * weight_w(j, schedule)));
  out.loss = add(base_term, prefix_term);
  out.rate_base = rate_b.value()[0];
  out.rate_scalable = rate_s.value()[0];
  out.dist_base = mean(d_base).value()[0];
  out.dist_prefix = mean(d_prefix).value()[0];

  // PSNR is always reported from MSE, averaged per sample.
  const Tensor mse_b = mse_255(x, fwd.x_hat_base).value();
  const Tensor mse_j = mse_255(x, fwd.x_hat_prefix).value();
  for (int n = 0; n < s.n; ++n) {
    out.psnr_base += psnr_from_mse_255(mse_b[n]) / s.n;
    out.psnr_prefix += psnr_from_mse_255(mse_j[n]) / s.n;
  }
  return out;
}

CropSampler::CropSampler(const std::string& dataset_dir, int crop, std::uint64_t seed)
    : crop_(crop), seed_(seed) {
  for (const auto& path : list_images(dataset_dir)) {
    Image img = read_ppm(path);
    if (img.height() < crop || img.width() < crop) {
      std::cerr << "warning: skipping " << path << " (" << img.width() << "x"
                << img.height() << " is smaller than crop " << crop << ")\n";
      continue;
    }
    images_.push_back(std::move(img));
  }
  if (images_.empty()) {
    throw Error("dataset " + dataset_dir + " has no images of at least " +
                std::to_string(crop) + "x" + std::to_string(crop));
  }
}

CropSampler::CropSampler(std::vector<Image> images, int crop, std::uint64_t seed)
    : crop_(crop), seed_(seed) {
  for (auto& img : images) {
    if (img.height() < crop || img.width() < crop) {
      std::cerr << "warning: skipping " << img.width() << "x" << img.height()
                << " image smaller than crop " << crop << "\n";
      continue;
    }
    images_.push_back(std::move(img));
  }
  if (images_.empty()) throw Error("dataset has no usable images");
}

Image CropSampler::sample(std::int64_t index) const {
  const auto count = static_cast<std::int64_t>(images_.size());
  const std::int64_t epoch = index / count;
  const std::int64_t pos = index % count;

  std::vector<std::size_t> order(images_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 perm_rng(mix(seed_, static_cast<std::uint64_t>(epoch), 1));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[perm_rng() % i]);
  }
  const Image& img = images_[order[pos]];

  std::mt19937_64 pos_rng(mix(seed_, static_cast<std::uint64_t>(index), 2));
  const int y = static_cast<int>(pos_rng() % static_cast<std::uint64_t>(img.height() - crop_ + 1));
  const int x = static_cast<int>(pos_rng() % static_cast<std::uint64_t>(img.width() - crop_ + 1));
  return img.crop(y, x, crop_, crop_);
}

Tensor CropSampler::batch(std::int64_t step, int batch_size) const {
  std::vector<Tensor> parts;
  parts.reserve(batch_size);
  for (int b = 0; b < batch_size; ++b) {
    parts.push_back(sample(step * batch_size + b).to_tensor());
  }
  return stack_batch(parts);
}

std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step) {
  return std::mt19937_64(mix(seed, static_cast<std::uint64_t>(step), 3));
}

double learning_rate(const TrainConfig& cfg, std::int64_t step) {
  return step < cfg.lr_switch_step ? cfg.lr_initial : cfg.lr_reduced;
}

StepReport train_step(FgsModel& model, TrainState& state, const Tensor& batch,
                      const TrainConfig& cfg) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  constexpr double kAverageRate = 0.05;

  const int c2 = model.config().c2;
  std::mt19937_64 rng = step_rng(cfg.seed, state.step);
  const int j = sample_channels(rng, c2);
  NoiseSource noise(rng());

  auto params = model.parameters();
  for (auto& p : params) p.var->zero_grad();

  const ad::Var x = ad::constant(batch);
  const ForwardOutputs fwd = model.forward(x, QuantMode::kTrainNoise, j, &noise);
  const LossTerms terms =
      rd_loss(x, fwd, cfg.lambda, cfg.w_schedule, cfg.distortion);
  const double loss = terms.loss.value()[0];
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << state.step << " (j=" << j
        << ", rate_base=" << terms.rate_base << ", rate_scalable=" << terms.rate_scalable
        << ", dist_base=" << terms.dist_base << ", dist_prefix=" << terms.dist_prefix
        << ")";
    throw TrainingError(msg.str());
  }
  ad::backward(terms.loss);

  double grad_scale = 1.0;
  if (cfg.clip_norm > 0) {
    double sq = 0.0;
    for (const auto& p : params) {
      const Tensor& g = p.var->grad();
      for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
      throw TrainingError("non-finite gradient norm at step " + std::to_string(state.step));
    }
    if (norm > cfg.clip_norm) grad_scale = cfg.clip_norm / norm;
  }

  const double lr = learning_rate(cfg, state.step);
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(kBeta1, t);
  const double bc2 = 1.0 - std::pow(kBeta2, t);
  for (auto& p : params) {
    const Tensor& g = p.var->grad();
    if (g.size() == 0) continue;  // parameter unused by this configuration
    Tensor& w = p.var->mutable_value();
    auto [mit, m_new] = state.adam_m.try_emplace(p.name, w.shape());
    auto [vit, v_new] = state.adam_v.try_emplace(p.name, w.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * grad_scale;
      m[i] = kBeta1 * m[i] + (1 - kBeta1) * gi;
      v[i] = kBeta2 * v[i] + (1 - kBeta2) * gi * gi;
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
    }
  }
  model.project();

  StepReport r;
  r.step = state.step;
  r.j = j;
  r.loss = loss;
  r.bits_base = terms.rate_base;
  r.bits_scalable = terms.rate_scalable;
  r.psnr_base = terms.psnr_base;
  r.psnr_full = terms.psnr_prefix;

  RunningAverages& a = state.averages;
  auto update = [&](double& avg, double v) {
    avg = a.count == 0 ? v : avg + kAverageRate * (v - avg);
  };
  update(a.loss, r.loss);
  update(a.bits_base, r.bits_base);
  update(a.bits_scalable, r.bits_scalable);
  update(a.psnr_base, r.psnr_base);
  update(a.psnr_full, r.psnr_full);
  ++a.count;
  ++state.step;
  return r;
}

void TrainState::save(const std::string& path, FgsModel& model,
                      const TrainConfig& cfg) const {
  Archive a;
  a.kind = "fgs-train-state";
  a.meta["config"] = model.config();
  a.meta["step"] = step;
  a.meta["train"] = train_signature(cfg);
  a.meta["averages"] = {{"loss", averages.loss},
                        {"bits_base", averages.bits_base},
                        {"bits_scalable", averages.bits_scalable},
                        {"psnr_base", averages.psnr_base},
                        {"psnr_full", averages.psnr_full},
                        {"count", averages.count}};
  for (const auto& p : model.parameters()) a.tensors.emplace(p.name, p.var->value());
  for (const auto& [name, t] : adam_m) a.tensors.emplace("adam.m." + name, t);
  for (const auto& [name, t] : adam_v) a.tensors.emplace("adam.v." + name, t);
  a.save(path);
}

TrainState TrainState::load(const std::string& path, std::unique_ptr<FgsModel>& model) {
  const Archive a = Archive::load(path);
  if (a.kind != "fgs-train-state") throw FormatError(path + ": not a training state");
  model = std::make_unique<FgsModel>(a.meta.at("config").get<ModelConfig>(), 0);
  model->load_weights(a.tensors);

  TrainState s;
  s.step = a.meta.at("step").get<std::int64_t>();
  const auto& av = a.meta.at("averages");
  s.averages.loss = av.at("loss").get<double>();
  s.averages.bits_base = av.at("bits_base").get<double>();
  s.averages.bits_scalable = av.at("bits_scalable").get<double>();
  s.averages.psnr_base = av.at("psnr_base").get<double>();
  s.averages.psnr_full = av.at("psnr_full").get<double>();
  s.averages.count = av.at("count").get<std::int64_t>();
  const std::string m_prefix = "adam.m.";
  const std::string v_prefix = "adam.v.";
  for (const auto& [name, t] : a.tensors) {
    if (name.rfind(m_prefix, 0) == 0) s.adam_m.emplace(name.substr(m_prefix.size()), t);
    if (name.rfind(v_prefix, 0) == 0) s.adam_v.emplace(name.substr(v_prefix.size()), t);
  }
  return s;
}

std::uint64_t TrainState::hash(FgsModel& model) const {
  std::uint64_t h = model.weights_hash();
  fnv(h, &step, sizeof(step));
  for (const auto* moments : {&adam_m, &adam_v}) {
    for (const auto& [name, t] : *moments) {
      fnv(h, name.data(), name.size());
      fnv(h, t.data(), t.size() * sizeof(double));
    }
  }
  const double avg[] = {averages.loss, averages.bits_base, averages.bits_scalable,
                        averages.psnr_base, averages.psnr_full};
  fnv(h, avg, sizeof(avg));
  return h;
}

void train(FgsModel& model, TrainState& state, const CropSampler& sampler,
           const TrainConfig& cfg, const std::string& csv_path,
           const std::function<void(const StepReport&)>& on_step) {
  cfg.validate(model.config());
  std::ofstream csv;
  if (!csv_path.empty()) {
    const bool append = state.step > 0 && std::filesystem::exists(csv_path);
    csv.open(csv_path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw Error("cannot write " + csv_path);
    if (!append) csv << "step,loss,bits_base,bits_scalable,psnr_base,psnr_full\n";
  }
  while (state.step < cfg.steps) {
    const Tensor batch = sampler.batch(state.step, cfg.batch);
    const StepReport r = train_step(model, state, batch, cfg);
    if (csv.is_open() && (state.step % cfg.log_every == 0 || state.step == cfg.steps)) {
      const RunningAverages& a = state.averages;
      csv << state.step << ',' << a.loss << ',' << a.bits_base << ',' << a.bits_scalable
          << ',' << a.psnr_base << ',' << a.psnr_full << '\n';
      csv.flush();
    }
    if (on_step) on_step(r);
  }
}

}  // namespace fgs
