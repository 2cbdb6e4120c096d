#pragma once

// Rate-distortion training with sampled scalable-channel prefixes.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fgs/error.hpp"
#include "fgs/fgs_model.hpp"
#include "fgs/image.hpp"

namespace fgs {

enum class Distortion { kMse, kMsSsim };

struct TrainConfig {
  double lambda = 0.002;
  WeightSchedule w_schedule = WeightSchedule::kLinear8;
  int crop = 96;
  int batch = 8;
  int steps = 5000;
  double lr_initial = 1e-4;
  double lr_reduced = 1e-5;
  // First step trained with lr_reduced.
  int lr_switch_step = 3500;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  std::string dataset_dir;
  Distortion distortion = Distortion::kMse;
  int log_every = 50;
  // Architecture keys (c1, c2, ...) forwarded to ModelConfig.
  std::map<std::string, std::string> model_overrides;

  void validate(const ModelConfig& model) const;
  ModelConfig model_config() const;
};

// Settings that must match for a saved state to be resumed: crop, batch,
// learning-rate schedule, clipping, distortion and seed.
nlohmann::json train_signature(const TrainConfig& cfg);

// Parses key=value text; unknown keys are rejected.
TrainConfig parse_train_config(const std::string& text);
TrainConfig read_train_config(const std::string& path);

class TrainingError : public Error {
 public:
  using Error::Error;
};

// Uniform j over {0, ..., c2}.
int sample_channels(std::mt19937_64& rng, int c2);

// linear8: 1 + j/8; quad64: 1 + j^2/64.
double weight_w(int j, WeightSchedule schedule);

struct LossTerms {
  ad::Var loss;          // batch mean
  double rate_base = 0;  // bpp, batch mean: R(l_b) + R(z_b)
  double rate_scalable = 0;  // bpp: R(z_s) + first-j channels of R(l_s)
  double dist_base = 0;
  double dist_prefix = 0;
  double psnr_base = 0;
  double psnr_prefix = 0;
};

// [R_b + lambda D(x, x_base)] + [R_b + R(l_s^j) + lambda w(j) D(x, x_j)]
// with rates in bits per pixel and D = 255^2 MSE or 1 - MS-SSIM.
LossTerms rd_loss(const ad::Var& x, const ForwardOutputs& fwd, double lambda,
                  WeightSchedule schedule, Distortion distortion);

// Deterministic crop stream: the batch for a step is a pure function of
// (seed, step). Each epoch visits every usable image once in a seeded random
// order; crop positions are uniform.
class CropSampler {
 public:
  CropSampler(const std::string& dataset_dir, int crop, std::uint64_t seed);
  CropSampler(std::vector<Image> images, int crop, std::uint64_t seed);

  Tensor batch(std::int64_t step, int batch_size) const;
  // Crop for global sample index i.
  Image sample(std::int64_t index) const;
  std::size_t image_count() const { return images_.size(); }

 private:
  std::vector<Image> images_;
  int crop_;
  std::uint64_t seed_;
};

struct RunningAverages {
  double loss = 0;
  double bits_base = 0;
  double bits_scalable = 0;
  double psnr_base = 0;
  double psnr_full = 0;
  std::int64_t count = 0;
};

// Adam moments plus bookkeeping; everything needed to resume bit-exactly.
struct TrainState {
  std::int64_t step = 0;
  std::map<std::string, Tensor> adam_m;
  std::map<std::string, Tensor> adam_v;
  RunningAverages averages;

  void save(const std::string& path, FgsModel& model,
            const TrainConfig& cfg) const;
  // Loads weights into a freshly built model and returns the state.
  static TrainState load(const std::string& path, std::unique_ptr<FgsModel>& model);
  std::uint64_t hash(FgsModel& model) const;
};

struct StepReport {
  std::int64_t step = 0;
  int j = 0;
  double loss = 0;
  double bits_base = 0;
  double bits_scalable = 0;
  double psnr_base = 0;
  double psnr_full = 0;
};

// Per-step generator for channel sampling and quantization noise.
std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step);

double learning_rate(const TrainConfig& cfg, std::int64_t step);

// One forward/backward/Adam update on `batch`. Throws TrainingError on a
// non-finite loss.
StepReport train_step(FgsModel& model, TrainState& state, const Tensor& batch,
                      const TrainConfig& cfg);

// Runs steps [state.step, cfg.steps). Writes a CSV log row every
// cfg.log_every steps when `csv_path` is set.
void train(FgsModel& model, TrainState& state, const CropSampler& sampler,
           const TrainConfig& cfg, const std::string& csv_path = "",
           const std::function<void(const StepReport&)>& on_step = {});

}  // namespace fgs
