#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fgs/error.hpp"
#include "fgs/training.hpp"
#include "test_util.hpp"

using namespace fgs;
using fgs::testing::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::toy();
  c.c1 = 4;
  c.c2 = 3;
  c.hyper_channels = 2;
  c.base_width = 4;
  c.downsample = 4;
  return c;
}

TrainConfig tiny_train(int steps) {
  TrainConfig t;
  t.crop = 16;
  t.batch = 2;
  t.steps = steps;
  t.lr_initial = 1e-3;
  t.lr_switch_step = steps;
  t.seed = 5;
  t.log_every = 1;
  t.model_overrides = {{"c1", "4"}, {"c2", "3"}, {"hyper_channels", "2"},
                       {"base_width", "4"}, {"downsample", "4"}};
  return t;
}

std::vector<Image> synthetic_images(int count, int size, std::uint64_t seed) {
  std::vector<Image> out;
  for (int i = 0; i < count; ++i) out.push_back(synthesize_image(size, size, seed + i));
  return out;
}

// Bit maps with known totals for a 1x3x4x4 input (16 pixels).
ForwardOutputs fixed_outputs(const Tensor& x, int j) {
  ForwardOutputs f;
  Tensor base = x, prefix = x;
  for (auto& v : base.values()) v += 1.0 / 255;    // D = 1
  for (auto& v : prefix.values()) v += 2.0 / 255;  // D = 4
  f.x_hat_base = ad::constant(base);
  f.x_hat_prefix = ad::constant(j == 0 ? base : prefix);
  f.bits_lb = ad::constant(Tensor({1, 2, 1, 1}, 8.0));   // 16 bits
  f.bits_zb = ad::constant(Tensor({1, 1, 1, 1}, 16.0));  // 16 bits
  f.bits_zs = ad::constant(Tensor({1, 1, 1, 1}, 8.0));   // 8 bits
  Tensor ls({1, 3, 1, 1});
  ls[0] = 16;
  ls[1] = 32;
  ls[2] = 64;
  f.bits_ls = ad::constant(ls);
  f.units = j;
  return f;
}

}  // namespace

TEST(ChannelSampling, IsUniformOverZeroToC2) {
  std::mt19937_64 rng(1);
  const int c2 = 9, draws = 100000;
  std::vector<int> counts(c2 + 1, 0);
  for (int i = 0; i < draws; ++i) {
    const int j = sample_channels(rng, c2);
    ASSERT_GE(j, 0);
    ASSERT_LE(j, c2);
    ++counts[j];
  }
  const double expected = static_cast<double>(draws) / (c2 + 1);
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 9 degrees of freedom; the 0.999 quantile is 27.88.
  EXPECT_LT(chi2, 27.88);
  EXPECT_GT(counts[0], 0);
  EXPECT_GT(counts[c2], 0);
}

TEST(WeightSchedule, Examples) {
  EXPECT_EQ(weight_w(0, WeightSchedule::kLinear8), 1.0);
  EXPECT_EQ(weight_w(8, WeightSchedule::kLinear8), 2.0);
  EXPECT_EQ(weight_w(192, WeightSchedule::kLinear8), 25.0);
  EXPECT_EQ(weight_w(8, WeightSchedule::kQuad64), 2.0);
  EXPECT_EQ(weight_w(16, WeightSchedule::kQuad64), 5.0);
}

TEST(RdLoss, MatchesHandComputedTerms) {
  std::mt19937_64 rng(2);
  const Tensor xt = random_tensor({1, 3, 4, 4}, rng, 0.2, 0.8);
  const Var x = ad::constant(xt);
  const double lambda = 0.01;
  const double rb = (16.0 + 16.0) / 16;  // bpp
  struct Case {
    int j;
    double rs_bits;
    double d_prefix;
  };
  for (const Case& c : {Case{0, 8, 1}, Case{1, 24, 4}, Case{2, 56, 4}, Case{3, 120, 4}}) {
    const LossTerms t = rd_loss(x, fixed_outputs(xt, c.j), lambda, WeightSchedule::kLinear8,
                                Distortion::kMse);
    const double want = (rb + lambda * 1.0) +
                        (rb + c.rs_bits / 16 + lambda * weight_w(c.j, WeightSchedule::kLinear8) *
                                                   c.d_prefix);
    EXPECT_NEAR(t.loss.value()[0], want, 1e-9) << "j " << c.j;
    EXPECT_NEAR(t.rate_base, rb, 1e-12);
    EXPECT_NEAR(t.rate_scalable, c.rs_bits / 16, 1e-12);
    EXPECT_NEAR(t.dist_base, 1.0, 1e-9);
    EXPECT_NEAR(t.psnr_base, 48.1308, 1e-4);
  }
  ForwardOutputs half = fixed_outputs(xt, 1);
  half.unit = PadUnit::kHalfChannel;
  EXPECT_THROW(rd_loss(x, half, lambda, WeightSchedule::kLinear8, Distortion::kMse), RangeError);
}

TEST(RdLoss, MsSsimDistortionIsOneMinusScore) {
  std::mt19937_64 rng(3);
  const Tensor xt = random_tensor({1, 3, 24, 24}, rng, 0.2, 0.8);
  ForwardOutputs f = fixed_outputs(xt, 0);
  f.x_hat_base = ad::constant(xt);
  f.x_hat_prefix = f.x_hat_base;
  const LossTerms t = rd_loss(ad::constant(xt), f, 0.5, WeightSchedule::kLinear8,
                              Distortion::kMsSsim);
  EXPECT_NEAR(t.dist_base, 0.0, 1e-12);
}

TEST(TrainConfig, ParsesAndRejects) {
  const TrainConfig t = parse_train_config(
      "lambda = 0.004\ncrop=48\nsteps=10\nw_schedule=quad64\nc2=12\ndistortion=ms_ssim\n"
      "# comment\nmem=off\n");
  EXPECT_EQ(t.lambda, 0.004);
  EXPECT_EQ(t.crop, 48);
  EXPECT_EQ(t.w_schedule, WeightSchedule::kQuad64);
  EXPECT_EQ(t.distortion, Distortion::kMsSsim);
  const ModelConfig m = t.model_config();
  EXPECT_EQ(m.c2, 12);
  EXPECT_FALSE(m.toggles.mem);
  EXPECT_EQ(m.lambda, 0.004);
  EXPECT_THROW(parse_train_config("learning_speed=3\n"), FormatError);
  EXPECT_THROW(parse_train_config("crop=big\n"), FormatError);
  TrainConfig bad = t;
  bad.crop = 50;  // not a multiple of the downsampling factor
  EXPECT_ANY_THROW(bad.validate(bad.model_config()));
  EXPECT_EQ(parse_train_config("preset=paper\n").model_config().c1, 192);
}

TEST(CropSampler, DeterministicAndSkipsSmallImages) {
  std::vector<Image> imgs = synthetic_images(3, 40, 1);
  imgs.emplace_back(8, 8, 0.5);  // too small for a 16 crop
  CropSampler a(imgs, 16, 7), b(imgs, 16, 7), c(imgs, 16, 8);
  EXPECT_EQ(a.image_count(), 3u);
  EXPECT_EQ(a.batch(5, 4), b.batch(5, 4));
  EXPECT_FALSE(a.batch(5, 4) == c.batch(5, 4));
  EXPECT_FALSE(a.batch(5, 4) == a.batch(6, 4));
  EXPECT_EQ(a.batch(0, 2).shape(), (Shape{2, 3, 16, 16}));
  EXPECT_ANY_THROW(CropSampler(std::vector<Image>{Image(8, 8)}, 16, 1));
}

TEST(CropSampler, EpochVisitsEveryImageOnce) {
  // Each image has a distinct constant colour so crops identify their source.
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) imgs.emplace_back(20, 20, 0.1 * (i + 1));
  CropSampler s(imgs, 16, 3);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<int> seen(5, 0);
    for (int k = 0; k < 5; ++k) {
      const int idx = static_cast<int>(std::lround(s.sample(epoch * 5 + k).at(0, 0, 0) * 10)) - 1;
      ++seen[idx];
    }
    for (int v : seen) EXPECT_EQ(v, 1);
  }
}

TEST(Training, LossGradientMatchesFiniteDifferences) {
  FgsModel model(tiny_config(), 4);
  std::mt19937_64 rng(4);
  const Tensor xt = random_tensor({1, 3, 8, 8}, rng, 0.1, 0.9);
  const Var x = ad::constant(xt);
  auto loss_at = [&]() {
    NoiseSource noise(11);
    const ForwardOutputs f = model.forward(x, QuantMode::kTrainNoise, 2, &noise);
    return rd_loss(x, f, 0.01, WeightSchedule::kLinear8, Distortion::kMse).loss;
  };
  auto params = model.parameters();
  for (auto& p : params) p.var->zero_grad();
  ad::backward(loss_at());

  int checked = 0, agree = 0;
  std::mt19937_64 pick(9);
  for (auto& p : params) {
    const Tensor g = p.var->grad();
    if (g.size() == 0) continue;
    Tensor& w = p.var->mutable_value();
    const std::size_t i = pick() % w.size();
    const double orig = w[i], h = 1e-6;
    w[i] = orig + h;
    const double up = loss_at().value()[0];
    w[i] = orig - h;
    const double down = loss_at().value()[0];
    w[i] = orig;
    const double numeric = (up - down) / (2 * h);
    ++checked;
    // Piecewise-linear pieces (leaky ReLU, sigma floor) can straddle a kink.
    if (std::abs(g[i] - numeric) <= 1e-3 * std::max({std::abs(g[i]), std::abs(numeric), 1e-3}))
      ++agree;
    else
      ADD_FAILURE() << p.name << "[" << i << "] analytic " << g[i] << " numeric " << numeric;
  }
  EXPECT_GT(checked, 40);
  EXPECT_EQ(agree, checked);
}

TEST(Training, StepsAreDeterministicAndResumeBitExact) {
  const TrainConfig cfg = tiny_train(6);
  CropSampler sampler(synthetic_images(4, 24, 2), cfg.crop, cfg.seed);
  auto run = [&](int stop_at, const std::string& resume_from) {
    std::unique_ptr<FgsModel> model;
    TrainState state;
    if (resume_from.empty()) {
      model = std::make_unique<FgsModel>(cfg.model_config(), cfg.seed);
    } else {
      state = TrainState::load(resume_from, model);
    }
    TrainConfig c = cfg;
    c.steps = stop_at;
    train(*model, state, sampler, c);
    return std::make_pair(std::move(model), state);
  };
  auto [m1, s1] = run(6, "");
  auto [m2, s2] = run(6, "");
  EXPECT_EQ(s1.hash(*m1), s2.hash(*m2));

  const std::string path = ::testing::TempDir() + "/resume.state";
  auto [m3, s3] = run(3, "");
  s3.save(path, *m3, cfg);
  auto [m4, s4] = run(6, path);
  EXPECT_EQ(s4.step, 6);
  EXPECT_EQ(m4->weights_hash(), m1->weights_hash());
  EXPECT_EQ(s4.hash(*m4), s1.hash(*m1));
}

TEST(Training, CsvLogHasExpectedColumns) {
  TrainConfig cfg = tiny_train(3);
  CropSampler sampler(synthetic_images(2, 24, 3), cfg.crop, cfg.seed);
  FgsModel model(cfg.model_config(), 1);
  TrainState state;
  const std::string csv = ::testing::TempDir() + "/train_log.csv";
  std::filesystem::remove(csv);
  train(model, state, sampler, cfg, csv);
  std::ifstream in(csv);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "step,loss,bits_base,bits_scalable,psnr_base,psnr_full");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(Training, NonFiniteLossRaises) {
  const TrainConfig cfg = tiny_train(1);
  FgsModel model(cfg.model_config(), 1);
  TrainState state;
  Tensor batch({1, 3, 16, 16}, 0.5);
  batch[7] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_ANY_THROW(train_step(model, state, batch, cfg));
}

TEST(Training, OverfitSmallSetReducesLoss) {
  TrainConfig cfg = tiny_train(200);
  cfg.batch = 4;
  cfg.lr_initial = 3e-3;
  cfg.lr_switch_step = 200;
  CropSampler sampler(synthetic_images(16, 24, 4), cfg.crop, cfg.seed);
  FgsModel model(cfg.model_config(), 2);
  TrainState state;
  double first = 0, last = 0;
  train(model, state, sampler, cfg, "", [&](const StepReport& r) {
    if (r.step < 20) first += r.loss / 20;
    if (r.step >= 180) last += r.loss / 20;
  });
  EXPECT_LT(last, 0.8 * first) << "first " << first << " last " << last;
}
