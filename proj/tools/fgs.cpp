// Command-line front end: data generation, training, coding and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>

#include <CLI11.hpp>

#include "fgs/codec/kernel_protocol.hpp"
#include "fgs/codec/stream.hpp"
#include "fgs/harness.hpp"
#include "fgs/metrics.hpp"
#include "fgs/training.hpp"

namespace fs = std::filesystem;
using namespace fgs;

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TrainConfig load_train_config(const std::string& path, const std::vector<std::string>& sets) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  for (const auto& kv : sets) text += "\n" + kv;
  return parse_train_config(text);
}

void maybe_plot(bool plot, const std::string& csv, const std::string& x, const std::string& y,
                bool bars = false, const std::string& group = "") {
  if (!plot) return;
  const std::string svg = fs::path(csv).replace_extension(".svg").string();
  harness::plot_csv(csv, svg, x, y, bars, group);
  std::cout << "wrote " << svg << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fine-grained scalable learned image codec"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic PPM dataset");
  std::string gen_out;
  int gen_count = 32, gen_h = 96, gen_w = 128;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of images");
  gen->add_option("--height", gen_h);
  gen->add_option("--width", gen_w);
  gen->add_option("--seed", gen_seed);

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_out, tr_state, tr_log, tr_dataset;
  std::vector<std::string> tr_sets;
  bool tr_resume = false;
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--set", tr_sets, "extra key=value settings");
  tr->add_option("--dataset", tr_dataset, "image directory (overrides config)");
  tr->add_option("--out", tr_out, "model checkpoint to write")->required();
  tr->add_option("--state", tr_state, "training state file (default <out>.state)");
  tr->add_option("--log", tr_log, "CSV log path");
  tr->add_flag("--resume", tr_resume, "continue from --state");

  // encode / decode / truncate / inspect
  auto* enc = app.add_subcommand("encode", "encode a PPM image");
  std::string enc_model, enc_in, enc_out;
  bool enc_half = false;
  enc->add_option("--model", enc_model)->required();
  enc->add_option("--in", enc_in)->required();
  enc->add_option("--out", enc_out)->required();
  enc->add_flag("--half-channel", enc_half, "segment each channel into two halves");

  auto* dec = app.add_subcommand("decode", "decode a stream to PPM");
  std::string dec_model, dec_in, dec_out;
  int dec_units = -1;
  dec->add_option("--model", dec_model)->required();
  dec->add_option("--in", dec_in)->required();
  dec->add_option("--out", dec_out)->required();
  dec->add_option("--units", dec_units, "decode at most this many scalable units");

  auto* trunc = app.add_subcommand("truncate", "cut a stream at a unit boundary");
  std::string trunc_in, trunc_out;
  long long trunc_budget = -1;
  int trunc_units = -1;
  trunc->add_option("--in", trunc_in)->required();
  trunc->add_option("--out", trunc_out)->required();
  auto* budget_opt = trunc->add_option("--budget-bytes", trunc_budget);
  auto* units_opt = trunc->add_option("--units", trunc_units);
  budget_opt->excludes(units_opt);
  trunc->callback([&] {
    if (trunc_budget < 0 && trunc_units < 0) {
      throw CLI::ValidationError("truncate needs --budget-bytes or --units");
    }
  });

  auto* insp = app.add_subcommand("inspect", "describe a stream");
  std::string insp_in;
  insp->add_option("--in", insp_in)->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "evaluation reports");
  std::string ev_kind, ev_model, ev_images, ev_trace, ev_out = "eval", ev_config, ev_train_images,
                                                      ev_cache;
  std::vector<std::string> ev_sets;
  int ev_step = 8, ev_groups = 24, ev_j_step = 1;
  bool ev_plot = false, ev_half = false;
  ev->add_option("kind", ev_kind, "rd | progressive | entropy | ablation | simulate")
      ->required()
      ->check(CLI::IsMember({"rd", "progressive", "entropy", "ablation", "simulate"}));
  ev->add_option("--model", ev_model);
  ev->add_option("--images", ev_images, "held-out image directory")->required();
  ev->add_option("--step", ev_step, "RD interval in channels");
  ev->add_option("--groups", ev_groups, "channel groups (clamped to c2)");
  ev->add_option("--trace", ev_trace, "one byte budget per line");
  ev->add_option("--out", ev_out, "output directory");
  ev->add_option("--config", ev_config, "training config for ablation");
  ev->add_option("--set", ev_sets, "extra training key=value settings for ablation");
  ev->add_option("--train-images", ev_train_images, "training images for ablation");
  ev->add_option("--cache", ev_cache, "ablation checkpoint directory (default <out>/ablation)");
  ev->add_option("--j-step", ev_j_step, "ablation held-out j interval");
  ev->add_flag("--plot", ev_plot, "also render SVG plots from the CSVs");
  ev->add_flag("--half-channel", ev_half, "simulate with half-channel streams");

  app.add_subcommand("kernel-serve",
                     "serve the coder protocol on stdin/stdout with the reference coder");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      write_synthetic_dataset(gen_out, gen_count, gen_h, gen_w, gen_seed);
      std::cout << "wrote " << gen_count << " images to " << gen_out << "\n";
    } else if (tr->parsed()) {
      TrainConfig cfg = load_train_config(tr_config, tr_sets);
      if (!tr_dataset.empty()) cfg.dataset_dir = tr_dataset;
      if (cfg.dataset_dir.empty()) throw Error("no dataset: set dataset= or --dataset");
      if (tr_state.empty()) tr_state = tr_out + ".state";
      std::unique_ptr<FgsModel> model;
      TrainState state;
      if (tr_resume) {
        state = TrainState::load(tr_state, model);
        if (!(model->config() == cfg.model_config())) {
          throw Error("state " + tr_state + " was trained with a different model config");
        }
        std::cout << "resuming at step " << state.step << "\n";
      } else {
        model = std::make_unique<FgsModel>(cfg.model_config(), cfg.seed);
      }
      cfg.validate(model->config());
      const CropSampler sampler(cfg.dataset_dir, cfg.crop, cfg.seed);
      train(*model, state, sampler, cfg, tr_log, [&](const StepReport& r) {
        if ((r.step + 1) % cfg.log_every == 0) {
          std::cout << "step " << r.step + 1 << "  loss " << state.averages.loss << "  base "
                    << state.averages.bits_base << " bpp  scalable "
                    << state.averages.bits_scalable << " bpp  psnr " << state.averages.psnr_base
                    << " / " << state.averages.psnr_full << " dB\n";
        }
      });
      state.save(tr_state, *model, cfg);
      model->save(tr_out);
      std::cout << "wrote " << tr_out << " and " << tr_state << "\n";
    } else if (enc->parsed()) {
      const auto model = FgsModel::load(enc_model);
      const Image img = read_ppm(enc_in);
      auto backend = codec::make_coder_backend();
      const auto bytes = codec::encode_stream(img, *model, {enc_half}, backend.get());
      write_bytes(enc_out, bytes);
      std::cout << enc_out << ": " << bytes.size() << " bytes, "
                << bytes.size() * 8.0 / img.pixel_count() << " bpp\n";
    } else if (dec->parsed()) {
      const auto model = FgsModel::load(dec_model);
      auto backend = codec::make_coder_backend();
      const auto d = codec::decode_stream(read_bytes(dec_in), *model, dec_units, backend.get());
      write_ppm(d.image, dec_out);
      std::cout << dec_out << ": decoded " << d.units_decoded << " scalable units\n";
    } else if (trunc->parsed()) {
      const auto bytes = read_bytes(trunc_in);
      const auto out = trunc_units >= 0
                           ? codec::truncate_to_units(bytes, trunc_units)
                           : codec::truncate_to_budget(bytes, static_cast<std::size_t>(trunc_budget));
      write_bytes(trunc_out, out);
      std::cout << trunc_out << ": " << out.size() << " bytes, "
                << codec::parse_container(out).units.size() << " units\n";
    } else if (insp->parsed()) {
      std::cout << codec::inspect_stream(read_bytes(insp_in)).text();
    } else if (ev->parsed()) {
      fs::create_directories(ev_out);
      const auto out_path = [&](const std::string& name) { return (fs::path(ev_out) / name).string(); };
      if (ev_kind == "ablation") {
        TrainConfig cfg = load_train_config(ev_config, ev_sets);
        if (!ev_train_images.empty()) cfg.dataset_dir = ev_train_images;
        if (cfg.dataset_dir.empty()) throw Error("ablation needs --train-images or dataset=");
        const CropSampler sampler(cfg.dataset_dir, cfg.crop, cfg.seed);
        const auto held_out = harness::load_images(ev_images, cfg.model_config().downsample);
        const auto rows = harness::ablation_run(harness::ablation_cases(), cfg, sampler, held_out,
                                                ev_cache.empty() ? out_path("ablation") : ev_cache,
                                                ev_j_step, true);
        const auto csv = harness::write_ablation_csv(rows, out_path("ablation.csv"));
        std::cout << "case frr ffm mem  loss  bits_scalable  psnr_base  psnr_full\n";
        for (const auto& r : rows) {
          std::cout << r.c.id << "  " << r.c.toggles.frr << " " << r.c.toggles.ffm << " "
                    << r.c.toggles.mem << "  " << r.metrics.loss << "  " << r.metrics.bits_scalable
                    << "  " << r.metrics.psnr_base << "  " << r.metrics.psnr_full << "\n";
        }
        std::cout << "wrote " << csv << "\n";
        maybe_plot(ev_plot, csv, "case", "loss", true);
      } else {
        if (ev_model.empty()) throw Error("--model is required for " + ev_kind);
        const auto model = FgsModel::load(ev_model);
        const auto images = harness::load_images(ev_images, model->config().downsample);
        const int groups = std::min(ev_groups, model->config().c2);
        if (ev_kind == "rd") {
          const auto csv = harness::write_rd_csv(harness::rd_curve(*model, images, ev_step),
                                                 out_path("rd.csv"));
          std::cout << "wrote " << csv << "\n";
          maybe_plot(ev_plot, csv, "bpp", "psnr");
        } else if (ev_kind == "progressive") {
          const auto csv = harness::write_progressive_csv(
              harness::progressive_quality_report(*model, images.front(), groups),
              out_path("progressive.csv"));
          std::cout << "wrote " << csv << "\n";
          maybe_plot(ev_plot, csv, "groups", "psnr");
        } else if (ev_kind == "entropy") {
          const auto csv = harness::write_entropy_csv(
              harness::channel_entropy_report(*model, images.front(), groups),
              out_path("entropy.csv"));
          std::cout << "wrote " << csv << "\n";
          maybe_plot(ev_plot, csv, "group", "bits", true);
        } else {
          if (ev_trace.empty()) throw Error("simulate needs --trace");
          const auto trace = harness::read_trace(ev_trace);
          std::vector<harness::QualityLadder> ladders;
          for (const auto& img : images) {
            ladders.push_back(harness::quality_ladder(
                codec::encode_stream(img, *model, {ev_half}), img, *model));
          }
          std::vector<harness::SimResult> results;
          for (auto mode : {harness::SimMode::kFine, harness::SimMode::kCoarse,
                            harness::SimMode::kNonScalable}) {
            results.push_back(harness::bandwidth_simulate(trace, ladders, mode));
            std::cout << harness::to_string(mode) << ": mean PSNR " << results.back().mean_psnr
                      << " dB, " << results.back().gaps << " gaps\n";
          }
          const auto csv = harness::write_sim_csv(results, out_path("simulate.csv"));
          std::cout << "wrote " << csv << "\n";
          maybe_plot(ev_plot, csv, "time", "psnr", false, "mode");
        }
      }
    } else {
      codec::serve_kernel(stdin, stdout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
