#pragma once

// Evaluation and reporting on trained models: RD curves, progressive
// quality, per-group channel entropy, the module ablation and the
// bandwidth-trace streaming simulator. CSV files are the output contract;
// SVG plots are rendered from those CSVs on request.

#include <cstdint>
#include <string>
#include <vector>

#include "fgs/codec/stream.hpp"
#include "fgs/fgs_model.hpp"
#include "fgs/image.hpp"
#include "fgs/training.hpp"

namespace fgs::harness {

struct RDPoint {
  int units = 0;
  double bpp = 0.0;
  double psnr = 0.0;
  double ms_ssim = 0.0;
};

// Loads *.ppm from `dir`, cropping each to the largest multiple of
// `multiple` in both dimensions. Throws Error when none are found.
std::vector<Image> load_images(const std::string& dir, int multiple);

// Rate-distortion points for j = 0, step, 2 step, ..., c2 (c2 always
// included), averaged over images, measured on real truncated streams.
std::vector<RDPoint> rd_curve(const FgsModel& model, const std::vector<Image>& images,
                              int step);

// Channel-group boundaries: group n covers channels [bounds[n], bounds[n+1]).
std::vector<int> group_bounds(int c2, int groups);

struct GroupPoint {
  int group = 0;        // 1-based count of decoded groups
  int units = 0;        // channels decoded
  double psnr = 0.0;
};

// PSNR after decoding the first n groups, n = 1..groups.
std::vector<GroupPoint> progressive_quality_report(const FgsModel& model, const Image& image,
                                                   int groups);

struct GroupBits {
  int group = 0;
  int first_channel = 0;
  int last_channel = 0;  // inclusive
  double bits = 0.0;
};

// Estimated bits of each channel group of l_s.
std::vector<GroupBits> channel_entropy_report(const FgsModel& model, const Image& image,
                                              int groups);

// Per-channel estimated bits averaged over images.
std::vector<double> mean_channel_bits(const FgsModel& model, const std::vector<Image>& images);

struct AblationCase {
  int id = 0;
  ModuleToggles toggles;
};

// The six module configurations: 1 all on, 2 without MEM, 3 without FFM,
// 4 FFM only, 5 MEM only, 6 all off.
std::vector<AblationCase> ablation_cases();

struct HeldOutMetrics {
  double loss = 0.0;           // rd loss averaged over images and evaluated j
  double bits_scalable = 0.0;  // estimated l_s + z_s bits per image at j = c2
  double bpp_full = 0.0;       // estimated bpp at j = c2
  double psnr_base = 0.0;
  double psnr_full = 0.0;
};

// Eval-round rd loss of the training objective on held-out images, averaged
// over j = 0, j_step, ..., c2.
HeldOutMetrics held_out_metrics(const FgsModel& model, const std::vector<Image>& images,
                                const TrainConfig& cfg, int j_step);

struct AblationRow {
  AblationCase c;
  HeldOutMetrics metrics;
  std::string checkpoint;
};

// Trains (or loads from `cache_dir/case<id>.state` when present and matching)
// one model per case with identical budgets and seeds.
std::vector<AblationRow> ablation_run(const std::vector<AblationCase>& cases,
                                      const TrainConfig& cfg, const CropSampler& sampler,
                                      const std::vector<Image>& held_out,
                                      const std::string& cache_dir, int j_step,
                                      bool verbose = false);

enum class SimMode { kFine, kCoarse, kNonScalable };
std::string to_string(SimMode m);

// Decoded quality of every legal truncation of one stream.
struct QualityLadder {
  std::vector<std::size_t> bytes;  // size of the stream truncated to j units
  std::vector<double> psnr;        // decoded PSNR at j units
  std::size_t mandatory = 0;
};

QualityLadder quality_ladder(const std::vector<std::uint8_t>& stream, const Image& original,
                             const FgsModel& model);

struct SimStep {
  int time = 0;
  std::size_t budget = 0;
  std::size_t bytes_sent = 0;  // 0 when no image is delivered
  int units = -1;              // -1 for no image
  double psnr = 0.0;           // 0 for no image
};

struct SimResult {
  SimMode mode = SimMode::kFine;
  std::vector<SimStep> steps;
  double mean_psnr = 0.0;  // gaps count as 0 dB
  int gaps = 0;
};

// Coarse truncation points: j in {0, c2/3, 2 c2/3, c2} (in units).
std::vector<int> coarse_units(int unit_count);

// Step t transmits image t mod ladders.size() under budget trace[t].
// fine: the best-quality unit prefix that fits; coarse: the best of the four
// coarse points that fits; nonscalable: the full stream or nothing.
SimResult bandwidth_simulate(const std::vector<std::size_t>& trace,
                             const std::vector<QualityLadder>& ladders, SimMode mode);

std::vector<std::size_t> read_trace(const std::string& path);

// CSV writers. Each returns the path written.
std::string write_rd_csv(const std::vector<RDPoint>& pts, const std::string& path);
std::string write_progressive_csv(const std::vector<GroupPoint>& pts, const std::string& path);
std::string write_entropy_csv(const std::vector<GroupBits>& groups, const std::string& path);
std::string write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);
std::string write_sim_csv(const std::vector<SimResult>& results, const std::string& path);

// Minimal CSV table (header + numeric-or-text cells).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;  // throws if absent
};
CsvTable read_csv(const std::string& path);

// Line (or bar) plot of y against x columns of a CSV file, as SVG. With
// `group_col` set, one series per distinct value of that column.
void plot_csv(const std::string& csv_path, const std::string& svg_path,
              const std::string& x_col, const std::string& y_col, bool bars = false,
              const std::string& group_col = "");

}  // namespace fgs::harness
