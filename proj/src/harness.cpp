#include "fgs/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "fgs/archive.hpp"
#include "fgs/error.hpp"
#include "fgs/metrics.hpp"

namespace fgs::harness {
namespace {

std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << std::setprecision(10);
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::vector<Image> load_images(const std::string& dir, int multiple) {
  std::vector<Image> out;
  for (const auto& path : list_images(dir)) {
    Image img = read_ppm(path);
    const int h = img.height() / multiple * multiple;
    const int w = img.width() / multiple * multiple;
    if (h == 0 || w == 0) {
      std::cerr << "warning: skipping " << path << " (smaller than " << multiple << " px)\n";
      continue;
    }
    if (h != img.height() || w != img.width()) img = img.crop(0, 0, h, w);
    out.push_back(std::move(img));
  }
  if (out.empty()) throw Error("no usable images in " + dir);
  return out;
}

std::vector<RDPoint> rd_curve(const FgsModel& model, const std::vector<Image>& images,
                              int step) {
  if (images.empty()) throw Error("rd_curve: no images");
  if (step <= 0) throw RangeError("rd_curve: step must be positive");
  const int c2 = model.config().c2;
  std::vector<int> js;
  for (int j = 0; j < c2; j += step) js.push_back(j);
  js.push_back(c2);

  std::vector<RDPoint> pts(js.size());
  for (std::size_t k = 0; k < js.size(); ++k) pts[k].units = js[k];
  for (const Image& img : images) {
    const auto stream = codec::encode_stream(img, model);
    const double pixels = static_cast<double>(img.pixel_count());
    for (std::size_t k = 0; k < js.size(); ++k) {
      const auto t = codec::truncate_to_units(stream, js[k]);
      const auto d = codec::decode_stream(t, model);
      pts[k].bpp += t.size() * 8.0 / pixels / images.size();
      pts[k].psnr += psnr(img, d.image) / images.size();
      pts[k].ms_ssim += ms_ssim(img, d.image) / images.size();
    }
  }
  return pts;
}

std::vector<int> group_bounds(int c2, int groups) {
  if (groups <= 0 || groups > c2) {
    throw RangeError("group count must be in [1, " + std::to_string(c2) + "]");
  }
  std::vector<int> b(groups + 1);
  for (int n = 0; n <= groups; ++n) {
    b[n] = static_cast<int>((static_cast<long long>(n) * c2 + groups / 2) / groups);
  }
  return b;
}

std::vector<GroupPoint> progressive_quality_report(const FgsModel& model, const Image& image,
                                                   int groups) {
  const auto bounds = group_bounds(model.config().c2, groups);
  const auto stream = codec::encode_stream(image, model);
  std::vector<GroupPoint> out;
  for (int n = 1; n <= groups; ++n) {
    const auto d = codec::decode_stream(stream, model, bounds[n]);
    out.push_back({n, bounds[n], psnr(image, d.image)});
  }
  return out;
}

std::vector<GroupBits> channel_entropy_report(const FgsModel& model, const Image& image,
                                              int groups) {
  const auto bounds = group_bounds(model.config().c2, groups);
  const RateReport r = model.rate_report(model.analyze(image));
  std::vector<GroupBits> out;
  for (int g = 0; g < groups; ++g) {
    GroupBits gb{g + 1, bounds[g], bounds[g + 1] - 1, 0.0};
    for (int c = bounds[g]; c < bounds[g + 1]; ++c) gb.bits += r.per_channel_ls[c];
    out.push_back(gb);
  }
  return out;
}

std::vector<double> mean_channel_bits(const FgsModel& model, const std::vector<Image>& images) {
  std::vector<double> mean(model.config().c2, 0.0);
  for (const Image& img : images) {
    const RateReport r = model.rate_report(model.analyze(img));
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += r.per_channel_ls[c] / images.size();
  }
  return mean;
}

std::vector<AblationCase> ablation_cases() {
  return {
      {1, {true, true, true}},   {2, {true, true, false}},  {3, {true, false, true}},
      {4, {false, true, false}}, {5, {false, false, true}}, {6, {false, false, false}},
  };
}

HeldOutMetrics held_out_metrics(const FgsModel& model, const std::vector<Image>& images,
                                const TrainConfig& cfg, int j_step) {
  if (images.empty()) throw Error("held_out_metrics: no images");
  const int c2 = model.config().c2;
  std::vector<int> js;
  for (int j = 0; j < c2; j += std::max(1, j_step)) js.push_back(j);
  js.push_back(c2);

  HeldOutMetrics m;
  const double n_img = static_cast<double>(images.size());
  for (const Image& img : images) {
    const ad::Var x = ad::constant(img.to_tensor());
    for (int j : js) {
      const ForwardOutputs fwd = model.forward(x, QuantMode::kEvalRound, j, nullptr);
      const LossTerms t = rd_loss(x, fwd, cfg.lambda, cfg.w_schedule, cfg.distortion);
      m.loss += t.loss.value()[0] / (n_img * js.size());
      if (j == 0) m.psnr_base += t.psnr_base / n_img;
      if (j == c2) {
        m.psnr_full += t.psnr_prefix / n_img;
        m.bits_scalable += t.rate_scalable * img.pixel_count() / n_img;
        m.bpp_full += (t.rate_base + t.rate_scalable) / n_img;
      }
    }
  }
  return m;
}

std::vector<AblationRow> ablation_run(const std::vector<AblationCase>& cases,
                                      const TrainConfig& cfg, const CropSampler& sampler,
                                      const std::vector<Image>& held_out,
                                      const std::string& cache_dir, int j_step, bool verbose) {
  std::filesystem::create_directories(cache_dir);
  std::vector<AblationRow> rows;
  for (const AblationCase& c : cases) {
    TrainConfig case_cfg = cfg;
    case_cfg.model_overrides["frr"] = c.toggles.frr ? "1" : "0";
    case_cfg.model_overrides["ffm"] = c.toggles.ffm ? "1" : "0";
    case_cfg.model_overrides["mem"] = c.toggles.mem ? "1" : "0";
    const ModelConfig mc = case_cfg.model_config();
    const std::string path =
        (std::filesystem::path(cache_dir) / ("case" + std::to_string(c.id) + ".state")).string();

    std::unique_ptr<FgsModel> model;
    TrainState state;
    if (std::filesystem::exists(path)) {
      try {
        std::unique_ptr<FgsModel> loaded;
        TrainState s = TrainState::load(path, loaded);
        const Archive meta = Archive::load(path);
        if (loaded->config() == mc && s.step <= cfg.steps &&
            meta.meta.value("train", nlohmann::json()) == train_signature(case_cfg)) {
          model = std::move(loaded);
          state = std::move(s);
        }
      } catch (const Error& e) {
        std::cerr << "warning: ignoring cached " << path << ": " << e.what() << "\n";
      }
    }
    if (!model) model = std::make_unique<FgsModel>(mc, cfg.seed);
    if (state.step < cfg.steps) {
      if (verbose) {
        std::cerr << "case " << c.id << ": training steps " << state.step << ".." << cfg.steps
                  << "\n";
      }
      train(*model, state, sampler, case_cfg, "", [&](const StepReport& r) {
        if (verbose && (r.step + 1) % 250 == 0) {
          std::cerr << "  case " << c.id << " step " << r.step + 1
                    << " loss " << state.averages.loss << "\n";
        }
      });
      state.save(path, *model, case_cfg);
    }
    rows.push_back({c, held_out_metrics(*model, held_out, case_cfg, j_step), path});
  }
  return rows;
}

std::string to_string(SimMode m) {
  switch (m) {
    case SimMode::kFine: return "fine";
    case SimMode::kCoarse: return "coarse";
    case SimMode::kNonScalable: return "nonscalable";
  }
  return "?";
}

QualityLadder quality_ladder(const std::vector<std::uint8_t>& stream, const Image& original,
                             const FgsModel& model) {
  QualityLadder q;
  const auto parsed = codec::parse_container(stream);
  q.mandatory = parsed.mandatory_end;
  for (int j = 0; j <= static_cast<int>(parsed.units.size()); ++j) {
    const auto t = codec::truncate_to_units(stream, j);
    q.bytes.push_back(t.size());
    q.psnr.push_back(psnr(original, codec::decode_stream(t, model).image));
  }
  return q;
}

std::vector<int> coarse_units(int unit_count) {
  return {0, unit_count / 3, 2 * unit_count / 3, unit_count};
}

SimResult bandwidth_simulate(const std::vector<std::size_t>& trace,
                             const std::vector<QualityLadder>& ladders, SimMode mode) {
  if (ladders.empty()) throw Error("bandwidth_simulate: no streams");
  SimResult res;
  res.mode = mode;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const QualityLadder& q = ladders[t % ladders.size()];
    const int full = static_cast<int>(q.bytes.size()) - 1;
    std::vector<int> options;
    if (mode == SimMode::kFine) {
      for (int j = 0; j <= full; ++j) options.push_back(j);
    } else if (mode == SimMode::kCoarse) {
      options = coarse_units(full);
    } else {
      options = {full};
    }
    SimStep step;
    step.time = static_cast<int>(t);
    step.budget = trace[t];
    for (int j : options) {
      if (q.bytes[j] > trace[t]) continue;
      if (step.units < 0 || q.psnr[j] > step.psnr) {
        step.units = j;
        step.psnr = q.psnr[j];
        step.bytes_sent = q.bytes[j];
      }
    }
    if (step.units < 0) ++res.gaps;
    res.mean_psnr += step.psnr / static_cast<double>(trace.size());
    res.steps.push_back(step);
  }
  return res;
}

std::vector<std::size_t> read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace " + path);
  std::vector<std::size_t> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    try {
      const long long v = std::stoll(line);
      if (v < 0) throw std::out_of_range("negative");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad budget '" + line + "'");
    }
  }
  return out;
}

std::string write_rd_csv(const std::vector<RDPoint>& pts, const std::string& path) {
  auto out = open_out(path);
  out << "units,bpp,psnr,ms_ssim\n";
  for (const auto& p : pts) out << p.units << ',' << p.bpp << ',' << p.psnr << ',' << p.ms_ssim << '\n';
  return path;
}

std::string write_progressive_csv(const std::vector<GroupPoint>& pts, const std::string& path) {
  auto out = open_out(path);
  out << "groups,units,psnr\n";
  for (const auto& p : pts) out << p.group << ',' << p.units << ',' << p.psnr << '\n';
  return path;
}

std::string write_entropy_csv(const std::vector<GroupBits>& groups, const std::string& path) {
  auto out = open_out(path);
  out << "group,first_channel,last_channel,bits\n";
  for (const auto& g : groups) {
    out << g.group << ',' << g.first_channel << ',' << g.last_channel << ',' << g.bits << '\n';
  }
  return path;
}

std::string write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  auto out = open_out(path);
  out << "case,frr,ffm,mem,loss,bits_scalable,bpp_full,psnr_base,psnr_full\n";
  for (const auto& r : rows) {
    out << r.c.id << ',' << r.c.toggles.frr << ',' << r.c.toggles.ffm << ',' << r.c.toggles.mem
        << ',' << r.metrics.loss << ',' << r.metrics.bits_scalable << ',' << r.metrics.bpp_full
        << ',' << r.metrics.psnr_base << ',' << r.metrics.psnr_full << '\n';
  }
  return path;
}

std::string write_sim_csv(const std::vector<SimResult>& results, const std::string& path) {
  auto out = open_out(path);
  out << "mode,time,budget,bytes_sent,units,psnr\n";
  for (const auto& r : results) {
    for (const auto& s : r.steps) {
      out << to_string(r.mode) << ',' << s.time << ',' << s.budget << ',' << s.bytes_sent << ','
          << s.units << ',' << s.psnr << '\n';
    }
  }
  return path;
}

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw FormatError("csv has no column '" + name + "'");
  return static_cast<int>(it - header.begin());
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty csv");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size()) {
      throw FormatError(path + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

void plot_csv(const std::string& csv_path, const std::string& svg_path,
              const std::string& x_col, const std::string& y_col, bool bars,
              const std::string& group_col) {
  const CsvTable t = read_csv(csv_path);
  const int xi = t.column(x_col);
  const int yi = t.column(y_col);
  const int gi = group_col.empty() ? -1 : t.column(group_col);

  std::map<std::string, std::vector<std::pair<double, double>>> series;
  std::vector<std::string> order;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& row : t.rows) {
    const std::string key = gi >= 0 ? row[gi] : y_col;
    if (!series.count(key)) order.push_back(key);
    const double x = std::stod(row[xi]);
    const double y = std::stod(row[yi]);
    series[key].push_back({x, y});
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  if (t.rows.empty()) x0 = y0 = 0, x1 = y1 = 1;
  if (bars) y0 = std::min(0.0, y0);
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;

  constexpr double W = 640, H = 400, L = 70, R = 20, T = 20, B = 50;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  auto out = open_out(svg_path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4;
    const double yv = y0 + (y1 - y0) * k / 4;
    out << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
        << fmt(xv) << "</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
        << fmt(yv) << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
      << svg_escape(x_col) << "</text>\n";
  out << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\" text-anchor=\"middle\">" << svg_escape(y_col) << "</text>\n";

  for (std::size_t s = 0; s < order.size(); ++s) {
    const auto& pts = series[order[s]];
    const char* color = kColors[s % 6];
    if (bars) {
      const double bw = std::max(2.0, (W - L - R) / std::max<std::size_t>(1, pts.size()) * 0.7);
      for (const auto& [x, y] : pts) {
        const double top = std::min(py(y), py(0.0 > y0 ? 0.0 : y0));
        out << "<rect x=\"" << px(x) - bw / 2 << "\" y=\"" << top << "\" width=\"" << bw
            << "\" height=\"" << std::abs(py(y) - py(std::max(0.0, y0))) << "\" fill=\"" << color
            << "\"/>\n";
      }
    } else {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [x, y] : pts) out << px(x) << ',' << py(y) << ' ';
      out << "\"/>\n";
    }
    if (gi >= 0) {
      out << "<text x=\"" << W - R - 100 << "\" y=\"" << T + 14 * (s + 1) << "\" fill=\""
          << color << "\">" << svg_escape(order[s]) << "</text>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace fgs::harness
