#include "fgs/model_config.hpp"

#include <fstream>
#include <sstream>

#include "fgs/error.hpp"

namespace fgs {

std::string to_string(WeightSchedule s) {
  return s == WeightSchedule::kLinear8 ? "linear8" : "quad64";
}

WeightSchedule weight_schedule_from_string(const std::string& s) {
  if (s == "linear8") return WeightSchedule::kLinear8;
  if (s == "quad64") return WeightSchedule::kQuad64;
  throw RangeError("unknown weight schedule '" + s + "'");
}

void ModelConfig::validate() const {
  if (c1 < 1 || c2 < 1) throw RangeError("c1 and c2 must be >= 1");
  if (downsample != 4 && downsample != 8 && downsample != 16) {
    throw RangeError("downsample must be 4, 8 or 16");
  }
  if (hyper_channels < 1 || base_width < 1) {
    throw RangeError("hyper_channels and base_width must be >= 1");
  }
  if (!(lambda > 0.0)) throw RangeError("lambda must be positive");
  if (c2 > 32767) throw RangeError("c2 too large for the container");
}

int ModelConfig::stages() const {
  int s = 0;
  for (int d = downsample; d > 1; d >>= 1) ++s;
  return s;
}

ModelConfig ModelConfig::toy() {
  ModelConfig cfg;
  cfg.c1 = 32;
  cfg.c2 = 32;
  cfg.downsample = 4;
  cfg.hyper_channels = 16;
  cfg.base_width = 32;
  cfg.lambda = 0.002;
  return cfg;
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"c1", cfg.c1},
                     {"c2", cfg.c2},
                     {"downsample", cfg.downsample},
                     {"hyper_channels", cfg.hyper_channels},
                     {"base_width", cfg.base_width},
                     {"frr", cfg.toggles.frr},
                     {"ffm", cfg.toggles.ffm},
                     {"mem", cfg.toggles.mem},
                     {"w_schedule", to_string(cfg.w_schedule)},
                     {"lambda", cfg.lambda}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  cfg.c1 = j.at("c1").get<int>();
  cfg.c2 = j.at("c2").get<int>();
  cfg.downsample = j.at("downsample").get<int>();
  cfg.hyper_channels = j.at("hyper_channels").get<int>();
  cfg.base_width = j.at("base_width").get<int>();
  cfg.toggles.frr = j.at("frr").get<bool>();
  cfg.toggles.ffm = j.at("ffm").get<bool>();
  cfg.toggles.mem = j.at("mem").get<bool>();
  cfg.w_schedule = weight_schedule_from_string(j.at("w_schedule").get<std::string>());
  cfg.lambda = j.at("lambda").get<double>();
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw FormatError("not a boolean: '" + v + "'");
}

void apply_overrides(ModelConfig& cfg,
                     const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    try {
      if (key == "c1") cfg.c1 = std::stoi(value);
      else if (key == "c2") cfg.c2 = std::stoi(value);
      else if (key == "downsample") cfg.downsample = std::stoi(value);
      else if (key == "hyper_channels") cfg.hyper_channels = std::stoi(value);
      else if (key == "base_width") cfg.base_width = std::stoi(value);
      else if (key == "frr") cfg.toggles.frr = parse_bool(value);
      else if (key == "ffm") cfg.toggles.ffm = parse_bool(value);
      else if (key == "mem") cfg.toggles.mem = parse_bool(value);
      else if (key == "w_schedule") cfg.w_schedule = weight_schedule_from_string(value);
      else if (key == "lambda") cfg.lambda = std::stod(value);
    } catch (const std::logic_error&) {
      throw FormatError("bad value for '" + key + "': '" + value + "'");
    }
  }
}

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("line " + std::to_string(lineno) + ": expected key=value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

}  // namespace fgs
