#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace fgs {

// Distortion weight as a function of the decoded scalable channel count.
enum class WeightSchedule { kLinear8, kQuad64 };

std::string to_string(WeightSchedule s);
WeightSchedule weight_schedule_from_string(const std::string& s);

struct ModuleToggles {
  bool frr = true;
  bool ffm = true;
  bool mem = true;
  bool operator==(const ModuleToggles&) const = default;
};

// Architecture hyperparameters. Everything that changes the weight layout
// lives here; checkpoints refuse to load into a different config.
struct ModelConfig {
  int c1 = 192;
  int c2 = 192;
  int downsample = 16;
  int hyper_channels = 192;
  int base_width = 192;
  ModuleToggles toggles;
  WeightSchedule w_schedule = WeightSchedule::kLinear8;
  double lambda = 0.002;

  // Throws RangeError on an invalid combination.
  void validate() const;
  int stages() const;  // log2(downsample)

  static ModelConfig paper_default() { return ModelConfig{}; }
  static ModelConfig toy();

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// Applies recognised key=value entries (c1, c2, downsample, hyper_channels,
// base_width, frr, ffm, mem, w_schedule, lambda) on top of `cfg`.
void apply_overrides(ModelConfig& cfg,
                     const std::map<std::string, std::string>& kv);

// Parses "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_value_file(const std::string& path);

bool parse_bool(const std::string& v);

}  // namespace fgs
