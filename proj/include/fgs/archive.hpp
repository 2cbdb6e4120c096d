#pragma once

// Self-describing tensor archive used for checkpoints and training state.
//
// Layout: "FGSA" | u32 version | u64 header length | JSON header | raw
// little-endian f64 tensor data. The header lists every tensor's name, shape
// and element offset, plus a free-form "meta" object.

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "fgs/tensor.hpp"

namespace fgs {

struct Archive {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  void save(const std::string& path) const;
  static Archive load(const std::string& path);
};

}  // namespace fgs
