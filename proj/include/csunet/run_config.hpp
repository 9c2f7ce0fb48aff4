#pragma once

#include <filesystem>
#include <string>

#include "csunet/losses.hpp"
#include "csunet/network.hpp"
#include "csunet/training.hpp"
#include "json.hpp"

namespace csunet {

struct RunPaths {
  std::string data;
  std::string out;
};

/// Everything a training run needs: {"network", "train", "loss", "paths"}.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  LossConfig loss;
  RunPaths paths;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Parse and validate; unknown keys at any level throw std::invalid_argument.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace csunet
