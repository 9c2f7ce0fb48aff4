#include "csunet/run_config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csunet {

void RunConfig::validate() const {
  network.validate();
  train.validate();
  loss.validate();
  if (loss.class_count != network.num_classes) {
    throw std::invalid_argument("loss.class_count must equal network.num_classes");
  }
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"network", c.network},
                     {"train", c.train},
                     {"loss", c.loss},
                     {"paths", {{"data", c.paths.data}, {"out", c.paths.out}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "network" && key != "train" && key != "loss" && key != "paths") {
      throw std::invalid_argument("unknown run config key: " + key);
    }
  }
  if (j.contains("network")) c.network = j["network"].get<NetworkConfig>();
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
  if (j.contains("loss")) c.loss = j["loss"].get<LossConfig>();
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    for (const auto& [key, _] : p.items()) {
      if (key != "data" && key != "out") throw std::invalid_argument("unknown paths key: " + key);
    }
    c.paths.data = p.value("data", std::string());
    c.paths.out = p.value("out", std::string());
  }
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  try {
    c = nlohmann::json::parse(text).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace csunet
