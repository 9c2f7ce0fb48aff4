#pragma once

#include <memory>
#include <string>
#include <vector>

#include "csunet/blocks.hpp"
#include "json.hpp"

namespace csunet {

/// Block-composition presets of the ablation study.
enum class NetworkVariant { unet, resunet, base_u, base_res, base_cr };

std::string to_string(NetworkVariant v);
NetworkVariant parse_variant(const std::string& s);
std::string to_string(UpsampleMode m);
UpsampleMode parse_upsample_mode(const std::string& s);
std::string to_string(NormMode m);
NormMode parse_norm_mode(const std::string& s);

struct NetworkConfig {
  std::int64_t in_channels = 1;
  std::int64_t num_classes = 2;
  std::vector<std::int64_t> stage_channels{32, 64, 128, 256};
  std::int64_t input_extent = 64;
  NetworkVariant variant = NetworkVariant::base_cr;
  UpsampleMode upsample_mode = UpsampleMode::trilinear;
  NormMode norm_mode = NormMode::batch;
  std::uint64_t seed = 0;
  /// Requested mini-U depth per stage; clipped where an extent cannot be
  /// halved that often.
  std::vector<int> nested_depths{2, 2, 1, 1};
  std::int64_t se_reduction = 4;

  void validate() const;
  std::int64_t stage_extent(int stage) const { return input_extent >> stage; }
  std::int64_t bottleneck_extent() const { return input_extent / 16; }
  int effective_depth(int stage) const;
  int ceu_depth() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

struct StageShape {
  std::string name;
  Shape input;
  Shape output;
  friend bool operator==(const StageShape&, const StageShape&) = default;
};

/// Encoder-decoder with four stages, a bottleneck and a 1x1x1 head that
/// emits per-class logits.
template <typename T>
class CSUNet3D {
 public:
  explicit CSUNet3D(const NetworkConfig& config);
  CSUNet3D(CSUNet3D&&) noexcept = default;
  CSUNet3D& operator=(CSUNet3D&&) noexcept = default;

  /// x is (N, in_channels, E, E, E); returns (N, num_classes, E, E, E).
  /// When `trace` is given, every stage appends its input/output shape.
  Var<T> forward(const Context<T>& ctx, const Var<T>& x, std::vector<StageShape>* trace = nullptr) const;

  /// Convenience inference path without a tape.
  Tensor<T> predict_logits(const Tensor<T>& x, Mode mode = Mode::eval) const;

  const NetworkConfig& config() const { return config_; }
  ParameterRegistry<T>& parameters() { return *registry_; }
  const ParameterRegistry<T>& parameters() const { return *registry_; }

  std::int64_t parameter_count() const { return registry_->trainable_count(); }
  /// Per-stage shapes for a batch of one, derived from the configuration.
  std::vector<StageShape> summary() const;
  Census census() const;

  /// Copy of every registry value (trainable and running statistics).
  std::vector<Tensor<T>> snapshot() const;
  void restore(const std::vector<Tensor<T>>& values);

 private:
  struct Stage {
    std::string name;
    std::vector<std::unique_ptr<Module<T>>> blocks;
  };

  Stage make_stage(const std::string& name, std::int64_t in, std::int64_t out, int depth, Rng& rng);
  Var<T> run(const Stage& s, const Context<T>& ctx, Var<T> x, std::vector<StageShape>* trace) const;

  NetworkConfig config_;
  std::unique_ptr<ParameterRegistry<T>> registry_;
  std::vector<Stage> encoders_;
  Stage bottleneck_;
  std::vector<Stage> decoders_;  // De4 .. De1
  std::unique_ptr<Conv<T>> head_;
};

template <typename T>
CSUNet3D<T> build(const NetworkConfig& config) {
  return CSUNet3D<T>(config);
}

extern template class CSUNet3D<float>;
extern template class CSUNet3D<double>;

}  // namespace csunet
