#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "csunet/ops.hpp"

namespace csunet {

enum class NormMode { batch, instance };
enum class BlockVariant { plain, residual, channel_residual };

struct BlockConfig {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t mid_channels = 1;
  NormMode norm_mode = NormMode::batch;
  std::int64_t se_reduction = 4;
  int nested_depth = 1;
  BlockVariant variant = BlockVariant::channel_residual;
  UpsampleMode upsample_mode = UpsampleMode::trilinear;

  void validate() const;
  std::int64_t gate_hidden(std::int64_t channels) const;
};

/// Forward-pass context. A null tape runs without recording.
template <typename T>
struct Context {
  Tape<T>* tape = nullptr;
  Mode mode = Mode::train;

  Var<T> bind(Parameter<T>& p) const { return tape ? tape->param(p) : Var<T>::constant(p.value); }
};

/// Structural tally used to introspect block composition.
struct Census {
  int residual_adds = 0;
  int se_gates = 0;
  int projections = 0;
  int mini_us = 0;
};

using Rng = std::mt19937_64;

template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Var<T> forward(const Context<T>& ctx, const Var<T>& x) const = 0;
  virtual void census(Census& c) const = 0;
};

/// Convolution with bias; He-normal weights, zero bias.
template <typename T>
class Conv {
 public:
  Conv(ParameterRegistry<T>& reg, const std::string& prefix, std::int64_t in, std::int64_t out, std::int64_t kernel,
       Rng& rng);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const;

  Parameter<T>& weight() const { return *weight_; }
  Parameter<T>& bias() const { return *bias_; }

 private:
  Parameter<T>* weight_;
  Parameter<T>* bias_;
  std::int64_t kernel_;
};

/// conv 3x3x3 (pad 1) -> norm -> relu.
template <typename T>
class Cbr final : public Module<T> {
 public:
  Cbr(ParameterRegistry<T>& reg, const std::string& prefix, std::int64_t in, std::int64_t out, NormMode norm,
      Rng& rng);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const override;
  void census(Census&) const override {}

  const Conv<T>& conv() const { return conv_; }
  std::int64_t in_channels() const { return in_; }

 private:
  Conv<T> conv_;
  Parameter<T>* gamma_;
  Parameter<T>* beta_;
  Parameter<T>* running_mean_ = nullptr;
  Parameter<T>* running_var_ = nullptr;
  NormMode norm_;
  std::int64_t in_;
};

/// Squeeze-excitation: g = sigmoid(fc2(relu(fc1(gap(x))))), output x * g.
template <typename T>
class SqueezeExcite final : public Module<T> {
 public:
  SqueezeExcite(ParameterRegistry<T>& reg, const std::string& prefix, std::int64_t channels, std::int64_t hidden,
                Rng& rng);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const override;
  void census(Census& c) const override { ++c.se_gates; }

  /// The (N, C) gate values.
  Var<T> gate(const Context<T>& ctx, const Var<T>& x) const;

  Parameter<T>& fc1_weight() const { return *w1_; }
  Parameter<T>& fc1_bias() const { return *b1_; }
  Parameter<T>& fc2_weight() const { return *w2_; }
  Parameter<T>& fc2_bias() const { return *b2_; }

 private:
  Parameter<T>* w1_;
  Parameter<T>* b1_;
  Parameter<T>* w2_;
  Parameter<T>* b2_;
};

/// Skip path shared by the residual blocks: gate(branch) + proj(x), where the
/// gate exists only for the channel-residual variant and proj is a 1x1x1 conv
/// when channel counts differ.
template <typename T>
class ResidualJoin {
 public:
  ResidualJoin(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
  Var<T> join(const Context<T>& ctx, const Var<T>& branch, const Var<T>& x) const;
  void census(Census& c) const;

  const SqueezeExcite<T>* gate() const { return se_.get(); }

 private:
  BlockVariant variant_;
  std::unique_ptr<SqueezeExcite<T>> se_;
  std::unique_ptr<Conv<T>> proj_;
};

/// Channel residual block: x' = gate(F(x)) + proj(x) with F two CBR layers.
/// The plain variant returns F(x); residual drops the gate.
template <typename T>
class ChannelResidual final : public Module<T> {
 public:
  ChannelResidual(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const override;
  void census(Census& c) const override { join_.census(c); }

  Var<T> branch(const Context<T>& ctx, const Var<T>& x) const;
  const Cbr<T>& last() const { return second_; }
  const ResidualJoin<T>& join() const { return join_; }

 private:
  Cbr<T> first_;
  Cbr<T> second_;
  ResidualJoin<T> join_;
};

/// Nested encoder-decoder inside one stage. Level 0 runs at input
/// resolution; each deeper level pools by 2 and the decoder side fuses by
/// concatenation followed by CBR. Input extents must be divisible by
/// 2^nested_depth.
template <typename T>
class MiniU final : public Module<T> {
 public:
  MiniU(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const override;
  void census(Census& c) const override { ++c.mini_us; }

  /// The CBR producing the block output.
  const Cbr<T>& last() const { return *decoder_.back(); }
  int depth() const { return depth_; }

 private:
  int depth_;
  UpsampleMode upsample_;
  std::vector<std::unique_ptr<Cbr<T>>> encoder_;  // levels 0..depth
  std::vector<std::unique_ptr<Cbr<T>>> decoder_;  // levels depth-1..0
};

/// SIPU: the stage-level mini-U.
template <typename T>
using Sipu = MiniU<T>;

/// CRSU: mini-U wrapped in the channel residual join.
template <typename T>
class Crsu final : public Module<T> {
 public:
  Crsu(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const override;
  void census(Census& c) const override {
    body_.census(c);
    join_.census(c);
  }

  const MiniU<T>& body() const { return body_; }
  const ResidualJoin<T>& join() const { return join_; }

 private:
  MiniU<T> body_;
  ResidualJoin<T> join_;
};

/// CEU: bottleneck mini-U. The U branch pools, applies CBR and upsamples back
/// (depth 1; depth 0 skips the pooling); the skip is recalibrated by a
/// squeeze-excitation gate; out = CBR(concat(gate(x), branch)).
template <typename T>
class Ceu final : public Module<T> {
 public:
  Ceu(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const override;
  void census(Census& c) const override {
    se_.census(c);
    ++c.mini_us;
  }

  Var<T> u_branch(const Context<T>& ctx, const Var<T>& x) const;
  const Cbr<T>& inner() const { return inner_; }
  const Cbr<T>& out() const { return out_; }
  const SqueezeExcite<T>& gate() const { return se_; }

 private:
  int depth_;
  UpsampleMode upsample_;
  Cbr<T> inner_;
  SqueezeExcite<T> se_;
  Cbr<T> out_;
};

/// Pool by 2 in every spatial axis.
template <typename T>
Var<T> downsample2(const Var<T>& x) {
  return maxpool3d(x, Triple{2, 2, 2}, Triple{2, 2, 2});
}

}  // namespace csunet
