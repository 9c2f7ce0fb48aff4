#include "csunet/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace csunet {

void BlockConfig::validate() const {
  if (in_channels < 1 || out_channels < 1 || mid_channels < 1) {
    throw std::invalid_argument("block channel counts must be positive");
  }
  if (mid_channels > out_channels) throw std::invalid_argument("mid_channels must not exceed out_channels");
  if (se_reduction < 1) throw std::invalid_argument("se_reduction must be positive");
  if (nested_depth < 0) throw std::invalid_argument("nested_depth must be non-negative");
}

std::int64_t BlockConfig::gate_hidden(std::int64_t channels) const {
  return std::max<std::int64_t>(1, channels / se_reduction);
}

namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.span()) v = static_cast<T>(dist(rng));
  return t;
}

void require_divisible(const Shape& s, int depth, const char* what) {
  const std::int64_t f = std::int64_t{1} << depth;
  for (std::size_t a = 2; a < 5; ++a) {
    if (s[a] % f != 0) {
      throw ShapeError(std::string(what) + ": spatial extents " + to_string(s) + " must be divisible by " +
                       std::to_string(f) + " (2^nested_depth)");
    }
  }
}

template <typename T>
void require_channels(const Var<T>& x, std::int64_t c, const char* what) {
  volume_dims(x.value(), what);
  if (x.shape()[1] != c) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(c) + " input channels, got " +
                     std::to_string(x.shape()[1]));
  }
}

}  // namespace

template <typename T>
Conv<T>::Conv(ParameterRegistry<T>& reg, const std::string& prefix, std::int64_t in, std::int64_t out,
              std::int64_t kernel, Rng& rng)
    : kernel_(kernel) {
  weight_ = &reg.add(prefix + ".weight",
                     he_normal<T>(Shape{out, in, kernel, kernel, kernel}, in * kernel * kernel * kernel, rng));
  bias_ = &reg.add(prefix + ".bias", Tensor<T>::zeros(Shape{out}));
}

template <typename T>
Var<T> Conv<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  ConvOptions opt;
  const auto pad = kernel_ / 2;
  opt.padding = {pad, pad, pad};
  return conv3d(x, ctx.bind(*weight_), std::optional<Var<T>>(ctx.bind(*bias_)), opt);
}

template <typename T>
Cbr<T>::Cbr(ParameterRegistry<T>& reg, const std::string& prefix, std::int64_t in, std::int64_t out, NormMode norm,
            Rng& rng)
    : conv_(reg, prefix + ".conv", in, out, 3, rng), norm_(norm), in_(in) {
  gamma_ = &reg.add(prefix + ".norm.weight", Tensor<T>::full(Shape{out}, T(1)));
  beta_ = &reg.add(prefix + ".norm.bias", Tensor<T>::zeros(Shape{out}));
  if (norm == NormMode::batch) {
    running_mean_ = &reg.add(prefix + ".norm.running_mean", Tensor<T>::zeros(Shape{out}), false);
    running_var_ = &reg.add(prefix + ".norm.running_var", Tensor<T>::full(Shape{out}, T(1)), false);
  }
}

template <typename T>
Var<T> Cbr<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  require_channels(x, in_, "cbr");
  auto y = conv_.forward(ctx, x);
  if (norm_ == NormMode::batch) {
    y = batchnorm3d(y, ctx.bind(*gamma_), ctx.bind(*beta_), running_mean_->value, running_var_->value, ctx.mode);
  } else {
    y = instancenorm3d(y, ctx.bind(*gamma_), ctx.bind(*beta_));
  }
  return relu(y);
}

template <typename T>
SqueezeExcite<T>::SqueezeExcite(ParameterRegistry<T>& reg, const std::string& prefix, std::int64_t channels,
                                std::int64_t hidden, Rng& rng) {
  w1_ = &reg.add(prefix + ".fc1.weight", he_normal<T>(Shape{hidden, channels}, channels, rng));
  b1_ = &reg.add(prefix + ".fc1.bias", Tensor<T>::zeros(Shape{hidden}));
  w2_ = &reg.add(prefix + ".fc2.weight", he_normal<T>(Shape{channels, hidden}, hidden, rng));
  b2_ = &reg.add(prefix + ".fc2.bias", Tensor<T>::zeros(Shape{channels}));
}

template <typename T>
Var<T> SqueezeExcite<T>::gate(const Context<T>& ctx, const Var<T>& x) const {
  auto s = global_avg_pool(x);
  auto h = relu(linear(s, ctx.bind(*w1_), ctx.bind(*b1_)));
  return sigmoid(linear(h, ctx.bind(*w2_), ctx.bind(*b2_)));
}

template <typename T>
Var<T> SqueezeExcite<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  return scale_channels(x, gate(ctx, x));
}

template <typename T>
ResidualJoin<T>::ResidualJoin(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg,
                              Rng& rng)
    : variant_(cfg.variant) {
  if (variant_ == BlockVariant::channel_residual) {
    se_ = std::make_unique<SqueezeExcite<T>>(reg, prefix + ".se", cfg.out_channels,
                                             cfg.gate_hidden(cfg.out_channels), rng);
  }
  if (variant_ != BlockVariant::plain && cfg.in_channels != cfg.out_channels) {
    proj_ = std::make_unique<Conv<T>>(reg, prefix + ".proj", cfg.in_channels, cfg.out_channels, 1, rng);
  }
}

template <typename T>
Var<T> ResidualJoin<T>::join(const Context<T>& ctx, const Var<T>& branch, const Var<T>& x) const {
  if (variant_ == BlockVariant::plain) return branch;
  auto r = se_ ? se_->forward(ctx, branch) : branch;
  auto skip = proj_ ? proj_->forward(ctx, x) : x;
  return add(r, skip);
}

template <typename T>
void ResidualJoin<T>::census(Census& c) const {
  if (variant_ == BlockVariant::plain) return;
  ++c.residual_adds;
  if (se_) se_->census(c);
  if (proj_) ++c.projections;
}

template <typename T>
ChannelResidual<T>::ChannelResidual(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg,
                                    Rng& rng)
    : first_(reg, prefix + ".cbr1", cfg.in_channels, cfg.mid_channels, cfg.norm_mode, rng),
      second_(reg, prefix + ".cbr2", cfg.mid_channels, cfg.out_channels, cfg.norm_mode, rng),
      join_(reg, prefix, cfg, rng) {
  cfg.validate();
}

template <typename T>
Var<T> ChannelResidual<T>::branch(const Context<T>& ctx, const Var<T>& x) const {
  return second_.forward(ctx, first_.forward(ctx, x));
}

template <typename T>
Var<T> ChannelResidual<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  return join_.join(ctx, branch(ctx, x), x);
}

template <typename T>
MiniU<T>::MiniU(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg, Rng& rng)
    : depth_(cfg.nested_depth), upsample_(cfg.upsample_mode) {
  cfg.validate();
  if (depth_ < 1) throw std::invalid_argument("mini-U nested_depth must be >= 1");
  const auto out = cfg.out_channels, mid = cfg.mid_channels;
  encoder_.push_back(std::make_unique<Cbr<T>>(reg, prefix + ".enc0", cfg.in_channels, out, cfg.norm_mode, rng));
  for (int l = 1; l <= depth_; ++l) {
    encoder_.push_back(std::make_unique<Cbr<T>>(reg, prefix + ".enc" + std::to_string(l), l == 1 ? out : mid, mid,
                                                cfg.norm_mode, rng));
  }
  for (int l = depth_ - 1; l >= 0; --l) {
    const auto skip = l == 0 ? out : mid;
    const auto dst = l == 0 ? out : mid;
    decoder_.push_back(std::make_unique<Cbr<T>>(reg, prefix + ".dec" + std::to_string(l), mid + skip, dst,
                                                cfg.norm_mode, rng));
  }
}

template <typename T>
Var<T> MiniU<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  require_channels(x, encoder_.front()->in_channels(), "mini-U");
  require_divisible(x.shape(), depth_, "mini-U");
  std::vector<Var<T>> skips;
  skips.push_back(encoder_[0]->forward(ctx, x));
  for (int l = 1; l <= depth_; ++l) {
    skips.push_back(encoder_[static_cast<std::size_t>(l)]->forward(ctx, downsample2(skips.back())));
  }
  Var<T> d = skips.back();
  for (int i = 0; i < depth_; ++i) {
    const int level = depth_ - 1 - i;
    auto up = upsample3d(d, upsample_);
    d = decoder_[static_cast<std::size_t>(i)]->forward(ctx, concat_channels(up, skips[static_cast<std::size_t>(level)]));
  }
  return d;
}

template <typename T>
Crsu<T>::Crsu(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg, Rng& rng)
    : body_(reg, prefix + ".u", cfg, rng), join_(reg, prefix, cfg, rng) {}

template <typename T>
Var<T> Crsu<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  return join_.join(ctx, body_.forward(ctx, x), x);
}

template <typename T>
Ceu<T>::Ceu(ParameterRegistry<T>& reg, const std::string& prefix, const BlockConfig& cfg, Rng& rng)
    : depth_(cfg.nested_depth),
      upsample_(cfg.upsample_mode),
      inner_(reg, prefix + ".inner", cfg.in_channels, cfg.in_channels, cfg.norm_mode, rng),
      se_(reg, prefix + ".se", cfg.in_channels, cfg.gate_hidden(cfg.in_channels), rng),
      out_(reg, prefix + ".out", 2 * cfg.in_channels, cfg.in_channels, cfg.norm_mode, rng) {
  cfg.validate();
  if (cfg.out_channels != cfg.in_channels) throw std::invalid_argument("CEU is channel-preserving");
  if (depth_ != 0 && depth_ != 1) throw std::invalid_argument("CEU nested_depth must be 0 or 1");
}

template <typename T>
Var<T> Ceu<T>::u_branch(const Context<T>& ctx, const Var<T>& x) const {
  if (depth_ == 0) return inner_.forward(ctx, x);
  const auto& s = x.shape();
  for (std::size_t a = 2; a < 5; ++a) {
    if (s[a] < 2) throw ShapeError("CEU: spatial extents " + to_string(s) + " must be at least 2");
  }
  require_divisible(s, 1, "CEU");
  return upsample3d(inner_.forward(ctx, downsample2(x)), upsample_);
}

template <typename T>
Var<T> Ceu<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  require_channels(x, inner_.in_channels(), "CEU");
  auto u = u_branch(ctx, x);
  return out_.forward(ctx, concat_channels(se_.forward(ctx, x), u));
}

template class Conv<float>;
template class Conv<double>;
template class Cbr<float>;
template class Cbr<double>;
template class SqueezeExcite<float>;
template class SqueezeExcite<double>;
template class ResidualJoin<float>;
template class ResidualJoin<double>;
template class ChannelResidual<float>;
template class ChannelResidual<double>;
template class MiniU<float>;
template class MiniU<double>;
template class Crsu<float>;
template class Crsu<double>;
template class Ceu<float>;
template class Ceu<double>;

}  // namespace csunet
