#include "csunet/network.hpp"

#include <algorithm>
#include <stdexcept>

namespace csunet {

std::string to_string(NetworkVariant v) {
  switch (v) {
    case NetworkVariant::unet: return "unet";
    case NetworkVariant::resunet: return "resunet";
    case NetworkVariant::base_u: return "base_u";
    case NetworkVariant::base_res: return "base_res";
    case NetworkVariant::base_cr: return "base_cr";
  }
  return "?";
}

NetworkVariant parse_variant(const std::string& s) {
  for (auto v : {NetworkVariant::unet, NetworkVariant::resunet, NetworkVariant::base_u, NetworkVariant::base_res,
                 NetworkVariant::base_cr}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown network variant: " + s);
}

std::string to_string(UpsampleMode m) { return m == UpsampleMode::nearest ? "nearest" : "trilinear"; }

UpsampleMode parse_upsample_mode(const std::string& s) {
  if (s == "nearest") return UpsampleMode::nearest;
  if (s == "trilinear") return UpsampleMode::trilinear;
  throw std::invalid_argument("unknown upsample mode: " + s);
}

std::string to_string(NormMode m) { return m == NormMode::batch ? "batch" : "instance"; }

NormMode parse_norm_mode(const std::string& s) {
  if (s == "batch") return NormMode::batch;
  if (s == "instance") return NormMode::instance;
  throw std::invalid_argument("unknown norm mode: " + s);
}

void NetworkConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("in_channels must be positive");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  if (stage_channels.size() != 4) throw std::invalid_argument("stage_channels must list exactly 4 stages");
  for (auto c : stage_channels) {
    if (c < 1) throw std::invalid_argument("stage channels must be positive");
  }
  if (nested_depths.size() != 4) throw std::invalid_argument("nested_depths must list exactly 4 stages");
  for (auto d : nested_depths) {
    if (d < 1) throw std::invalid_argument("nested depths must be >= 1");
  }
  if (input_extent < 16 || input_extent % 16 != 0) {
    throw std::invalid_argument("input_extent must be a positive multiple of 16, got " +
                                std::to_string(input_extent));
  }
  if (se_reduction < 1) throw std::invalid_argument("se_reduction must be positive");
}

int NetworkConfig::effective_depth(int stage) const {
  const auto e = stage_extent(stage);
  int d = 0;
  while (d < nested_depths[static_cast<std::size_t>(stage)] && e % (std::int64_t{2} << d) == 0) ++d;
  return d;
}

int NetworkConfig::ceu_depth() const {
  const auto e = bottleneck_extent();
  return (e >= 2 && e % 2 == 0) ? 1 : 0;
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels},
                     {"num_classes", c.num_classes},
                     {"stage_channels", c.stage_channels},
                     {"input_extent", c.input_extent},
                     {"variant", to_string(c.variant)},
                     {"upsample_mode", to_string(c.upsample_mode)},
                     {"norm_mode", to_string(c.norm_mode)},
                     {"seed", c.seed},
                     {"nested_depths", c.nested_depths},
                     {"se_reduction", c.se_reduction}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  static const std::vector<std::string> known{"in_channels", "num_classes",   "stage_channels", "input_extent",
                                              "variant",     "upsample_mode", "norm_mode",      "seed",
                                              "nested_depths", "se_reduction"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown network config key: " + key);
    }
  }
  NetworkConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.stage_channels = j.value("stage_channels", d.stage_channels);
  c.input_extent = j.value("input_extent", d.input_extent);
  c.variant = parse_variant(j.value("variant", to_string(d.variant)));
  c.upsample_mode = parse_upsample_mode(j.value("upsample_mode", to_string(d.upsample_mode)));
  c.norm_mode = parse_norm_mode(j.value("norm_mode", to_string(d.norm_mode)));
  c.seed = j.value("seed", d.seed);
  c.nested_depths = j.value("nested_depths", d.nested_depths);
  c.se_reduction = j.value("se_reduction", d.se_reduction);
}

template <typename T>
typename CSUNet3D<T>::Stage CSUNet3D<T>::make_stage(const std::string& name, std::int64_t in, std::int64_t out,
                                                     int depth, Rng& rng) {
  auto& reg = *registry_;
  Stage s{name, {}};
  BlockConfig bc;
  bc.in_channels = out;
  bc.out_channels = out;
  bc.mid_channels = std::max<std::int64_t>(1, out / 2);
  bc.norm_mode = config_.norm_mode;
  bc.se_reduction = config_.se_reduction;
  bc.nested_depth = depth;
  bc.upsample_mode = config_.upsample_mode;

  switch (config_.variant) {
    case NetworkVariant::unet:
      s.blocks.push_back(std::make_unique<Cbr<T>>(reg, name + ".cbr1", in, out, config_.norm_mode, rng));
      s.blocks.push_back(std::make_unique<Cbr<T>>(reg, name + ".cbr2", out, out, config_.norm_mode, rng));
      break;
    case NetworkVariant::resunet: {
      s.blocks.push_back(std::make_unique<Cbr<T>>(reg, name + ".cbr", in, out, config_.norm_mode, rng));
      bc.variant = BlockVariant::residual;
      bc.mid_channels = out;
      s.blocks.push_back(std::make_unique<ChannelResidual<T>>(reg, name + ".res", bc, rng));
      break;
    }
    case NetworkVariant::base_u:
    case NetworkVariant::base_res:
    case NetworkVariant::base_cr: {
      BlockConfig sipu = bc;
      sipu.in_channels = in;
      sipu.variant = BlockVariant::plain;
      s.blocks.push_back(std::make_unique<Sipu<T>>(reg, name + ".sipu", sipu, rng));
      bc.variant = config_.variant == NetworkVariant::base_u     ? BlockVariant::plain
                   : config_.variant == NetworkVariant::base_res ? BlockVariant::residual
                                                                 : BlockVariant::channel_residual;
      s.blocks.push_back(std::make_unique<Crsu<T>>(reg, name + ".crsu", bc, rng));
      break;
    }
  }
  return s;
}

template <typename T>
CSUNet3D<T>::CSUNet3D(const NetworkConfig& config)
    : config_(config), registry_(std::make_unique<ParameterRegistry<T>>()) {
  config_.validate();
  Rng rng(config_.seed);
  const auto& ch = config_.stage_channels;

  for (int i = 0; i < 4; ++i) {
    const auto in = i == 0 ? config_.in_channels : ch[static_cast<std::size_t>(i - 1)];
    encoders_.push_back(make_stage("en" + std::to_string(i + 1), in, ch[static_cast<std::size_t>(i)],
                                   config_.effective_depth(i), rng));
  }

  const auto cb = ch[3];
  bottleneck_.name = "bottleneck";
  BlockConfig bc;
  bc.in_channels = cb;
  bc.out_channels = cb;
  bc.mid_channels = cb;
  bc.norm_mode = config_.norm_mode;
  bc.se_reduction = config_.se_reduction;
  bc.upsample_mode = config_.upsample_mode;
  auto& reg = *registry_;
  switch (config_.variant) {
    case NetworkVariant::unet:
      bottleneck_.blocks.push_back(std::make_unique<Cbr<T>>(reg, "bottleneck.cbr1", cb, cb, config_.norm_mode, rng));
      bottleneck_.blocks.push_back(std::make_unique<Cbr<T>>(reg, "bottleneck.cbr2", cb, cb, config_.norm_mode, rng));
      break;
    case NetworkVariant::resunet:
      bc.variant = BlockVariant::residual;
      bottleneck_.blocks.push_back(std::make_unique<ChannelResidual<T>>(reg, "bottleneck.res", bc, rng));
      break;
    default:
      bc.variant = config_.variant == NetworkVariant::base_u     ? BlockVariant::plain
                   : config_.variant == NetworkVariant::base_res ? BlockVariant::residual
                                                                 : BlockVariant::channel_residual;
      bottleneck_.blocks.push_back(std::make_unique<ChannelResidual<T>>(reg, "bottleneck.cr", bc, rng));
      bc.nested_depth = config_.ceu_depth();
      bottleneck_.blocks.push_back(std::make_unique<Ceu<T>>(reg, "bottleneck.ceu", bc, rng));
      break;
  }

  for (int i = 3; i >= 0; --i) {
    const auto below = i == 3 ? cb : ch[static_cast<std::size_t>(i + 1)];
    const auto here = ch[static_cast<std::size_t>(i)];
    decoders_.push_back(make_stage("de" + std::to_string(i + 1), here + below, here, config_.effective_depth(i), rng));
  }
  head_ = std::make_unique<Conv<T>>(reg, "head", ch[0], config_.num_classes, 1, rng);
}

template <typename T>
Var<T> CSUNet3D<T>::run(const Stage& s, const Context<T>& ctx, Var<T> x, std::vector<StageShape>* trace) const {
  const Shape in = x.shape();
  for (const auto& b : s.blocks) x = b->forward(ctx, x);
  if (trace) trace->push_back({s.name, in, x.shape()});
  return x;
}

template <typename T>
Var<T> CSUNet3D<T>::forward(const Context<T>& ctx, const Var<T>& x, std::vector<StageShape>* trace) const {
  const auto v = volume_dims(x.value(), "network input");
  if (v.c != config_.in_channels) {
    throw ShapeError("network input has " + std::to_string(v.c) + " channels, expected " +
                     std::to_string(config_.in_channels));
  }
  const auto e = config_.input_extent;
  if (v.d != e || v.h != e || v.w != e) {
    throw ShapeError("network input extents " + to_string(x.shape()) + " do not match input_extent " +
                     std::to_string(e));
  }

  std::vector<Var<T>> skips;
  Var<T> h = x;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    if (i > 0) h = downsample2(h);
    h = run(encoders_[i], ctx, h, trace);
    skips.push_back(h);
  }
  h = run(bottleneck_, ctx, downsample2(h), trace);
  for (std::size_t k = 0; k < decoders_.size(); ++k) {
    const auto& skip = skips[skips.size() - 1 - k];
    h = run(decoders_[k], ctx, concat_channels(skip, upsample3d(h, config_.upsample_mode)), trace);
  }
  auto logits = head_->forward(ctx, h);
  if (trace) trace->push_back({"head", h.shape(), logits.shape()});
  return logits;
}

template <typename T>
Tensor<T> CSUNet3D<T>::predict_logits(const Tensor<T>& x, Mode mode) const {
  Context<T> ctx{nullptr, mode};
  return forward(ctx, Var<T>::constant(x)).value();
}

template <typename T>
std::vector<StageShape> CSUNet3D<T>::summary() const {
  std::vector<StageShape> out;
  const auto& ch = config_.stage_channels;
  auto vol = [](std::int64_t c, std::int64_t e) { return Shape{1, c, e, e, e}; };
  for (int i = 0; i < 4; ++i) {
    const auto in = i == 0 ? config_.in_channels : ch[static_cast<std::size_t>(i - 1)];
    const auto e = config_.stage_extent(i);
    out.push_back({"en" + std::to_string(i + 1), vol(in, e), vol(ch[static_cast<std::size_t>(i)], e)});
  }
  const auto eb = config_.bottleneck_extent();
  out.push_back({"bottleneck", vol(ch[3], eb), vol(ch[3], eb)});
  for (int i = 3; i >= 0; --i) {
    const auto below = i == 3 ? ch[3] : ch[static_cast<std::size_t>(i + 1)];
    const auto here = ch[static_cast<std::size_t>(i)];
    const auto e = config_.stage_extent(i);
    out.push_back({"de" + std::to_string(i + 1), vol(here + below, e), vol(here, e)});
  }
  out.push_back({"head", vol(ch[0], config_.input_extent), vol(config_.num_classes, config_.input_extent)});
  return out;
}

template <typename T>
Census CSUNet3D<T>::census() const {
  Census c;
  auto visit = [&c](const Stage& s) {
    for (const auto& b : s.blocks) b->census(c);
  };
  for (const auto& s : encoders_) visit(s);
  visit(bottleneck_);
  for (const auto& s : decoders_) visit(s);
  return c;
}

template <typename T>
std::vector<Tensor<T>> CSUNet3D<T>::snapshot() const {
  std::vector<Tensor<T>> out;
  out.reserve(registry_->size());
  for (const auto& p : *registry_) out.push_back(p.value);
  return out;
}

template <typename T>
void CSUNet3D<T>::restore(const std::vector<Tensor<T>>& values) {
  if (values.size() != registry_->size()) throw std::invalid_argument("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& p = (*registry_)[i];
    if (values[i].shape() != p.value.shape()) throw ShapeError("snapshot shape mismatch for " + p.name);
    p.value = values[i];
  }
}

template class CSUNet3D<float>;
template class CSUNet3D<double>;

}  // namespace csunet
