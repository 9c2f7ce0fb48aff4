#include "csunet/battery.hpp"

#include <chrono>
#include <functional>
#include <numeric>
#include <random>

#include "csunet/blocks.hpp"
#include "csunet/losses.hpp"
#include "csunet/network.hpp"

namespace csunet {

std::string to_string(BatteryKind k) {
  switch (k) {
    case BatteryKind::op: return "op";
    case BatteryKind::block: return "block";
    case BatteryKind::network: return "network";
  }
  return "op";
}

namespace {

using D = double;

Tensor<D> uniform(const Shape& s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<D> t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.span()) v = u(rng);
  return t;
}

/// Values whose pairwise gaps are at least 0.01, so max-pooling and relu stay
/// clear of ties and kinks under a 1e-4 probe.
Tensor<D> separated(const Shape& s, std::mt19937_64& rng) {
  Tensor<D> t(s);
  std::vector<std::int64_t> order(static_cast<std::size_t>(t.numel()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const double n = static_cast<double>(t.numel());
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t[i] = (static_cast<double>(order[static_cast<std::size_t>(i)]) + 0.5 - n / 2) * 0.02;
  }
  return t;
}

/// Contract an arbitrary output to a scalar with fixed random weights.
struct Projector {
  Tensor<D> weights;
  Var<D> operator()(const Var<D>& y) {
    if (weights.shape() != y.shape()) {
      std::mt19937_64 rng(0x5eed);
      weights = uniform(y.shape(), rng);
    }
    return sum(mul(y, Var<D>::constant(weights)));
  }
};

Var<D> bind(Tape<D>* tape, Parameter<D>& p) { return tape ? tape->param(p) : Var<D>::constant(p.value); }

std::vector<Parameter<D>*> trainable(ParameterRegistry<D>& reg) {
  std::vector<Parameter<D>*> out;
  for (auto& p : reg) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

class Runner {
 public:
  Runner(const BatteryOptions& opt) : opt_(opt), rng_(opt.seed) {}

  void check(const std::string& name, BatteryKind kind, bool strict, const ScalarFn& f, const Tensor<D>& x,
             const std::vector<Parameter<D>*>& params = {}, std::int64_t max_probes = 0, double h = 1e-4) {
    BatteryItem item;
    item.name = name;
    item.kind = kind;
    item.tol = strict ? opt_.tol / 10 : opt_.tol;
    GradCheckOptions go;
    go.tol = item.tol;
    go.max_probes = max_probes;
    go.h = h;
    go.seed = opt_.seed;
    const auto t0 = std::chrono::steady_clock::now();
    item.report = grad_check(f, x, go, params);
    item.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    items_.push_back(std::move(item));
  }

  std::mt19937_64& rng() { return rng_; }
  std::vector<BatteryItem> take() { return std::move(items_); }

 private:
  BatteryOptions opt_;
  std::mt19937_64 rng_;
  std::vector<BatteryItem> items_;
};

void op_items(Runner& r) {
  auto& rng = r.rng();
  const Shape vol{2, 3, 4, 4, 4};

  {
    ParameterRegistry<D> reg;
    auto& w = reg.add("weight", uniform({4, 3, 3, 3, 3}, rng));
    auto& b = reg.add("bias", uniform({4}, rng));
    auto pr = std::make_shared<Projector>();
    ConvOptions co;
    co.padding = {1, 1, 1};
    r.check("conv3d", BatteryKind::op, true,
            [&, pr, co](Tape<D>* t, const Var<D>& x) {
              return (*pr)(conv3d(x, bind(t, w), std::optional<Var<D>>(bind(t, b)), co));
            },
            uniform(vol, rng), trainable(reg));
    ConvOptions strided;
    strided.stride = {2, 1, 2};
    strided.padding = {0, 1, 1};
    strided.dilation = {1, 2, 1};
    auto pr2 = std::make_shared<Projector>();
    r.check("conv3d.strided_dilated", BatteryKind::op, true,
            [&, pr2, strided](Tape<D>* t, const Var<D>& x) {
              return (*pr2)(conv3d(x, bind(t, w), std::optional<Var<D>>(), strided));
            },
            uniform({1, 3, 5, 6, 5}, rng), {&w});
  }
  {
    auto pr = std::make_shared<Projector>();
    r.check("maxpool3d", BatteryKind::op, true,
            [pr](Tape<D>*, const Var<D>& x) { return (*pr)(maxpool3d(x, Triple{2, 2, 2}, Triple{2, 2, 2})); },
            separated(vol, rng));
  }
  for (auto mode : {UpsampleMode::nearest, UpsampleMode::trilinear}) {
    auto pr = std::make_shared<Projector>();
    r.check(std::string("upsample3d.") + (mode == UpsampleMode::nearest ? "nearest" : "trilinear"), BatteryKind::op,
            false, [pr, mode](Tape<D>*, const Var<D>& x) { return (*pr)(upsample3d(x, mode)); },
            uniform({1, 2, 2, 3, 2}, rng));
  }
  {
    ParameterRegistry<D> reg;
    auto& g = reg.add("gamma", uniform({3}, rng, 0.5, 1.5));
    auto& b = reg.add("beta", uniform({3}, rng));
    auto pr = std::make_shared<Projector>();
    auto rm = std::make_shared<Tensor<D>>(Shape{3});
    auto rv = std::make_shared<Tensor<D>>(Tensor<D>::full({3}, 1.0));
    r.check("batchnorm3d.train", BatteryKind::op, false,
            [&, pr, rm, rv](Tape<D>* t, const Var<D>& x) {
              return (*pr)(batchnorm3d(x, bind(t, g), bind(t, b), *rm, *rv, Mode::train));
            },
            uniform(vol, rng), trainable(reg));
    auto pr2 = std::make_shared<Projector>();
    r.check("batchnorm3d.eval", BatteryKind::op, false,
            [&, pr2, rm, rv](Tape<D>* t, const Var<D>& x) {
              return (*pr2)(batchnorm3d(x, bind(t, g), bind(t, b), *rm, *rv, Mode::eval));
            },
            uniform(vol, rng), trainable(reg));
    auto pr3 = std::make_shared<Projector>();
    r.check("instancenorm3d", BatteryKind::op, false,
            [&, pr3](Tape<D>* t, const Var<D>& x) { return (*pr3)(instancenorm3d(x, bind(t, g), bind(t, b))); },
            uniform(vol, rng), trainable(reg));
  }
  {
    auto pr = std::make_shared<Projector>();
    r.check("relu", BatteryKind::op, false, [pr](Tape<D>*, const Var<D>& x) { return (*pr)(relu(x)); },
            separated({2, 3, 2, 2, 2}, rng));
    auto pr2 = std::make_shared<Projector>();
    r.check("sigmoid", BatteryKind::op, false, [pr2](Tape<D>*, const Var<D>& x) { return (*pr2)(sigmoid(x)); },
            uniform({2, 3, 2, 2, 2}, rng, -3, 3));
  }
  {
    ParameterRegistry<D> reg;
    auto& other = reg.add("other", uniform({2, 3, 2, 2, 2}, rng));
    auto pr = std::make_shared<Projector>();
    r.check("add", BatteryKind::op, false,
            [&, pr](Tape<D>* t, const Var<D>& x) { return (*pr)(add(x, bind(t, other))); },
            uniform({2, 3, 2, 2, 2}, rng), trainable(reg));
    auto pr2 = std::make_shared<Projector>();
    r.check("mul", BatteryKind::op, false,
            [&, pr2](Tape<D>* t, const Var<D>& x) { return (*pr2)(mul(x, bind(t, other))); },
            uniform({2, 3, 2, 2, 2}, rng), trainable(reg));
    auto pr3 = std::make_shared<Projector>();
    r.check("scale", BatteryKind::op, false, [pr3](Tape<D>*, const Var<D>& x) { return (*pr3)(scale(x, 0.37)); },
            uniform({2, 3, 2, 2, 2}, rng));
    auto pr4 = std::make_shared<Projector>();
    r.check("concat_channels", BatteryKind::op, false,
            [&, pr4](Tape<D>* t, const Var<D>& x) { return (*pr4)(concat_channels(x, bind(t, other))); },
            uniform({2, 3, 2, 2, 2}, rng), trainable(reg));
  }
  {
    auto pr = std::make_shared<Projector>();
    r.check("select_channel", BatteryKind::op, false,
            [pr](Tape<D>*, const Var<D>& x) { return (*pr)(select_channel(x, 1)); }, uniform({2, 3, 2, 2, 2}, rng));
    auto pr2 = std::make_shared<Projector>();
    r.check("softmax_channels", BatteryKind::op, false,
            [pr2](Tape<D>*, const Var<D>& x) { return (*pr2)(softmax_channels(x)); },
            uniform({2, 3, 2, 2, 2}, rng, -2, 2));
    auto pr3 = std::make_shared<Projector>();
    r.check("global_avg_pool", BatteryKind::op, false,
            [pr3](Tape<D>*, const Var<D>& x) { return (*pr3)(global_avg_pool(x)); }, uniform(vol, rng));
  }
  {
    ParameterRegistry<D> reg;
    auto& w = reg.add("weight", uniform({4, 3}, rng));
    auto& b = reg.add("bias", uniform({4}, rng));
    auto pr = std::make_shared<Projector>();
    r.check("linear", BatteryKind::op, true,
            [&, pr](Tape<D>* t, const Var<D>& x) { return (*pr)(linear(x, bind(t, w), bind(t, b))); },
            uniform({2, 3}, rng), trainable(reg));
  }
  {
    ParameterRegistry<D> reg;
    auto& g = reg.add("gate", uniform({2, 3}, rng, 0.1, 0.9));
    auto pr = std::make_shared<Projector>();
    r.check("scale_channels", BatteryKind::op, false,
            [&, pr](Tape<D>* t, const Var<D>& x) { return (*pr)(scale_channels(x, bind(t, g))); }, uniform(vol, rng),
            trainable(reg));
  }
  {
    auto w = uniform({2, 3, 2, 2, 2}, rng);
    r.check("sum", BatteryKind::op, false,
            [w](Tape<D>*, const Var<D>& x) { return sum(mul(x, Var<D>::constant(w))); },
            uniform({2, 3, 2, 2, 2}, rng));
    r.check("mean", BatteryKind::op, false,
            [w](Tape<D>*, const Var<D>& x) { return mean(mul(x, Var<D>::constant(w))); },
            uniform({2, 3, 2, 2, 2}, rng));
  }
  {
    Tensor<D> mask({2, 1, 3, 3, 3});
    std::bernoulli_distribution coin(0.4);
    for (auto& v : mask.span()) v = coin(rng) ? 1.0 : 0.0;
    LossConfig lc;
    r.check("ce_loss", BatteryKind::op, false,
            [mask, lc](Tape<D>*, const Var<D>& x) { return ce_loss(x, one_hot(mask, 2), lc); },
            uniform({2, 2, 3, 3, 3}, rng, -2, 2));
    r.check("dice_loss", BatteryKind::op, false,
            [mask, lc](Tape<D>*, const Var<D>& x) { return dice_loss(x, mask, lc); },
            uniform({2, 1, 3, 3, 3}, rng, 0.05, 0.95));
    LossConfig mixed = lc;
    mixed.ce_weight = 0.5;
    r.check("combined_loss", BatteryKind::op, false,
            [mask, mixed](Tape<D>*, const Var<D>& x) { return combined_loss(x, mask, mixed); },
            uniform({2, 2, 3, 3, 3}, rng, -2, 2));
  }
}

template <typename M>
void block_item(Runner& r, const std::string& name, const BlockConfig& cfg, const Shape& input,
                std::int64_t max_probes) {
  auto reg = std::make_shared<ParameterRegistry<D>>();
  Rng init(r.rng()());
  auto block = std::make_shared<M>(*reg, "blk", cfg, init);
  auto pr = std::make_shared<Projector>();
  r.check(name, BatteryKind::block, false,
          [reg, block, pr](Tape<D>* t, const Var<D>& x) {
            Context<D> ctx{t, Mode::train};
            return (*pr)(block->forward(ctx, x));
          },
          uniform(input, r.rng()), trainable(*reg), max_probes);
}

void block_items(Runner& r) {
  {
    auto reg = std::make_shared<ParameterRegistry<D>>();
    Rng init(r.rng()());
    auto cbr = std::make_shared<Cbr<D>>(*reg, "cbr", 2, 3, NormMode::batch, init);
    auto pr = std::make_shared<Projector>();
    r.check("block.cbr", BatteryKind::block, false,
            [reg, cbr, pr](Tape<D>* t, const Var<D>& x) { return (*pr)(cbr->forward(Context<D>{t, Mode::train}, x)); },
            uniform({2, 2, 4, 4, 4}, r.rng()), trainable(*reg), 12);
  }
  {
    auto reg = std::make_shared<ParameterRegistry<D>>();
    Rng init(r.rng()());
    auto se = std::make_shared<SqueezeExcite<D>>(*reg, "se", 4, 1, init);
    auto pr = std::make_shared<Projector>();
    r.check("block.squeeze_excite", BatteryKind::block, false,
            [reg, se, pr](Tape<D>* t, const Var<D>& x) { return (*pr)(se->forward(Context<D>{t, Mode::train}, x)); },
            uniform({2, 4, 2, 2, 2}, r.rng()), trainable(*reg));
  }
  BlockConfig cfg;
  cfg.in_channels = 2;
  cfg.out_channels = 4;
  cfg.mid_channels = 3;
  cfg.se_reduction = 2;
  for (auto v : {BlockVariant::plain, BlockVariant::residual, BlockVariant::channel_residual}) {
    cfg.variant = v;
    const std::string suffix =
        v == BlockVariant::plain ? "plain" : v == BlockVariant::residual ? "residual" : "channel_residual";
    block_item<ChannelResidual<D>>(r, "block.cr." + suffix, cfg, {2, 2, 4, 4, 4}, 8);
  }
  cfg.variant = BlockVariant::channel_residual;
  cfg.nested_depth = 2;
  block_item<MiniU<D>>(r, "block.sipu", cfg, {2, 2, 4, 4, 4}, 6);
  block_item<Crsu<D>>(r, "block.crsu", cfg, {2, 2, 4, 4, 4}, 6);
  BlockConfig ceu = cfg;
  ceu.in_channels = 4;
  ceu.mid_channels = 4;
  ceu.nested_depth = 1;
  block_item<Ceu<D>>(r, "block.ceu", ceu, {2, 4, 2, 2, 2}, 8);
}

// Thousands of relu and max-pool units make a 1e-4 probe cross kinks.
constexpr double kNetworkStep = 1e-8;

void network_item(Runner& r) {
  NetworkConfig nc;
  nc.stage_channels = {4, 8, 16, 32};
  nc.input_extent = 16;
  nc.seed = r.rng()();
  auto net = std::make_shared<CSUNet3D<D>>(nc);
  Tensor<D> mask({2, 1, 16, 16, 16});
  std::bernoulli_distribution coin(0.3);
  for (auto& v : mask.span()) v = coin(r.rng()) ? 1.0 : 0.0;
  LossConfig lc;
  lc.ce_weight = 0.5;
  r.check("network.tiny", BatteryKind::network, false,
          [net, mask, lc](Tape<D>* t, const Var<D>& x) {
            return combined_loss(net->forward(Context<D>{t, Mode::train}, x), mask, lc);
          },
          uniform({2, 1, 16, 16, 16}, r.rng()), trainable(net->parameters()), 1, kNetworkStep);
}

}  // namespace

std::vector<BatteryItem> run_gradcheck_battery(const BatteryOptions& opt) {
  Runner r(opt);
  op_items(r);
  block_items(r);
  network_item(r);
  return r.take();
}

}  // namespace csunet
