#include "csunet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace csunet {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

void TrainConfig::validate() const {
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (folds < 2) throw std::invalid_argument("folds must be >= 2");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (optimizer.lr < 0) throw std::invalid_argument("learning rate must be non-negative");
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw std::invalid_argument(std::string("unknown ") + where + " key: " + key);
    }
  }
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"optimizer",
       {{"kind", to_string(c.optimizer.kind)},
        {"lr", c.optimizer.lr},
        {"momentum", c.optimizer.momentum},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps}}},
      {"batch_size", c.batch_size},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience},
      {"folds", c.folds},
      {"augment", {{"flip_axis_h", c.augment.flip_axis_h}, {"flip_axis_w", c.augment.flip_axis_w}}},
      {"seed", c.seed},
      {"monitor", c.monitor == Monitor::dsc ? "dsc" : "loss"},
      {"improvement_threshold", c.improvement_threshold},
      {"stop_at_dsc", c.stop_at_dsc}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"optimizer", "batch_size", "max_epochs", "patience", "folds", "augment", "seed", "monitor",
                  "improvement_threshold", "stop_at_dsc"},
                 "train config");
  TrainConfig d;
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    reject_unknown(o, {"kind", "lr", "momentum", "beta1", "beta2", "eps"}, "optimizer");
    const auto kind = o.value("kind", std::string("adam"));
    if (kind != "adam" && kind != "sgd") throw std::invalid_argument("unknown optimizer kind: " + kind);
    c.optimizer.kind = kind == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
    c.optimizer.lr = o.value("lr", d.optimizer.lr);
    c.optimizer.momentum = o.value("momentum", d.optimizer.momentum);
    c.optimizer.beta1 = o.value("beta1", d.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", d.optimizer.beta2);
    c.optimizer.eps = o.value("eps", d.optimizer.eps);
  } else {
    c.optimizer = d.optimizer;
  }
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.folds = j.value("folds", d.folds);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    reject_unknown(a, {"flip_axis_h", "flip_axis_w"}, "augment");
    c.augment.flip_axis_h = a.value("flip_axis_h", d.augment.flip_axis_h);
    c.augment.flip_axis_w = a.value("flip_axis_w", d.augment.flip_axis_w);
  } else {
    c.augment = d.augment;
  }
  c.seed = j.value("seed", d.seed);
  const auto mon = j.value("monitor", std::string("dsc"));
  if (mon != "dsc" && mon != "loss") throw std::invalid_argument("monitor must be dsc or loss");
  c.monitor = mon == "dsc" ? Monitor::dsc : Monitor::loss;
  c.improvement_threshold = j.value("improvement_threshold", d.improvement_threshold);
  c.stop_at_dsc = j.value("stop_at_dsc", d.stop_at_dsc);
}

template <typename T>
Optimizer<T>::Optimizer(const OptimizerConfig& cfg, const ParameterRegistry<T>& params) : cfg_(cfg) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    m_.push_back(Tensor<T>::zeros(p.value.shape()));
    if (cfg_.kind == OptimizerKind::adam) v_.push_back(Tensor<T>::zeros(p.value.shape()));
  }
}

template <typename T>
void Optimizer<T>::step(ParameterRegistry<T>& params) {
  ++t_;
  const double lr = cfg_.lr;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t k = 0;
  for (auto& p : params) {
    if (!p.trainable) continue;
    auto& m = m_[k];
    if (m.shape() != p.value.shape()) throw ShapeError("optimizer state does not match parameter " + p.name);
    const auto n = p.value.numel();
    if (cfg_.kind == OptimizerKind::sgd) {
      const T mu = static_cast<T>(cfg_.momentum);
      for (std::int64_t i = 0; i < n; ++i) {
        m[i] = mu * m[i] + p.grad[i];
        p.value[i] -= static_cast<T>(lr) * m[i];
      }
    } else {
      auto& v = v_[k];
      const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
      for (std::int64_t i = 0; i < n; ++i) {
        const T g = p.grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
    p.zero_grad();
    ++k;
  }
}

Tensor<float> flip_axis(const Tensor<float>& volume, int axis) {
  if (volume.dim() != 4 || axis < 1 || axis > 3) throw ShapeError("flip_axis: expected (C,D,H,W) and axis 1..3");
  const auto& s = volume.shape();
  Tensor<float> out(s);
  const std::int64_t C = s[0], D = s[1], H = s[2], W = s[3];
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t d = 0; d < D; ++d)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w) {
          const auto sd = axis == 1 ? D - 1 - d : d;
          const auto sh = axis == 2 ? H - 1 - h : h;
          const auto sw = axis == 3 ? W - 1 - w : w;
          out[((c * D + d) * H + h) * W + w] = volume[((c * D + sd) * H + sh) * W + sw];
        }
  return out;
}

void augment_flip(Tensor<float>& image, Tensor<float>& mask, Rng& rng, const AugmentConfig& cfg) {
  if (image.dim() != 4 || mask.dim() != 4 ||
      !std::equal(image.shape().begin() + 1, image.shape().end(), mask.shape().begin() + 1)) {
    throw ShapeError("augment_flip: image and mask must share spatial shape");
  }
  auto coin = [&rng] { return (rng() >> 63) != 0; };
  if (cfg.flip_axis_h && coin()) {
    image = flip_axis(image, 2);
    mask = flip_axis(mask, 2);
  }
  if (cfg.flip_axis_w && coin()) {
    image = flip_axis(image, 3);
    mask = flip_axis(mask, 3);
  }
}

namespace {

// Fisher-Yates with an explicit index draw so the permutation depends only on
// the mt19937_64 stream.
template <typename V>
void seeded_shuffle(std::vector<V>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

std::vector<FoldSplit> kfold_split(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  const auto n = static_cast<std::int64_t>(ids.size());
  if (k > n) {
    throw std::invalid_argument("kfold_split: k=" + std::to_string(k) + " exceeds sample count " + std::to_string(n));
  }
  std::vector<std::string> order = ids;
  Rng rng(seed);
  seeded_shuffle(order, rng);
  std::vector<FoldSplit> out(static_cast<std::size_t>(k));
  const auto base = n / k, extra = n % k;
  std::int64_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const auto len = base + (f < extra ? 1 : 0);
    for (std::int64_t i = 0; i < n; ++i) {
      auto& dst = (i >= pos && i < pos + len) ? out[static_cast<std::size_t>(f)].val_ids
                                              : out[static_cast<std::size_t>(f)].train_ids;
      dst.push_back(order[static_cast<std::size_t>(i)]);
    }
    pos += len;
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("empty batch");
  const auto& s = samples.front().image.shape();
  if (s.size() != 4) throw ShapeError("sample image must be (C,D,H,W)");
  const auto n = static_cast<std::int64_t>(samples.size());
  Tensor<T> img(Shape{n, s[0], s[1], s[2], s[3]});
  Tensor<T> msk(Shape{n, 1, s[1], s[2], s[3]});
  const auto per_img = numel(s), per_mask = s[1] * s[2] * s[3];
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& smp = samples[static_cast<std::size_t>(i)];
    if (smp.image.shape() != s || smp.mask.numel() != per_mask) {
      throw ShapeError("batch samples must share extents (sample " + smp.id + ")");
    }
    std::copy(smp.image.values().begin(), smp.image.values().end(), img.data() + i * per_img);
    std::copy(smp.mask.values().begin(), smp.mask.values().end(), msk.data() + i * per_mask);
  }
  return {std::move(img), std::move(msk)};
}

template <typename T>
double train_step(CSUNet3D<T>& net, const std::vector<Sample>& batch, const LossConfig& loss_cfg, Optimizer<T>& opt) {
  auto [img, msk] = make_batch<T>(batch);
  double value;
  {
    Tape<T> tape;
    Context<T> ctx{&tape, Mode::train};
    Var<T> loss;
    try {
      loss = combined_loss(net.forward(ctx, tape.input(std::move(img))), msk, loss_cfg);
    } catch (const NonFiniteError& e) {
      throw TrainingAborted(std::string("training aborted: ") + e.what());
    }
    value = loss.value().item();
    if (!std::isfinite(value)) throw TrainingAborted("training aborted: non-finite loss");
    tape.backward(loss);
  }
  opt.step(net.parameters());
  return value;
}

template <typename T>
Evaluation evaluate(const CSUNet3D<T>& net, const std::vector<Sample>& set, const LossConfig& loss_cfg) {
  Evaluation ev;
  ev.counts = confusion_counts({}, {}, net.config().num_classes);
  double loss = 0;
  for (const auto& s : set) {
    auto [img, msk] = make_batch<T>({s});
    const Context<T> ctx{nullptr, Mode::eval};
    auto logits = net.forward(ctx, Var<T>::constant(std::move(img)));
    loss += combined_loss(logits, msk, loss_cfg).value().item();
    std::vector<std::uint8_t> target(static_cast<std::size_t>(msk.numel()));
    for (std::int64_t i = 0; i < msk.numel(); ++i) target[static_cast<std::size_t>(i)] = msk[i] > T(0.5) ? 1 : 0;
    ev.counts += confusion_counts(argmax_labels(logits.value()), target, net.config().num_classes);
  }
  ev.metrics = metrics(ev.counts);
  ev.loss = set.empty() ? 0.0 : loss / static_cast<double>(set.size());
  return ev;
}

EarlyStopping::EarlyStopping(int patience, double threshold) : patience_(patience), threshold_(threshold) {
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
}

bool EarlyStopping::update(double value) {
  if (!best_ || value > *best_ + threshold_) {
    best_ = value;
    since_improvement_ = 0;
    return true;
  }
  ++since_improvement_;
  return false;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch},   {"train_loss", r.train_loss}, {"val_loss", r.val_loss},
                     {"val", r.val},       {"improved", r.improved}};
}

template <typename T>
FitResult<T> fit(CSUNet3D<T>& net, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                 const TrainConfig& cfg, const LossConfig& loss_cfg, const FitHooks<T>& hooks) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("fit: train and validation sets must be nonempty");
  Optimizer<T> opt(cfg.optimizer, net.parameters());
  Rng rng(cfg.seed);
  EarlyStopping stopper(cfg.patience, cfg.improvement_threshold);
  FitResult<T> result;
  auto& st = result.state;
  result.best_snapshot = net.snapshot();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    st.epoch = epoch;
    seeded_shuffle(order, rng);
    double loss_sum = 0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<Sample> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        Sample s = train_set[order[i]];
        augment_flip(s.image, s.mask, rng, cfg.augment);
        batch.push_back(std::move(s));
      }
      loss_sum += train_step(net, batch, loss_cfg, opt);
      ++steps;
    }

    const Evaluation ev = hooks.validate ? hooks.validate(net, epoch) : evaluate(net, val_set, loss_cfg);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / steps;
    rec.val_loss = ev.loss;
    rec.val = ev.metrics;
    const double monitored = cfg.monitor == Monitor::dsc ? ev.metrics.dsc : -ev.loss;
    rec.improved = stopper.update(monitored);
    if (rec.improved) {
      result.best_snapshot = net.snapshot();
      st.best_val_metric = monitored;
      st.best_epoch = epoch;
    }
    st.epochs_since_improvement = stopper.since_improvement();
    st.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (stopper.should_stop()) break;
    if (cfg.stop_at_dsc > 0 && rec.improved && ev.metrics.dsc >= cfg.stop_at_dsc) break;
  }
  net.restore(result.best_snapshot);
  return result;
}

namespace {

Metrics combine(const std::vector<FoldResult>& folds, bool stddev, const Metrics& mean) {
  Metrics out;
  const double k = static_cast<double>(folds.size());
  for (const auto& f : folds) {
    if (stddev) {
      out.sen += (f.metrics.sen - mean.sen) * (f.metrics.sen - mean.sen);
      out.dsc += (f.metrics.dsc - mean.dsc) * (f.metrics.dsc - mean.dsc);
      out.pre += (f.metrics.pre - mean.pre) * (f.metrics.pre - mean.pre);
      out.miou += (f.metrics.miou - mean.miou) * (f.metrics.miou - mean.miou);
    } else {
      out.sen += f.metrics.sen;
      out.dsc += f.metrics.dsc;
      out.pre += f.metrics.pre;
      out.miou += f.metrics.miou;
    }
  }
  const double denom = stddev ? std::max(1.0, k - 1) : k;
  out.sen /= denom;
  out.dsc /= denom;
  out.pre /= denom;
  out.miou /= denom;
  if (stddev) {
    out.sen = std::sqrt(out.sen);
    out.dsc = std::sqrt(out.dsc);
    out.pre = std::sqrt(out.pre);
    out.miou = std::sqrt(out.miou);
  }
  return out;
}

}  // namespace

void summarize(CrossValidationReport& r) {
  r.mean = combine(r.folds, false, {});
  r.std = combine(r.folds, true, r.mean);
}

void to_json(nlohmann::json& j, const CrossValidationReport& r) {
  j = nlohmann::json::object();
  auto folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"fold", f.fold},
                     {"sen", f.metrics.sen},
                     {"dsc", f.metrics.dsc},
                     {"pre", f.metrics.pre},
                     {"miou", f.metrics.miou},
                     {"best_epoch", f.best_epoch},
                     {"val_ids", f.val_ids}});
  }
  j["folds"] = folds;
  j["mean"] = r.mean;
  j["std"] = r.std;
  j["config"] = r.config;
}

template <typename T>
CrossValidationReport cross_validate(const std::vector<Sample>& dataset, const NetworkConfig& net_cfg,
                                     const TrainConfig& train_cfg, const LossConfig& loss_cfg,
                                     const CrossValidationHooks<T>& cv_hooks) {
  train_cfg.validate();
  if (static_cast<int>(dataset.size()) < train_cfg.folds) {
    throw std::invalid_argument("cross_validate: dataset smaller than fold count");
  }
  std::unordered_map<std::string, const Sample*> by_id;
  std::vector<std::string> ids;
  for (const auto& s : dataset) {
    if (!by_id.emplace(s.id, &s).second) throw std::invalid_argument("duplicate sample id " + s.id);
    ids.push_back(s.id);
  }
  auto gather = [&](const std::vector<std::string>& sel) {
    std::vector<Sample> out;
    for (const auto& id : sel) out.push_back(*by_id.at(id));
    return out;
  };

  CrossValidationReport rep;
  const auto splits = kfold_split(ids, train_cfg.folds, train_cfg.seed);
  for (int f = 0; f < train_cfg.folds; ++f) {
    const auto& split = splits[static_cast<std::size_t>(f)];
    auto train = gather(split.train_ids);
    auto val = gather(split.val_ids);
    CSUNet3D<T> net(net_cfg);
    FitHooks<T> hooks;
    if (cv_hooks.on_epoch) hooks.on_epoch = [&cv_hooks, f](const EpochRecord& r) { cv_hooks.on_epoch(f, r); };
    auto res = fit(net, train, val, train_cfg, loss_cfg, hooks);
    FoldResult fr;
    fr.fold = f;
    fr.metrics = evaluate(net, val, loss_cfg).metrics;
    fr.best_epoch = res.state.best_epoch;
    fr.val_ids = split.val_ids;
    rep.folds.push_back(std::move(fr));
    if (cv_hooks.on_fold) cv_hooks.on_fold(f, net, res.state);
  }
  summarize(rep);
  rep.config = {{"network", net_cfg}, {"train", train_cfg}, {"loss", loss_cfg}};
  return rep;
}

#define CSUNET_INSTANTIATE_TRAINING(T)                                                                        \
  template class Optimizer<T>;                                                                                \
  template std::pair<Tensor<T>, Tensor<T>> make_batch(const std::vector<Sample>&);                          \
  template double train_step(CSUNet3D<T>&, const std::vector<Sample>&, const LossConfig&, Optimizer<T>&);    \
  template Evaluation evaluate(const CSUNet3D<T>&, const std::vector<Sample>&, const LossConfig&);          \
  template FitResult<T> fit(CSUNet3D<T>&, const std::vector<Sample>&, const std::vector<Sample>&,           \
                            const TrainConfig&, const LossConfig&, const FitHooks<T>&);                      \
  template CrossValidationReport cross_validate<T>(const std::vector<Sample>&, const NetworkConfig&,         \
                                                   const TrainConfig&, const LossConfig&,                    \
                                                   const CrossValidationHooks<T>&);

CSUNET_INSTANTIATE_TRAINING(float)
CSUNET_INSTANTIATE_TRAINING(double)

}  // namespace csunet
