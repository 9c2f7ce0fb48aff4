#include "csunet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csunet {

void LossConfig::validate() const {
  if (!(epsilon > 0)) throw std::invalid_argument("loss epsilon must be positive");
  if (ce_weight < 0) throw std::invalid_argument("ce_weight must be non-negative");
  if (class_count < 2) throw std::invalid_argument("class_count must be at least 2");
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"epsilon", c.epsilon}, {"ce_weight", c.ce_weight}, {"class_count", c.class_count}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  for (const auto& [key, _] : j.items()) {
    if (key != "epsilon" && key != "ce_weight" && key != "class_count") {
      throw std::invalid_argument("unknown loss config key: " + key);
    }
  }
  LossConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.ce_weight = j.value("ce_weight", d.ce_weight);
  c.class_count = j.value("class_count", d.class_count);
}

template <typename T>
Var<T> ce_loss(const Var<T>& logits, const Tensor<T>& target, const LossConfig& cfg) {
  if (logits.shape() != target.shape()) {
    throw ShapeError("ce_loss: target shape " + to_string(target.shape()) + " does not match logits " +
                     to_string(logits.shape()));
  }
  const auto& s = logits.shape();
  if (s.size() < 2 || s[1] < 2) throw ShapeError("ce_loss: need (N, C, ...) logits with C >= 2");
  if (s[1] != cfg.class_count) throw ShapeError("ce_loss: logits class axis does not match class_count");
  const std::int64_t n = s[0], c = s[1];
  const std::int64_t inner = logits.value().numel() / (n * c);
  const std::int64_t voxels = n * inner;

  Tensor<T> probs(s);
  double total = 0;
  const T* x = logits.value().data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = 0; p < inner; ++p) {
      const auto base = i * c * inner + p;
      T mx = x[base];
      for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0;
      for (std::int64_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(x[base + k * inner] - mx));
      double tsum = 0;
      for (std::int64_t k = 0; k < c; ++k) {
        const auto idx = base + k * inner;
        const double pr = std::exp(static_cast<double>(x[idx] - mx)) / z;
        probs[idx] = static_cast<T>(pr);
        const T y = target[idx];
        if (y != T(0) && y != T(1)) throw std::invalid_argument("ce_loss: target is not one-hot");
        tsum += y;
        if (y == T(1)) total -= std::log(std::max(pr, kProbabilityFloor));
      }
      if (tsum != 1.0) throw std::invalid_argument("ce_loss: target is not one-hot");
    }
  }
  const T value = static_cast<T>(total / static_cast<double>(voxels));
  auto xn = logits.node();
  auto tgt = std::make_shared<Tensor<T>>(target);
  return record<T>("ce_loss", Tensor<T>::scalar(value), {logits},
                   [xn, tgt, probs = std::move(probs), voxels](const Tensor<T>& g) {
                     T* d = xn->grad_buffer();
                     const T scale = g[0] / static_cast<T>(voxels);
                     for (std::int64_t i = 0; i < probs.numel(); ++i) {
                       // Clamped probabilities carry no gradient through the log.
                       const bool clamped = (*tgt)[i] == T(1) && probs[i] < static_cast<T>(kProbabilityFloor);
                       if (!clamped) d[i] += scale * (probs[i] - (*tgt)[i]);
                     }
                   });
}

template <typename T>
Var<T> dice_loss(const Var<T>& probs_fg, const Tensor<T>& target_fg, const LossConfig& cfg) {
  if (probs_fg.value().numel() != target_fg.numel()) {
    throw ShapeError("dice_loss: prediction " + to_string(probs_fg.shape()) + " and target " +
                     to_string(target_fg.shape()) + " differ in size");
  }
  double inter = 0, total = 0;
  const auto n = target_fg.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = probs_fg.value()[i], y = target_fg[i];
    inter += p * y;
    total += p + y;
  }
  const double eps = cfg.epsilon;
  const double num = 2 * inter + eps, den = total + eps;
  auto pn = probs_fg.node();
  auto tgt = std::make_shared<Tensor<T>>(target_fg);
  return record<T>("dice_loss", Tensor<T>::scalar(static_cast<T>(1.0 - num / den)), {probs_fg},
                   [pn, tgt, num, den](const Tensor<T>& g) {
                     T* d = pn->grad_buffer();
                     const double gv = g[0];
                     for (std::int64_t i = 0; i < tgt->numel(); ++i) {
                       const double dl = -(2.0 * (*tgt)[i] * den - num) / (den * den);
                       d[i] += static_cast<T>(gv * dl);
                     }
                   });
}

template <typename T>
Tensor<T> one_hot(const Tensor<T>& mask, std::int64_t classes) {
  const auto& s = mask.shape();
  if (s.size() < 2 || s[1] != 1) throw ShapeError("one_hot: mask must be (N, 1, ...)");
  const std::int64_t n = s[0];
  const std::int64_t inner = mask.numel() / n;
  Shape so = s;
  so[1] = classes;
  Tensor<T> out(so);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t p = 0; p < inner; ++p) {
      const auto label = static_cast<std::int64_t>(mask[i * inner + p]);
      if (label < 0 || label >= classes) throw std::invalid_argument("one_hot: label out of range");
      out[(i * classes + label) * inner + p] = T(1);
    }
  return out;
}

template <typename T>
Var<T> combined_loss(const Var<T>& logits, const Tensor<T>& target_fg, const LossConfig& cfg) {
  auto loss = dice_loss(select_channel(softmax_channels(logits), 1), target_fg, cfg);
  if (cfg.ce_weight == 0.0) return loss;
  return add(loss, scale(ce_loss(logits, one_hot(target_fg, cfg.class_count), cfg), static_cast<T>(cfg.ce_weight)));
}

template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  const auto& s = logits.shape();
  if (s.size() < 2) throw ShapeError("argmax_labels: need (N, C, ...) input");
  const std::int64_t n = s[0], c = s[1];
  const std::int64_t inner = logits.numel() / (n * c);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n * inner));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t p = 0; p < inner; ++p) {
      std::int64_t best = 0;
      for (std::int64_t k = 1; k < c; ++k) {
        if (logits[(i * c + k) * inner + p] > logits[(i * c + best) * inner + p]) best = k;
      }
      out[static_cast<std::size_t>(i * inner + p)] = static_cast<std::uint8_t>(best);
    }
  return out;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  const auto k = std::max(intersection.size(), o.intersection.size());
  intersection.resize(k);
  union_.resize(k);
  pred_count.resize(k);
  target_count.resize(k);
  for (std::size_t i = 0; i < o.intersection.size(); ++i) {
    intersection[i] += o.intersection[i];
    union_[i] += o.union_[i];
    pred_count[i] += o.pred_count[i];
    target_count[i] += o.target_count[i];
  }
  return *this;
}

ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                                 std::int64_t classes) {
  if (pred.size() != target.size()) throw ShapeError("confusion_counts: label maps differ in size");
  ConfusionCounts c;
  const auto k = static_cast<std::size_t>(classes);
  c.intersection.assign(k, 0);
  c.union_.assign(k, 0);
  c.pred_count.assign(k, 0);
  c.target_count.assign(k, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred[i], t = target[i];
    if (p >= k || t >= k) throw std::invalid_argument("confusion_counts: label out of range");
    const bool pf = p == 1, tf = t == 1;
    c.tp += pf && tf;
    c.fp += pf && !tf;
    c.fn += !pf && tf;
    c.tn += !pf && !tf;
    ++c.pred_count[p];
    ++c.target_count[t];
    if (p == t) {
      ++c.intersection[p];
      ++c.union_[p];
    } else {
      ++c.union_[p];
      ++c.union_[t];
    }
  }
  return c;
}

namespace {
double ratio(std::int64_t num, std::int64_t den, bool absent_in_both) {
  if (den == 0) return absent_in_both ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

Metrics metrics(const ConfusionCounts& c) {
  Metrics m;
  const bool fg_absent = c.tp + c.fp + c.fn == 0;
  m.sen = ratio(c.tp, c.tp + c.fn, fg_absent);
  m.pre = ratio(c.tp, c.tp + c.fp, fg_absent);
  m.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, fg_absent);
  double iou = 0;
  for (std::size_t k = 0; k < c.union_.size(); ++k) iou += ratio(c.intersection[k], c.union_[k], c.union_[k] == 0);
  m.miou = c.union_.empty() ? 0.0 : iou / static_cast<double>(c.union_.size());
  return m;
}

void to_json(nlohmann::json& j, const Metrics& m) {
  j = nlohmann::json{{"sen", m.sen}, {"dsc", m.dsc}, {"pre", m.pre}, {"miou", m.miou}};
}

void from_json(const nlohmann::json& j, Metrics& m) {
  m.sen = j.at("sen").get<double>();
  m.dsc = j.at("dsc").get<double>();
  m.pre = j.at("pre").get<double>();
  m.miou = j.at("miou").get<double>();
}

#define CSUNET_INSTANTIATE_LOSSES(T)                                                       \
  template Var<T> ce_loss(const Var<T>&, const Tensor<T>&, const LossConfig&);           \
  template Var<T> dice_loss(const Var<T>&, const Tensor<T>&, const LossConfig&);         \
  template Var<T> combined_loss(const Var<T>&, const Tensor<T>&, const LossConfig&);     \
  template Tensor<T> one_hot(const Tensor<T>&, std::int64_t);                            \
  template std::vector<std::uint8_t> argmax_labels(const Tensor<T>&);

CSUNET_INSTANTIATE_LOSSES(float)
CSUNET_INSTANTIATE_LOSSES(double)

}  // namespace csunet
