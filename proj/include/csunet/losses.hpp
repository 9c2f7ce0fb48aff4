#pragma once

#include <cstdint>
#include <vector>

#include "csunet/ops.hpp"
#include "json.hpp"

namespace csunet {

struct LossConfig {
  double epsilon = 1e-5;
  /// Weight of the cross-entropy term; 0 trains on Dice alone.
  double ce_weight = 0.0;
  std::int64_t class_count = 2;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

/// Lower clamp applied to probabilities inside the log.
inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over voxels of -sum_c y_c log(softmax(logits)_c). target_onehot has
/// the logits' shape and must hold a one-hot vector per voxel.
template <typename T>
Var<T> ce_loss(const Var<T>& logits, const Tensor<T>& target_onehot, const LossConfig& cfg);

/// Soft Dice over every voxel of the batch:
/// 1 - (2 sum p*y + eps) / (sum (p + y) + eps).
template <typename T>
Var<T> dice_loss(const Var<T>& probs_fg, const Tensor<T>& target_fg, const LossConfig& cfg);

/// dice_loss(softmax(logits)[fg]) + ce_weight * ce_loss. The target is a
/// binary (N, 1, D, H, W) foreground mask; foreground is class 1.
template <typename T>
Var<T> combined_loss(const Var<T>& logits, const Tensor<T>& target_fg, const LossConfig& cfg);

/// (N, 1, ...) binary mask -> (N, C, ...) one-hot.
template <typename T>
Tensor<T> one_hot(const Tensor<T>& mask, std::int64_t classes);

/// Per-voxel argmax over the class axis (ties -> lower index), as (N, 1, ...).
template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits);

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::vector<std::int64_t> intersection;  // per class
  std::vector<std::int64_t> union_;        // per class
  std::vector<std::int64_t> pred_count;    // per class
  std::vector<std::int64_t> target_count;  // per class

  ConfusionCounts& operator+=(const ConfusionCounts& o);
  std::int64_t total() const { return tp + fp + fn + tn; }
};

/// Tallies for foreground class 1 plus per-class intersection and union.
ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                                 std::int64_t classes = 2);

struct Metrics {
  double sen = 0, dsc = 0, pre = 0, miou = 0;
};

void to_json(nlohmann::json& j, const Metrics& m);
void from_json(const nlohmann::json& j, Metrics& m);

/// Ratios with an empty denominator evaluate to 1 when the class is absent
/// from both prediction and target, 0 otherwise.
Metrics metrics(const ConfusionCounts& c);

}  // namespace csunet
