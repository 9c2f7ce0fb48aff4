#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csunet/losses.hpp"
#include "csunet/network.hpp"
#include "json.hpp"

namespace csunet {

/// One image/mask pair, each (1, D, H, W).
struct Sample {
  std::string id;
  Tensor<float> image;
  Tensor<float> mask;
};

enum class OptimizerKind { sgd, adam };
enum class Monitor { dsc, loss };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AugmentConfig {
  bool flip_axis_h = true;  // upside down
  bool flip_axis_w = true;  // sideways
};

struct TrainConfig {
  OptimizerConfig optimizer;
  std::int64_t batch_size = 2;
  int max_epochs = 100;
  int patience = 10;
  int folds = 5;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  Monitor monitor = Monitor::dsc;
  double improvement_threshold = 1e-6;
  /// Stop as soon as the monitored validation DSC reaches this value; 0 disables.
  double stop_at_dsc = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// First- and second-moment buffers mirror the trainable parameters.
template <typename T>
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const ParameterRegistry<T>& params);

  /// Apply one update from the accumulated gradients, then zero them.
  void step(ParameterRegistry<T>& params);

  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  std::int64_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor<T>> m_;  // sgd: momentum buffer
  std::vector<Tensor<T>> v_;  // adam only
  std::int64_t t_ = 0;
};

/// Reverse the order of one spatial axis of a (C, D, H, W) volume.
/// axis: 1 = D, 2 = H, 3 = W.
Tensor<float> flip_axis(const Tensor<float>& volume, int axis);

/// Flip each enabled axis with probability 1/2; image and mask share draws.
void augment_flip(Tensor<float>& image, Tensor<float>& mask, Rng& rng, const AugmentConfig& cfg);

struct FoldSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

/// Seeded shuffle followed by a contiguous partition into k validation folds
/// whose sizes differ by at most one (larger folds first).
std::vector<FoldSplit> kfold_split(const std::vector<std::string>& ids, int k, std::uint64_t seed);

/// Raised when training produces a non-finite loss.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stack samples into (N, 1, D, H, W) image and mask batches.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const std::vector<Sample>& samples);

/// forward (train mode) -> combined loss -> backward -> optimizer update.
template <typename T>
double train_step(CSUNet3D<T>& net, const std::vector<Sample>& batch, const LossConfig& loss_cfg,
                  Optimizer<T>& opt);

struct Evaluation {
  ConfusionCounts counts;
  Metrics metrics;
  double loss = 0;  // mean per-sample combined loss
};

/// Eval-mode metrics pooled over every voxel of the set.
template <typename T>
Evaluation evaluate(const CSUNet3D<T>& net, const std::vector<Sample>& set, const LossConfig& loss_cfg);

/// Patience counter over a monitored value where larger is better.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double threshold);
  /// Returns true when `value` is a strict improvement.
  bool update(double value);
  bool should_stop() const { return since_improvement_ >= patience_; }
  int since_improvement() const { return since_improvement_; }
  std::optional<double> best() const { return best_; }

 private:
  int patience_;
  double threshold_;
  int since_improvement_ = 0;
  std::optional<double> best_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  Metrics val;
  bool improved = false;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainState {
  int epoch = 0;
  double best_val_metric = 0;
  int best_epoch = 0;
  int epochs_since_improvement = 0;
  std::vector<EpochRecord> history;
};

template <typename T>
struct FitResult {
  std::vector<Tensor<T>> best_snapshot;
  TrainState state;
};

template <typename T>
struct FitHooks {
  /// Replaces the validation pass; receives the 1-based epoch.
  std::function<Evaluation(const CSUNet3D<T>&, int)> validate;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Train until the monitored validation quantity has not improved for
/// `patience` epochs or max_epochs is reached. The network is left holding the
/// best snapshot.
template <typename T>
FitResult<T> fit(CSUNet3D<T>& net, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                 const TrainConfig& cfg, const LossConfig& loss_cfg, const FitHooks<T>& hooks = {});

struct FoldResult {
  int fold = 0;
  Metrics metrics;
  int best_epoch = 0;
  std::vector<std::string> val_ids;
};

struct CrossValidationReport {
  std::vector<FoldResult> folds;
  Metrics mean;
  Metrics std;  // sample standard deviation across folds
  nlohmann::json config;
};

void to_json(nlohmann::json& j, const CrossValidationReport& r);

/// Fill mean and std from the fold rows.
void summarize(CrossValidationReport& r);

template <typename T>
struct CrossValidationHooks {
  std::function<void(int fold, const EpochRecord&)> on_epoch;
  /// Called with the fold's network holding its best snapshot.
  std::function<void(int fold, const CSUNet3D<T>&, const TrainState&)> on_fold;
};

/// Fresh seeded network per fold; fit on k-1 folds, evaluate on the held-out one.
template <typename T>
CrossValidationReport cross_validate(const std::vector<Sample>& dataset, const NetworkConfig& net_cfg,
                                     const TrainConfig& train_cfg, const LossConfig& loss_cfg,
                                     const CrossValidationHooks<T>& hooks = {});

std::string to_string(OptimizerKind k);

}  // namespace csunet
