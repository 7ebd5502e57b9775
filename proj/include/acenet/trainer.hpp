#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acenet/error.hpp"
#include "acenet/losses.hpp"
#include "acenet/model.hpp"
#include "acenet/volume.hpp"

namespace acenet {

enum class Stage { stage1, stage2, end_to_end };

std::string stage_name(Stage stage);
/// Accepts "stage1"/"1", "stage2"/"2", "end_to_end"/"e2e".
Stage parse_stage(const std::string& name);

struct TrainConfig {
  Stage stage = Stage::end_to_end;
  double base_lr = 0.01;
  std::size_t epochs = 100;
  std::size_t batch_size = 6;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double power = kDefaultPolyPower;
  double lambda_sec = kDefaultLambdaSec;
  bool class_weights = false;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct OptimizerState {
  std::vector<std::string> names;
  std::vector<Tensor> velocity;

  static OptimizerState zeros_like(std::span<const NamedTensor> params);
  /// True when names and shapes line up with `params`.
  bool matches(std::span<const NamedTensor> params) const;
};

struct NamedValue {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedValue&, const NamedValue&) = default;
};

struct Checkpoint {
  ACEnetConfig model_config;
  TrainConfig train_config;
  std::vector<NamedValue> parameters;
  std::vector<NamedValue> buffers;
  OptimizerState optimizer;
  std::size_t epoch = 0;  // completed epochs
  std::size_t iter = 0;   // optimizer steps taken
  std::size_t iter_total = 0;
  std::vector<double> loss_history;        // mean total loss per epoch
  std::vector<double> validation_history;  // mean foreground Dice per epoch, when validating
  /// Epoch (1-based) whose parameters were kept; 0 = final parameters.
  std::size_t best_epoch = 0;
};

Checkpoint make_checkpoint(const ModelParams& model, const TrainConfig& config, const OptimizerState& optimizer);

/// Copies every tensor of `checkpoint` into `model`. The name sets must be
/// identical and every shape must agree; otherwise a LoadError lists the
/// offending tensors.
void load_state(const Checkpoint& checkpoint, ModelParams& model);
/// Builds a model from the checkpoint's own config and loads it.
ModelParams restore_model(const Checkpoint& checkpoint);

class LoadError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Divergence or non-finite gradients. Carries the last checkpoint taken
/// before the failing step when one exists.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, std::shared_ptr<const Checkpoint> last_good = nullptr)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const std::shared_ptr<const Checkpoint>& last_good() const { return last_good_; }

 private:
  std::shared_ptr<const Checkpoint> last_good_;
};

/// g' = g + wd*theta; v = momentum*v + g'; theta -= lr*v. A null gradient
/// counts as zero. Every gradient is checked for NaN/Inf before anything is
/// modified.
void sgd_step(std::span<const NamedTensor> params, std::span<const Tensor* const> grads, OptimizerState& state,
              double lr, double momentum, double weight_decay);

struct IterationInfo {
  std::size_t epoch = 0;
  std::size_t iter = 0;
  double lr = 0.0;
  LossBundle losses;
};

struct TrainCallbacks {
  std::function<void(const IterationInfo&)> on_iteration;
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

/// Loss terms of one forward pass, as tape nodes and as numbers.
struct StepLoss {
  Var total;
  LossBundle bundle;
};
StepLoss compute_step_loss(const ForwardOutput& out, std::span<const int> labels, std::span<const int> skull,
                           std::span<const double> presence, std::span<const double> weights, double lambda_sec);

/// Number of optimizer steps per epoch for these cases.
std::size_t batches_per_epoch(const std::vector<LabeledCase>& cases, std::size_t batch_size);

/// Trains `model` in place. Stage 1 requires a model without the skull head.
/// With `validation` cases the parameters of the epoch with the best mean
/// foreground Dice are kept.
Checkpoint run_training(ModelParams& model, const std::vector<LabeledCase>& cases, const TrainConfig& config,
                        const TrainCallbacks& callbacks = {}, const std::vector<LabeledCase>* validation = nullptr);

/// Builds the stage-2 model: the full configuration with every shared tensor
/// copied from `stage1` and skull-private tensors freshly initialized.
ModelParams stage2_model_from(const ModelParams& stage1, std::uint64_t seed);

struct TwoStageResult {
  Checkpoint stage1;
  Checkpoint stage2;
  ModelParams model;
};

/// Stage 1 without the skull head, then stage 2 on the full model with a
/// fresh optimizer and poly schedule.
TwoStageResult two_stage_train(const std::vector<LabeledCase>& cases, const ACEnetConfig& model_config,
                               const TrainConfig& stage1, const TrainConfig& stage2,
                               const TrainCallbacks& callbacks = {});

}  // namespace acenet
