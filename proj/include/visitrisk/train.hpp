#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visitrisk/matrix.hpp"
#include "visitrisk/mlp.hpp"

namespace visitrisk {

enum class Optimizer { kSgd, kSgdMomentum };

struct TrainConfig {
  Optimizer optimizer = Optimizer::kSgdMomentum;
  double momentum = 0.9;
  double eta0 = 0.01;
  std::size_t total_steps = 0;  // T of the linear decay; also the step budget
  double eta_floor = 0.0;
  std::size_t batch_size = 256;
  std::size_t eval_every = 0;  // 0 means one epoch-equivalent
  std::size_t patience = 5;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;  // empty disables checkpoints

  /// Throws InvalidConfig on a violated invariant.
  void validate() const;

  /// Plain SGD for NN8, SGD with momentum 0.9 otherwise.
  static TrainConfig for_architecture(const Architecture& arch);
};

/// Rows of a feature matrix taking part in training or validation.
struct RowSet {
  const Matrix* features = nullptr;
  std::span<const std::uint8_t> labels;  // indexed by feature row
  std::vector<std::size_t> rows;

  std::size_t size() const noexcept { return rows.size(); }
};

struct EvalPoint {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean minibatch loss since the previous evaluation
  double val_accuracy = 0.0;
  double val_sensitivity = 0.0;
  double val_specificity = 0.0;
  double val_balanced_accuracy = 0.0;
  double step_size = 0.0;
};

struct TrainLog {
  std::vector<EvalPoint> points;
  std::string to_csv() const;
};

enum class StopReason { kEarlyStopped, kStepBudget };
std::string_view to_string(StopReason reason);

struct TrainResult {
  MlpModel model;  // parameters from the best validation evaluation
  TrainLog log;
  StopReason stop = StopReason::kStepBudget;
  std::size_t steps_run = 0;
  std::size_t best_step = 0;
  double best_metric = 0.0;
};

/// Mean negative log-likelihood, probabilities clamped to [1e-12, 1 - 1e-12].
double loss(const MlpModel& model, const Matrix& x, std::span<const std::uint8_t> y);

struct LossAndGradient {
  double loss = 0.0;
  MlpModel gradient;  // same shapes as the model
};

/// Exact backpropagation gradient of the mean negative log-likelihood.
LossAndGradient loss_and_gradient(const MlpModel& model, const Matrix& x, std::span<const std::uint8_t> y);
inline MlpModel gradient(const MlpModel& model, const Matrix& x, std::span<const std::uint8_t> y) {
  return loss_and_gradient(model, x, y).gradient;
}

/// max(eta_floor, eta0 * (1 - t / T)).
double step_size(std::size_t t, const TrainConfig& cfg);

/// Minibatch SGD over shuffled epochs with validation-driven early stopping.
/// The monitored quantity is validation balanced accuracy at threshold 0.5.
/// Training stops after `patience` consecutive evaluations without an
/// improvement of at least min_delta, or after total_steps.
TrainResult train(MlpModel model, const RowSet& train_set, const RowSet& val_set, const TrainConfig& cfg);

}  // namespace visitrisk
