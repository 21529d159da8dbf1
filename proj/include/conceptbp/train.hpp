#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conceptbp/model.hpp"

namespace conceptbp {

enum class OptimizerKind { GradientDescent, Adam };
enum class LossKind { SquaredError, BinaryCrossEntropy };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order optimizer over a fixed list of parameter tensors.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, AdamSettings adam = {});

  /// Applies one update; `params` and `grads` must keep the same shapes between calls.
  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  OptimizerKind kind_;
  double lr_;
  AdamSettings adam_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Raised when training produces a non-finite loss.
class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

struct TrainOutcome {
  Model model;
  std::vector<double> loss_curve;  // mean training loss per epoch
};

/// Mini-batch training of all model parameters. `inputs` is [N, ...input_shape]
/// and `targets` is [N, ...output_shape].
TrainOutcome train_supervised(const Model& model, const Tensor& inputs, const Tensor& targets,
                              LossKind loss, const TrainConfig& config);

/// Mean loss of the model over a dataset, evaluated in batches.
double evaluate_loss(const Model& model, const Tensor& inputs, const Tensor& targets, LossKind loss,
                     std::size_t batch_size = 256);

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded 80/20 partition of [0, n); the test side holds max(1, n / 5) indices.
HoldoutSplit holdout_split(std::size_t n, std::uint64_t seed);

/// Forward pass over a large batch in chunks.
Tensor predict_batched(const Model& model, const Tensor& inputs, std::size_t batch_size = 256);

}  // namespace conceptbp
