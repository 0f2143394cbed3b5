#pragma once

// Dense multilayer perceptrons with hand-written backpropagation. Shared by the
// per-user response simulators and the Q-network.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/common.h"

namespace turnwise::nnet {

enum class Activation { kRelu, kIdentity };

std::string_view ActivationName(Activation activation);
Activation ActivationFromName(std::string_view name);

struct Layer {
  Matrix weight;  // out_dim x in_dim
  Vector bias;    // out_dim
  Activation activation = Activation::kIdentity;
};

// Same shapes as the network parameters.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  double MaxAbs() const;
};

// Post-activation values of a batch pass; column j is sample j.
// activations[0] is the input, activations.back() the network output.
struct ForwardTrace {
  std::vector<Matrix> activations;

  const Matrix& output() const { return activations.back(); }
};

class DenseNet {
 public:
  DenseNet() = default;

  // He-uniform weights, zero biases. `layer_dims` lists input, hidden..., output.
  DenseNet(std::vector<int> layer_dims, std::vector<Activation> activations,
           uint64_t seed);

  // Validates that shapes chain.
  explicit DenseNet(std::vector<Layer> layers);

  int input_dim() const;
  int output_dim() const;
  int num_layers() const { return static_cast<int>(layers_.size()); }
  std::vector<int> layer_dims() const;
  size_t num_parameters() const;

  const std::vector<Layer>& layers() const { return layers_; }
  Layer& mutable_layer(int k) { return layers_.at(k); }
  const Layer& layer(int k) const { return layers_.at(k); }

  // Output of every layer for one input; the last entry is the network output.
  std::vector<Vector> Forward(const Vector& input) const;
  ForwardTrace ForwardBatch(const Matrix& inputs) const;

  Vector Predict(const Vector& input) const;
  Matrix PredictBatch(const Matrix& inputs) const;

  // Backpropagates dLoss/dOutput (already averaged over the batch by the
  // caller) and adds the l2 term l2 * W to every weight gradient. Biases are
  // not regularized.
  Gradients Backward(const ForwardTrace& trace, const Matrix& output_grad,
                     double l2) const;

  // Sum of squared weights (biases excluded).
  double WeightNormSquared() const;

  Gradients ZeroGradients() const;

  bool operator==(const DenseNet& other) const;

 private:
  std::vector<Layer> layers_;
};

enum class OptimizerKind { kAdam, kSgd };

struct TrainConfig {
  double learning_rate = 1e-3;
  double l2_lambda = 0.0;
  int batch_size = 32;
  int max_epochs = 200;
  uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;

  void Validate() const;
};

// Adam(0.9, 0.999, 1e-8) or plain gradient descent.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const DenseNet& net, OptimizerKind kind, double learning_rate);

  void Apply(DenseNet& net, const Gradients& grads);

  int64_t steps() const { return steps_; }

 private:
  OptimizerKind kind_ = OptimizerKind::kAdam;
  double learning_rate_ = 1e-3;
  int64_t steps_ = 0;
  Gradients first_moment_;
  Gradients second_moment_;
};

struct LossGrad {
  double loss = 0.0;
  Matrix output_grad;
};

// (1 / 2B) * sum_j ||output_j - target_j||^2.
LossGrad HalfSquaredError(const Matrix& outputs, const Matrix& targets);

// (1 / 2B) * sum_j (target_j - output[unit_j, j])^2; every other output unit
// receives a zero gradient.
LossGrad SelectedUnitSquaredError(const Matrix& outputs, const Vector& targets,
                                  std::span<const int> units);

// A network together with its optimizer state.
class Trainer {
 public:
  Trainer() = default;
  Trainer(DenseNet net, TrainConfig config);

  // One optimizer update on a regression batch (columns are samples).
  // Returns the objective (data loss + l2/2 ||W||^2) before the update.
  double StepRegression(const Matrix& inputs, const Matrix& targets);

  // One update on a temporal-difference batch: only output unit actions[j]
  // of sample j is regressed toward targets[j].
  double StepSelected(const Matrix& inputs, const Vector& targets,
                      std::span<const int> actions);

  const DenseNet& net() const { return net_; }
  DenseNet& mutable_net() { return net_; }
  const TrainConfig& config() const { return config_; }

 private:
  double ApplyLoss(const ForwardTrace& trace, const LossGrad& loss);

  DenseNet net_;
  TrainConfig config_;
  Optimizer optimizer_;
};

nlohmann::json ToJson(const DenseNet& net);
DenseNet DenseNetFromJson(const nlohmann::json& doc);

nlohmann::json ToJson(const TrainConfig& config);
// Missing keys keep the values already in `defaults`.
TrainConfig TrainConfigFromJson(const nlohmann::json& doc,
                                TrainConfig defaults = {});

}  // namespace turnwise::nnet
