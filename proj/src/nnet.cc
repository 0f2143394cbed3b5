#include "turnwise/nnet.h"

#include <cmath>
#include <random>
#include <string>

namespace turnwise::nnet {

std::string_view ActivationName(Activation activation) {
  switch (activation) {
    case Activation::kRelu:
      return "relu";
    case Activation::kIdentity:
      return "identity";
  }
  return "identity";
}

Activation ActivationFromName(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw ParseError("unknown activation tag '" + std::string(name) + "'");
}

double Gradients::MaxAbs() const {
  double best = 0.0;
  for (const auto& w : weight) {
    if (w.size() > 0) best = std::max(best, w.cwiseAbs().maxCoeff());
  }
  for (const auto& b : bias) {
    if (b.size() > 0) best = std::max(best, b.cwiseAbs().maxCoeff());
  }
  return best;
}

namespace {

void ApplyActivation(Activation activation, Matrix& values) {
  if (activation == Activation::kRelu) {
    values = values.cwiseMax(0.0);
  }
}

}  // namespace

DenseNet::DenseNet(std::vector<int> layer_dims,
                   std::vector<Activation> activations, uint64_t seed) {
  if (layer_dims.size() < 2) {
    throw ShapeError("a dense network needs at least input and output dims");
  }
  if (activations.size() != layer_dims.size() - 1) {
    throw ShapeError("expected " + std::to_string(layer_dims.size() - 1) +
                     " activation tags, got " +
                     std::to_string(activations.size()));
  }
  for (int dim : layer_dims) {
    if (dim <= 0) throw ShapeError("layer dims must be positive");
  }
  std::mt19937_64 rng(seed);
  layers_.reserve(activations.size());
  for (size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    const int in_dim = layer_dims[k];
    const int out_dim = layer_dims[k + 1];
    const double limit = std::sqrt(6.0 / in_dim);
    std::uniform_real_distribution<double> dist(-limit, limit);
    Layer layer;
    layer.weight.resize(out_dim, in_dim);
    // Row-major fill so the draw order matches the serialized layout.
    for (int r = 0; r < out_dim; ++r) {
      for (int c = 0; c < in_dim; ++c) layer.weight(r, c) = dist(rng);
    }
    layer.bias = Vector::Zero(out_dim);
    layer.activation = activations[k];
    layers_.push_back(std::move(layer));
  }
}

DenseNet::DenseNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("a dense network needs a layer");
  for (size_t k = 0; k < layers_.size(); ++k) {
    const Layer& layer = layers_[k];
    if (layer.weight.rows() != layer.bias.size()) {
      throw ShapeError("layer " + std::to_string(k) +
                       ": bias length does not match weight rows");
    }
    if (layer.weight.rows() == 0 || layer.weight.cols() == 0) {
      throw ShapeError("layer " + std::to_string(k) + " is empty");
    }
    if (k > 0 && layer.weight.cols() != layers_[k - 1].weight.rows()) {
      throw ShapeError("layer " + std::to_string(k) + " expects input dim " +
                       std::to_string(layer.weight.cols()) +
                       " but previous layer emits " +
                       std::to_string(layers_[k - 1].weight.rows()));
    }
  }
}

int DenseNet::input_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int DenseNet::output_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

std::vector<int> DenseNet::layer_dims() const {
  std::vector<int> dims;
  if (layers_.empty()) return dims;
  dims.push_back(input_dim());
  for (const auto& layer : layers_) {
    dims.push_back(static_cast<int>(layer.weight.rows()));
  }
  return dims;
}

size_t DenseNet::num_parameters() const {
  size_t total = 0;
  for (const auto& layer : layers_) {
    total += layer.weight.size() + layer.bias.size();
  }
  return total;
}

ForwardTrace DenseNet::ForwardBatch(const Matrix& inputs) const {
  if (inputs.rows() != input_dim()) {
    throw ShapeError("network expects input dim " +
                     std::to_string(input_dim()) + ", got " +
                     std::to_string(inputs.rows()));
  }
  ForwardTrace trace;
  trace.activations.reserve(layers_.size() + 1);
  trace.activations.push_back(inputs);
  for (const auto& layer : layers_) {
    Matrix z = layer.weight * trace.activations.back();
    z.colwise() += layer.bias;
    ApplyActivation(layer.activation, z);
    trace.activations.push_back(std::move(z));
  }
  return trace;
}

std::vector<Vector> DenseNet::Forward(const Vector& input) const {
  ForwardTrace trace = ForwardBatch(input);
  std::vector<Vector> outputs;
  outputs.reserve(layers_.size());
  for (size_t k = 1; k < trace.activations.size(); ++k) {
    outputs.emplace_back(trace.activations[k].col(0));
  }
  return outputs;
}

Vector DenseNet::Predict(const Vector& input) const {
  return ForwardBatch(input).output().col(0);
}

Matrix DenseNet::PredictBatch(const Matrix& inputs) const {
  return ForwardBatch(inputs).output();
}

Gradients DenseNet::Backward(const ForwardTrace& trace,
                             const Matrix& output_grad, double l2) const {
  if (trace.activations.size() != layers_.size() + 1) {
    throw ShapeError("forward trace does not belong to this network");
  }
  const Matrix& output = trace.output();
  if (output_grad.rows() != output.rows() ||
      output_grad.cols() != output.cols()) {
    throw ShapeError("output gradient shape does not match network output");
  }
  Gradients grads;
  grads.weight.resize(layers_.size());
  grads.bias.resize(layers_.size());
  Matrix delta = output_grad;
  for (int k = num_layers() - 1; k >= 0; --k) {
    const Layer& layer = layers_[k];
    const Matrix& out = trace.activations[k + 1];
    if (layer.activation == Activation::kRelu) {
      delta = (out.array() > 0.0).select(delta, 0.0);
    }
    grads.weight[k] = delta * trace.activations[k].transpose();
    if (l2 != 0.0) grads.weight[k] += l2 * layer.weight;
    grads.bias[k] = delta.rowwise().sum();
    if (k > 0) delta = layer.weight.transpose() * delta;
  }
  return grads;
}

double DenseNet::WeightNormSquared() const {
  double total = 0.0;
  for (const auto& layer : layers_) total += layer.weight.squaredNorm();
  return total;
}

Gradients DenseNet::ZeroGradients() const {
  Gradients grads;
  for (const auto& layer : layers_) {
    grads.weight.push_back(Matrix::Zero(layer.weight.rows(),
                                        layer.weight.cols()));
    grads.bias.push_back(Vector::Zero(layer.bias.size()));
  }
  return grads;
}

bool DenseNet::operator==(const DenseNet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (size_t k = 0; k < layers_.size(); ++k) {
    const Layer& a = layers_[k];
    const Layer& b = other.layers_[k];
    if (a.activation != b.activation) return false;
    if (a.weight.rows() != b.weight.rows() ||
        a.weight.cols() != b.weight.cols())
      return false;
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

void TrainConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(l2_lambda >= 0.0)) throw UsageError("l2_lambda must be >= 0");
  if (batch_size <= 0) throw UsageError("batch_size must be > 0");
  if (max_epochs <= 0) throw UsageError("max_epochs must be > 0");
}

Optimizer::Optimizer(const DenseNet& net, OptimizerKind kind,
                     double learning_rate)
    : kind_(kind),
      learning_rate_(learning_rate),
      first_moment_(net.ZeroGradients()),
      second_moment_(net.ZeroGradients()) {}

void Optimizer::Apply(DenseNet& net, const Gradients& grads) {
  if (grads.weight.size() != static_cast<size_t>(net.num_layers())) {
    throw ShapeError("gradient layer count does not match network");
  }
  ++steps_;
  if (kind_ == OptimizerKind::kSgd) {
    for (int k = 0; k < net.num_layers(); ++k) {
      Layer& layer = net.mutable_layer(k);
      layer.weight -= learning_rate_ * grads.weight[k];
      layer.bias -= learning_rate_ * grads.bias[k];
    }
    return;
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  const double correction1 = 1.0 - std::pow(kBeta1, steps_);
  const double correction2 = 1.0 - std::pow(kBeta2, steps_);
  const double step = learning_rate_ * std::sqrt(correction2) / correction1;
  for (int k = 0; k < net.num_layers(); ++k) {
    Layer& layer = net.mutable_layer(k);
    Matrix& mw = first_moment_.weight[k];
    Matrix& vw = second_moment_.weight[k];
    mw = kBeta1 * mw + (1.0 - kBeta1) * grads.weight[k];
    vw = kBeta2 * vw + (1.0 - kBeta2) * grads.weight[k].cwiseAbs2();
    layer.weight.array() -=
        step * mw.array() / (vw.array().sqrt() + kEps);
    Vector& mb = first_moment_.bias[k];
    Vector& vb = second_moment_.bias[k];
    mb = kBeta1 * mb + (1.0 - kBeta1) * grads.bias[k];
    vb = kBeta2 * vb + (1.0 - kBeta2) * grads.bias[k].cwiseAbs2();
    layer.bias.array() -= step * mb.array() / (vb.array().sqrt() + kEps);
  }
}

LossGrad HalfSquaredError(const Matrix& outputs, const Matrix& targets) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) {
    throw ShapeError("targets shape does not match outputs");
  }
  const double batch = static_cast<double>(outputs.cols());
  LossGrad result;
  result.output_grad = (outputs - targets) / batch;
  result.loss = 0.5 * (outputs - targets).squaredNorm() / batch;
  return result;
}

LossGrad SelectedUnitSquaredError(const Matrix& outputs, const Vector& targets,
                                  std::span<const int> units) {
  if (targets.size() != outputs.cols() ||
      units.size() != static_cast<size_t>(outputs.cols())) {
    throw ShapeError("one target and one unit index per sample required");
  }
  const double batch = static_cast<double>(outputs.cols());
  LossGrad result;
  result.output_grad = Matrix::Zero(outputs.rows(), outputs.cols());
  for (Eigen::Index j = 0; j < outputs.cols(); ++j) {
    const int unit = units[j];
    if (unit < 0 || unit >= outputs.rows()) {
      throw ShapeError("selected unit " + std::to_string(unit) +
                       " out of range");
    }
    const double diff = outputs(unit, j) - targets[j];
    result.loss += 0.5 * diff * diff / batch;
    result.output_grad(unit, j) = diff / batch;
  }
  return result;
}

Trainer::Trainer(DenseNet net, TrainConfig config)
    : net_(std::move(net)), config_(config) {
  config_.Validate();
  optimizer_ = Optimizer(net_, config_.optimizer, config_.learning_rate);
}

double Trainer::ApplyLoss(const ForwardTrace& trace, const LossGrad& loss) {
  const double objective =
      loss.loss + 0.5 * config_.l2_lambda * net_.WeightNormSquared();
  Gradients grads = net_.Backward(trace, loss.output_grad, config_.l2_lambda);
  optimizer_.Apply(net_, grads);
  return objective;
}

double Trainer::StepRegression(const Matrix& inputs, const Matrix& targets) {
  if (inputs.cols() == 0) throw UsageError("training batch is empty");
  ForwardTrace trace = net_.ForwardBatch(inputs);
  return ApplyLoss(trace, HalfSquaredError(trace.output(), targets));
}

double Trainer::StepSelected(const Matrix& inputs, const Vector& targets,
                             std::span<const int> actions) {
  if (inputs.cols() == 0) throw UsageError("training batch is empty");
  ForwardTrace trace = net_.ForwardBatch(inputs);
  return ApplyLoss(trace,
                   SelectedUnitSquaredError(trace.output(), targets, actions));
}

nlohmann::json ToJson(const DenseNet& net) {
  nlohmann::json doc;
  doc["format"] = "turnwise.dense_net";
  doc["version"] = 1;
  doc["layer_dims"] = net.layer_dims();
  nlohmann::json activations = nlohmann::json::array();
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    activations.push_back(ActivationName(layer.activation));
    std::vector<double> flat;
    flat.reserve(layer.weight.size());
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        flat.push_back(layer.weight(r, c));
      }
    }
    weights.push_back(std::move(flat));
    biases.push_back(std::vector<double>(layer.bias.begin(), layer.bias.end()));
  }
  doc["activations"] = std::move(activations);
  doc["weights"] = std::move(weights);
  doc["biases"] = std::move(biases);
  return doc;
}

DenseNet DenseNetFromJson(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "turnwise.dense_net") {
      throw ParseError("not a dense_net document");
    }
    const int version = doc.at("version").get<int>();
    if (version != 1) {
      throw ParseError("unsupported dense_net version " +
                       std::to_string(version));
    }
    const auto dims = doc.at("layer_dims").get<std::vector<int>>();
    const auto& activations = doc.at("activations");
    const auto& weights = doc.at("weights");
    const auto& biases = doc.at("biases");
    const size_t count = dims.size() < 2 ? 0 : dims.size() - 1;
    if (count == 0 || activations.size() != count || weights.size() != count ||
        biases.size() != count) {
      throw ParseError("dense_net layer arrays disagree with layer_dims");
    }
    std::vector<Layer> layers;
    for (size_t k = 0; k < count; ++k) {
      const int in_dim = dims[k];
      const int out_dim = dims[k + 1];
      const auto flat = weights[k].get<std::vector<double>>();
      const auto bias = biases[k].get<std::vector<double>>();
      if (in_dim <= 0 || out_dim <= 0 ||
          flat.size() != static_cast<size_t>(in_dim) * out_dim ||
          bias.size() != static_cast<size_t>(out_dim)) {
        throw ParseError("dense_net layer " + std::to_string(k) +
                         " has inconsistent array sizes");
      }
      Layer layer;
      layer.weight.resize(out_dim, in_dim);
      for (int r = 0; r < out_dim; ++r) {
        for (int c = 0; c < in_dim; ++c) {
          layer.weight(r, c) = flat[static_cast<size_t>(r) * in_dim + c];
        }
      }
      layer.bias = Eigen::Map<const Vector>(bias.data(), out_dim);
      layer.activation = ActivationFromName(activations[k].get<std::string>());
      layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed dense_net document: ") + e.what());
  }
}

nlohmann::json ToJson(const TrainConfig& config) {
  return {{"learning_rate", config.learning_rate},
          {"l2_lambda", config.l2_lambda},
          {"batch_size", config.batch_size},
          {"max_epochs", config.max_epochs},
          {"seed", config.seed},
          {"optimizer",
           config.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"}};
}

TrainConfig TrainConfigFromJson(const nlohmann::json& doc,
                                TrainConfig defaults) {
  TrainConfig config = defaults;
  config.learning_rate = doc.value("learning_rate", config.learning_rate);
  config.l2_lambda = doc.value("l2_lambda", config.l2_lambda);
  config.batch_size = doc.value("batch_size", config.batch_size);
  config.max_epochs = doc.value("max_epochs", config.max_epochs);
  config.seed = doc.value("seed", config.seed);
  if (doc.contains("optimizer")) {
    const auto name = doc.at("optimizer").get<std::string>();
    if (name == "adam") {
      config.optimizer = OptimizerKind::kAdam;
    } else if (name == "sgd") {
      config.optimizer = OptimizerKind::kSgd;
    } else {
      throw ParseError("unknown optimizer '" + name + "'");
    }
  }
  config.Validate();
  return config;
}

}  // namespace turnwise::nnet
