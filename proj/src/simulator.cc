#include "turnwise/simulator.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

namespace turnwise {

nlohmann::json ToJson(const SimulatorConfig& config) {
  return {{"hidden", config.hidden},
          {"fingerprint_index", config.fingerprint_index},
          {"train", nnet::ToJson(config.train)},
          {"plateau_tolerance", config.plateau_tolerance},
          {"plateau_patience", config.plateau_patience}};
}

SimulatorConfig SimulatorConfigFromJson(const nlohmann::json& doc) {
  SimulatorConfig config;
  config.hidden = doc.value("hidden", config.hidden);
  config.fingerprint_index =
      doc.value("fingerprint_index", config.fingerprint_index);
  if (doc.contains("train")) {
    config.train = nnet::TrainConfigFromJson(doc.at("train"), config.train);
  }
  config.plateau_tolerance =
      doc.value("plateau_tolerance", config.plateau_tolerance);
  config.plateau_patience =
      doc.value("plateau_patience", config.plateau_patience);
  if (config.hidden <= 0) throw UsageError("simulator hidden must be > 0");
  return config;
}

SimulatorModel::SimulatorModel(UserId user_id, nnet::DenseNet net,
                               int fingerprint_index,
                               std::vector<double> loss_history)
    : user_id_(user_id),
      net_(std::move(net)),
      fingerprint_index_(fingerprint_index),
      loss_history_(std::move(loss_history)) {
  if (net_.num_layers() < 2) {
    throw ShapeError("a simulator needs at least one hidden layer");
  }
  if (fingerprint_index_ < 0 || fingerprint_index_ >= net_.input_dim()) {
    throw UsageError("fingerprint index outside the question range");
  }
}

int SimulatorModel::hidden() const {
  return static_cast<int>(net_.layer(0).weight.rows());
}

Vector SimulatorModel::Respond(QuestionId question) const {
  if (question < 0 || question >= num_questions()) {
    throw UsageError("question id " + std::to_string(question) +
                     " outside simulator range [0, " +
                     std::to_string(num_questions()) + ")");
  }
  Vector onehot = Vector::Zero(num_questions());
  onehot[question] = 1.0;
  return net_.Predict(onehot);
}

Vector SimulatorModel::Fingerprint() const {
  return net_.layer(0).weight.col(fingerprint_index_);
}

SimulatorModel InitialSimulator(UserId user_id, int num_questions,
                                int embedding_dim,
                                const SimulatorConfig& config) {
  using nnet::Activation;
  nnet::DenseNet net(
      {num_questions, config.hidden, config.hidden, embedding_dim},
      {Activation::kRelu, Activation::kRelu, Activation::kIdentity},
      DeriveSeed(config.train.seed, "simulator.init"));
  return SimulatorModel(user_id, std::move(net), config.fingerprint_index);
}

SimulatorModel FitUserSimulator(UserId user_id,
                                std::span<const Transcript> transcripts,
                                int num_questions, int embedding_dim,
                                const SimulatorConfig& config) {
  std::vector<const Turn*> turns;
  for (const auto& t : transcripts) {
    for (const auto& turn : t.turns) {
      if (turn.question < 0 || turn.question >= num_questions) {
        throw UsageError("transcript of user " + std::to_string(user_id) +
                         " uses question " + std::to_string(turn.question) +
                         " outside [0, " + std::to_string(num_questions) +
                         ")");
      }
      if (turn.response.size() != embedding_dim) {
        throw ShapeError("response length " +
                         std::to_string(turn.response.size()) +
                         " != embedding dim " + std::to_string(embedding_dim));
      }
      turns.push_back(&turn);
    }
  }
  if (turns.empty()) {
    throw UsageError("user " + std::to_string(user_id) + " has no turns");
  }

  SimulatorModel initial =
      InitialSimulator(user_id, num_questions, embedding_dim, config);
  nnet::Trainer trainer(initial.net(), config.train);
  std::mt19937_64 rng(DeriveSeed(config.train.seed, "simulator.batches"));
  std::vector<size_t> order(turns.size());
  std::iota(order.begin(), order.end(), 0);
  const size_t batch = static_cast<size_t>(config.train.batch_size);

  // Whole-set inputs and targets for the end-of-epoch objective.
  Matrix all_inputs = Matrix::Zero(num_questions,
                                   static_cast<Eigen::Index>(turns.size()));
  Matrix all_targets(embedding_dim, static_cast<Eigen::Index>(turns.size()));
  for (size_t j = 0; j < turns.size(); ++j) {
    all_inputs(turns[j]->question, static_cast<Eigen::Index>(j)) = 1.0;
    all_targets.col(static_cast<Eigen::Index>(j)) = turns[j]->response;
  }

  std::vector<double> history;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < config.train.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += batch) {
      const size_t n = std::min(batch, order.size() - start);
      Matrix inputs = Matrix::Zero(num_questions, static_cast<Eigen::Index>(n));
      Matrix targets(embedding_dim, static_cast<Eigen::Index>(n));
      for (size_t j = 0; j < n; ++j) {
        const Turn& turn = *turns[order[start + j]];
        inputs(turn.question, static_cast<Eigen::Index>(j)) = 1.0;
        targets.col(static_cast<Eigen::Index>(j)) = turn.response;
      }
      trainer.StepRegression(inputs, targets);
    }
    const double loss =
        nnet::HalfSquaredError(trainer.net().PredictBatch(all_inputs),
                               all_targets)
            .loss +
        0.5 * config.train.l2_lambda * trainer.net().WeightNormSquared();
    history.push_back(loss);
    // Stop once the best objective has not improved by the relative
    // tolerance for `plateau_patience` epochs.
    if (loss < best * (1.0 - config.plateau_tolerance)) {
      best = loss;
      stale = 0;
    } else if (config.plateau_patience > 0 &&
               ++stale >= config.plateau_patience) {
      break;
    }
  }
  return SimulatorModel(user_id, trainer.net(), config.fingerprint_index,
                        std::move(history));
}

double PerTurnMse(const SimulatorModel& model,
                  std::span<const Transcript> transcripts) {
  double total = 0.0;
  size_t count = 0;
  for (const auto& t : transcripts) {
    for (const auto& turn : t.turns) {
      const Vector diff = model.Respond(turn.question) - turn.response;
      total += diff.squaredNorm() / static_cast<double>(diff.size());
      ++count;
    }
  }
  if (count == 0) throw UsageError("no turns to score");
  return total / static_cast<double>(count);
}

std::optional<double> LeaveOneOutMse(std::span<const Transcript> transcripts,
                                     int num_questions, int embedding_dim,
                                     const SimulatorConfig& config) {
  if (transcripts.size() < 2) {
    spdlog::info("skipping leave-one-out evaluation for a user with {} "
                 "conversation(s)",
                 transcripts.size());
    return std::nullopt;
  }
  const UserId user = transcripts.front().user_id;
  const auto train = transcripts.first(transcripts.size() - 1);
  const auto held_out = transcripts.last(1);
  SimulatorModel model =
      FitUserSimulator(user, train, num_questions, embedding_dim, config);
  return PerTurnMse(model, held_out);
}

nlohmann::json ToJson(const SimulatorModel& model) {
  return {{"format", "turnwise.simulator"},
          {"version", 1},
          {"user_id", model.user_id()},
          {"fingerprint_index", model.fingerprint_index()},
          {"train_loss_history", model.train_loss_history()},
          {"net", nnet::ToJson(model.net())}};
}

SimulatorModel SimulatorFromJson(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "turnwise.simulator") {
      throw ParseError("not a simulator document");
    }
    return SimulatorModel(
        doc.at("user_id").get<int>(), nnet::DenseNetFromJson(doc.at("net")),
        doc.value("fingerprint_index", 0),
        doc.value("train_loss_history", std::vector<double>{}));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed simulator document: ") + e.what());
  }
}

}  // namespace turnwise
