#pragma once

// Per-user response simulators: an MLP from a one-hot question to the user's
// response embedding.

#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/cohort.h"
#include "turnwise/common.h"
#include "turnwise/nnet.h"

namespace turnwise {

struct SimulatorConfig {
  int hidden = 32;
  // Input index whose first-layer weight column is exposed as the fingerprint.
  int fingerprint_index = 0;
  nnet::TrainConfig train{.learning_rate = 3e-3,
                          .l2_lambda = 1e-5,
                          .batch_size = 32,
                          .max_epochs = 300,
                          .seed = 0};
  // Stop when the end-of-epoch training objective has not beaten its best by
  // this fraction for `plateau_patience` consecutive epochs.
  double plateau_tolerance = 1e-6;
  int plateau_patience = 10;
};

nlohmann::json ToJson(const SimulatorConfig& config);
SimulatorConfig SimulatorConfigFromJson(const nlohmann::json& doc);

class SimulatorModel {
 public:
  SimulatorModel() = default;
  SimulatorModel(UserId user_id, nnet::DenseNet net, int fingerprint_index = 0,
                 std::vector<double> loss_history = {});

  UserId user_id() const { return user_id_; }
  const nnet::DenseNet& net() const { return net_; }
  int num_questions() const { return net_.input_dim(); }
  int embedding_dim() const { return net_.output_dim(); }
  int hidden() const;
  int fingerprint_index() const { return fingerprint_index_; }
  // Training objective after each epoch.
  const std::vector<double>& train_loss_history() const {
    return loss_history_;
  }

  // f(q; W_i): forward pass on the one-hot encoding of `question`.
  Vector Respond(QuestionId question) const;

  // Column `fingerprint_index` of the first-layer weight matrix.
  Vector Fingerprint() const;

 private:
  UserId user_id_ = 0;
  nnet::DenseNet net_;
  int fingerprint_index_ = 0;
  std::vector<double> loss_history_;
};

// Untrained simulator with the seeded initialization used by FitUserSimulator.
SimulatorModel InitialSimulator(UserId user_id, int num_questions,
                                int embedding_dim,
                                const SimulatorConfig& config);

// Minimizes the pooled per-turn squared error plus the l2 penalty over every
// (question, response) turn of `transcripts`.
SimulatorModel FitUserSimulator(UserId user_id,
                                std::span<const Transcript> transcripts,
                                int num_questions, int embedding_dim,
                                const SimulatorConfig& config);

// Mean over turns of the mean squared coordinate error.
double PerTurnMse(const SimulatorModel& model,
                  std::span<const Transcript> transcripts);

// Trains on every conversation but the last and scores the last one. Returns
// nullopt (and logs a notice) for users with a single conversation.
std::optional<double> LeaveOneOutMse(std::span<const Transcript> transcripts,
                                     int num_questions, int embedding_dim,
                                     const SimulatorConfig& config);

nlohmann::json ToJson(const SimulatorModel& model);
SimulatorModel SimulatorFromJson(const nlohmann::json& doc);

}  // namespace turnwise
