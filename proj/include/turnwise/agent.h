#pragma once

// Deep Q-learning for the question-asking policy: masked epsilon-greedy
// exploration, experience replay and a periodically synced target network.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/catalog.h"
#include "turnwise/classifier.h"
#include "turnwise/cohort.h"
#include "turnwise/common.h"
#include "turnwise/env.h"
#include "turnwise/nnet.h"
#include "turnwise/simulator.h"

namespace turnwise {

struct AgentConfig {
  double gamma = 0.95;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  // Episodes over which epsilon anneals linearly; 0 means half of all
  // training episodes.
  int epsilon_decay_episodes = 0;
  int batch_size = 32;
  int buffer_capacity = 50000;
  int target_sync_episodes = 50;
  // Each pass performs ceil(|buffer| / batch_size) minibatch updates and ends
  // with a target sync.
  int pretrain_passes = 2;
  int episodes_per_user = 20;
  std::vector<int> hidden = {128, 128};
  double learning_rate = 1e-3;
  // Q = value_scale * network output, so returns in the hundreds are learned
  // by a network whose outputs stay near unit scale.
  double value_scale = 1000.0;
  // Initial output-layer bias, in network units. Keeps ReLU output units
  // alive at the start of training.
  double output_bias_init = 0.5;
  // Multiplier on the default output-layer weight init. Small values keep
  // every output pre-activation near the bias for all states, so no action
  // starts with a dead unit.
  double output_weight_scale = 0.01;
  uint64_t seed = 0;

  void Validate() const;
};

nlohmann::json ToJson(const AgentConfig& config);
AgentConfig AgentConfigFromJson(const nlohmann::json& doc);

// Q(s; theta) >= 0 for every action: ReLU hidden layers and a ReLU output.
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(int state_dim, int num_actions, const AgentConfig& config);
  QNetwork(nnet::DenseNet net, double value_scale);

  int state_dim() const { return net_.input_dim(); }
  int num_actions() const { return net_.output_dim(); }
  double value_scale() const { return value_scale_; }
  const nnet::DenseNet& net() const { return net_; }
  nnet::DenseNet& mutable_net() { return net_; }

  Vector Values(const Vector& state) const;
  // Column j holds the values of state column j.
  Matrix ValuesBatch(const Matrix& states) const;

  bool operator==(const QNetwork& other) const = default;

 private:
  nnet::DenseNet net_;
  double value_scale_ = 1.0;
};

// phi (.) Q(s): masked entries are exactly zero.
Vector MaskedQ(const QNetwork& qnet, const Vector& state,
               const ActionMask& mask);

// Uniform over unmasked actions with probability epsilon, otherwise the
// unmasked argmax of Q with ties going to the lowest index.
int SelectAction(const QNetwork& qnet, const Vector& state,
                 const ActionMask& mask, double epsilon, std::mt19937_64& rng);

// Greedy choice among unmasked actions given precomputed values.
int GreedyAction(const Vector& values, const ActionMask& mask);

struct Transition {
  Vector state;
  int action = 0;
  double reward = 0.0;
  Vector next_state;
  // Actions available in next_state.
  ActionMask next_mask;
  bool done = false;
};

// r if terminal, else r + gamma * max over unmasked next actions of the
// target network's values.
double TdTarget(const Transition& transition, const QNetwork& target,
                double gamma);

// Fixed-capacity ring; the oldest transition is evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity);

  void Add(Transition transition);
  size_t size() const { return storage_.size(); }
  int capacity() const { return capacity_; }
  bool empty() const { return storage_.empty(); }
  // Insertion order, oldest first.
  const Transition& at(size_t i) const;
  // Uniform with replacement.
  std::vector<const Transition*> Sample(int count,
                                        std::mt19937_64& rng) const;

 private:
  int capacity_;
  std::vector<Transition> storage_;
  size_t head_ = 0;
};

// Online and target networks, replay memory and optimizer state.
class DqnLearner {
 public:
  DqnLearner(QNetwork online, const AgentConfig& config);

  const QNetwork& online() const { return online_; }
  const QNetwork& target() const { return target_; }
  QNetwork& mutable_online() { return online_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const AgentConfig& config() const { return config_; }

  void Store(Transition transition);
  // One gradient step on a sampled minibatch; returns the pre-update loss in
  // squared value units, or nullopt when the buffer is empty.
  std::optional<double> Update(std::mt19937_64& rng);
  // Gradient step on an explicit batch.
  double UpdateOn(std::span<const Transition* const> batch);
  void SyncTarget() { target_ = online_; }
  void SetTarget(QNetwork target) { target_ = std::move(target); }

 private:
  AgentConfig config_;
  QNetwork online_;
  QNetwork target_;
  nnet::Optimizer optimizer_;
  ReplayBuffer buffer_;
};

struct CorpusEpisode {
  const Transcript* transcript = nullptr;
  Vector fingerprint;
  Label label = Label::kNormal;
};

struct TrainingUser {
  UserId user_id = 0;
  const SimulatorModel* simulator = nullptr;
  Label label = Label::kNormal;
};

struct LearningCurveRow {
  int episode = 0;
  UserId user_id = 0;
  double episode_return = 0.0;
  double epsilon = 0.0;
  // Mean minibatch loss over the episode's updates (squared value units).
  double loss = 0.0;
  int length = 0;
};

class DqnAgent {
 public:
  DqnAgent(const QuestionCatalog& catalog, int embedding_dim,
           int fingerprint_dim, AgentConfig config);
  DqnAgent(const QuestionCatalog& catalog, QNetwork online, QNetwork target,
           AgentConfig config);

  const AgentConfig& config() const { return learner_.config(); }
  const QNetwork& online() const { return learner_.online(); }
  const QNetwork& target() const { return learner_.target(); }
  const DqnLearner& learner() const { return learner_; }
  DqnLearner& mutable_learner() { return learner_; }

  // Replays recorded conversations through the environment (responses from
  // the transcripts, rewards from the classifier and true label), fills the
  // replay memory and runs the configured pretraining passes. Returns the
  // number of transitions produced.
  size_t PretrainFromCorpus(std::span<const CorpusEpisode> corpus,
                            const ClassifierModel& classifier,
                            const EnvConfig& env_config);

  // Per user, episodes_per_user episodes: mask, epsilon-greedy action, step,
  // store, one minibatch update per turn. The target network is synced every
  // target_sync_episodes episodes.
  std::vector<LearningCurveRow> Train(std::span<const TrainingUser> users,
                                      const ClassifierModel& classifier,
                                      const EnvConfig& env_config);

  // Epsilon after `episode` completed episodes out of `total`.
  double EpsilonAt(int episode, int total) const;

  int Greedy(const DialogueState& state, const ActionMask& mask) const;

 private:
  const QuestionCatalog* catalog_;
  DqnLearner learner_;
  std::mt19937_64 explore_rng_;
  std::mt19937_64 replay_rng_;
};

nlohmann::json CheckpointToJson(const DqnAgent& agent);
DqnAgent AgentFromCheckpoint(const QuestionCatalog& catalog,
                             const nlohmann::json& doc);

void WriteLearningCurve(const std::filesystem::path& path,
                        std::span<const LearningCurveRow> rows);

}  // namespace turnwise
