#include "turnwise/agent.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <spdlog/spdlog.h>

namespace turnwise {

void AgentConfig::Validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw UsageError("gamma must lie in [0, 1]");
  if (!(epsilon_end >= 0.0 && epsilon_end <= epsilon_start &&
        epsilon_start <= 1.0)) {
    throw UsageError("need 0 <= epsilon_end <= epsilon_start <= 1");
  }
  if (epsilon_decay_episodes < 0) {
    throw UsageError("epsilon_decay_episodes must be >= 0");
  }
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (buffer_capacity < 1) throw UsageError("buffer_capacity must be >= 1");
  if (target_sync_episodes < 1) {
    throw UsageError("target_sync_episodes must be >= 1");
  }
  if (pretrain_passes < 0) throw UsageError("pretrain_passes must be >= 0");
  if (episodes_per_user < 0) throw UsageError("episodes_per_user must be >= 0");
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(value_scale > 0.0)) throw UsageError("value_scale must be > 0");
  if (!(output_weight_scale >= 0.0)) {
    throw UsageError("output_weight_scale must be >= 0");
  }
  for (int h : hidden) {
    if (h < 1) throw UsageError("hidden layer sizes must be positive");
  }
}

nlohmann::json ToJson(const AgentConfig& config) {
  return {{"gamma", config.gamma},
          {"epsilon_start", config.epsilon_start},
          {"epsilon_end", config.epsilon_end},
          {"epsilon_decay_episodes", config.epsilon_decay_episodes},
          {"batch_size", config.batch_size},
          {"buffer_capacity", config.buffer_capacity},
          {"target_sync_episodes", config.target_sync_episodes},
          {"pretrain_passes", config.pretrain_passes},
          {"episodes_per_user", config.episodes_per_user},
          {"hidden", config.hidden},
          {"learning_rate", config.learning_rate},
          {"value_scale", config.value_scale},
          {"output_bias_init", config.output_bias_init},
          {"output_weight_scale", config.output_weight_scale},
          {"seed", config.seed}};
}

AgentConfig AgentConfigFromJson(const nlohmann::json& doc) {
  AgentConfig c;
  c.gamma = doc.value("gamma", c.gamma);
  c.epsilon_start = doc.value("epsilon_start", c.epsilon_start);
  c.epsilon_end = doc.value("epsilon_end", c.epsilon_end);
  c.epsilon_decay_episodes =
      doc.value("epsilon_decay_episodes", c.epsilon_decay_episodes);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.buffer_capacity = doc.value("buffer_capacity", c.buffer_capacity);
  c.target_sync_episodes =
      doc.value("target_sync_episodes", c.target_sync_episodes);
  c.pretrain_passes = doc.value("pretrain_passes", c.pretrain_passes);
  c.episodes_per_user = doc.value("episodes_per_user", c.episodes_per_user);
  c.hidden = doc.value("hidden", c.hidden);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.value_scale = doc.value("value_scale", c.value_scale);
  c.output_bias_init = doc.value("output_bias_init", c.output_bias_init);
  c.output_weight_scale =
      doc.value("output_weight_scale", c.output_weight_scale);
  c.seed = doc.value("seed", c.seed);
  c.Validate();
  return c;
}

QNetwork::QNetwork(int state_dim, int num_actions, const AgentConfig& config)
    : value_scale_(config.value_scale) {
  std::vector<int> dims{state_dim};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(num_actions);
  std::vector<nnet::Activation> acts(dims.size() - 1, nnet::Activation::kRelu);
  net_ = nnet::DenseNet(dims, acts, DeriveSeed(config.seed, "agent.init"));
  nnet::Layer& out = net_.mutable_layer(net_.num_layers() - 1);
  out.weight *= config.output_weight_scale;
  out.bias.setConstant(config.output_bias_init);
}

QNetwork::QNetwork(nnet::DenseNet net, double value_scale)
    : net_(std::move(net)), value_scale_(value_scale) {
  if (net_.num_layers() == 0) throw ShapeError("Q-network has no layers");
  if (net_.layers().back().activation != nnet::Activation::kRelu) {
    throw ValidationError("Q-network output layer must use ReLU");
  }
  if (!(value_scale_ > 0.0)) throw ValidationError("value_scale must be > 0");
}

Vector QNetwork::Values(const Vector& state) const {
  return value_scale_ * net_.Predict(state);
}

Matrix QNetwork::ValuesBatch(const Matrix& states) const {
  return value_scale_ * net_.PredictBatch(states);
}

Vector MaskedQ(const QNetwork& qnet, const Vector& state,
               const ActionMask& mask) {
  if (static_cast<int>(mask.size()) != qnet.num_actions()) {
    throw ShapeError("mask has " + std::to_string(mask.size()) +
                     " entries for " + std::to_string(qnet.num_actions()) +
                     " actions");
  }
  Vector q = qnet.Values(state);
  for (size_t j = 0; j < mask.size(); ++j) {
    q[static_cast<Eigen::Index>(j)] *= mask[j];
  }
  return q;
}

int GreedyAction(const Vector& values, const ActionMask& mask) {
  int best = -1;
  for (size_t j = 0; j < mask.size(); ++j) {
    if (mask[j] == 0) continue;
    if (best < 0 || values[static_cast<Eigen::Index>(j)] > values[best]) {
      best = static_cast<int>(j);
    }
  }
  if (best < 0) throw std::logic_error("every action is masked");
  return best;
}

int SelectAction(const QNetwork& qnet, const Vector& state,
                 const ActionMask& mask, double epsilon,
                 std::mt19937_64& rng) {
  std::vector<int> allowed;
  for (size_t j = 0; j < mask.size(); ++j) {
    if (mask[j] != 0) allowed.push_back(static_cast<int>(j));
  }
  if (allowed.empty()) throw std::logic_error("every action is masked");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < epsilon) {
    std::uniform_int_distribution<size_t> pick(0, allowed.size() - 1);
    return allowed[pick(rng)];
  }
  return GreedyAction(MaskedQ(qnet, state, mask), mask);
}

namespace {

double MaskedMax(const Vector& values, const ActionMask& mask) {
  return values[GreedyAction(values, mask)];
}

}  // namespace

double TdTarget(const Transition& transition, const QNetwork& target,
                double gamma) {
  if (transition.done || gamma == 0.0) return transition.reward;
  return transition.reward +
         gamma * MaskedMax(target.Values(transition.next_state),
                           transition.next_mask);
}

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw UsageError("replay capacity must be >= 1");
}

void ReplayBuffer::Add(Transition transition) {
  if (static_cast<int>(storage_.size()) < capacity_) {
    storage_.push_back(std::move(transition));
    return;
  }
  storage_[head_] = std::move(transition);
  head_ = (head_ + 1) % storage_.size();
}

const Transition& ReplayBuffer::at(size_t i) const {
  if (i >= storage_.size()) throw UsageError("replay index out of range");
  return storage_[(head_ + i) % storage_.size()];
}

std::vector<const Transition*> ReplayBuffer::Sample(
    int count, std::mt19937_64& rng) const {
  if (storage_.empty()) throw UsageError("cannot sample an empty buffer");
  std::uniform_int_distribution<size_t> pick(0, storage_.size() - 1);
  std::vector<const Transition*> batch;
  batch.reserve(count);
  for (int k = 0; k < count; ++k) batch.push_back(&storage_[pick(rng)]);
  return batch;
}

DqnLearner::DqnLearner(QNetwork online, const AgentConfig& config)
    : config_(config),
      online_(std::move(online)),
      target_(online_),
      optimizer_(online_.net(), nnet::OptimizerKind::kAdam,
                 config.learning_rate),
      buffer_(config.buffer_capacity) {
  config_.Validate();
}

void DqnLearner::Store(Transition transition) {
  if (transition.state.size() != online_.state_dim() ||
      transition.next_state.size() != online_.state_dim()) {
    throw ShapeError("transition state length differs from the Q-network");
  }
  buffer_.Add(std::move(transition));
}

std::optional<double> DqnLearner::Update(std::mt19937_64& rng) {
  if (buffer_.empty()) return std::nullopt;
  const auto batch = buffer_.Sample(config_.batch_size, rng);
  return UpdateOn(batch);
}

double DqnLearner::UpdateOn(std::span<const Transition* const> batch) {
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw UsageError("empty update batch");
  const Eigen::Index dim = online_.state_dim();
  Matrix states(dim, n);
  Matrix next_states(dim, n);
  std::vector<int> actions(batch.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    states.col(j) = batch[j]->state;
    next_states.col(j) = batch[j]->next_state;
    actions[j] = batch[j]->action;
  }
  const Matrix next_values = target_.ValuesBatch(next_states);
  const double scale = online_.value_scale();
  Vector targets(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Transition& t = *batch[j];
    double y = t.reward;
    if (!t.done && config_.gamma != 0.0) {
      y += config_.gamma * MaskedMax(next_values.col(j), t.next_mask);
    }
    targets[j] = y / scale;
  }
  nnet::DenseNet& net = online_.mutable_net();
  const nnet::ForwardTrace trace = net.ForwardBatch(states);
  const nnet::LossGrad loss =
      nnet::SelectedUnitSquaredError(trace.output(), targets, actions);
  optimizer_.Apply(net, net.Backward(trace, loss.output_grad, 0.0));
  return loss.loss * scale * scale;
}

DqnAgent::DqnAgent(const QuestionCatalog& catalog, int embedding_dim,
                   int fingerprint_dim, AgentConfig config)
    : catalog_(&catalog),
      learner_(QNetwork(StateDim(embedding_dim, fingerprint_dim),
                        catalog.size(), config),
               config),
      explore_rng_(DeriveSeed(config.seed, "agent.explore")),
      replay_rng_(DeriveSeed(config.seed, "agent.replay")) {}

DqnAgent::DqnAgent(const QuestionCatalog& catalog, QNetwork online,
                   QNetwork target, AgentConfig config)
    : catalog_(&catalog),
      learner_(std::move(online), config),
      explore_rng_(DeriveSeed(config.seed, "agent.explore")),
      replay_rng_(DeriveSeed(config.seed, "agent.replay")) {
  if (learner_.online().num_actions() != catalog.size()) {
    throw ValidationError("Q-network has " +
                          std::to_string(learner_.online().num_actions()) +
                          " actions but the catalog has " +
                          std::to_string(catalog.size()) + " questions");
  }
  if (target.net().layer_dims() != learner_.online().net().layer_dims()) {
    throw ValidationError("target and online networks differ in shape");
  }
  learner_.SetTarget(std::move(target));
}

double DqnAgent::EpsilonAt(int episode, int total) const {
  const AgentConfig& c = config();
  const int decay = c.epsilon_decay_episodes > 0 ? c.epsilon_decay_episodes
                                                 : std::max(1, total / 2);
  const double frac = std::min(1.0, static_cast<double>(episode) / decay);
  return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * frac;
}

int DqnAgent::Greedy(const DialogueState& state, const ActionMask& mask) const {
  return GreedyAction(MaskedQ(online(), Flatten(state), mask), mask);
}

size_t DqnAgent::PretrainFromCorpus(std::span<const CorpusEpisode> corpus,
                                    const ClassifierModel& classifier,
                                    const EnvConfig& env_config) {
  DialogueEnv env(*catalog_, classifier, env_config);
  size_t produced = 0;
  for (const CorpusEpisode& episode : corpus) {
    const Transcript& transcript = *episode.transcript;
    if (transcript.turns.empty()) continue;
    if (transcript.turns.front().question != catalog_->greeting()) {
      throw UsageError("transcript of user " +
                       std::to_string(transcript.user_id) +
                       " does not open with the greeting");
    }
    TranscriptResponder responder(transcript, episode.fingerprint);
    env.Reset(responder, episode.label);
    for (size_t k = 1; k < transcript.turns.size() && !env.done(); ++k) {
      Transition t;
      t.state = Flatten(env.state());
      t.action = transcript.turns[k].question;
      const StepResult step = env.Step(t.action);
      t.reward = step.reward;
      t.next_state = Flatten(step.state);
      t.next_mask = env.Mask();
      t.done = step.done;
      learner_.Store(std::move(t));
      ++produced;
    }
  }
  if (learner_.buffer().empty()) return 0;
  const size_t per_pass =
      (learner_.buffer().size() + config().batch_size - 1) /
      config().batch_size;
  for (int pass = 0; pass < config().pretrain_passes; ++pass) {
    double loss = 0.0;
    for (size_t u = 0; u < per_pass; ++u) loss += *learner_.Update(replay_rng_);
    learner_.SyncTarget();
    spdlog::debug("pretrain pass {}: mean loss {:.3f}", pass + 1,
                  loss / static_cast<double>(per_pass));
  }
  return produced;
}

std::vector<LearningCurveRow> DqnAgent::Train(
    std::span<const TrainingUser> users, const ClassifierModel& classifier,
    const EnvConfig& env_config) {
  DialogueEnv env(*catalog_, classifier, env_config);
  const int m = config().episodes_per_user;
  const int total = static_cast<int>(users.size()) * m;
  std::vector<LearningCurveRow> curve;
  curve.reserve(total);
  int episode = 0;
  for (const TrainingUser& user : users) {
    SimulatorResponder responder(*user.simulator);
    for (int e = 0; e < m; ++e) {
      LearningCurveRow row;
      row.episode = episode;
      row.user_id = user.user_id;
      row.epsilon = EpsilonAt(episode, total);
      env.Reset(responder, user.label);
      int updates = 0;
      while (!env.done()) {
        Transition t;
        t.state = Flatten(env.state());
        const ActionMask mask = env.Mask();
        t.action = SelectAction(online(), t.state, mask, row.epsilon,
                                explore_rng_);
        const StepResult step = env.Step(t.action);
        t.reward = step.reward;
        t.next_state = Flatten(step.state);
        t.next_mask = env.Mask();
        t.done = step.done;
        row.episode_return += step.reward;
        ++row.length;
        learner_.Store(std::move(t));
        row.loss += *learner_.Update(replay_rng_);
        ++updates;
      }
      row.loss /= std::max(1, updates);
      ++episode;
      if (episode % config().target_sync_episodes == 0) learner_.SyncTarget();
      curve.push_back(row);
    }
  }
  return curve;
}

nlohmann::json CheckpointToJson(const DqnAgent& agent) {
  return {{"format", "turnwise.agent"},
          {"version", 1},
          {"config", ToJson(agent.config())},
          {"value_scale", agent.online().value_scale()},
          {"online", nnet::ToJson(agent.online().net())},
          {"target", nnet::ToJson(agent.target().net())}};
}

DqnAgent AgentFromCheckpoint(const QuestionCatalog& catalog,
                             const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "turnwise.agent") {
      throw ParseError("not an agent checkpoint");
    }
    const AgentConfig config = AgentConfigFromJson(doc.at("config"));
    const double scale = doc.at("value_scale").get<double>();
    return DqnAgent(catalog,
                    QNetwork(nnet::DenseNetFromJson(doc.at("online")), scale),
                    QNetwork(nnet::DenseNetFromJson(doc.at("target")), scale),
                    config);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed agent checkpoint: ") + e.what());
  }
}

void WriteLearningCurve(const std::filesystem::path& path,
                        std::span<const LearningCurveRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "episode,user_id,return,epsilon,loss,length\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.episode << ',' << r.user_id << ',' << r.episode_return << ','
        << r.epsilon << ',' << r.loss << ',' << r.length << '\n';
  }
}

}  // namespace turnwise
