#pragma once

// The dialogue manager: executes questions against a responder, maintains the
// agent-visible state and scores episodes.

#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/catalog.h"
#include "turnwise/classifier.h"
#include "turnwise/cohort.h"
#include "turnwise/common.h"
#include "turnwise/simulator.h"

namespace turnwise {

struct EnvConfig {
  int max_turns = 35;
  double confidence_threshold = 0.65;
  double step_penalty = -10.0;
  double tau_penalty = -10.0;
  double terminal_correct = 1000.0;
  double terminal_wrong = -500.0;
  // When false the greeting response is left out of the moving average.
  bool include_greeting_in_average = true;

  void Validate() const;
};

nlohmann::json ToJson(const EnvConfig& config);
EnvConfig EnvConfigFromJson(const nlohmann::json& doc);

// Reward of a single step:
//   non-terminal:            step_penalty + tau_penalty * tau
//   terminal, misclassified: terminal_wrong
//   terminal, correct:       terminal_correct
double StepReward(const EnvConfig& config, bool done, bool correct, int tau);

struct DialogueState {
  Vector current_response;
  Vector moving_average;
  Vector fingerprint;
  ClassProbs class_probs{0.5, 0.5};
  int tau = 0;
  int turn = 0;

  bool operator==(const DialogueState& other) const;
};

// C = 2c + h + 3.
int StateDim(int embedding_dim, int fingerprint_dim);

// Layout: current response, moving average, fingerprint, [p_NL, p_MCI], tau.
Vector Flatten(const DialogueState& state);
// `turn` is not part of the flattened vector and is supplied separately.
DialogueState Unflatten(const Vector& flat, int embedding_dim,
                        int fingerprint_dim, int turn = 0);

// Source of response embeddings for an episode.
class Responder {
 public:
  virtual ~Responder() = default;
  virtual Vector Respond(QuestionId question) = 0;
  virtual Vector Fingerprint() const = 0;
  virtual int embedding_dim() const = 0;
};

class SimulatorResponder : public Responder {
 public:
  explicit SimulatorResponder(const SimulatorModel& model) : model_(&model) {}

  Vector Respond(QuestionId question) override;
  Vector Fingerprint() const override { return model_->Fingerprint(); }
  int embedding_dim() const override { return model_->embedding_dim(); }

 private:
  const SimulatorModel* model_;
};

// Replays a recorded conversation; each request must match the next recorded
// question.
class TranscriptResponder : public Responder {
 public:
  TranscriptResponder(const Transcript& transcript, Vector fingerprint);

  Vector Respond(QuestionId question) override;
  Vector Fingerprint() const override { return fingerprint_; }
  int embedding_dim() const override;

 private:
  const Transcript* transcript_;
  Vector fingerprint_;
  size_t next_ = 0;
};

struct StepResult {
  DialogueState state;
  double reward = 0.0;
  bool done = false;
  // Set on terminal steps when the true label is known.
  std::optional<bool> correct;
};

class DialogueEnv {
 public:
  DialogueEnv(const QuestionCatalog& catalog, const ClassifierModel& classifier,
              EnvConfig config);

  // Runs the pinned greeting as turn 0 and returns s_1. Without a label the
  // terminal reward is 0 and correctness is not reported.
  const DialogueState& Reset(Responder& responder,
                             std::optional<Label> true_label);

  StepResult Step(QuestionId action);

  const DialogueState& state() const { return state_; }
  const EnvConfig& config() const { return config_; }
  const QuestionCatalog& catalog() const { return *catalog_; }
  // Greeting followed by every executed action.
  const std::vector<QuestionId>& history() const { return history_; }
  // Every response delivered so far, greeting included.
  const std::vector<Vector>& responses() const { return responses_; }
  bool done() const { return done_; }
  bool started() const { return responder_ != nullptr; }

  // Actions the agent may take next.
  ActionMask Mask() const { return catalog_->AgentMask(history_); }

 private:
  void Observe(const Vector& response, bool counts_toward_average);

  const QuestionCatalog* catalog_;
  const ClassifierModel* classifier_;
  EnvConfig config_;
  Responder* responder_ = nullptr;
  std::optional<Label> true_label_;
  DialogueState state_;
  Vector response_sum_;
  int averaged_ = 0;
  std::vector<QuestionId> history_;
  std::vector<Vector> responses_;
  bool done_ = false;
};

}  // namespace turnwise
