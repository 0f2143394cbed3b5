#include "turnwise/env.h"

#include <algorithm>
#include <string>

namespace turnwise {

void EnvConfig::Validate() const {
  if (max_turns < 1) throw UsageError("max_turns must be >= 1");
  if (!(confidence_threshold >= 0.5 && confidence_threshold < 1.0)) {
    throw UsageError("confidence_threshold must lie in [0.5, 1)");
  }
}

nlohmann::json ToJson(const EnvConfig& config) {
  return {{"max_turns", config.max_turns},
          {"confidence_threshold", config.confidence_threshold},
          {"step_penalty", config.step_penalty},
          {"tau_penalty", config.tau_penalty},
          {"terminal_correct", config.terminal_correct},
          {"terminal_wrong", config.terminal_wrong},
          {"include_greeting_in_average", config.include_greeting_in_average}};
}

EnvConfig EnvConfigFromJson(const nlohmann::json& doc) {
  EnvConfig config;
  config.max_turns = doc.value("max_turns", config.max_turns);
  config.confidence_threshold =
      doc.value("confidence_threshold", config.confidence_threshold);
  config.step_penalty = doc.value("step_penalty", config.step_penalty);
  config.tau_penalty = doc.value("tau_penalty", config.tau_penalty);
  config.terminal_correct =
      doc.value("terminal_correct", config.terminal_correct);
  config.terminal_wrong = doc.value("terminal_wrong", config.terminal_wrong);
  config.include_greeting_in_average = doc.value(
      "include_greeting_in_average", config.include_greeting_in_average);
  config.Validate();
  return config;
}

double StepReward(const EnvConfig& config, bool done, bool correct, int tau) {
  if (!done) return config.step_penalty + config.tau_penalty * tau;
  return correct ? config.terminal_correct : config.terminal_wrong;
}

bool DialogueState::operator==(const DialogueState& other) const {
  return current_response == other.current_response &&
         moving_average == other.moving_average &&
         fingerprint == other.fingerprint &&
         class_probs == other.class_probs && tau == other.tau &&
         turn == other.turn;
}

int StateDim(int embedding_dim, int fingerprint_dim) {
  return 2 * embedding_dim + fingerprint_dim + 3;
}

Vector Flatten(const DialogueState& state) {
  const Eigen::Index c = state.current_response.size();
  const Eigen::Index h = state.fingerprint.size();
  if (state.moving_average.size() != c) {
    throw ShapeError("moving average and current response differ in length");
  }
  Vector flat(2 * c + h + 3);
  flat.segment(0, c) = state.current_response;
  flat.segment(c, c) = state.moving_average;
  flat.segment(2 * c, h) = state.fingerprint;
  flat[2 * c + h] = state.class_probs[0];
  flat[2 * c + h + 1] = state.class_probs[1];
  flat[2 * c + h + 2] = static_cast<double>(state.tau);
  return flat;
}

DialogueState Unflatten(const Vector& flat, int embedding_dim,
                        int fingerprint_dim, int turn) {
  const int c = embedding_dim;
  const int h = fingerprint_dim;
  if (flat.size() != StateDim(c, h)) {
    throw ShapeError("flattened state has length " +
                     std::to_string(flat.size()) + ", expected " +
                     std::to_string(StateDim(c, h)));
  }
  DialogueState state;
  state.current_response = flat.segment(0, c);
  state.moving_average = flat.segment(c, c);
  state.fingerprint = flat.segment(2 * c, h);
  state.class_probs = {flat[2 * c + h], flat[2 * c + h + 1]};
  state.tau = static_cast<int>(flat[2 * c + h + 2]);
  state.turn = turn;
  return state;
}

Vector SimulatorResponder::Respond(QuestionId question) {
  return model_->Respond(question);
}

TranscriptResponder::TranscriptResponder(const Transcript& transcript,
                                         Vector fingerprint)
    : transcript_(&transcript), fingerprint_(std::move(fingerprint)) {
  if (transcript.turns.empty()) {
    throw UsageError("cannot replay an empty transcript");
  }
}

Vector TranscriptResponder::Respond(QuestionId question) {
  if (next_ >= transcript_->turns.size()) {
    throw UsageError("transcript exhausted after " +
                     std::to_string(transcript_->turns.size()) + " turns");
  }
  const Turn& turn = transcript_->turns[next_];
  if (turn.question != question) {
    throw UsageError("replay requested question " + std::to_string(question) +
                     " but the transcript recorded " +
                     std::to_string(turn.question));
  }
  ++next_;
  return turn.response;
}

int TranscriptResponder::embedding_dim() const {
  return static_cast<int>(transcript_->turns.front().response.size());
}

DialogueEnv::DialogueEnv(const QuestionCatalog& catalog,
                         const ClassifierModel& classifier, EnvConfig config)
    : catalog_(&catalog), classifier_(&classifier), config_(config) {
  config_.Validate();
}

void DialogueEnv::Observe(const Vector& response, bool counts_toward_average) {
  if (response.size() != classifier_->dim()) {
    throw ShapeError("responder emits " + std::to_string(response.size()) +
                     "-dim vectors but the classifier expects " +
                     std::to_string(classifier_->dim()));
  }
  responses_.push_back(response);
  state_.current_response = response;
  if (counts_toward_average) {
    response_sum_ += response;
    ++averaged_;
  }
  if (averaged_ > 0) {
    state_.moving_average = response_sum_ / static_cast<double>(averaged_);
  }
  state_.class_probs = classifier_->PredictProba(state_.moving_average);
}

const DialogueState& DialogueEnv::Reset(Responder& responder,
                                        std::optional<Label> true_label) {
  const int c = responder.embedding_dim();
  if (c != classifier_->dim()) {
    throw ShapeError("responder dim " + std::to_string(c) +
                     " != classifier dim " +
                     std::to_string(classifier_->dim()));
  }
  responder_ = &responder;
  true_label_ = true_label;
  done_ = false;
  history_.clear();
  responses_.clear();
  response_sum_ = Vector::Zero(c);
  averaged_ = 0;
  state_ = DialogueState{};
  state_.moving_average = Vector::Zero(c);
  state_.fingerprint = responder.Fingerprint();
  state_.tau = 0;
  state_.turn = 0;
  const QuestionId greeting = catalog_->greeting();
  history_.push_back(greeting);
  Observe(responder.Respond(greeting), config_.include_greeting_in_average);
  return state_;
}

StepResult DialogueEnv::Step(QuestionId action) {
  if (!started()) throw UsageError("Step called before Reset");
  if (done_) throw UsageError("episode already finished; call Reset");
  if (!catalog_->Contains(action)) {
    throw UsageError("action " + std::to_string(action) +
                     " outside the catalog");
  }
  if (Mask()[action] == 0) {
    throw UsageError("action " + std::to_string(action) +
                     " is masked at turn " + std::to_string(state_.turn));
  }
  const bool done = catalog_->IsGoodbye(action) ||
                    state_.turn + 1 >= config_.max_turns;
  history_.push_back(action);
  Observe(responder_->Respond(action), true);
  const double confidence =
      std::max(state_.class_probs[0], state_.class_probs[1]);
  if (confidence >= config_.confidence_threshold) ++state_.tau;
  ++state_.turn;

  StepResult result;
  result.done = done;
  if (done) {
    done_ = true;
    if (true_label_) {
      const Label predicted =
          state_.class_probs[1] >= 0.5 ? Label::kMci : Label::kNormal;
      result.correct = predicted == *true_label_;
      result.reward = StepReward(config_, true, *result.correct, state_.tau);
    }
  } else {
    result.reward = StepReward(config_, false, false, state_.tau);
  }
  result.state = state_;
  return result;
}

}  // namespace turnwise
