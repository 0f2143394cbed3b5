#include <doctest.h>

#include <random>
#include <vector>

#include "test_support.h"
#include "turnwise/env.h"

using namespace turnwise;
using turnwise::testing::RandomVector;

namespace {

// Fresh random response on every call.
class NoiseResponder : public Responder {
 public:
  NoiseResponder(int c, uint64_t seed, double scale = 1.0)
      : c_(c), rng_(seed), scale_(scale) {}
  Vector Respond(QuestionId) override { return RandomVector(rng_, c_, scale_); }
  Vector Fingerprint() const override { return Vector::Constant(3, 0.25); }
  int embedding_dim() const override { return c_; }

 private:
  int c_;
  std::mt19937_64 rng_;
  double scale_;
};

ClassifierModel FirstCoordinate(int c, double weight = 1.0) {
  Vector w = Vector::Zero(c);
  w[0] = weight;
  return ClassifierModel(w, 0.0, ClassifierKind::kLogistic, 0.0);
}

QuestionId RandomAllowed(const ActionMask& mask, std::mt19937_64& rng,
                         bool allow_goodbye, QuestionId goodbye) {
  std::vector<QuestionId> allowed;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && (allow_goodbye || static_cast<int>(i) != goodbye)) {
      allowed.push_back(static_cast<int>(i));
    }
  }
  return allowed[rng() % allowed.size()];
}

}  // namespace

TEST_CASE("reward table") {
  const EnvConfig config;
  for (int tau = 0; tau <= 35; ++tau) {
    CHECK(StepReward(config, false, false, tau) == -10.0 - 10.0 * tau);
    CHECK(StepReward(config, false, true, tau) == -10.0 - 10.0 * tau);
    CHECK(StepReward(config, true, false, tau) == -500.0);
    CHECK(StepReward(config, true, true, tau) == 1000.0);
  }
}

TEST_CASE("state length arithmetic") {
  CHECK(StateDim(4800, 512) == 10115);
  CHECK(StateDim(64, 32) == 163);
  DialogueState s;
  s.current_response = Vector::LinSpaced(4, 1, 4);
  s.moving_average = Vector::LinSpaced(4, 5, 8);
  s.fingerprint = Vector::LinSpaced(2, 9, 10);
  s.class_probs = {0.3, 0.7};
  s.tau = 6;
  s.turn = 9;
  const Vector flat = Flatten(s);
  REQUIRE(flat.size() == StateDim(4, 2));
  CHECK(flat.head(4) == s.current_response);
  CHECK(flat.segment(4, 4) == s.moving_average);
  CHECK(flat.segment(8, 2) == s.fingerprint);
  CHECK(flat[10] == 0.3);
  CHECK(flat[11] == 0.7);
  CHECK(flat[12] == 6.0);
  CHECK(Unflatten(flat, 4, 2, 9) == s);
  CHECK_THROWS_AS(Unflatten(flat, 4, 3), ShapeError);
}

TEST_CASE("moving average equals the batch mean of delivered responses") {
  const QuestionCatalog catalog = CompactCatalog(20);
  const ClassifierModel clf = FirstCoordinate(6);
  std::mt19937_64 rng(3);
  for (int episode = 0; episode < 50; ++episode) {
    DialogueEnv env(catalog, clf, EnvConfig{});
    NoiseResponder responder(6, 100 + episode, 10.0);
    env.Reset(responder, Label::kMci);
    while (!env.done()) {
      env.Step(RandomAllowed(env.Mask(), rng, episode % 3 != 0,
                             catalog.goodbye()));
      Vector mean = Vector::Zero(6);
      for (const Vector& r : env.responses()) mean += r;
      mean /= static_cast<double>(env.responses().size());
      CHECK((env.state().moving_average - mean).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(env.state().current_response == env.responses().back());
    }
  }
}

TEST_CASE("greeting can be left out of the average") {
  const QuestionCatalog catalog = CompactCatalog(20);
  const ClassifierModel clf = FirstCoordinate(3);
  EnvConfig config;
  config.include_greeting_in_average = false;
  DialogueEnv env(catalog, clf, config);
  NoiseResponder responder(3, 1);
  env.Reset(responder, std::nullopt);
  CHECK(env.state().moving_average.isZero());
  CHECK(env.state().class_probs[1] == 0.5);
  env.Step(4);
  env.Step(5);
  const Vector expected = (env.responses()[1] + env.responses()[2]) / 2.0;
  CHECK((env.state().moving_average - expected).norm() < 1e-12);
}

TEST_CASE("tau counts confident turns and never decreases") {
  const QuestionCatalog catalog = CompactCatalog(20);
  const ClassifierModel clf = FirstCoordinate(2, 3.0);
  std::mt19937_64 rng(8);
  DialogueEnv env(catalog, clf, EnvConfig{});
  NoiseResponder responder(2, 4, 2.0);
  env.Reset(responder, Label::kNormal);
  CHECK(env.state().tau == 0);
  int expected = 0;
  while (!env.done()) {
    const StepResult r =
        env.Step(RandomAllowed(env.Mask(), rng, false, catalog.goodbye()));
    const double conf = std::max(r.state.class_probs[0], r.state.class_probs[1]);
    if (conf >= 0.65) ++expected;
    CHECK(r.state.tau == expected);
    if (!r.done) CHECK(r.reward == -10.0 - 10.0 * expected);
  }
}

TEST_CASE("episodes end exactly once") {
  const QuestionCatalog catalog = CompactCatalog(20);
  const ClassifierModel clf = FirstCoordinate(2);
  DialogueEnv env(catalog, clf, EnvConfig{});
  NoiseResponder responder(2, 5);
  CHECK_THROWS_AS(env.Step(4), UsageError);

  SUBCASE("turn limit") {
    env.Reset(responder, Label::kMci);
    int steps = 0;
    int dones = 0;
    std::mt19937_64 rng(1);
    while (!env.done()) {
      const StepResult r =
          env.Step(RandomAllowed(env.Mask(), rng, false, catalog.goodbye()));
      ++steps;
      dones += r.done;
      if (r.done) {
        REQUIRE(r.correct.has_value());
        CHECK(r.reward == (*r.correct ? 1000.0 : -500.0));
      }
    }
    CHECK(steps == 35);
    CHECK(dones == 1);
    CHECK(env.history().size() == 36);
    CHECK(env.state().turn == 35);
    CHECK_THROWS_AS(env.Step(4), UsageError);
  }
  SUBCASE("goodbye") {
    env.Reset(responder, Label::kMci);
    CHECK_FALSE(env.Step(4).done);
    const StepResult r = env.Step(catalog.goodbye());
    CHECK(r.done);
    CHECK(env.done());
  }
  SUBCASE("no label means no terminal reward") {
    env.Reset(responder, std::nullopt);
    const StepResult r = env.Step(catalog.goodbye());
    CHECK(r.done);
    CHECK(r.reward == 0.0);
    CHECK_FALSE(r.correct.has_value());
  }
  SUBCASE("reset starts over") {
    env.Reset(responder, Label::kMci);
    env.Step(catalog.goodbye());
    env.Reset(responder, Label::kMci);
    CHECK_FALSE(env.done());
    CHECK(env.history().size() == 1);
  }
}

TEST_CASE("step rejects masked and unknown actions") {
  const QuestionCatalog catalog = CompactCatalog(20);
  const ClassifierModel clf = FirstCoordinate(2);
  DialogueEnv env(catalog, clf, EnvConfig{});
  NoiseResponder responder(2, 5);
  env.Reset(responder, Label::kMci);
  CHECK(env.history().front() == catalog.greeting());
  CHECK_THROWS_AS(env.Step(catalog.greeting()), UsageError);
  CHECK_THROWS_AS(env.Step(2), UsageError);  // confirmation before a topic
  CHECK_THROWS_AS(env.Step(20), UsageError);
  env.Step(4);
  CHECK_NOTHROW(env.Step(2));
}

TEST_CASE("responder and classifier must agree on c") {
  const QuestionCatalog catalog = CompactCatalog(20);
  const ClassifierModel clf = FirstCoordinate(3);
  DialogueEnv env(catalog, clf, EnvConfig{});
  NoiseResponder responder(4, 1);
  CHECK_THROWS_AS(env.Reset(responder, std::nullopt), ShapeError);
}

TEST_CASE("transcript replay") {
  Transcript t{0, 0, {{0, Vector{{1.0}}}, {4, Vector{{2.0}}}, {1, Vector{{3.0}}}}};
  TranscriptResponder replay(t, Vector::Zero(2));
  CHECK(replay.embedding_dim() == 1);
  CHECK(replay.Respond(0)[0] == 1.0);
  CHECK_THROWS_AS(replay.Respond(5), UsageError);
  CHECK(replay.Respond(4)[0] == 2.0);
  CHECK(replay.Respond(1)[0] == 3.0);
  CHECK_THROWS_AS(replay.Respond(1), UsageError);
}

TEST_CASE("env config validation and json") {
  EnvConfig config;
  config.confidence_threshold = 0.4;
  CHECK_THROWS_AS(config.Validate(), UsageError);
  config = EnvConfig{};
  config.max_turns = 0;
  CHECK_THROWS_AS(config.Validate(), UsageError);
  config = EnvConfig{};
  config.max_turns = 12;
  config.include_greeting_in_average = false;
  const EnvConfig back = EnvConfigFromJson(ToJson(config));
  CHECK(back.max_turns == 12);
  CHECK_FALSE(back.include_greeting_in_average);
  CHECK(back.terminal_wrong == -500.0);
}
