#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "test_support.h"
#include "turnwise/agent.h"

using namespace turnwise;
using turnwise::testing::RandomVector;
using turnwise::testing::SmallCohortSpec;

namespace {

// Q(s) = scale * relu(W s + b) with a hand-picked 2-state, 3-action layer.
QNetwork HandNet(double scale) {
  nnet::Layer layer;
  layer.weight = Matrix{{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
  layer.bias = Vector{{0.0, 0.5, -1.0}};
  layer.activation = nnet::Activation::kRelu;
  return QNetwork(nnet::DenseNet({layer}), scale);
}

Transcript Scripted(const QuestionCatalog& catalog, int interior, int c,
                    bool goodbye, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Transcript t;
  t.turns.push_back({catalog.greeting(), RandomVector(rng, c)});
  for (int k = 0; k < interior; ++k) {
    t.turns.push_back({4 + k % 16, RandomVector(rng, c)});
  }
  if (goodbye) t.turns.push_back({catalog.goodbye(), RandomVector(rng, c)});
  return t;
}

AgentConfig SmallConfig() {
  AgentConfig config;
  config.hidden = {8};
  config.batch_size = 4;
  config.pretrain_passes = 1;
  config.seed = 3;
  return config;
}

}  // namespace

TEST_CASE("exploration is uniform over unmasked actions") {
  AgentConfig config;
  config.hidden = {4};
  const QNetwork wide(5, 12, config);
  ActionMask mask(12, 1);
  mask[0] = mask[5] = 0;
  std::mt19937_64 rng(99);
  std::map<int, int> counts;
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    ++counts[SelectAction(wide, Vector::Zero(5), mask, 1.0, rng)];
  }
  CHECK(counts.count(0) == 0);
  CHECK(counts.count(5) == 0);
  REQUIRE(counts.size() == 10);
  double chi2 = 0.0;
  const double expected = draws / 10.0;
  for (const auto& [action, n] : counts) {
    chi2 += (n - expected) * (n - expected) / expected;
  }
  // 99.9th percentile of chi-square with 9 degrees of freedom.
  CHECK(chi2 < 27.88);
}

TEST_CASE("greedy choice respects the mask and breaks ties low") {
  const Vector values{{5.0, 1.0, 1.0, 9.0}};
  CHECK(GreedyAction(values, ActionMask{1, 1, 1, 1}) == 3);
  CHECK(GreedyAction(values, ActionMask{1, 1, 1, 0}) == 0);
  CHECK(GreedyAction(values, ActionMask{0, 1, 1, 0}) == 1);
  CHECK(GreedyAction(Vector::Zero(4), ActionMask{0, 0, 1, 1}) == 2);
  CHECK_THROWS_AS(GreedyAction(values, ActionMask{0, 0, 0, 0}),
                  std::logic_error);
}

TEST_CASE("masked actions are never chosen") {
  const QNetwork q = HandNet(1.0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const Vector s = RandomVector(rng, 2, 3.0);
    const double eps = (i % 11) / 10.0;
    // Action 2 often has the largest value; mask it out.
    const int a = SelectAction(q, s, ActionMask{1, 1, 0}, eps, rng);
    CHECK(a != 2);
  }
  const Vector s{{2.0, 2.0}};
  const Vector masked = MaskedQ(q, s, ActionMask{1, 0, 1});
  CHECK(masked[0] == 2.0);
  CHECK(masked[1] == 0.0);
  CHECK(masked[2] == 3.0);
  CHECK_THROWS_AS(MaskedQ(q, s, ActionMask{1, 1}), ShapeError);
}

TEST_CASE("q-network outputs are scaled relu units") {
  const QNetwork q = HandNet(10.0);
  const Vector v = q.Values(Vector{{-1.0, 2.0}});
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 25.0);
  CHECK(v[2] == 0.0);
  nnet::Layer linear;
  linear.weight = Matrix::Identity(2, 2);
  linear.bias = Vector::Zero(2);
  CHECK_THROWS_AS(QNetwork(nnet::DenseNet({linear}), 1.0), ValidationError);

  AgentConfig config;
  config.hidden = {6, 5};
  const QNetwork fresh(7, 4, config);
  CHECK(fresh.state_dim() == 7);
  CHECK(fresh.num_actions() == 4);
  CHECK(fresh.net().layers().back().bias == Vector::Constant(4, 0.5));
  for (const auto& layer : fresh.net().layers()) {
    CHECK(layer.activation == nnet::Activation::kRelu);
  }
  CHECK(fresh.Values(Vector::Zero(7)) == Vector::Constant(4, 500.0));
}

TEST_CASE("td target by hand") {
  const QNetwork target = HandNet(2.0);
  Transition t;
  t.reward = -30.0;
  t.next_state = Vector{{1.0, 3.0}};
  // Values: 2 * relu([1, 3.5, 3]) = [2, 7, 6].
  t.next_mask = {1, 1, 1};
  CHECK(TdTarget(t, target, 0.9) == doctest::Approx(-30.0 + 0.9 * 7.0));
  t.next_mask = {1, 0, 1};
  CHECK(TdTarget(t, target, 0.9) == doctest::Approx(-30.0 + 0.9 * 6.0));
  t.done = true;
  CHECK(TdTarget(t, target, 0.9) == -30.0);
}

TEST_CASE("replay buffer keeps the newest transitions in order") {
  ReplayBuffer buffer(3);
  CHECK(buffer.empty());
  for (int i = 0; i < 5; ++i) {
    Transition t;
    t.action = i;
    buffer.Add(t);
    CHECK(buffer.size() == static_cast<size_t>(std::min(i + 1, 3)));
  }
  CHECK(buffer.at(0).action == 2);
  CHECK(buffer.at(1).action == 3);
  CHECK(buffer.at(2).action == 4);
  CHECK_THROWS(buffer.at(3));
  std::mt19937_64 rng(4);
  std::map<int, int> seen;
  for (const Transition* t : buffer.Sample(3000, rng)) ++seen[t->action];
  CHECK(seen.size() == 3);
  for (const auto& [a, n] : seen) CHECK(std::abs(n - 1000) < 120);
  CHECK_THROWS_AS(ReplayBuffer(0), UsageError);
}

TEST_CASE("learner loss and target sync") {
  AgentConfig config = SmallConfig();
  config.gamma = 0.5;
  DqnLearner learner(QNetwork(2, 3, config), config);
  std::mt19937_64 rng(2);
  CHECK_FALSE(learner.Update(rng).has_value());
  CHECK(learner.target() == learner.online());

  std::vector<Transition> batch(4);
  for (int j = 0; j < 4; ++j) {
    batch[j].state = RandomVector(rng, 2);
    batch[j].next_state = RandomVector(rng, 2);
    batch[j].action = j % 3;
    batch[j].reward = 100.0 * j;
    batch[j].next_mask = {1, 0, 1};
    batch[j].done = j == 3;
  }
  double expected = 0.0;
  for (const Transition& t : batch) {
    const double y = TdTarget(t, learner.target(), 0.5);
    const double q = learner.online().Values(t.state)[t.action];
    expected += (y - q) * (y - q);
  }
  expected /= 2.0 * 4.0;
  std::vector<const Transition*> ptrs;
  for (const Transition& t : batch) ptrs.push_back(&t);
  const double loss = learner.UpdateOn(ptrs);
  CHECK(loss == doctest::Approx(expected));
  CHECK_FALSE(learner.target() == learner.online());
  learner.SyncTarget();
  CHECK(learner.target() == learner.online());

  Transition wrong;
  wrong.state = Vector::Zero(3);
  wrong.next_state = Vector::Zero(2);
  wrong.next_mask = {1, 1, 1};
  CHECK_THROWS_AS(learner.Store(wrong), ShapeError);
}

TEST_CASE("repeated updates fit a fixed batch") {
  AgentConfig config = SmallConfig();
  config.gamma = 0.0;
  config.learning_rate = 1e-2;
  DqnLearner learner(QNetwork(2, 2, config), config);
  std::mt19937_64 rng(6);
  std::vector<Transition> batch(6);
  std::vector<const Transition*> ptrs;
  for (int j = 0; j < 6; ++j) {
    batch[j].state = RandomVector(rng, 2);
    batch[j].next_state = batch[j].state;
    batch[j].action = j % 2;
    batch[j].reward = 200.0 + 50.0 * j;
    batch[j].next_mask = {1, 1};
    batch[j].done = true;
    ptrs.push_back(&batch[j]);
  }
  const double first = learner.UpdateOn(ptrs);
  double last = first;
  for (int i = 0; i < 500; ++i) last = learner.UpdateOn(ptrs);
  CHECK(last < 0.05 * first);
}

TEST_CASE("pretraining produces one transition per replayed question") {
  const QuestionCatalog catalog = CompactCatalog(20);
  const ClassifierModel clf(Vector::Ones(3), 0.0, ClassifierKind::kLogistic,
                            0.0);
  const EnvConfig env;

  DqnAgent agent(catalog, 3, 2, SmallConfig());
  const Transcript exact = Scripted(catalog, 35, 3, false, 1);
  const Transcript longer = Scripted(catalog, 50, 3, true, 2);
  const Transcript early = Scripted(catalog, 9, 3, true, 3);
  std::vector<CorpusEpisode> corpus = {
      {&exact, Vector::Zero(2), Label::kMci},
      {&longer, Vector::Zero(2), Label::kNormal},
      {&early, Vector::Zero(2), Label::kMci}};
  CHECK(agent.PretrainFromCorpus(std::span(corpus).first(1), clf, env) == 35);
  CHECK(agent.learner().buffer().size() == 35);
  CHECK(agent.learner().buffer().at(34).done);
  CHECK(agent.target() == agent.online());

  DqnAgent second(catalog, 3, 2, SmallConfig());
  CHECK(second.PretrainFromCorpus(corpus, clf, env) == 35 + 35 + 10);
  int terminal = 0;
  for (size_t i = 0; i < second.learner().buffer().size(); ++i) {
    terminal += second.learner().buffer().at(i).done;
  }
  CHECK(terminal == 3);
}

TEST_CASE("an empty corpus leaves the network untouched") {
  const QuestionCatalog catalog = CompactCatalog(20);
  const ClassifierModel clf(Vector::Ones(3), 0.0, ClassifierKind::kLogistic,
                            0.0);
  DqnAgent agent(catalog, 3, 2, SmallConfig());
  const QNetwork before = agent.online();
  CHECK(agent.PretrainFromCorpus({}, clf, EnvConfig{}) == 0);
  CHECK(agent.online() == before);
  CHECK(agent.learner().buffer().empty());
}

TEST_CASE("epsilon schedule") {
  const QuestionCatalog catalog = CompactCatalog(20);
  AgentConfig config = SmallConfig();
  DqnAgent agent(catalog, 3, 2, config);
  CHECK(agent.EpsilonAt(0, 100) == 1.0);
  CHECK(agent.EpsilonAt(25, 100) == doctest::Approx(0.525));
  CHECK(agent.EpsilonAt(50, 100) == doctest::Approx(0.05));
  CHECK(agent.EpsilonAt(99, 100) == doctest::Approx(0.05));
  config.epsilon_decay_episodes = 10;
  DqnAgent fixed(catalog, 3, 2, config);
  CHECK(fixed.EpsilonAt(5, 100) == doctest::Approx(0.525));
}

TEST_CASE("training is deterministic and checkpoints round trip") {
  const QuestionCatalog catalog = CompactCatalog(20);
  const CohortSpec spec = SmallCohortSpec();
  const Cohort cohort = GenerateCohort(spec, catalog, 1);
  SimulatorConfig sim_config;
  sim_config.hidden = 4;
  std::vector<SimulatorModel> sims;
  for (int u = 0; u < 2; ++u) {
    sims.push_back(InitialSimulator(u, catalog.size(), spec.embedding_dim,
                                    sim_config));
  }
  const std::vector<TrainingUser> users = {{0, &sims[0], cohort.users[0].label},
                                           {1, &sims[1], cohort.users[1].label}};
  const ClassifierModel clf(Vector::Ones(spec.embedding_dim), 0.0,
                            ClassifierKind::kLogistic, 0.0);
  AgentConfig config = SmallConfig();
  config.episodes_per_user = 3;
  EnvConfig env;
  env.max_turns = 6;
  auto run = [&] {
    DqnAgent agent(catalog, spec.embedding_dim, 4, config);
    const auto curve = agent.Train(users, clf, env);
    return std::make_pair(agent.online(), curve);
  };
  const auto [net_a, curve_a] = run();
  const auto [net_b, curve_b] = run();
  CHECK(net_a == net_b);
  REQUIRE(curve_a.size() == 6);
  for (size_t i = 0; i < curve_a.size(); ++i) {
    CHECK(curve_a[i].episode_return == curve_b[i].episode_return);
    CHECK(curve_a[i].length <= 6);
  }

  DqnAgent agent(catalog, spec.embedding_dim, 4, config);
  agent.Train(users, clf, env);
  const DqnAgent back = AgentFromCheckpoint(
      catalog, nlohmann::json::parse(CheckpointToJson(agent).dump()));
  CHECK(back.online() == agent.online());
  CHECK(back.target() == agent.target());
  CHECK(back.config().gamma == agent.config().gamma);
}

TEST_CASE("agent config validation") {
  AgentConfig config;
  config.gamma = 1.5;
  CHECK_THROWS_AS(config.Validate(), UsageError);
  config = AgentConfig{};
  config.epsilon_end = 0.5;
  config.epsilon_start = 0.2;
  CHECK_THROWS_AS(config.Validate(), UsageError);
  config = AgentConfig{};
  config.hidden = {0};
  CHECK_THROWS_AS(config.Validate(), UsageError);
  const AgentConfig back = AgentConfigFromJson(ToJson(SmallConfig()));
  CHECK(back.hidden == std::vector<int>{8});
  CHECK(back.seed == 3);
}
