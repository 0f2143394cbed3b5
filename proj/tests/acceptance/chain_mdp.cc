#include "chain_mdp.h"

#include <cmath>
#include <random>

#include "turnwise/agent.h"

namespace turnwise::acceptance {
namespace {

struct Move {
  int next = 0;
  double reward = 0.0;
  bool done = false;
};

Move Apply(int state, int action) {
  const int next = state + (action == 0 ? -1 : 1);
  if (next == 0) return {next, 5.0, true};
  if (next == kChainStates - 1) return {next, 10.0, true};
  return {next, 0.0, false};
}

Vector Encode(int state) {
  Vector v = Vector::Zero(kChainStates);
  v[state] = 1.0;
  return v;
}

}  // namespace

std::array<int, kChainStates> ChainOptimalPolicy() {
  std::array<double, kChainStates> value{};
  for (int sweep = 0; sweep < 200; ++sweep) {
    for (int s = 1; s < kChainStates - 1; ++s) {
      double best = -1e300;
      for (int a = 0; a < 2; ++a) {
        const Move m = Apply(s, a);
        best = std::max(best, m.reward + (m.done ? 0.0 : kChainGamma * value[m.next]));
      }
      value[s] = best;
    }
  }
  std::array<int, kChainStates> policy{};
  policy.fill(-1);
  for (int s = 1; s < kChainStates - 1; ++s) {
    double q[2];
    for (int a = 0; a < 2; ++a) {
      const Move m = Apply(s, a);
      q[a] = m.reward + (m.done ? 0.0 : kChainGamma * value[m.next]);
    }
    policy[s] = q[1] > q[0] ? 1 : 0;
  }
  return policy;
}

std::array<int, kChainStates> TrainChainPolicy(uint64_t seed) {
  AgentConfig config;
  config.gamma = kChainGamma;
  config.hidden = {16};
  config.learning_rate = 1e-3;
  config.batch_size = 16;
  config.buffer_capacity = 5000;
  config.value_scale = 10.0;
  config.seed = seed;
  const int episodes = 2000;
  const int decay = episodes / 2;
  const int target_sync = 10;
  const int max_steps = 30;

  DqnLearner learner(QNetwork(kChainStates, 2, config), config);
  std::mt19937_64 explore(DeriveSeed(seed, "chain.explore"));
  std::mt19937_64 replay(DeriveSeed(seed, "chain.replay"));
  std::uniform_int_distribution<int> start(1, kChainStates - 2);
  const ActionMask mask = {1, 1};
  for (int episode = 0; episode < episodes; ++episode) {
    const double eps =
        1.0 + (0.05 - 1.0) * std::min(1.0, static_cast<double>(episode) / decay);
    int state = start(explore);
    for (int step = 0; step < max_steps; ++step) {
      const int action =
          SelectAction(learner.online(), Encode(state), mask, eps, explore);
      const Move m = Apply(state, action);
      learner.Store({Encode(state), action, m.reward, Encode(m.next), mask,
                     m.done});
      learner.Update(replay);
      state = m.next;
      if (m.done) break;
    }
    if ((episode + 1) % target_sync == 0) learner.SyncTarget();
  }
  std::array<int, kChainStates> policy{};
  policy.fill(-1);
  for (int s = 1; s < kChainStates - 1; ++s) {
    policy[s] = GreedyAction(learner.online().Values(Encode(s)), mask);
  }
  return policy;
}

}  // namespace turnwise::acceptance
