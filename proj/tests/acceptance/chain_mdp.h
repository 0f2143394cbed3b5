#pragma once

// Five-state deterministic chain used to sanity-check the DQN learner.

#include <array>
#include <cstdint>

namespace turnwise::acceptance {

// States 0..4; 0 and 4 are terminal. Action 0 moves left, 1 moves right.
// Entering state 0 pays 5, entering state 4 pays 10, every other move pays 0.
inline constexpr int kChainStates = 5;
inline constexpr double kChainGamma = 0.7;

// Optimal action for each non-terminal state (index 1..3) by value iteration.
std::array<int, kChainStates> ChainOptimalPolicy();

// Greedy action per non-terminal state after training a DQN with `seed`.
std::array<int, kChainStates> TrainChainPolicy(uint64_t seed);

}  // namespace turnwise::acceptance
