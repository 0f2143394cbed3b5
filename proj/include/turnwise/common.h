#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace turnwise {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using QuestionId = int;
using UserId = int;

enum class Label : int { kNormal = 0, kMci = 1 };

inline int ToInt(Label label) { return static_cast<int>(label); }
Label LabelFromInt(int value);

// Incompatible tensor/vector dimensions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated a documented precondition.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file or document.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Artifacts that load fine individually but disagree with each other.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Derives an independent 64-bit seed for a named stream from a base seed.
// Stable across platforms (splitmix64 finalizer over an FNV-1a tag hash).
uint64_t DeriveSeed(uint64_t base, std::string_view stream, uint64_t index = 0);

// FNV-1a 64-bit hash, used for artifact fingerprints in manifests.
uint64_t Fnv1a64(std::string_view bytes);

std::string HexU64(uint64_t value);

}  // namespace turnwise
