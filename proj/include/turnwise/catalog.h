#pragma once

// The interviewer's question catalog: the agent's discrete action space.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "turnwise/common.h"

namespace turnwise {

enum class Category {
  kGreetings,
  kActivity,
  kLivingSituation,
  kTravel,
  kEntertainment,
  kSocial,
  kPicture,
  kTech,
  kOccupation,
  kHobbies,
  kFamily,
  kPets,
  kConfirmation,
  kClarification,
  kGoodbye,
  kUnspecified,
};

inline constexpr int kNumCategories = 16;

std::string_view CategoryName(Category category);
Category CategoryFromName(std::string_view name);

// Raising any of these unlocks follow-up (confirmation/clarification) questions.
bool IsTopicCategory(Category category);
// Follow-up categories, masked until a topic has been raised.
bool IsFollowUpCategory(Category category);

struct Question {
  QuestionId id = 0;
  Category category = Category::kUnspecified;
  std::string text;
};

// 1 = selectable, 0 = masked.
using ActionMask = std::vector<uint8_t>;

class QuestionCatalog {
 public:
  // Validates dense unique ids and the presence of a greeting and a goodbye.
  explicit QuestionCatalog(std::vector<Question> questions);

  int size() const { return static_cast<int>(questions_.size()); }
  const std::vector<Question>& questions() const { return questions_; }
  const Question& question(QuestionId id) const;
  Category category(QuestionId id) const { return question(id).category; }

  // The pinned turn-0 action and the canonical closing action.
  QuestionId greeting() const { return greeting_; }
  QuestionId goodbye() const { return goodbye_; }
  bool IsGoodbye(QuestionId id) const;
  bool IsGreeting(QuestionId id) const;
  bool Contains(QuestionId id) const { return id >= 0 && id < size(); }

  std::vector<QuestionId> InCategory(Category category) const;

  Vector OneHot(QuestionId id) const;

  // phi_t: follow-up questions are 0 while `history` holds no topic question.
  ActionMask MaskVector(std::span<const QuestionId> history) const;

  // phi_t with greetings also removed; greetings are reserved for turn 0.
  ActionMask AgentMask(std::span<const QuestionId> history) const;

  std::string ToTsv() const;

 private:
  void CheckId(QuestionId id) const;

  std::vector<Question> questions_;
  QuestionId greeting_ = -1;
  QuestionId goodbye_ = -1;
};

// Tab-separated `id<TAB>category<TAB>text`, one question per line. Blank lines
// and lines starting with '#' are skipped.
QuestionCatalog ParseCatalog(std::string_view text,
                             std::string_view source = "<catalog>");
QuestionCatalog LoadCatalog(const std::filesystem::path& path);

// The built-in 107-question catalog.
const QuestionCatalog& DefaultCatalog();

// A d-question subset of the default catalog for desk-scale experiments:
// greeting, goodbye, one confirmation, one clarification, then topic and
// comment questions drawn round-robin across categories. Requires 4 <= d <= 107.
QuestionCatalog CompactCatalog(int d);

}  // namespace turnwise
