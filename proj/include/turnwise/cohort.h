#pragma once

// Synthetic cohorts standing in for a clinical interview corpus: labelled
// users whose response embeddings carry a known amount of class signal on a
// known subset of questions.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/catalog.h"
#include "turnwise/common.h"

namespace turnwise {

struct CohortSpec {
  int n_users = 60;
  double class_balance = 0.5;
  int embedding_dim = 64;
  std::vector<QuestionId> discriminative_ids;
  // Norm of the MCI-vs-NL mean shift on each discriminative question.
  double delta = 2.0;
  // Per-coordinate std of the label-independent per-question base means.
  double sigma_base = 0.1;
  double sigma_user = 0.05;
  double sigma_noise = 0.5;
  int conversations_per_user = 3;
  int min_turns = 30;
  int max_turns = 275;

  void Validate(const QuestionCatalog& catalog) const;
};

nlohmann::json ToJson(const CohortSpec& spec);
CohortSpec CohortSpecFromJson(const nlohmann::json& doc);

struct UserRecord {
  UserId user_id = 0;
  Label label = Label::kNormal;
  Vector offset;
  // Row q is the user's mean response embedding for question q.
  Matrix question_means;
};

struct Cohort {
  std::vector<UserRecord> users;
  Matrix base_means;  // d x c
  Matrix directions;  // d x c, unit rows
};

// Exactly round(n_users * class_balance) users are MCI. Deterministic in seed.
Cohort GenerateCohort(const CohortSpec& spec, const QuestionCatalog& catalog,
                      uint64_t seed);

struct Turn {
  QuestionId question = 0;
  Vector response;
};

struct Transcript {
  UserId user_id = 0;
  int conversation = 0;
  std::vector<Turn> turns;
};

// Greeting first, goodbye last, interior questions uniform over every
// non-greeting, non-goodbye question without immediate repetition. Follow-up
// questions only appear once a topic has been raised.
std::vector<Transcript> GenerateTranscripts(const Cohort& cohort,
                                            const CohortSpec& spec,
                                            const QuestionCatalog& catalog,
                                            uint64_t seed);

// Transcripts of one user, in conversation order.
std::vector<Transcript> TranscriptsOf(std::span<const Transcript> all,
                                      UserId user);

// Mean response over every turn of the given transcripts.
Vector AverageResponse(std::span<const Transcript> transcripts);

struct TranscriptStore {
  std::vector<Transcript> transcripts;
  std::map<UserId, Label> labels;
};

// Line-delimited JSON: {"user_id","conversation","label","turns":[{"q","v"}]}.
void WriteTranscripts(const std::filesystem::path& path,
                      std::span<const Transcript> transcripts,
                      const std::map<UserId, Label>& labels);
TranscriptStore ReadTranscripts(const std::filesystem::path& path);

}  // namespace turnwise
