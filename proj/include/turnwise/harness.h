#pragma once

// Experiment orchestration: simulators, split classifiers and agents, turn
// budget evaluation, transcript baselines, question rankings, persistence and
// interactive interviews.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/agent.h"
#include "turnwise/catalog.h"
#include "turnwise/classifier.h"
#include "turnwise/cohort.h"
#include "turnwise/common.h"
#include "turnwise/env.h"
#include "turnwise/metrics.h"
#include "turnwise/simulator.h"

namespace turnwise {

struct ExperimentConfig {
  // "default", "compact:<d>" or a path to a catalog TSV.
  std::string catalog = "default";
  CohortSpec cohort;
  SplitPlan splits;
  SimulatorConfig simulator;
  ClassifierConfig classifier;
  AgentConfig agent;
  EnvConfig env;
  std::vector<int> turn_constraints = {1, 3, 5, 10, 15, 20, 25, 30, 35};
  std::filesystem::path output_dir = "out";
  uint64_t master_seed = 0;
  // Transcript baseline from every conversation instead of the first.
  bool corpus_pool = false;
  bool leave_one_out = true;

  void Validate() const;
};

nlohmann::json ToJson(const ExperimentConfig& config);
ExperimentConfig ExperimentConfigFromJson(const nlohmann::json& doc);
ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path);

// The catalog named by `spec` (see ExperimentConfig::catalog).
QuestionCatalog ResolveCatalog(const std::string& spec);

enum class LabelPurpose {
  kStratification,
  kClassifierFit,
  kPretraining,
  kAgentTraining,
  kEvaluation,
};
std::string_view LabelPurposeName(LabelPurpose purpose);

struct LabelAccess {
  int split = -1;
  UserId user_id = 0;
  LabelPurpose purpose = LabelPurpose::kEvaluation;
};

// Sole gateway to the user labels; records every read with its purpose.
class LabelLedger {
 public:
  LabelLedger() = default;
  explicit LabelLedger(std::map<UserId, Label> labels);

  Label Read(UserId user, LabelPurpose purpose, int split);
  const std::vector<LabelAccess>& accesses() const { return accesses_; }
  std::vector<UserId> users() const;
  size_t size() const { return labels_.size(); }
  // Unlogged copy for persistence.
  const std::map<UserId, Label>& raw() const { return labels_; }

 private:
  std::map<UserId, Label> labels_;
  std::vector<LabelAccess> accesses_;
};

struct AgentSnapshot {
  QNetwork online;
  QNetwork target;
  AgentConfig config;
};

struct PipelineArtifacts {
  std::shared_ptr<const QuestionCatalog> catalog;
  std::vector<Transcript> transcripts;
  LabelLedger labels;
  // Ground truth of a synthetic cohort; empty for loaded corpora.
  std::vector<QuestionId> discriminative_ids;
  std::map<UserId, SimulatorModel> simulators;
  std::map<UserId, double> loo_mse;
  std::vector<Split> splits;
  std::vector<ClassifierModel> classifiers;
  std::vector<AgentSnapshot> agents;
  std::vector<std::vector<LearningCurveRow>> learning_curves;

  int embedding_dim() const;
  int fingerprint_dim() const;
  // Users in ascending id order; split indices refer to this order.
  std::vector<UserId> user_order() const;
};

// Pipeline stages; each fills in its part of `artifacts`.
void GenerateCohortStage(const ExperimentConfig& config,
                         PipelineArtifacts& artifacts);
void FitSimulatorsStage(const ExperimentConfig& config,
                        PipelineArtifacts& artifacts);
// Builds the splits too.
void FitClassifiersStage(const ExperimentConfig& config,
                         PipelineArtifacts& artifacts);
void TrainAgentsStage(const ExperimentConfig& config,
                      PipelineArtifacts& artifacts);

struct RolloutStep {
  int turn = 0;
  QuestionId action = 0;
  double reward = 0.0;
  double p_mci = 0.0;
  int tau = 0;
  bool done = false;
  bool forced = false;
};

struct Rollout {
  int split = -1;
  UserId user_id = 0;
  int budget = 0;
  std::vector<RolloutStep> steps;
  double p_mci = 0.0;
};

// Greedy masked policy for at most `budget` questions; goodbye is forced
// after the budget if the policy has not chosen it.
Rollout GreedyRollout(const QNetwork& policy, const QuestionCatalog& catalog,
                      const ClassifierModel& classifier,
                      const EnvConfig& env_config, Responder& responder,
                      int budget);

struct MetricRow {
  int split = 0;
  std::string constraint;
  BinaryMetrics metrics;
};

struct CorpusBaseline {
  BinaryMetrics metrics;
  std::vector<double> p_mci;
  // Users whose transcript held fewer than k questions.
  std::vector<UserId> short_users;
};

// Classifies each test user's average of the first k questions (greeting and
// goodbye excluded) of their first transcript, or of all transcripts pooled.
CorpusBaseline CorpusAtK(std::span<const Transcript> transcripts,
                         std::span<const UserId> test_users,
                         std::span<const Label> test_labels,
                         const QuestionCatalog& catalog,
                         const ClassifierModel& classifier, int k, bool pool);

struct TurnWindow {
  int first = 1;
  int last = 5;
};

std::vector<TurnWindow> DefaultWindows();

struct WindowRanking {
  TurnWindow window;
  // (question, count) by descending count, ties by ascending id.
  std::vector<std::pair<QuestionId, int>> ranked;
};

// Counts the questions asked at turns within each window.
std::vector<WindowRanking> PolicyReport(std::span<const Rollout> rollouts,
                                        std::span<const TurnWindow> windows);

struct EvaluationResult {
  std::vector<MetricRow> rows;
  std::vector<Rollout> rollouts;
  // Per split, rankings over that split's largest-budget rollouts.
  std::vector<std::vector<WindowRanking>> rankings;
  std::vector<WindowRanking> pooled_rankings;
  int corpus_short_users = 0;
};

EvaluationResult Evaluate(const ExperimentConfig& config,
                          PipelineArtifacts& artifacts);

// Every stage followed by evaluation.
EvaluationResult RunExperiment(const ExperimentConfig& config,
                               PipelineArtifacts& artifacts);

struct ConstraintSummary {
  std::string constraint;
  int n = 0;
  BinaryMetrics mean;
  BinaryMetrics std;  // sample standard deviation over splits
};

std::vector<ConstraintSummary> Summarize(std::span<const MetricRow> rows);

std::string MetricsCsv(std::span<const MetricRow> rows);
std::vector<MetricRow> ParseMetricsCsv(const std::string& text);
std::string RankingsCsv(const EvaluationResult& result,
                        const QuestionCatalog& catalog);
std::string TracesJsonl(std::span<const Rollout> rollouts);
nlohmann::json BuildReport(const ExperimentConfig& config,
                           const EvaluationResult& result,
                           const PipelineArtifacts& artifacts);

// Writes metrics.csv, policy_rankings.csv, traces.jsonl and report.json.
void WriteEvaluation(const std::filesystem::path& dir,
                     const ExperimentConfig& config,
                     const EvaluationResult& result,
                     const PipelineArtifacts& artifacts);

// Artifact files under `dir` plus manifest.json with the master seed and a
// content hash per file.
void SaveArtifacts(const std::filesystem::path& dir,
                   const ExperimentConfig& config,
                   const PipelineArtifacts& artifacts);
// Verifies hashes and cross-component dimensions.
PipelineArtifacts LoadArtifacts(const std::filesystem::path& dir,
                                ExperimentConfig* config = nullptr);

// Embedder sidecar: writes one question text per line to a child process and
// reads back one line of space-separated floats.
class ProcessEmbedder : public Responder {
 public:
  ProcessEmbedder(const std::string& command, const QuestionCatalog& catalog,
                  int embedding_dim, Vector fingerprint);
  ~ProcessEmbedder() override;
  ProcessEmbedder(const ProcessEmbedder&) = delete;
  ProcessEmbedder& operator=(const ProcessEmbedder&) = delete;

  Vector Respond(QuestionId question) override;
  Vector Fingerprint() const override { return fingerprint_; }
  int embedding_dim() const override { return embedding_dim_; }

 private:
  const QuestionCatalog* catalog_;
  int embedding_dim_;
  Vector fingerprint_;
  int pid_ = -1;
  FILE* to_child_ = nullptr;
  FILE* from_child_ = nullptr;
};

// Parses one sidecar reply; throws ParseError unless it holds exactly
// `embedding_dim` finite numbers.
Vector ParseEmbeddingLine(const std::string& line, int embedding_dim);

struct InterviewResult {
  std::vector<Turn> turns;
  double p_mci = 0.5;
  std::optional<Label> prediction;
  bool aborted = false;
  std::string abort_reason;
};

// Asks questions greedily, printing each question with the running P(MCI).
// A responder failure ends the session with the partial transcript.
InterviewResult Interview(const QNetwork& policy,
                          const QuestionCatalog& catalog,
                          const ClassifierModel& classifier,
                          const EnvConfig& env_config, Responder& responder,
                          int budget, std::ostream& out);

}  // namespace turnwise
