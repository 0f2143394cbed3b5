// Command-line front end for the experiment pipeline.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "turnwise/harness.h"

namespace fs = std::filesystem;
using namespace turnwise;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out;
  bool verbose = false;
};

ExperimentConfig ResolveConfig(const GlobalOptions& opts) {
  ExperimentConfig config;
  if (!opts.config_path.empty()) {
    config = LoadExperimentConfig(opts.config_path);
  } else if (!opts.out.empty() && fs::exists(fs::path(opts.out) / "config.json")) {
    config = LoadExperimentConfig(fs::path(opts.out) / "config.json");
  }
  if (opts.seed) config.master_seed = *opts.seed;
  if (!opts.out.empty()) config.output_dir = opts.out;
  return config;
}

PipelineArtifacts Load(const ExperimentConfig& config) {
  return LoadArtifacts(config.output_dir);
}

void PrintSummary(const std::vector<MetricRow>& rows) {
  std::printf("%-12s %-15s %-15s %-15s %-15s\n", "constraint", "auc", "sen",
              "spec", "f1");
  for (const auto& s : Summarize(rows)) {
    std::printf("%-12s %.3f+-%.3f    %.3f+-%.3f    %.3f+-%.3f    %.3f+-%.3f\n",
                s.constraint.c_str(), s.mean.auc, s.std.auc,
                s.mean.sensitivity, s.std.sensitivity, s.mean.specificity,
                s.std.specificity, s.mean.f1, s.std.f1);
  }
}

int Interview(const ExperimentConfig& config, int split,
              std::optional<int> user, const std::string& embedder,
              std::optional<int> budget, const std::string& transcript_out) {
  PipelineArtifacts a = Load(config);
  if (split < 0 || split >= static_cast<int>(a.agents.size())) {
    throw UsageError("no trained agent for split " + std::to_string(split));
  }
  const int t = budget.value_or(config.env.max_turns);
  std::unique_ptr<Responder> responder;
  if (!embedder.empty()) {
    responder = std::make_unique<ProcessEmbedder>(
        embedder, *a.catalog, a.embedding_dim(),
        Vector::Zero(a.fingerprint_dim()));
  } else {
    if (!user) throw UsageError("pass --user or --embedder");
    responder = std::make_unique<SimulatorResponder>(a.simulators.at(*user));
  }
  const InterviewResult r =
      Interview(a.agents[split].online, *a.catalog, a.classifiers[split],
                config.env, *responder, t, std::cout);
  if (!transcript_out.empty()) {
    Transcript tr;
    tr.user_id = user.value_or(-1);
    tr.turns = r.turns;
    WriteTranscripts(transcript_out, std::span(&tr, 1), {});
  }
  return r.aborted ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Question-asking dialogue agents trained against per-user "
               "response simulators"};
  app.require_subcommand(1);
  GlobalOptions opts;
  app.add_option("--config", opts.config_path, "experiment config (JSON)");
  app.add_option("--seed", opts.seed, "master seed (overrides the config)");
  app.add_option("--out", opts.out, "artifact and output directory");
  app.add_flag("-v,--verbose", opts.verbose, "debug logging");

  auto* gen = app.add_subcommand("gen-cohort", "generate a synthetic cohort");
  auto* sim = app.add_subcommand("train-sim", "fit per-user simulators");
  auto* clf = app.add_subcommand("train-clf", "build splits and classifiers");
  auto* agent = app.add_subcommand("train-agent", "train one agent per split");
  auto* eval = app.add_subcommand("eval", "turn-budget evaluation");
  auto* report = app.add_subcommand("report", "summarize metrics.csv");
  auto* run = app.add_subcommand("run", "every stage, then eval");
  auto* interview = app.add_subcommand("interview", "interactive session");
  int split = 0;
  std::optional<int> user;
  std::optional<int> budget;
  std::string embedder;
  std::string transcript_out;
  interview->add_option("--split", split, "split whose agent and classifier to use");
  interview->add_option("--user", user, "answer with this user's simulator");
  interview->add_option("--embedder", embedder,
                        "shell command: reads question lines, writes c floats per line");
  interview->add_option("--budget", budget, "maximum questions before goodbye");
  interview->add_option("--transcript", transcript_out,
                        "write the session transcript here");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(opts.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    ExperimentConfig config = ResolveConfig(opts);
    const fs::path out = config.output_dir;
    if (gen->parsed()) {
      PipelineArtifacts a;
      GenerateCohortStage(config, a);
      SaveArtifacts(out, config, a);
    } else if (sim->parsed()) {
      PipelineArtifacts a = Load(config);
      FitSimulatorsStage(config, a);
      SaveArtifacts(out, config, a);
    } else if (clf->parsed()) {
      PipelineArtifacts a = Load(config);
      FitClassifiersStage(config, a);
      SaveArtifacts(out, config, a);
    } else if (agent->parsed()) {
      PipelineArtifacts a = Load(config);
      TrainAgentsStage(config, a);
      SaveArtifacts(out, config, a);
    } else if (eval->parsed()) {
      PipelineArtifacts a = Load(config);
      const EvaluationResult r = Evaluate(config, a);
      WriteEvaluation(out, config, r, a);
      PrintSummary(r.rows);
    } else if (report->parsed()) {
      std::ifstream in(out / "metrics.csv");
      if (!in) throw std::runtime_error("no metrics.csv in " + out.string());
      std::stringstream ss;
      ss << in.rdbuf();
      PrintSummary(ParseMetricsCsv(ss.str()));
    } else if (run->parsed()) {
      PipelineArtifacts a;
      const EvaluationResult r = RunExperiment(config, a);
      SaveArtifacts(out, config, a);
      WriteEvaluation(out, config, r, a);
      PrintSummary(r.rows);
    } else if (interview->parsed()) {
      return Interview(config, split, user, embedder, budget, transcript_out);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
