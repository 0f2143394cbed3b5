#include "turnwise/harness.h"

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace turnwise {

namespace fs = std::filesystem;

void ExperimentConfig::Validate() const {
  env.Validate();
  agent.Validate();
  if (turn_constraints.empty()) throw UsageError("turn_constraints is empty");
  for (size_t i = 0; i < turn_constraints.size(); ++i) {
    const int t = turn_constraints[i];
    if (t < 1 || t > env.max_turns) {
      throw UsageError("turn constraint " + std::to_string(t) +
                       " outside [1, " + std::to_string(env.max_turns) + "]");
    }
    if (i > 0 && t <= turn_constraints[i - 1]) {
      throw UsageError("turn_constraints must be strictly increasing");
    }
  }
  if (splits.n_splits < 1) throw UsageError("n_splits must be >= 1");
}

nlohmann::json ToJson(const ExperimentConfig& config) {
  nlohmann::json splits = ToJson(config.splits);
  splits.erase("seed");
  return {{"catalog", config.catalog},
          {"cohort", ToJson(config.cohort)},
          {"splits", splits},
          {"simulator", ToJson(config.simulator)},
          {"classifier", ToJson(config.classifier)},
          {"agent", ToJson(config.agent)},
          {"env", ToJson(config.env)},
          {"turn_constraints", config.turn_constraints},
          {"output_dir", config.output_dir.string()},
          {"master_seed", config.master_seed},
          {"corpus_pool", config.corpus_pool},
          {"leave_one_out", config.leave_one_out}};
}

ExperimentConfig ExperimentConfigFromJson(const nlohmann::json& doc) {
  ExperimentConfig c;
  try {
    c.catalog = doc.value("catalog", c.catalog);
    if (doc.contains("cohort")) c.cohort = CohortSpecFromJson(doc["cohort"]);
    if (doc.contains("splits")) c.splits = SplitPlanFromJson(doc["splits"]);
    if (doc.contains("simulator")) {
      c.simulator = SimulatorConfigFromJson(doc["simulator"]);
    }
    if (doc.contains("classifier")) {
      c.classifier = ClassifierConfigFromJson(doc["classifier"]);
    }
    if (doc.contains("agent")) c.agent = AgentConfigFromJson(doc["agent"]);
    if (doc.contains("env")) c.env = EnvConfigFromJson(doc["env"]);
    c.turn_constraints = doc.value("turn_constraints", c.turn_constraints);
    c.output_dir = doc.value("output_dir", c.output_dir.string());
    c.master_seed = doc.value("master_seed", c.master_seed);
    c.corpus_pool = doc.value("corpus_pool", c.corpus_pool);
    c.leave_one_out = doc.value("leave_one_out", c.leave_one_out);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed experiment config: ") + e.what());
  }
  c.Validate();
  return c;
}

namespace {

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

nlohmann::json ReadJson(const fs::path& path) {
  try {
    return nlohmann::json::parse(ReadFile(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string Num(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

}  // namespace

ExperimentConfig LoadExperimentConfig(const fs::path& path) {
  return ExperimentConfigFromJson(ReadJson(path));
}

QuestionCatalog ResolveCatalog(const std::string& spec) {
  if (spec == "default") return DefaultCatalog();
  const std::string prefix = "compact:";
  if (spec.rfind(prefix, 0) == 0) {
    const std::string n = spec.substr(prefix.size());
    char* end = nullptr;
    const long d = std::strtol(n.c_str(), &end, 10);
    if (n.empty() || *end != '\0') {
      throw UsageError("bad catalog size in '" + spec + "'");
    }
    return CompactCatalog(static_cast<int>(d));
  }
  return LoadCatalog(spec);
}

std::string_view LabelPurposeName(LabelPurpose purpose) {
  switch (purpose) {
    case LabelPurpose::kStratification:
      return "stratification";
    case LabelPurpose::kClassifierFit:
      return "classifier_fit";
    case LabelPurpose::kPretraining:
      return "pretraining";
    case LabelPurpose::kAgentTraining:
      return "agent_training";
    case LabelPurpose::kEvaluation:
      return "evaluation";
  }
  return "unknown";
}

LabelLedger::LabelLedger(std::map<UserId, Label> labels)
    : labels_(std::move(labels)) {}

Label LabelLedger::Read(UserId user, LabelPurpose purpose, int split) {
  const auto it = labels_.find(user);
  if (it == labels_.end()) {
    throw UsageError("no label for user " + std::to_string(user));
  }
  accesses_.push_back({split, user, purpose});
  return it->second;
}

std::vector<UserId> LabelLedger::users() const {
  std::vector<UserId> ids;
  for (const auto& [id, label] : labels_) ids.push_back(id);
  return ids;
}

int PipelineArtifacts::embedding_dim() const {
  if (!simulators.empty()) return simulators.begin()->second.embedding_dim();
  for (const auto& t : transcripts) {
    if (!t.turns.empty()) return static_cast<int>(t.turns[0].response.size());
  }
  throw UsageError("no transcripts or simulators loaded");
}

int PipelineArtifacts::fingerprint_dim() const {
  if (simulators.empty()) throw UsageError("simulators have not been fitted");
  return simulators.begin()->second.hidden();
}

std::vector<UserId> PipelineArtifacts::user_order() const {
  return labels.users();
}

void GenerateCohortStage(const ExperimentConfig& config,
                         PipelineArtifacts& artifacts) {
  auto catalog =
      std::make_shared<const QuestionCatalog>(ResolveCatalog(config.catalog));
  const Cohort cohort = GenerateCohort(config.cohort, *catalog,
                                       DeriveSeed(config.master_seed, "cohort"));
  artifacts = PipelineArtifacts{};
  artifacts.catalog = catalog;
  artifacts.transcripts = GenerateTranscripts(
      cohort, config.cohort, *catalog,
      DeriveSeed(config.master_seed, "transcripts"));
  std::map<UserId, Label> labels;
  for (const auto& user : cohort.users) labels[user.user_id] = user.label;
  artifacts.labels = LabelLedger(std::move(labels));
  artifacts.discriminative_ids = config.cohort.discriminative_ids;
}

void FitSimulatorsStage(const ExperimentConfig& config,
                        PipelineArtifacts& artifacts) {
  if (!artifacts.catalog) throw UsageError("cohort stage has not run");
  const int d = artifacts.catalog->size();
  const int c = artifacts.embedding_dim();
  artifacts.simulators.clear();
  artifacts.loo_mse.clear();
  for (UserId user : artifacts.user_order()) {
    const auto mine = TranscriptsOf(artifacts.transcripts, user);
    SimulatorConfig sim_config = config.simulator;
    sim_config.train.seed = DeriveSeed(config.master_seed, "simulator", user);
    try {
      artifacts.simulators.emplace(
          user, FitUserSimulator(user, mine, d, c, sim_config));
      if (config.leave_one_out) {
        if (auto mse = LeaveOneOutMse(mine, d, c, sim_config)) {
          artifacts.loo_mse[user] = *mse;
        }
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("simulator for user " + std::to_string(user) +
                               ": " + e.what());
    }
  }
  spdlog::info("fitted {} simulators", artifacts.simulators.size());
}

namespace {

std::vector<UserId> Select(const std::vector<UserId>& order,
                           const std::vector<int>& idx) {
  std::vector<UserId> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(order.at(i));
  return out;
}

Vector FullAverage(std::span<const Transcript> transcripts, UserId user) {
  const auto mine = TranscriptsOf(transcripts, user);
  if (mine.empty()) {
    throw UsageError("user " + std::to_string(user) + " has no transcripts");
  }
  return AverageResponse(mine);
}

}  // namespace

void FitClassifiersStage(const ExperimentConfig& config,
                         PipelineArtifacts& artifacts) {
  if (!artifacts.catalog) throw UsageError("cohort stage has not run");
  const auto order = artifacts.user_order();
  std::vector<Label> strata;
  for (UserId user : order) {
    strata.push_back(
        artifacts.labels.Read(user, LabelPurpose::kStratification, -1));
  }
  SplitPlan plan = config.splits;
  plan.seed = DeriveSeed(config.master_seed, "splits");
  artifacts.splits = StratifiedShuffleSplit(strata, plan);
  artifacts.classifiers.clear();
  for (size_t s = 0; s < artifacts.splits.size(); ++s) {
    std::vector<Vector> features;
    std::vector<Label> labels;
    for (UserId user : Select(order, artifacts.splits[s].train)) {
      features.push_back(FullAverage(artifacts.transcripts, user));
      labels.push_back(artifacts.labels.Read(
          user, LabelPurpose::kClassifierFit, static_cast<int>(s)));
    }
    artifacts.classifiers.push_back(
        FitClassifier(features, labels, config.classifier));
  }
}

void TrainAgentsStage(const ExperimentConfig& config,
                      PipelineArtifacts& artifacts) {
  if (artifacts.simulators.empty()) {
    throw UsageError("simulator stage has not run");
  }
  if (artifacts.classifiers.size() != artifacts.splits.size() ||
      artifacts.splits.empty()) {
    throw UsageError("classifier stage has not run");
  }
  const auto order = artifacts.user_order();
  const int c = artifacts.embedding_dim();
  const int h = artifacts.fingerprint_dim();
  artifacts.agents.clear();
  artifacts.learning_curves.clear();
  for (size_t s = 0; s < artifacts.splits.size(); ++s) {
    const int split = static_cast<int>(s);
    AgentConfig agent_config = config.agent;
    agent_config.seed = DeriveSeed(config.master_seed, "agent", s);
    DqnAgent agent(*artifacts.catalog, c, h, agent_config);
    const auto train_users = Select(order, artifacts.splits[s].train);

    std::vector<CorpusEpisode> corpus;
    std::vector<TrainingUser> users;
    for (UserId user : train_users) {
      const SimulatorModel& sim = artifacts.simulators.at(user);
      for (const auto& t : artifacts.transcripts) {
        if (t.user_id != user) continue;
        corpus.push_back({&t, sim.Fingerprint(),
                          artifacts.labels.Read(
                              user, LabelPurpose::kPretraining, split)});
      }
      users.push_back({user, &sim,
                       artifacts.labels.Read(
                           user, LabelPurpose::kAgentTraining, split)});
    }
    const size_t pretrain =
        agent.PretrainFromCorpus(corpus, artifacts.classifiers[s], config.env);
    auto curve = agent.Train(users, artifacts.classifiers[s], config.env);
    spdlog::info("split {}: {} pretraining transitions, {} episodes", s,
                 pretrain, curve.size());
    artifacts.agents.push_back(
        {agent.online(), agent.target(), agent.config()});
    artifacts.learning_curves.push_back(std::move(curve));
  }
}

Rollout GreedyRollout(const QNetwork& policy, const QuestionCatalog& catalog,
                      const ClassifierModel& classifier,
                      const EnvConfig& env_config, Responder& responder,
                      int budget) {
  if (budget < 1) throw UsageError("turn budget must be >= 1");
  EnvConfig config = env_config;
  config.max_turns = budget + 1;
  DialogueEnv env(catalog, classifier, config);
  env.Reset(responder, std::nullopt);
  Rollout rollout;
  rollout.budget = budget;
  while (!env.done()) {
    RolloutStep record;
    const ActionMask mask = env.Mask();
    if (env.state().turn >= budget) {
      record.action = catalog.goodbye();
      record.forced = true;
    } else {
      record.action =
          GreedyAction(MaskedQ(policy, Flatten(env.state()), mask), mask);
    }
    const StepResult step = env.Step(record.action);
    record.turn = step.state.turn;
    record.reward = step.reward;
    record.p_mci = step.state.class_probs[1];
    record.tau = step.state.tau;
    record.done = step.done;
    rollout.steps.push_back(record);
  }
  rollout.p_mci = env.state().class_probs[1];
  return rollout;
}

CorpusBaseline CorpusAtK(std::span<const Transcript> transcripts,
                         std::span<const UserId> test_users,
                         std::span<const Label> test_labels,
                         const QuestionCatalog& catalog,
                         const ClassifierModel& classifier, int k, bool pool) {
  if (k < 1) throw UsageError("k must be >= 1");
  if (test_users.size() != test_labels.size()) {
    throw UsageError("test users and labels differ in length");
  }
  CorpusBaseline out;
  for (UserId user : test_users) {
    auto mine = TranscriptsOf(transcripts, user);
    if (mine.empty()) {
      throw UsageError("user " + std::to_string(user) + " has no transcripts");
    }
    if (!pool) mine.resize(1);
    Vector sum = Vector::Zero(classifier.dim());
    int taken = 0;
    for (const auto& t : mine) {
      for (const auto& turn : t.turns) {
        if (taken == k) break;
        const Category cat = catalog.category(turn.question);
        if (cat == Category::kGreetings || cat == Category::kGoodbye) continue;
        sum += turn.response;
        ++taken;
      }
    }
    if (taken < k) out.short_users.push_back(user);
    if (taken == 0) {
      throw UsageError("user " + std::to_string(user) +
                       " has no question turns");
    }
    out.p_mci.push_back(
        classifier.PredictProba(sum / static_cast<double>(taken))[1]);
  }
  out.metrics = EvaluateBinary(out.p_mci, test_labels);
  return out;
}

std::vector<TurnWindow> DefaultWindows() {
  return {{1, 5}, {6, 10}, {11, 15}, {16, 20}, {21, 35}};
}

std::vector<WindowRanking> PolicyReport(std::span<const Rollout> rollouts,
                                        std::span<const TurnWindow> windows) {
  std::vector<WindowRanking> out;
  for (const TurnWindow& w : windows) {
    std::map<QuestionId, int> counts;
    for (const Rollout& r : rollouts) {
      for (const RolloutStep& step : r.steps) {
        if (step.forced) continue;
        if (step.turn >= w.first && step.turn <= w.last) ++counts[step.action];
      }
    }
    WindowRanking ranking{w, {counts.begin(), counts.end()}};
    std::stable_sort(ranking.ranked.begin(), ranking.ranked.end(),
                     [](const auto& a, const auto& b) {
                       return a.second > b.second;
                     });
    out.push_back(std::move(ranking));
  }
  return out;
}

EvaluationResult Evaluate(const ExperimentConfig& config,
                          PipelineArtifacts& artifacts) {
  if (artifacts.agents.size() != artifacts.splits.size() ||
      artifacts.splits.empty()) {
    throw UsageError("agent stage has not run");
  }
  const auto order = artifacts.user_order();
  const QuestionCatalog& catalog = *artifacts.catalog;
  const auto windows = DefaultWindows();
  const int largest = config.turn_constraints.back();
  EvaluationResult result;
  for (size_t s = 0; s < artifacts.splits.size(); ++s) {
    const int split = static_cast<int>(s);
    const ClassifierModel& classifier = artifacts.classifiers[s];
    const QNetwork& policy = artifacts.agents[s].online;
    const auto test_users = Select(order, artifacts.splits[s].test);
    std::vector<Label> labels;
    for (UserId user : test_users) {
      labels.push_back(
          artifacts.labels.Read(user, LabelPurpose::kEvaluation, split));
    }
    std::vector<Rollout> largest_rollouts;
    for (int budget : config.turn_constraints) {
      std::vector<double> p;
      for (UserId user : test_users) {
        SimulatorResponder responder(artifacts.simulators.at(user));
        Rollout r = GreedyRollout(policy, catalog, classifier, config.env,
                                  responder, budget);
        r.split = split;
        r.user_id = user;
        p.push_back(r.p_mci);
        if (budget == largest) largest_rollouts.push_back(r);
        result.rollouts.push_back(std::move(r));
      }
      result.rows.push_back(
          {split, "rl_" + std::to_string(budget), EvaluateBinary(p, labels)});
    }
    for (int k : config.turn_constraints) {
      const CorpusBaseline base =
          CorpusAtK(artifacts.transcripts, test_users, labels, catalog,
                    classifier, k, config.corpus_pool);
      result.corpus_short_users += static_cast<int>(base.short_users.size());
      result.rows.push_back(
          {split, "corpus_" + std::to_string(k), base.metrics});
    }
    std::vector<double> full;
    for (UserId user : test_users) {
      full.push_back(classifier.PredictProba(
          FullAverage(artifacts.transcripts, user))[1]);
    }
    result.rows.push_back({split, "full", EvaluateBinary(full, labels)});
    result.rankings.push_back(PolicyReport(largest_rollouts, windows));
  }
  std::vector<Rollout> pooled;
  for (const auto& r : result.rollouts) {
    if (r.budget == largest) pooled.push_back(r);
  }
  result.pooled_rankings = PolicyReport(pooled, windows);
  return result;
}

EvaluationResult RunExperiment(const ExperimentConfig& config,
                               PipelineArtifacts& artifacts) {
  config.Validate();
  GenerateCohortStage(config, artifacts);
  FitSimulatorsStage(config, artifacts);
  FitClassifiersStage(config, artifacts);
  TrainAgentsStage(config, artifacts);
  return Evaluate(config, artifacts);
}

namespace {

BinaryMetrics Apply(const BinaryMetrics& a, const BinaryMetrics& b,
                    double (*f)(double, double)) {
  return {f(a.auc, b.auc), f(a.sensitivity, b.sensitivity),
          f(a.specificity, b.specificity), f(a.f1, b.f1)};
}

}  // namespace

std::vector<ConstraintSummary> Summarize(std::span<const MetricRow> rows) {
  std::vector<std::string> names;
  std::map<std::string, std::vector<BinaryMetrics>> groups;
  for (const auto& row : rows) {
    if (!groups.contains(row.constraint)) names.push_back(row.constraint);
    groups[row.constraint].push_back(row.metrics);
  }
  std::vector<ConstraintSummary> out;
  for (const auto& name : names) {
    const auto& g = groups[name];
    ConstraintSummary s;
    s.constraint = name;
    s.n = static_cast<int>(g.size());
    for (const auto& m : g) {
      s.mean = Apply(s.mean, m, [](double a, double b) { return a + b; });
    }
    const double n = static_cast<double>(g.size());
    s.mean = Apply(s.mean, {n, n, n, n},
                   [](double a, double b) { return a / b; });
    if (g.size() > 1) {
      for (const auto& m : g) {
        const BinaryMetrics d =
            Apply(m, s.mean, [](double a, double b) { return a - b; });
        s.std = Apply(s.std, Apply(d, d, [](double a, double b) { return a * b; }),
                      [](double a, double b) { return a + b; });
      }
      s.std = Apply(s.std, {n - 1, n - 1, n - 1, n - 1},
                    [](double a, double b) { return std::sqrt(a / b); });
    }
    out.push_back(s);
  }
  return out;
}

std::string MetricsCsv(std::span<const MetricRow> rows) {
  std::string out = "split,constraint,auc,sensitivity,specificity,f1\n";
  for (const auto& r : rows) {
    out += std::to_string(r.split) + ',' + r.constraint + ',' +
           Num(r.metrics.auc) + ',' + Num(r.metrics.sensitivity) + ',' +
           Num(r.metrics.specificity) + ',' + Num(r.metrics.f1) + '\n';
  }
  return out;
}

std::vector<MetricRow> ParseMetricsCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<MetricRow> rows;
  if (!std::getline(in, line)) throw ParseError("empty metrics file");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) {
      throw ParseError("metrics line " + std::to_string(line_no) +
                       ": expected 6 columns");
    }
    try {
      rows.push_back({std::stoi(cells[0]), cells[1],
                      {std::stod(cells[2]), std::stod(cells[3]),
                       std::stod(cells[4]), std::stod(cells[5])}});
    } catch (const std::exception&) {
      throw ParseError("metrics line " + std::to_string(line_no) +
                       ": bad number");
    }
  }
  return rows;
}

std::string RankingsCsv(const EvaluationResult& result,
                        const QuestionCatalog& catalog) {
  std::string out = "split,window,rank,question_id,category,count\n";
  auto emit = [&](const std::string& split,
                  const std::vector<WindowRanking>& rankings) {
    for (const auto& w : rankings) {
      const std::string window =
          std::to_string(w.window.first) + "-" + std::to_string(w.window.last);
      for (size_t i = 0; i < w.ranked.size(); ++i) {
        const auto [q, count] = w.ranked[i];
        out += split + ',' + window + ',' + std::to_string(i + 1) + ',' +
               std::to_string(q) + ',' +
               std::string(CategoryName(catalog.category(q))) + ',' +
               std::to_string(count) + '\n';
      }
    }
  };
  for (size_t s = 0; s < result.rankings.size(); ++s) {
    emit(std::to_string(s), result.rankings[s]);
  }
  emit("all", result.pooled_rankings);
  return out;
}

std::string TracesJsonl(std::span<const Rollout> rollouts) {
  std::string out;
  for (const auto& r : rollouts) {
    for (const auto& step : r.steps) {
      const nlohmann::json row = {{"split", r.split},
                                  {"user_id", r.user_id},
                                  {"budget", r.budget},
                                  {"turn", step.turn},
                                  {"action_id", step.action},
                                  {"reward", step.reward},
                                  {"p_mci", step.p_mci},
                                  {"tau", step.tau},
                                  {"done", step.done},
                                  {"forced", step.forced}};
      out += row.dump() + '\n';
    }
  }
  return out;
}

namespace {

nlohmann::json MetricsJson(const BinaryMetrics& m) {
  return {{"auc", m.auc},
          {"sensitivity", m.sensitivity},
          {"specificity", m.specificity},
          {"f1", m.f1}};
}

}  // namespace

nlohmann::json BuildReport(const ExperimentConfig& config,
                           const EvaluationResult& result,
                           const PipelineArtifacts& artifacts) {
  nlohmann::json report;
  report["master_seed"] = config.master_seed;
  report["n_splits"] = artifacts.splits.size();
  report["turn_constraints"] = config.turn_constraints;
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& s : Summarize(result.rows)) {
    summary.push_back({{"constraint", s.constraint},
                       {"n", s.n},
                       {"mean", MetricsJson(s.mean)},
                       {"std", MetricsJson(s.std)}});
  }
  report["summary"] = summary;
  report["corpus_short_users"] = result.corpus_short_users;

  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : result.pooled_rankings) {
    nlohmann::json ranked = nlohmann::json::array();
    for (size_t i = 0; i < w.ranked.size() && i < 10; ++i) {
      const auto [q, count] = w.ranked[i];
      ranked.push_back({{"question_id", q},
                        {"text", artifacts.catalog->question(q).text},
                        {"count", count}});
    }
    windows.push_back({{"first", w.window.first},
                       {"last", w.window.last},
                       {"top", ranked}});
  }
  report["policy_rankings"] = windows;
  if (!artifacts.discriminative_ids.empty()) {
    report["discriminative_ids"] = artifacts.discriminative_ids;
  }

  if (!artifacts.loo_mse.empty()) {
    std::vector<double> v;
    nlohmann::json per_user;
    for (const auto& [user, mse] : artifacts.loo_mse) {
      v.push_back(mse);
      per_user[std::to_string(user)] = mse;
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double std = v.size() > 1 ? std::sqrt(var / (v.size() - 1)) : 0.0;
    report["simulator_loo_mse"] = {
        {"n", v.size()},
        {"mean", mean},
        {"std", std},
        {"min", *std::min_element(v.begin(), v.end())},
        {"max", *std::max_element(v.begin(), v.end())},
        {"per_user", per_user}};
  }

  nlohmann::json curves = nlohmann::json::array();
  for (size_t s = 0; s < artifacts.learning_curves.size(); ++s) {
    const auto& curve = artifacts.learning_curves[s];
    if (curve.empty()) continue;
    const size_t tenth = std::max<size_t>(1, curve.size() / 10);
    double first = 0.0, last = 0.0;
    for (size_t i = 0; i < tenth; ++i) {
      first += curve[i].episode_return;
      last += curve[curve.size() - 1 - i].episode_return;
    }
    curves.push_back({{"split", s},
                      {"episodes", curve.size()},
                      {"first_tenth_mean_return", first / tenth},
                      {"last_tenth_mean_return", last / tenth}});
  }
  report["learning_curves"] = curves;

  report["reference_values"] = {
      {"note",
       "published results on a proprietary clinical corpus with 4800-dim "
       "sentence embeddings; not reproducible on synthetic cohorts"},
      {"rl_5_auc", 0.707},
      {"rl_35_auc", 0.818},
      {"corpus_5_auc", 0.504},
      {"corpus_35_auc", 0.699},
      {"full_corpus_linear_l2_auc", 0.797},
      {"simulator_loo_mse", 0.00495}};
  return report;
}

void WriteEvaluation(const fs::path& dir, const ExperimentConfig& config,
                     const EvaluationResult& result,
                     const PipelineArtifacts& artifacts) {
  fs::create_directories(dir);
  WriteFile(dir / "metrics.csv", MetricsCsv(result.rows));
  WriteFile(dir / "policy_rankings.csv",
            RankingsCsv(result, *artifacts.catalog));
  WriteFile(dir / "traces.jsonl", TracesJsonl(result.rollouts));
  WriteFile(dir / "report.json",
            BuildReport(config, result, artifacts).dump(2) + '\n');
}

namespace {

std::string SplitFile(const std::string& stem, size_t s,
                      const std::string& ext) {
  return stem + "_split" + std::to_string(s) + ext;
}

}  // namespace

void SaveArtifacts(const fs::path& dir, const ExperimentConfig& config,
                   const PipelineArtifacts& artifacts) {
  fs::create_directories(dir);
  std::map<std::string, std::string> files;
  files["config.json"] = ToJson(config).dump(2) + '\n';
  if (artifacts.catalog) files["catalog.tsv"] = artifacts.catalog->ToTsv();
  if (!artifacts.transcripts.empty()) {
    const fs::path tmp = dir / "transcripts.jsonl";
    WriteTranscripts(tmp, artifacts.transcripts, artifacts.labels.raw());
    files["transcripts.jsonl"] = ReadFile(tmp);
    files["ground_truth.json"] =
        nlohmann::json{{"discriminative_ids", artifacts.discriminative_ids}}
            .dump(2) +
        '\n';
  }
  if (!artifacts.simulators.empty()) {
    nlohmann::json sims = nlohmann::json::array();
    for (const auto& [user, sim] : artifacts.simulators) {
      sims.push_back(ToJson(sim));
    }
    nlohmann::json loo = nlohmann::json::object();
    for (const auto& [user, mse] : artifacts.loo_mse) {
      loo[std::to_string(user)] = mse;
    }
    files["simulators.json"] =
        nlohmann::json{{"simulators", sims}, {"loo_mse", loo}}.dump() + '\n';
  }
  if (!artifacts.splits.empty()) {
    nlohmann::json splits = nlohmann::json::array();
    for (const auto& s : artifacts.splits) {
      splits.push_back({{"train", s.train}, {"test", s.test}});
    }
    files["splits.json"] = nlohmann::json{{"splits", splits}}.dump() + '\n';
  }
  for (size_t s = 0; s < artifacts.classifiers.size(); ++s) {
    files[SplitFile("classifier", s, ".json")] =
        ToJson(artifacts.classifiers[s]).dump() + '\n';
  }
  for (size_t s = 0; s < artifacts.agents.size(); ++s) {
    const auto& a = artifacts.agents[s];
    files[SplitFile("agent", s, ".json")] =
        nlohmann::json{{"format", "turnwise.agent"},
                       {"version", 1},
                       {"config", ToJson(a.config)},
                       {"value_scale", a.online.value_scale()},
                       {"online", nnet::ToJson(a.online.net())},
                       {"target", nnet::ToJson(a.target.net())}}
            .dump() +
        '\n';
  }
  for (size_t s = 0; s < artifacts.learning_curves.size(); ++s) {
    const fs::path path = dir / SplitFile("learning_curve", s, ".csv");
    WriteLearningCurve(path, artifacts.learning_curves[s]);
  }
  nlohmann::json manifest = {{"format", "turnwise.manifest"},
                             {"version", 1},
                             {"master_seed", config.master_seed},
                             {"n_splits", artifacts.splits.size()}};
  nlohmann::json hashes = nlohmann::json::object();
  for (const auto& [name, content] : files) {
    WriteFile(dir / name, content);
    hashes[name] = HexU64(Fnv1a64(content));
  }
  manifest["files"] = hashes;
  WriteFile(dir / "manifest.json", manifest.dump(2) + '\n');
}

PipelineArtifacts LoadArtifacts(const fs::path& dir, ExperimentConfig* config) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("no manifest.json in " + dir.string());
  }
  const nlohmann::json manifest = ReadJson(manifest_path);
  if (manifest.value("format", "") != "turnwise.manifest") {
    throw ParseError(manifest_path.string() + " is not a pipeline manifest");
  }
  const auto& hashes = manifest.at("files");
  std::map<std::string, std::string> files;
  for (const auto& [name, hash] : hashes.items()) {
    const fs::path path = dir / name;
    if (!fs::exists(path)) {
      throw std::runtime_error("manifest lists " + name +
                               " but it is missing from " + dir.string());
    }
    std::string content = ReadFile(path);
    if (HexU64(Fnv1a64(content)) != hash.get<std::string>()) {
      throw ValidationError(name + " does not match its manifest hash");
    }
    files[name] = std::move(content);
  }
  auto has = [&](const std::string& name) { return files.contains(name); };

  const ExperimentConfig cfg =
      ExperimentConfigFromJson(nlohmann::json::parse(files.at("config.json")));
  if (config) *config = cfg;
  PipelineArtifacts a;
  if (has("catalog.tsv")) {
    a.catalog = std::make_shared<const QuestionCatalog>(
        ParseCatalog(files["catalog.tsv"], "catalog.tsv"));
  }
  if (has("transcripts.jsonl")) {
    TranscriptStore store = ReadTranscripts(dir / "transcripts.jsonl");
    a.transcripts = std::move(store.transcripts);
    a.labels = LabelLedger(std::move(store.labels));
  }
  if (has("ground_truth.json")) {
    a.discriminative_ids = nlohmann::json::parse(files["ground_truth.json"])
                               .at("discriminative_ids")
                               .get<std::vector<QuestionId>>();
  }
  if (has("simulators.json")) {
    const auto doc = nlohmann::json::parse(files["simulators.json"]);
    for (const auto& s : doc.at("simulators")) {
      SimulatorModel sim = SimulatorFromJson(s);
      a.simulators.emplace(sim.user_id(), std::move(sim));
    }
    for (const auto& [user, mse] : doc.at("loo_mse").items()) {
      a.loo_mse[std::stoi(user)] = mse.get<double>();
    }
  }
  if (has("splits.json")) {
    const auto doc = nlohmann::json::parse(files["splits.json"]);
    for (const auto& s : doc.at("splits")) {
      a.splits.push_back({s.at("train").get<std::vector<int>>(),
                          s.at("test").get<std::vector<int>>()});
    }
  }
  for (size_t s = 0; has(SplitFile("classifier", s, ".json")); ++s) {
    a.classifiers.push_back(ClassifierFromJson(
        nlohmann::json::parse(files[SplitFile("classifier", s, ".json")])));
  }
  for (size_t s = 0; has(SplitFile("agent", s, ".json")); ++s) {
    const auto doc =
        nlohmann::json::parse(files[SplitFile("agent", s, ".json")]);
    const double scale = doc.at("value_scale").get<double>();
    a.agents.push_back(
        {QNetwork(nnet::DenseNetFromJson(doc.at("online")), scale),
         QNetwork(nnet::DenseNetFromJson(doc.at("target")), scale),
         AgentConfigFromJson(doc.at("config"))});
  }

  // Cross-component consistency.
  if (!a.simulators.empty()) {
    const int c = a.simulators.begin()->second.embedding_dim();
    for (const auto& [user, sim] : a.simulators) {
      if (sim.embedding_dim() != c) {
        throw ValidationError("simulators disagree on the embedding dim");
      }
      if (a.catalog && sim.num_questions() != a.catalog->size()) {
        throw ValidationError("simulator of user " + std::to_string(user) +
                              " does not match the catalog size");
      }
    }
    for (size_t s = 0; s < a.classifiers.size(); ++s) {
      if (a.classifiers[s].dim() != c) {
        throw ValidationError(
            "classifier of split " + std::to_string(s) + " expects c = " +
            std::to_string(a.classifiers[s].dim()) +
            " but the simulators emit c = " + std::to_string(c));
      }
    }
    const int state_dim = StateDim(c, a.fingerprint_dim());
    for (size_t s = 0; s < a.agents.size(); ++s) {
      if (a.agents[s].online.state_dim() != state_dim) {
        throw ValidationError("agent of split " + std::to_string(s) +
                              " has the wrong state dimension");
      }
      if (a.catalog && a.agents[s].online.num_actions() != a.catalog->size()) {
        throw ValidationError("agent of split " + std::to_string(s) +
                              " does not match the catalog size");
      }
    }
  }
  for (const auto& t : a.transcripts) {
    if (!a.simulators.empty() && !t.turns.empty() &&
        t.turns[0].response.size() != a.embedding_dim()) {
      throw ValidationError("transcript embeddings do not match simulators");
    }
  }
  return a;
}

Vector ParseEmbeddingLine(const std::string& line, int embedding_dim) {
  std::istringstream in(line);
  std::vector<double> values;
  std::string token;
  while (in >> token) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(token.c_str(), &end);
    if (*end != '\0' || errno != 0 || !std::isfinite(v)) {
      throw ParseError("embedder sent a non-numeric token '" + token + "'");
    }
    values.push_back(v);
  }
  if (static_cast<int>(values.size()) != embedding_dim) {
    throw ParseError("embedder sent " + std::to_string(values.size()) +
                     " values, expected " + std::to_string(embedding_dim));
  }
  return Eigen::Map<const Vector>(values.data(), embedding_dim);
}

ProcessEmbedder::ProcessEmbedder(const std::string& command,
                                 const QuestionCatalog& catalog,
                                 int embedding_dim, Vector fingerprint)
    : catalog_(&catalog),
      embedding_dim_(embedding_dim),
      fingerprint_(std::move(fingerprint)) {
  int to_child[2];
  int from_child[2];
  if (pipe(to_child) != 0 || pipe(from_child) != 0) {
    throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));
  }
  pid_ = fork();
  if (pid_ < 0) throw std::runtime_error("fork failed");
  if (pid_ == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    close(to_child[0]);
    close(to_child[1]);
    close(from_child[0]);
    close(from_child[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(to_child[0]);
  close(from_child[1]);
  to_child_ = fdopen(to_child[1], "w");
  from_child_ = fdopen(from_child[0], "r");
}

ProcessEmbedder::~ProcessEmbedder() {
  if (to_child_) std::fclose(to_child_);
  if (from_child_) std::fclose(from_child_);
  if (pid_ > 0) waitpid(pid_, nullptr, 0);
}

Vector ProcessEmbedder::Respond(QuestionId question) {
  const std::string& text = catalog_->question(question).text;
  if (std::fprintf(to_child_, "%s\n", text.c_str()) < 0 ||
      std::fflush(to_child_) != 0) {
    throw ParseError("embedder stopped accepting input");
  }
  char* buffer = nullptr;
  size_t capacity = 0;
  const ssize_t n = getline(&buffer, &capacity, from_child_);
  std::string line = n > 0 ? std::string(buffer, n) : std::string();
  std::free(buffer);
  if (n <= 0) throw ParseError("embedder closed its output");
  return ParseEmbeddingLine(line, embedding_dim_);
}

InterviewResult Interview(const QNetwork& policy,
                          const QuestionCatalog& catalog,
                          const ClassifierModel& classifier,
                          const EnvConfig& env_config, Responder& responder,
                          int budget, std::ostream& out) {
  if (budget < 1) throw UsageError("turn budget must be >= 1");
  EnvConfig config = env_config;
  config.max_turns = budget + 1;
  DialogueEnv env(catalog, classifier, config);
  InterviewResult result;
  auto record = [&]() {
    result.turns.clear();
    for (size_t i = 0; i < env.history().size() && i < env.responses().size();
         ++i) {
      result.turns.push_back({env.history()[i], env.responses()[i]});
    }
  };
  try {
    out << "Q0: " << catalog.question(catalog.greeting()).text << '\n';
    env.Reset(responder, std::nullopt);
    out << "    p_MCI = " << env.state().class_probs[1] << '\n';
    while (!env.done()) {
      const ActionMask mask = env.Mask();
      const QuestionId action =
          env.state().turn >= budget
              ? catalog.goodbye()
              : GreedyAction(MaskedQ(policy, Flatten(env.state()), mask), mask);
      out << 'Q' << env.state().turn + 1 << ": "
          << catalog.question(action).text << '\n';
      env.Step(action);
      out << "    p_MCI = " << env.state().class_probs[1] << '\n';
    }
  } catch (const ParseError& e) {
    result.aborted = true;
    result.abort_reason = e.what();
    record();
    out << "session aborted: " << e.what() << '\n';
    return result;
  }
  record();
  result.p_mci = env.state().class_probs[1];
  result.prediction = result.p_mci >= 0.5 ? Label::kMci : Label::kNormal;
  out << "prediction: " << (*result.prediction == Label::kMci ? "MCI" : "NL")
      << " (p_MCI = " << result.p_mci << ")\n";
  return result;
}

}  // namespace turnwise
