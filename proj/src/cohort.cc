#include "turnwise/cohort.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include <spdlog/spdlog.h>

namespace turnwise {

void CohortSpec::Validate(const QuestionCatalog& catalog) const {
  if (n_users <= 0) throw UsageError("n_users must be positive");
  if (!(class_balance > 0.0 && class_balance < 1.0)) {
    throw UsageError("class_balance must lie in (0, 1)");
  }
  if (embedding_dim <= 0) throw UsageError("embedding_dim must be positive");
  if (!(delta >= 0.0)) throw UsageError("delta must be >= 0");
  if (!(sigma_base >= 0.0 && sigma_user >= 0.0 && sigma_noise >= 0.0)) {
    throw UsageError("standard deviations must be >= 0");
  }
  if (conversations_per_user <= 0) {
    throw UsageError("conversations_per_user must be positive");
  }
  if (min_turns < 1 || max_turns < min_turns) {
    throw UsageError("turns range must satisfy 1 <= min <= max");
  }
  std::set<QuestionId> unique;
  for (QuestionId id : discriminative_ids) {
    if (!catalog.Contains(id)) {
      throw UsageError("discriminative id " + std::to_string(id) +
                       " is not in the catalog");
    }
    if (!unique.insert(id).second) {
      throw UsageError("duplicate discriminative id " + std::to_string(id));
    }
  }
}

nlohmann::json ToJson(const CohortSpec& spec) {
  return {
      {"n_users", spec.n_users},
      {"class_balance", spec.class_balance},
      {"embedding_dim", spec.embedding_dim},
      {"discriminative_ids", spec.discriminative_ids},
      {"delta", spec.delta},
      {"sigma_base", spec.sigma_base},
      {"sigma_user", spec.sigma_user},
      {"sigma_noise", spec.sigma_noise},
      {"conversations_per_user", spec.conversations_per_user},
      {"turns_range", {spec.min_turns, spec.max_turns}},
  };
}

CohortSpec CohortSpecFromJson(const nlohmann::json& doc) {
  CohortSpec spec;
  spec.n_users = doc.value("n_users", spec.n_users);
  spec.class_balance = doc.value("class_balance", spec.class_balance);
  spec.embedding_dim = doc.value("embedding_dim", spec.embedding_dim);
  spec.discriminative_ids =
      doc.value("discriminative_ids", spec.discriminative_ids);
  spec.delta = doc.value("delta", spec.delta);
  spec.sigma_base = doc.value("sigma_base", spec.sigma_base);
  spec.sigma_user = doc.value("sigma_user", spec.sigma_user);
  spec.sigma_noise = doc.value("sigma_noise", spec.sigma_noise);
  spec.conversations_per_user =
      doc.value("conversations_per_user", spec.conversations_per_user);
  if (doc.contains("turns_range")) {
    const auto range = doc.at("turns_range").get<std::vector<int>>();
    if (range.size() != 2) throw ParseError("turns_range must be [min, max]");
    spec.min_turns = range[0];
    spec.max_turns = range[1];
  }
  return spec;
}

namespace {

Vector GaussianVector(std::mt19937_64& rng, int dim, double stddev) {
  Vector v(dim);
  if (stddev == 0.0) {
    v.setZero();
    return v;
  }
  std::normal_distribution<double> normal(0.0, stddev);
  for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace

Cohort GenerateCohort(const CohortSpec& spec, const QuestionCatalog& catalog,
                      uint64_t seed) {
  spec.Validate(catalog);
  if (spec.discriminative_ids.empty() && spec.delta > 0.0) {
    spdlog::warn("cohort has delta > 0 but no discriminative questions; "
                 "labels carry no signal");
  }
  const int d = catalog.size();
  const int c = spec.embedding_dim;
  Cohort cohort;

  std::mt19937_64 question_rng(DeriveSeed(seed, "cohort.questions"));
  cohort.base_means.resize(d, c);
  cohort.directions.resize(d, c);
  for (int q = 0; q < d; ++q) {
    cohort.base_means.row(q) =
        GaussianVector(question_rng, c, spec.sigma_base).transpose();
    Vector dir = GaussianVector(question_rng, c, 1.0);
    cohort.directions.row(q) = (dir / dir.norm()).transpose();
  }

  const int n_mci =
      static_cast<int>(std::lround(spec.n_users * spec.class_balance));
  std::vector<int> order(spec.n_users);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 label_rng(DeriveSeed(seed, "cohort.labels"));
  std::shuffle(order.begin(), order.end(), label_rng);
  std::vector<Label> labels(spec.n_users, Label::kNormal);
  for (int i = 0; i < n_mci; ++i) labels[order[i]] = Label::kMci;

  Matrix signal = Matrix::Zero(d, c);
  for (QuestionId q : spec.discriminative_ids) {
    signal.row(q) = spec.delta * cohort.directions.row(q);
  }

  cohort.users.reserve(spec.n_users);
  for (int u = 0; u < spec.n_users; ++u) {
    std::mt19937_64 user_rng(DeriveSeed(seed, "cohort.user", u));
    UserRecord user;
    user.user_id = u;
    user.label = labels[u];
    user.offset = GaussianVector(user_rng, c, spec.sigma_user);
    user.question_means = cohort.base_means;
    if (user.label == Label::kMci) user.question_means += signal;
    user.question_means.rowwise() += user.offset.transpose();
    cohort.users.push_back(std::move(user));
  }
  return cohort;
}

std::vector<Transcript> GenerateTranscripts(const Cohort& cohort,
                                            const CohortSpec& spec,
                                            const QuestionCatalog& catalog,
                                            uint64_t seed) {
  spec.Validate(catalog);
  std::vector<QuestionId> interior;
  bool has_topic = false;
  for (const auto& q : catalog.questions()) {
    if (q.category != Category::kGreetings && q.category != Category::kGoodbye) {
      interior.push_back(q.id);
      has_topic = has_topic || IsTopicCategory(q.category);
    }
  }
  if (!has_topic) {
    throw ValidationError("catalog needs at least one topic question");
  }

  std::vector<Transcript> transcripts;
  for (const auto& user : cohort.users) {
    if (user.question_means.rows() != catalog.size() ||
        user.question_means.cols() != spec.embedding_dim) {
      throw ShapeError("user record does not match catalog/spec dims");
    }
    std::mt19937_64 rng(DeriveSeed(seed, "transcripts.user", user.user_id));
    std::uniform_int_distribution<int> length(spec.min_turns, spec.max_turns);
    std::uniform_int_distribution<size_t> pick(0, interior.size() - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int conv = 0; conv < spec.conversations_per_user; ++conv) {
      Transcript t;
      t.user_id = user.user_id;
      t.conversation = conv;
      const int n_turns = length(rng);
      QuestionId previous = -1;
      bool topic_raised = false;
      for (int k = 0; k < n_turns; ++k) {
        QuestionId q;
        if (k == 0) {
          q = catalog.greeting();
        } else if (k == n_turns - 1) {
          q = catalog.goodbye();
        } else {
          // Follow-ups wait for a topic, as the agent's mask requires.
          do {
            q = interior[pick(rng)];
          } while ((q == previous && interior.size() > 1) ||
                   (!topic_raised && IsFollowUpCategory(catalog.category(q))));
        }
        topic_raised = topic_raised || IsTopicCategory(catalog.category(q));
        Vector response = user.question_means.row(q).transpose();
        if (spec.sigma_noise > 0.0) {
          for (Eigen::Index i = 0; i < response.size(); ++i) {
            response[i] += spec.sigma_noise * noise(rng);
          }
        }
        t.turns.push_back({q, std::move(response)});
        previous = q;
      }
      transcripts.push_back(std::move(t));
    }
  }
  return transcripts;
}

std::vector<Transcript> TranscriptsOf(std::span<const Transcript> all,
                                      UserId user) {
  std::vector<Transcript> mine;
  for (const auto& t : all) {
    if (t.user_id == user) mine.push_back(t);
  }
  std::stable_sort(mine.begin(), mine.end(),
                   [](const Transcript& a, const Transcript& b) {
                     return a.conversation < b.conversation;
                   });
  return mine;
}

Vector AverageResponse(std::span<const Transcript> transcripts) {
  Vector sum;
  size_t count = 0;
  for (const auto& t : transcripts) {
    for (const auto& turn : t.turns) {
      if (count == 0) {
        sum = turn.response;
      } else {
        sum += turn.response;
      }
      ++count;
    }
  }
  if (count == 0) throw UsageError("cannot average an empty set of turns");
  return sum / static_cast<double>(count);
}

void WriteTranscripts(const std::filesystem::path& path,
                      std::span<const Transcript> transcripts,
                      const std::map<UserId, Label>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  for (const auto& t : transcripts) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& turn : t.turns) {
      turns.push_back(
          {{"q", turn.question},
           {"v", std::vector<double>(turn.response.begin(),
                                     turn.response.end())}});
    }
    nlohmann::json record = {{"user_id", t.user_id},
                             {"conversation", t.conversation},
                             {"turns", std::move(turns)}};
    auto it = labels.find(t.user_id);
    if (it != labels.end()) record["label"] = ToInt(it->second);
    out << record.dump() << '\n';
  }
}

TranscriptStore ReadTranscripts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open transcript store " + path.string());
  TranscriptStore store;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto record = nlohmann::json::parse(line);
      Transcript t;
      t.user_id = record.at("user_id").get<int>();
      t.conversation = record.at("conversation").get<int>();
      for (const auto& turn : record.at("turns")) {
        const auto v = turn.at("v").get<std::vector<double>>();
        t.turns.push_back(
            {turn.at("q").get<int>(),
             Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()))});
      }
      if (record.contains("label")) {
        store.labels[t.user_id] = LabelFromInt(record.at("label").get<int>());
      }
      store.transcripts.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return store;
}

}  // namespace turnwise
