#include <doctest.h>

#include <filesystem>
#include <map>

#include "test_support.h"
#include "turnwise/cohort.h"

using namespace turnwise;
using turnwise::testing::SmallCohortSpec;

namespace {

const QuestionCatalog& Compact() {
  static const QuestionCatalog catalog = CompactCatalog(20);
  return catalog;
}

}  // namespace

TEST_CASE("class balance is exact") {
  CohortSpec spec = SmallCohortSpec();
  spec.n_users = 11;
  spec.class_balance = 0.3;
  const Cohort cohort = GenerateCohort(spec, Compact(), 4);
  int mci = 0;
  for (const auto& u : cohort.users) mci += u.label == Label::kMci;
  CHECK(mci == 3);
}

TEST_CASE("class signal sits on the discriminative questions only") {
  const CohortSpec spec = SmallCohortSpec();
  const Cohort cohort = GenerateCohort(spec, Compact(), 9);
  for (const auto& u : cohort.users) {
    const Matrix shifted =
        u.question_means.rowwise() - u.offset.transpose();
    for (int q = 0; q < Compact().size(); ++q) {
      const Vector diff = (shifted.row(q) - cohort.base_means.row(q)).transpose();
      const bool disc = q == 4 || q == 8;
      if (disc && u.label == Label::kMci) {
        CHECK(diff.norm() == doctest::Approx(spec.delta));
        CHECK((diff - spec.delta * cohort.directions.row(q).transpose()).norm() <
              1e-12);
      } else {
        CHECK(diff.norm() < 1e-12);
      }
    }
  }
  for (int q = 0; q < Compact().size(); ++q) {
    CHECK(cohort.directions.row(q).norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("generation is deterministic in the seed") {
  const CohortSpec spec = SmallCohortSpec();
  const Cohort a = GenerateCohort(spec, Compact(), 5);
  const Cohort b = GenerateCohort(spec, Compact(), 5);
  const Cohort c = GenerateCohort(spec, Compact(), 6);
  CHECK(a.base_means == b.base_means);
  CHECK_FALSE(a.base_means == c.base_means);
  const auto ta = GenerateTranscripts(a, spec, Compact(), 1);
  const auto tb = GenerateTranscripts(b, spec, Compact(), 1);
  REQUIRE(ta.size() == tb.size());
  for (size_t i = 0; i < ta.size(); ++i) {
    REQUIRE(ta[i].turns.size() == tb[i].turns.size());
    for (size_t k = 0; k < ta[i].turns.size(); ++k) {
      CHECK(ta[i].turns[k].question == tb[i].turns[k].question);
      CHECK(ta[i].turns[k].response == tb[i].turns[k].response);
    }
  }
}

TEST_CASE("transcript structure") {
  const CohortSpec spec = SmallCohortSpec();
  const QuestionCatalog& catalog = Compact();
  const Cohort cohort = GenerateCohort(spec, catalog, 2);
  const auto transcripts = GenerateTranscripts(cohort, spec, catalog, 3);
  CHECK(transcripts.size() ==
        static_cast<size_t>(spec.n_users * spec.conversations_per_user));
  for (const auto& t : transcripts) {
    const int n = static_cast<int>(t.turns.size());
    CHECK(n >= spec.min_turns);
    CHECK(n <= spec.max_turns);
    CHECK(t.turns.front().question == catalog.greeting());
    CHECK(t.turns.back().question == catalog.goodbye());
    bool topic = false;
    for (int k = 1; k + 1 < n; ++k) {
      const QuestionId q = t.turns[k].question;
      CHECK_FALSE(catalog.IsGreeting(q));
      CHECK_FALSE(catalog.IsGoodbye(q));
      CHECK(q != t.turns[k - 1].question);
      if (IsFollowUpCategory(catalog.category(q))) CHECK(topic);
      topic = topic || IsTopicCategory(catalog.category(q));
    }
  }
}

TEST_CASE("noiseless responses equal the user means") {
  CohortSpec spec = SmallCohortSpec();
  spec.sigma_noise = 0.0;
  const Cohort cohort = GenerateCohort(spec, Compact(), 2);
  const auto transcripts = GenerateTranscripts(cohort, spec, Compact(), 3);
  for (const auto& t : transcripts) {
    const UserRecord& u = cohort.users[t.user_id];
    for (const auto& turn : t.turns) {
      CHECK(turn.response == u.question_means.row(turn.question).transpose());
    }
  }
}

TEST_CASE("average response and per-user grouping") {
  Transcript a{3, 1, {{0, Vector{{1.0, 2.0}}}, {1, Vector{{3.0, 4.0}}}}};
  Transcript b{3, 0, {{0, Vector{{5.0, 6.0}}}}};
  Transcript c{4, 0, {{0, Vector{{9.0, 9.0}}}}};
  const std::vector<Transcript> all = {a, b, c};
  const auto mine = TranscriptsOf(all, 3);
  REQUIRE(mine.size() == 2);
  CHECK(mine[0].conversation == 0);
  CHECK(mine[1].conversation == 1);
  const Vector avg = AverageResponse(mine);
  CHECK(avg[0] == doctest::Approx(3.0));
  CHECK(avg[1] == doctest::Approx(4.0));
  CHECK_THROWS_AS(AverageResponse(std::span<const Transcript>{}), UsageError);
}

TEST_CASE("transcript store round trip is exact") {
  const CohortSpec spec = SmallCohortSpec();
  const Cohort cohort = GenerateCohort(spec, Compact(), 8);
  const auto transcripts = GenerateTranscripts(cohort, spec, Compact(), 8);
  std::map<UserId, Label> labels;
  for (const auto& u : cohort.users) labels[u.user_id] = u.label;
  const auto path = std::filesystem::temp_directory_path() / "tw_cohort_rt.jsonl";
  WriteTranscripts(path, transcripts, labels);
  const TranscriptStore store = ReadTranscripts(path);
  std::filesystem::remove(path);
  CHECK(store.labels == labels);
  REQUIRE(store.transcripts.size() == transcripts.size());
  for (size_t i = 0; i < transcripts.size(); ++i) {
    CHECK(store.transcripts[i].user_id == transcripts[i].user_id);
    REQUIRE(store.transcripts[i].turns.size() == transcripts[i].turns.size());
    for (size_t k = 0; k < transcripts[i].turns.size(); ++k) {
      CHECK(store.transcripts[i].turns[k].response ==
            transcripts[i].turns[k].response);
    }
  }
}

TEST_CASE("spec validation and json") {
  CohortSpec spec = SmallCohortSpec();
  const CohortSpec back = CohortSpecFromJson(ToJson(spec));
  CHECK(back.discriminative_ids == spec.discriminative_ids);
  CHECK(back.min_turns == spec.min_turns);
  CHECK(back.max_turns == spec.max_turns);
  CHECK(back.delta == spec.delta);

  spec.discriminative_ids = {4, 4};
  CHECK_THROWS_AS(spec.Validate(Compact()), UsageError);
  spec.discriminative_ids = {40};
  CHECK_THROWS_AS(spec.Validate(Compact()), UsageError);
  spec = SmallCohortSpec();
  spec.class_balance = 1.0;
  CHECK_THROWS_AS(spec.Validate(Compact()), UsageError);
  spec = SmallCohortSpec();
  spec.min_turns = 50;
  CHECK_THROWS_AS(spec.Validate(Compact()), UsageError);
  CHECK_THROWS_AS(CohortSpecFromJson(nlohmann::json{{"turns_range", {1}}}),
                  ParseError);
}

TEST_CASE("a catalog without topics cannot host transcripts") {
  const QuestionCatalog catalog =
      ParseCatalog("0\tgreetings\thi\n1\tgoodbye\tbye\n2\tunspecified\tok\n");
  CohortSpec spec;
  spec.n_users = 2;
  spec.embedding_dim = 2;
  const Cohort cohort = GenerateCohort(spec, catalog, 1);
  CHECK_THROWS_AS(GenerateTranscripts(cohort, spec, catalog, 1),
                  ValidationError);
}
