#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "turnwise/metrics.h"

using namespace turnwise;

namespace {

double BruteForceAuc(const std::vector<double>& s, const std::vector<Label>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (y[i] != Label::kMci) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      if (y[j] != Label::kNormal) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("auc matches brute force including ties") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 40);
    // Coarse scores force ties.
    std::uniform_int_distribution<int> level(0, trial % 2 == 0 ? 4 : 1000);
    std::vector<double> s(n);
    std::vector<Label> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = level(rng) / 4.0;
      y[i] = rng() % 2 ? Label::kMci : Label::kNormal;
    }
    y[0] = Label::kMci;
    y[1] = Label::kNormal;
    CHECK(std::abs(Auc(s, y) - BruteForceAuc(s, y)) < 1e-12);
  }
}

TEST_CASE("auc edge cases") {
  const std::vector<double> s = {0.1, 0.9};
  CHECK(Auc(s, std::vector<Label>{Label::kNormal, Label::kMci}) == 1.0);
  CHECK(Auc(s, std::vector<Label>{Label::kMci, Label::kNormal}) == 0.0);
  const std::vector<double> flat = {0.5, 0.5, 0.5};
  CHECK(Auc(flat, std::vector<Label>{Label::kMci, Label::kNormal,
                                     Label::kNormal}) == 0.5);
  CHECK_THROWS_AS(Auc(s, std::vector<Label>{Label::kMci, Label::kMci}),
                  UsageError);
  CHECK_THROWS_AS(Auc(s, std::vector<Label>{Label::kMci}), UsageError);
}

TEST_CASE("threshold metrics from a hand-counted confusion table") {
  // tp = 2, fn = 1, tn = 3, fp = 1.
  const std::vector<double> p = {0.9, 0.5, 0.2, 0.1, 0.3, 0.4, 0.7};
  const std::vector<Label> y = {Label::kMci,    Label::kMci,    Label::kMci,
                                Label::kNormal, Label::kNormal, Label::kNormal,
                                Label::kNormal};
  const BinaryMetrics m = EvaluateBinary(p, y);
  CHECK(m.sensitivity == doctest::Approx(2.0 / 3.0));
  CHECK(m.specificity == doctest::Approx(3.0 / 4.0));
  CHECK(m.f1 == doctest::Approx(4.0 / 6.0));
  CHECK(m.auc == doctest::Approx(BruteForceAuc(p, y)));
}

TEST_CASE("spearman with ties") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  CHECK(SpearmanRho(x, x) == doctest::Approx(1.0));
  const std::vector<double> rev = {5, 4, 3, 2, 1};
  CHECK(SpearmanRho(x, rev) == doctest::Approx(-1.0));
  // Average ranks of y are 1, 2.5, 2.5, 4, 5; Pearson on ranks by hand.
  const std::vector<double> y = {0.1, 0.4, 0.4, 0.6, 0.9};
  CHECK(SpearmanRho(x, y) == doctest::Approx(9.5 / std::sqrt(10.0 * 9.5)));
  const std::vector<double> flat = {1, 1, 1, 1, 1};
  CHECK(SpearmanRho(x, flat) == 0.0);
  CHECK_THROWS_AS(SpearmanRho(std::vector<double>{1}, std::vector<double>{1}),
                  UsageError);
}

TEST_CASE("stratified splits partition every user and keep class shares") {
  std::vector<Label> labels;
  for (int i = 0; i < 60; ++i) {
    labels.push_back(i % 3 == 0 ? Label::kMci : Label::kNormal);
  }
  SplitPlan plan;
  plan.seed = 42;
  const auto splits = StratifiedShuffleSplit(labels, plan);
  REQUIRE(splits.size() == 10);
  std::set<std::vector<int>> distinct;
  for (const Split& s : splits) {
    CHECK(s.train.size() == 39);
    CHECK(s.test.size() == 21);
    CHECK(std::is_sorted(s.train.begin(), s.train.end()));
    CHECK(std::is_sorted(s.test.begin(), s.test.end()));
    std::vector<int> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    for (int i = 0; i < 60; ++i) CHECK(all[i] == i);
    int mci = 0;
    for (int i : s.train) mci += labels[i] == Label::kMci;
    // 39 * 20 / 60 = 13 exactly.
    CHECK(mci == 13);
    distinct.insert(s.train);
  }
  CHECK(distinct.size() == 10);
  CHECK(StratifiedShuffleSplit(labels, plan)[3].train == splits[3].train);
}

TEST_CASE("split preconditions") {
  const std::vector<Label> one_mci = {Label::kMci, Label::kNormal,
                                      Label::kNormal, Label::kNormal};
  CHECK_THROWS_AS(StratifiedShuffleSplit(one_mci, {}), UsageError);
  SplitPlan plan;
  plan.train_fraction = 1.0;
  const std::vector<Label> ok = {Label::kMci, Label::kMci, Label::kNormal,
                                 Label::kNormal};
  CHECK_THROWS_AS(StratifiedShuffleSplit(ok, plan), UsageError);
  plan = SplitPlan{};
  plan.n_splits = 0;
  CHECK_THROWS_AS(StratifiedShuffleSplit(ok, plan), UsageError);
}
