#include "turnwise/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

namespace turnwise {

namespace {

// 1-based average ranks.
std::vector<double> AverageRanks(std::span<const double> values) {
  std::vector<size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) {
      ++j;
    }
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double Auc(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) {
    throw UsageError("scores and labels differ in length");
  }
  double n_pos = 0.0;
  for (Label l : labels) n_pos += ToInt(l);
  const double n_neg = static_cast<double>(labels.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) {
    throw UsageError("AUC is undefined unless both classes are present");
  }
  // Mann-Whitney U from average ranks.
  const std::vector<double> ranks = AverageRanks(scores);
  double pos_rank_sum = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Label::kMci) pos_rank_sum += ranks[i];
  }
  const double u = pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
  return u / (n_pos * n_neg);
}

BinaryMetrics EvaluateBinary(std::span<const double> p_mci,
                             std::span<const Label> labels, double threshold) {
  BinaryMetrics m;
  m.auc = Auc(p_mci, labels);
  double tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = p_mci[i] >= threshold;
    const bool actual = labels[i] == Label::kMci;
    if (predicted && actual) ++tp;
    if (predicted && !actual) ++fp;
    if (!predicted && !actual) ++tn;
    if (!predicted && actual) ++fn;
  }
  m.sensitivity = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  m.specificity = tn + fp > 0 ? tn / (tn + fp) : 0.0;
  m.f1 = 2 * tp + fp + fn > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
  return m;
}

double SpearmanRho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw UsageError("Spearman correlation needs two equal-length series");
  }
  const auto rx = AverageRanks(x);
  const auto ry = AverageRanks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

nlohmann::json ToJson(const SplitPlan& plan) {
  return {{"n_splits", plan.n_splits},
          {"train_fraction", plan.train_fraction},
          {"seed", plan.seed}};
}

SplitPlan SplitPlanFromJson(const nlohmann::json& doc) {
  SplitPlan plan;
  plan.n_splits = doc.value("n_splits", plan.n_splits);
  plan.train_fraction = doc.value("train_fraction", plan.train_fraction);
  plan.seed = doc.value("seed", plan.seed);
  return plan;
}

std::vector<Split> StratifiedShuffleSplit(std::span<const Label> labels,
                                          const SplitPlan& plan) {
  if (plan.n_splits <= 0) throw UsageError("n_splits must be positive");
  if (!(plan.train_fraction > 0.0 && plan.train_fraction < 1.0)) {
    throw UsageError("train_fraction must lie in (0, 1)");
  }
  std::array<std::vector<int>, 2> members;
  for (size_t i = 0; i < labels.size(); ++i) {
    members[ToInt(labels[i])].push_back(static_cast<int>(i));
  }
  for (const auto& group : members) {
    if (group.size() < 2) {
      throw UsageError("each class needs at least 2 members to stratify");
    }
  }
  const double n = static_cast<double>(labels.size());
  const int n_train = static_cast<int>(std::lround(plan.train_fraction * n));
  if (n_train < 2 || n_train > static_cast<int>(labels.size()) - 2) {
    throw UsageError("train fraction leaves a side without both classes");
  }

  std::mt19937_64 rng(plan.seed);
  std::vector<Split> splits;
  for (int s = 0; s < plan.n_splits; ++s) {
    // Largest-remainder allocation of training slots per class; ties between
    // equal remainders are broken at random.
    std::array<int, 2> quota{};
    std::array<double, 2> remainder{};
    int assigned = 0;
    for (int c = 0; c < 2; ++c) {
      const double exact = n_train * members[c].size() / n;
      quota[c] = static_cast<int>(std::floor(exact));
      remainder[c] = exact - quota[c];
      assigned += quota[c];
    }
    std::uniform_int_distribution<int> coin(0, 1);
    while (assigned < n_train) {
      int c = remainder[0] > remainder[1]   ? 0
              : remainder[1] > remainder[0] ? 1
                                            : coin(rng);
      if (quota[c] >= static_cast<int>(members[c].size()) - 1) c = 1 - c;
      ++quota[c];
      remainder[c] = -1.0;
      ++assigned;
    }
    Split split;
    for (int c = 0; c < 2; ++c) {
      std::vector<int> shuffled = members[c];
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      split.train.insert(split.train.end(), shuffled.begin(),
                         shuffled.begin() + quota[c]);
      split.test.insert(split.test.end(), shuffled.begin() + quota[c],
                        shuffled.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    splits.push_back(std::move(split));
  }
  return splits;
}

}  // namespace turnwise
