#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/common.h"

namespace turnwise {

// Probability that a random positive outranks a random negative; ties count
// one half. Throws UsageError unless both classes are present.
double Auc(std::span<const double> scores, std::span<const Label> labels);

struct BinaryMetrics {
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
};

// AUC over `p_mci`, threshold metrics at p_mci >= threshold.
BinaryMetrics EvaluateBinary(std::span<const double> p_mci,
                             std::span<const Label> labels,
                             double threshold = 0.5);

// Spearman rank correlation with average ranks for ties.
double SpearmanRho(std::span<const double> x, std::span<const double> y);

struct SplitPlan {
  int n_splits = 10;
  double train_fraction = 0.65;
  uint64_t seed = 0;
};

nlohmann::json ToJson(const SplitPlan& plan);
SplitPlan SplitPlanFromJson(const nlohmann::json& doc);

// Indices into the label array, each sorted ascending.
struct Split {
  std::vector<int> train;
  std::vector<int> test;
};

// Repeated stratified random partitions: every split keeps each class's share
// of the training set within one member of its share of the cohort.
std::vector<Split> StratifiedShuffleSplit(std::span<const Label> labels,
                                          const SplitPlan& plan);

}  // namespace turnwise
