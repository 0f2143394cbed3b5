#pragma once

// Linear MCI-vs-NL classifier over averaged response embeddings.

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/common.h"

namespace turnwise {

enum class ClassifierKind {
  kLogistic,    // l2-regularized logistic regression
  kHingePlatt,  // l2-regularized squared-hinge SVM, Platt-scaled margins
};

std::string_view ClassifierKindName(ClassifierKind kind);
ClassifierKind ClassifierKindFromName(std::string_view name);

struct ClassifierConfig {
  ClassifierKind kind = ClassifierKind::kLogistic;
  double l2 = 1e-2;
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;
};

nlohmann::json ToJson(const ClassifierConfig& config);
ClassifierConfig ClassifierConfigFromJson(const nlohmann::json& doc);

// Index 0 is P(NL | f), index 1 is P(MCI | f).
using ClassProbs = std::array<double, 2>;

class ClassifierModel {
 public:
  ClassifierModel() = default;
  ClassifierModel(Vector weights, double bias, ClassifierKind kind, double l2,
                  double platt_slope = 1.0, double platt_intercept = 0.0);

  int dim() const { return static_cast<int>(weights_.size()); }
  const Vector& weights() const { return weights_; }
  double bias() const { return bias_; }
  ClassifierKind kind() const { return kind_; }
  double l2() const { return l2_; }
  double platt_slope() const { return platt_slope_; }
  double platt_intercept() const { return platt_intercept_; }

  // Raw linear margin w . f + b.
  double Margin(const Vector& features) const;
  ClassProbs PredictProba(const Vector& features) const;
  // MCI iff P(MCI | f) >= 0.5.
  Label Predict(const Vector& features) const;

 private:
  Vector weights_;
  double bias_ = 0.0;
  ClassifierKind kind_ = ClassifierKind::kLogistic;
  double l2_ = 0.0;
  double platt_slope_ = 1.0;
  double platt_intercept_ = 0.0;
};

// Newton's method on the convex regularized objective
//   (1/n) sum loss_i + (l2/2) ||w||^2   (bias unpenalized)
// until the gradient norm drops below the tolerance. Deterministic.
ClassifierModel FitClassifier(std::span<const Vector> features,
                              std::span<const Label> labels,
                              const ClassifierConfig& config);

double Sigmoid(double z);

nlohmann::json ToJson(const ClassifierModel& model);
ClassifierModel ClassifierFromJson(const nlohmann::json& doc);

}  // namespace turnwise
