#include "turnwise/classifier.h"

#include <cmath>
#include <string>

namespace turnwise {

std::string_view ClassifierKindName(ClassifierKind kind) {
  return kind == ClassifierKind::kLogistic ? "logistic" : "hinge_platt";
}

ClassifierKind ClassifierKindFromName(std::string_view name) {
  if (name == "logistic") return ClassifierKind::kLogistic;
  if (name == "hinge_platt") return ClassifierKind::kHingePlatt;
  throw ParseError("unknown classifier kind '" + std::string(name) + "'");
}

nlohmann::json ToJson(const ClassifierConfig& config) {
  return {{"kind", ClassifierKindName(config.kind)},
          {"l2", config.l2},
          {"max_iterations", config.max_iterations},
          {"gradient_tolerance", config.gradient_tolerance}};
}

ClassifierConfig ClassifierConfigFromJson(const nlohmann::json& doc) {
  ClassifierConfig config;
  if (doc.contains("kind")) {
    config.kind = ClassifierKindFromName(doc.at("kind").get<std::string>());
  }
  config.l2 = doc.value("l2", config.l2);
  config.max_iterations = doc.value("max_iterations", config.max_iterations);
  config.gradient_tolerance =
      doc.value("gradient_tolerance", config.gradient_tolerance);
  if (!(config.l2 >= 0.0)) throw UsageError("classifier l2 must be >= 0");
  return config;
}

double Sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

// log(1 + exp(z)) without overflow.
double Softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// Design matrix with a trailing column of ones for the bias.
Matrix Design(std::span<const Vector> features) {
  const Eigen::Index n = static_cast<Eigen::Index>(features.size());
  const Eigen::Index c = features.front().size();
  Matrix x(n, c + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (features[i].size() != c) {
      throw ShapeError("feature vectors must share one length");
    }
    x.row(i).head(c) = features[i].transpose();
    x(i, c) = 1.0;
  }
  return x;
}

struct Objective {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

// Smooth per-sample losses of the margin z = x . theta.
struct LogisticLoss {
  // y in {0, 1}.
  static double Value(double z, double y) { return Softplus(z) - y * z; }
  static double Slope(double z, double y) { return Sigmoid(z) - y; }
  static double Curvature(double z, double) {
    const double p = Sigmoid(z);
    return p * (1.0 - p);
  }
};

struct SquaredHingeLoss {
  // y in {0, 1} mapped to {-1, +1}.
  static double Value(double z, double y) {
    const double s = 2.0 * y - 1.0;
    const double m = 1.0 - s * z;
    return m > 0.0 ? m * m : 0.0;
  }
  static double Slope(double z, double y) {
    const double s = 2.0 * y - 1.0;
    const double m = 1.0 - s * z;
    return m > 0.0 ? -2.0 * s * m : 0.0;
  }
  static double Curvature(double z, double y) {
    const double s = 2.0 * y - 1.0;
    return 1.0 - s * z > 0.0 ? 2.0 : 0.0;
  }
};

template <typename Loss>
Objective Evaluate(const Matrix& x, const Vector& y, const Vector& theta,
                   double l2) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  const Vector z = x * theta;
  Vector slope(n);
  Vector curvature(n);
  Objective obj;
  for (Eigen::Index i = 0; i < n; ++i) {
    obj.value += Loss::Value(z[i], y[i]);
    slope[i] = Loss::Slope(z[i], y[i]);
    curvature[i] = Loss::Curvature(z[i], y[i]);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  obj.value *= inv_n;
  obj.gradient = inv_n * (x.transpose() * slope);
  obj.hessian = inv_n * (x.transpose() * curvature.asDiagonal() * x);
  const Vector w = theta.head(p - 1);
  obj.value += 0.5 * l2 * w.squaredNorm();
  obj.gradient.head(p - 1) += l2 * w;
  obj.hessian.diagonal().head(p - 1).array() += l2;
  return obj;
}

template <typename Loss>
Vector Newton(const Matrix& x, const Vector& y, double l2, int max_iterations,
              double tolerance) {
  Vector theta = Vector::Zero(x.cols());
  Objective obj = Evaluate<Loss>(x, y, theta, l2);
  for (int iter = 0; iter < max_iterations; ++iter) {
    if (obj.gradient.norm() < tolerance) break;
    Matrix h = obj.hessian;
    // Separable or constant data can leave the Hessian singular.
    h.diagonal().array() += 1e-10;
    const Vector step = h.ldlt().solve(obj.gradient);
    double t = 1.0;
    Objective next;
    for (int ls = 0; ls < 60; ++ls) {
      next = Evaluate<Loss>(x, y, theta - t * step, l2);
      if (next.value <= obj.value - 1e-4 * t * obj.gradient.dot(step)) break;
      t *= 0.5;
    }
    if (!(next.value <= obj.value)) break;
    theta -= t * step;
    obj = std::move(next);
  }
  return theta;
}

// Platt scaling: logistic fit of P(MCI) = sigmoid(a * margin + b) with
// Platt's smoothed targets.
std::pair<double, double> FitPlatt(const Vector& margins, const Vector& y,
                                   int max_iterations) {
  double n_pos = y.sum();
  double n_neg = static_cast<double>(y.size()) - n_pos;
  Vector targets(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    targets[i] = y[i] > 0.5 ? (n_pos + 1.0) / (n_pos + 2.0)
                            : 1.0 / (n_neg + 2.0);
  }
  Matrix x(margins.size(), 2);
  x.col(0) = margins;
  x.col(1).setOnes();
  // Both coordinates unpenalized: reuse Evaluate with l2 = 0 on a design
  // whose "bias" is the intercept and whose single weight is the slope.
  const Vector theta =
      Newton<LogisticLoss>(x, targets, 0.0, max_iterations, 1e-10);
  return {theta[0], theta[1]};
}

}  // namespace

ClassifierModel::ClassifierModel(Vector weights, double bias,
                                 ClassifierKind kind, double l2,
                                 double platt_slope, double platt_intercept)
    : weights_(std::move(weights)),
      bias_(bias),
      kind_(kind),
      l2_(l2),
      platt_slope_(platt_slope),
      platt_intercept_(platt_intercept) {}

double ClassifierModel::Margin(const Vector& features) const {
  if (features.size() != weights_.size()) {
    throw ShapeError("classifier expects " + std::to_string(weights_.size()) +
                     " features, got " + std::to_string(features.size()));
  }
  return weights_.dot(features) + bias_;
}

ClassProbs ClassifierModel::PredictProba(const Vector& features) const {
  const double margin = Margin(features);
  const double z = kind_ == ClassifierKind::kLogistic
                       ? margin
                       : platt_slope_ * margin + platt_intercept_;
  const double p_mci = Sigmoid(z);
  return {1.0 - p_mci, p_mci};
}

Label ClassifierModel::Predict(const Vector& features) const {
  return PredictProba(features)[1] >= 0.5 ? Label::kMci : Label::kNormal;
}

ClassifierModel FitClassifier(std::span<const Vector> features,
                              std::span<const Label> labels,
                              const ClassifierConfig& config) {
  if (features.empty()) throw UsageError("no training examples");
  if (features.size() != labels.size()) {
    throw UsageError("features and labels differ in length");
  }
  if (!(config.l2 >= 0.0)) throw UsageError("classifier l2 must be >= 0");
  Vector y(static_cast<Eigen::Index>(labels.size()));
  int positives = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    y[static_cast<Eigen::Index>(i)] = ToInt(labels[i]);
    positives += ToInt(labels[i]);
  }
  if (positives == 0 || positives == static_cast<int>(labels.size())) {
    throw UsageError("classifier training needs both classes present");
  }
  const Matrix x = Design(features);
  const Eigen::Index c = x.cols() - 1;
  if (config.kind == ClassifierKind::kLogistic) {
    const Vector theta = Newton<LogisticLoss>(
        x, y, config.l2, config.max_iterations, config.gradient_tolerance);
    return ClassifierModel(theta.head(c), theta[c], config.kind, config.l2);
  }
  const Vector theta = Newton<SquaredHingeLoss>(
      x, y, config.l2, config.max_iterations, config.gradient_tolerance);
  const Vector margins = x * theta;
  const auto [slope, intercept] =
      FitPlatt(margins, y, config.max_iterations);
  return ClassifierModel(theta.head(c), theta[c], config.kind, config.l2,
                         slope, intercept);
}

nlohmann::json ToJson(const ClassifierModel& model) {
  return {{"format", "turnwise.classifier"},
          {"version", 1},
          {"kind", ClassifierKindName(model.kind())},
          {"c", model.dim()},
          {"l2", model.l2()},
          {"weights", std::vector<double>(model.weights().begin(),
                                          model.weights().end())},
          {"bias", model.bias()},
          {"platt_slope", model.platt_slope()},
          {"platt_intercept", model.platt_intercept()}};
}

ClassifierModel ClassifierFromJson(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "turnwise.classifier") {
      throw ParseError("not a classifier document");
    }
    const auto w = doc.at("weights").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != doc.at("c").get<int>()) {
      throw ParseError("classifier weight count disagrees with c");
    }
    return ClassifierModel(
        Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size())),
        doc.at("bias").get<double>(),
        ClassifierKindFromName(doc.at("kind").get<std::string>()),
        doc.at("l2").get<double>(), doc.value("platt_slope", 1.0),
        doc.value("platt_intercept", 0.0));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed classifier document: ") + e.what());
  }
}

}  // namespace turnwise
