#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "caltrend/common.hpp"
#include "caltrend/numeric.hpp"

namespace caltrend {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Learner family plus named hyperparameters. Families cover the pooled
/// nuisance roles: regression (outcome), binary probability (propensity),
/// and one-vs-rest multiclass (trial membership).
struct LearnerSpec {
  enum class Family { linear, logistic, tree_ensemble, multinomial_tree_ensemble };

  Family family = Family::linear;
  std::map<std::string, double> hyper;

  double get(const std::string& name, double fallback) const {
    const auto it = hyper.find(name);
    return it == hyper.end() ? fallback : it->second;
  }

  void validate() const {
    for (const auto& [name, value] : hyper) {
      if (name == "num_trees" && value < 1) throw Error("nuisance_learners", "spec", "num_trees must be >= 1");
      if (name == "max_depth" && value < 1) throw Error("nuisance_learners", "spec", "max_depth must be >= 1");
      if (name == "min_leaf" && value < 1) throw Error("nuisance_learners", "spec", "min_leaf must be >= 1");
      if (name == "mtry" && value < 1) throw Error("nuisance_learners", "spec", "mtry must be >= 1");
      if (name == "ridge" && value < 0) throw Error("nuisance_learners", "spec", "ridge must be >= 0");
    }
  }

  static Family family_from_string(const std::string& s) {
    if (s == "linear") return Family::linear;
    if (s == "logistic") return Family::logistic;
    if (s == "tree_ensemble") return Family::tree_ensemble;
    if (s == "multinomial_tree_ensemble") return Family::multinomial_tree_ensemble;
    throw Error("nuisance_learners", "spec", "unknown learner family '" + s + "'");
  }

  static std::string family_to_string(Family f) {
    switch (f) {
      case Family::linear: return "linear";
      case Family::logistic: return "logistic";
      case Family::tree_ensemble: return "tree_ensemble";
      case Family::multinomial_tree_ensemble: return "multinomial_tree_ensemble";
    }
    return "?";
  }
};

/// A fitted single-output model: regression value or P(y=1 | x).
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual double predict(const double* x, int p) const = 0;
  virtual void serialize(std::vector<double>& out) const = 0;
};

class MulticlassPredictor {
 public:
  virtual ~MulticlassPredictor() = default;
  virtual int n_classes() const = 0;
  /// Class probabilities; nonnegative, summing to one.
  virtual void predict(const double* x, int p, double* probs) const = 0;
  virtual void serialize(std::vector<double>& out) const = 0;
};

/// Ordinary / ridge least squares with an implicit intercept.
class LinearModel final : public Predictor {
 public:
  LinearModel() = default;
  explicit LinearModel(Eigen::VectorXd coef) : coef_(std::move(coef)) {}

  static LinearModel fit(const RowMatrixXd& x, const Eigen::Ref<const Eigen::VectorXd>& y, double ridge) {
    const Eigen::Index n = x.rows(), p = x.cols();
    Eigen::MatrixXd xtx(p + 1, p + 1);
    Eigen::VectorXd xty(p + 1);
    Eigen::MatrixXd design(n, p + 1);
    design.col(0).setOnes();
    design.rightCols(p) = x;
    xtx.noalias() = design.transpose() * design;
    xty.noalias() = design.transpose() * y;
    if (ridge > 0.0) xtx.diagonal().tail(p).array() += ridge;  // intercept unpenalized
    if (ridge <= 0.0) {
      const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
      if (qr.rank() < p + 1)
        throw Error("nuisance_learners", "linear",
                    "singular design matrix; consider a ridge penalty (hyperparameter 'ridge')");
      return LinearModel(qr.solve(y));
    }
    return LinearModel(Eigen::LDLT<Eigen::MatrixXd>(xtx).solve(xty));
  }

  double predict(const double* x, int p) const override {
    double v = coef_[0];
    for (int i = 0; i < p; ++i) v += coef_[i + 1] * x[i];
    return v;
  }

  const Eigen::VectorXd& coefficients() const { return coef_; }

  void serialize(std::vector<double>& out) const override {
    out.push_back(static_cast<double>(coef_.size()));
    for (Eigen::Index i = 0; i < coef_.size(); ++i) out.push_back(coef_[i]);
  }

  static LinearModel deserialize(const double*& it) {
    const auto k = static_cast<Eigen::Index>(*it++);
    Eigen::VectorXd coef(k);
    for (Eigen::Index i = 0; i < k; ++i) coef[i] = *it++;
    return LinearModel(std::move(coef));
  }

 private:
  Eigen::VectorXd coef_;
};

/// Logistic regression by iteratively reweighted least squares.
class LogisticModel final : public Predictor {
 public:
  LogisticModel() = default;
  explicit LogisticModel(Eigen::VectorXd coef) : coef_(std::move(coef)) {}

  static LogisticModel fit(const RowMatrixXd& x, const Eigen::Ref<const Eigen::VectorXd>& y, double ridge,
                           int max_iter = 100, double tol = 1e-10) {
    const Eigen::Index n = x.rows(), p = x.cols();
    Eigen::MatrixXd design(n, p + 1);
    design.col(0).setOnes();
    design.rightCols(p) = x;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
    // Warm-start the intercept at the marginal log-odds.
    const double ybar = std::clamp(y.mean(), 1e-8, 1.0 - 1e-8);
    beta[0] = std::log(ybar / (1.0 - ybar));
    Eigen::VectorXd eta(n), mu(n), w(n), z(n);
    for (int iter = 0; iter < max_iter; ++iter) {
      eta.noalias() = design * beta;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double e = std::clamp(eta[i], -30.0, 30.0);
        mu[i] = expit(e);
        w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
        z[i] = e + (y[i] - mu[i]) / w[i];
      }
      Eigen::MatrixXd xtwx = design.transpose() * w.asDiagonal() * design;
      if (ridge > 0.0) xtwx.diagonal().tail(p).array() += ridge;
      const Eigen::VectorXd xtwz = design.transpose() * (w.array() * z.array()).matrix();
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(xtwx);
      if (ldlt.info() != Eigen::Success)
        throw Error("nuisance_learners", "logistic",
                    "singular weighted design; consider a ridge penalty (hyperparameter 'ridge')");
      const Eigen::VectorXd next = ldlt.solve(xtwz);
      const double step = (next - beta).cwiseAbs().maxCoeff();
      beta = next;
      if (step < tol) break;
    }
    return LogisticModel(std::move(beta));
  }

  double predict(const double* x, int p) const override {
    double v = coef_[0];
    for (int i = 0; i < p; ++i) v += coef_[i + 1] * x[i];
    return expit(v);
  }

  const Eigen::VectorXd& coefficients() const { return coef_; }

  void serialize(std::vector<double>& out) const override {
    out.push_back(static_cast<double>(coef_.size()));
    for (Eigen::Index i = 0; i < coef_.size(); ++i) out.push_back(coef_[i]);
  }

  static LogisticModel deserialize(const double*& it) {
    const auto k = static_cast<Eigen::Index>(*it++);
    Eigen::VectorXd coef(k);
    for (Eigen::Index i = 0; i < k; ++i) coef[i] = *it++;
    return LogisticModel(std::move(coef));
  }

 private:
  Eigen::VectorXd coef_;
};

/// Constant-prediction model. The deliberate-misspecification arm of the
/// double-robustness checks, and the fallback for empty strata.
class ConstantModel final : public Predictor {
 public:
  explicit ConstantModel(double value) : value_(value) {}
  double predict(const double*, int) const override { return value_; }
  void serialize(std::vector<double>& out) const override { out.push_back(value_); }
  static ConstantModel deserialize(const double*& it) { return ConstantModel(*it++); }

 private:
  double value_;
};

}  // namespace caltrend
