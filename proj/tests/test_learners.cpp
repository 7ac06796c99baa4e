#include <gtest/gtest.h>

#include "caltrend/learners.hpp"
#include "caltrend/numeric.hpp"
#include "caltrend/rng.hpp"

using namespace caltrend;

namespace {

RowMatrixXd random_design(int n, int p, Rng& rng) {
  RowMatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = rng.normal();
  return x;
}

TEST(LinearModel, RecoversCoefficients) {
  Rng rng(11);
  const int n = 4000, p = 4;
  const RowMatrixXd x = random_design(n, p, rng);
  Eigen::VectorXd beta(p);
  beta << 1.5, -2.0, 0.0, 0.25;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = 0.7 + x.row(i).dot(beta) + 0.1 * rng.normal();
  const auto model = LinearModel::fit(x, y, 0.0);
  EXPECT_NEAR(model.coefficients()[0], 0.7, 0.02);
  for (int j = 0; j < p; ++j) EXPECT_NEAR(model.coefficients()[j + 1], beta[j], 0.02);
  EXPECT_NEAR(model.predict(x.row(0).data(), p), 0.7 + x.row(0).dot(beta), 0.05);
}

TEST(LinearModel, SingularDesignSuggestsRidge) {
  Rng rng(12);
  RowMatrixXd x = random_design(200, 3, rng);
  x.col(2) = x.col(1);  // exact collinearity
  Eigen::VectorXd y = x.col(0);
  EXPECT_THROW(
      {
        try {
          LinearModel::fit(x, y, 0.0);
        } catch (const Error& e) {
          EXPECT_NE(std::string(e.what()).find("ridge"), std::string::npos);
          throw;
        }
      },
      Error);
  EXPECT_NO_THROW(LinearModel::fit(x, y, 1e-6));
}

TEST(LogisticModel, RecoversCoefficients) {
  Rng rng(13);
  const int n = 20000, p = 3;
  const RowMatrixXd x = random_design(n, p, rng);
  Eigen::VectorXd beta(p);
  beta << 0.8, -1.2, 0.4;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.bernoulli(expit(-0.3 + x.row(i).dot(beta))) ? 1.0 : 0.0;
  const auto model = LogisticModel::fit(x, y, 0.0);
  EXPECT_NEAR(model.coefficients()[0], -0.3, 0.08);
  for (int j = 0; j < p; ++j) EXPECT_NEAR(model.coefficients()[j + 1], beta[j], 0.08);
  const double prob = model.predict(x.row(5).data(), p);
  EXPECT_GT(prob, 0.0);
  EXPECT_LT(prob, 1.0);
}

// No-signal case: with treatment independent of covariates the fitted
// probabilities concentrate at the empirical treated fraction.
TEST(LogisticModel, NoSignalGivesMarginalRate) {
  Rng rng(14);
  const int n = 20000, p = 3;
  const RowMatrixXd x = random_design(n, p, rng);
  Eigen::VectorXd y(n);
  double rate = 0.0;
  for (int i = 0; i < n; ++i) {
    y[i] = rng.bernoulli(0.35) ? 1.0 : 0.0;
    rate += y[i];
  }
  rate /= n;
  const auto model = LogisticModel::fit(x, y, 0.0);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double pr = model.predict(x.row(i).data(), p);
    lo = std::min(lo, pr);
    hi = std::max(hi, pr);
  }
  EXPECT_NEAR(lo, rate, 0.05);
  EXPECT_NEAR(hi, rate, 0.05);
}

TEST(LearnerSpec, ValidatesHyperparameters) {
  LearnerSpec spec;
  spec.family = LearnerSpec::Family::tree_ensemble;
  spec.hyper["num_trees"] = 0;
  EXPECT_THROW(spec.validate(), Error);
  spec.hyper["num_trees"] = 500;
  spec.hyper["max_depth"] = 0;
  EXPECT_THROW(spec.validate(), Error);
  spec.hyper["max_depth"] = 10;
  EXPECT_NO_THROW(spec.validate());
  EXPECT_EQ(LearnerSpec::family_from_string("logistic"), LearnerSpec::Family::logistic);
  EXPECT_THROW(LearnerSpec::family_from_string("boosted"), Error);
}

TEST(ConstantModel, AlwaysSameValue) {
  ConstantModel model(3.25);
  const double x[2] = {1.0, -5.0};
  EXPECT_DOUBLE_EQ(model.predict(x, 2), 3.25);
}

}  // namespace
