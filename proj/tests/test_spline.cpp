#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "caltrend/spline.hpp"

using namespace caltrend;

namespace {

TEST(NaturalSpline, ShapeAndLeftBoundaryZeros) {
  const Eigen::MatrixXd design = trial_spline_design(36, 2);
  ASSERT_EQ(design.rows(), 36);
  ASSERT_EQ(design.cols(), 3);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(design(0, c), 0.0, 1e-12);
}

// Right-boundary row of the 36-trial, 2-knot design; values derived from an
// independent reference construction of the same basis.
TEST(NaturalSpline, RightBoundaryAnchor) {
  const Eigen::MatrixXd design = trial_spline_design(36, 2);
  EXPECT_NEAR(design(35, 0), -1.0 / 7.0, 1e-9);
  EXPECT_NEAR(design(35, 1), 3.0 / 7.0, 1e-9);
  EXPECT_NEAR(design(35, 2), 5.0 / 7.0, 1e-9);
}

TEST(NaturalSpline, DefaultKnotsAtTerciles) {
  const auto knots = default_internal_knots(36, 2);
  ASSERT_EQ(knots.size(), 2u);
  EXPECT_NEAR(knots[0], 1.0 + 35.0 / 3.0, 1e-12);
  EXPECT_NEAR(knots[1], 1.0 + 70.0 / 3.0, 1e-12);
}

// The span of [1, basis] must contain every linear function: natural cubic
// splines are linear near the boundary and reproduce linear trends exactly.
TEST(NaturalSpline, SpanContainsLinearFunctions) {
  const int M = 24;
  Eigen::VectorXd x(M);
  for (int m = 0; m < M; ++m) x[m] = m + 1;
  const Eigen::MatrixXd ns = natural_spline_basis(x, {8.0, 16.0}, 1.0, 24.0);
  Eigen::MatrixXd design(M, ns.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(ns.cols()) = ns;
  const Eigen::VectorXd target = 3.0 * x.array() - 7.0;
  const Eigen::VectorXd beta = design.colPivHouseholderQr().solve(target);
  EXPECT_LT((design * beta - target).cwiseAbs().maxCoeff(), 1e-9);
}

// Natural boundary conditions: second derivative vanishes at both boundary
// knots (checked by a centered second difference on a dense grid just inside
// the boundary, where the spline is linear by construction).
TEST(NaturalSpline, SecondDerivativeZeroAtBoundaries) {
  const double h = 1e-3;
  Eigen::VectorXd x(6);
  x << 1.0, 1.0 + h, 1.0 + 2 * h, 36.0 - 2 * h, 36.0 - h, 36.0;
  const Eigen::MatrixXd b = natural_spline_basis(x, {12.0, 24.0}, 1.0, 36.0);
  for (int c = 0; c < b.cols(); ++c) {
    const double d2_left = (b(2, c) - 2 * b(1, c) + b(0, c)) / (h * h);
    const double d2_right = (b(5, c) - 2 * b(4, c) + b(3, c)) / (h * h);
    EXPECT_NEAR(d2_left, 0.0, 1e-4);
    EXPECT_NEAR(d2_right, 0.0, 1e-4);
  }
}

// C2 smoothness at an internal knot: second differences from the left and
// right of the knot agree to discretization error.
TEST(NaturalSpline, SmoothAcrossInternalKnot) {
  const double knot = 12.0, h = 1e-3;
  Eigen::VectorXd x(7);
  x << knot - 3 * h, knot - 2 * h, knot - h, knot, knot + h, knot + 2 * h, knot + 3 * h;
  const Eigen::MatrixXd b = natural_spline_basis(x, {12.0, 24.0}, 1.0, 36.0);
  for (int c = 0; c < b.cols(); ++c) {
    const double d2_left = (b(2, c) - 2 * b(1, c) + b(0, c)) / (h * h);
    const double d2_right = (b(6, c) - 2 * b(5, c) + b(4, c)) / (h * h);
    EXPECT_NEAR(d2_left, d2_right, 0.05);
  }
}

TEST(NaturalSpline, RejectsBadKnots) {
  Eigen::VectorXd x(3);
  x << 1.0, 2.0, 3.0;
  EXPECT_THROW(natural_spline_basis(x, {0.5}, 1.0, 3.0), Error);
  EXPECT_THROW(natural_spline_basis(x, {2.0, 2.0}, 1.0, 3.0), Error);
  EXPECT_THROW(natural_spline_basis(x, {}, 3.0, 1.0), Error);
}

}  // namespace
