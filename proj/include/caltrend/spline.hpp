#pragma once

#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "caltrend/common.hpp"

namespace caltrend {

namespace detail {

/// Value (deriv=0) or deriv-th derivative of cubic B-spline basis functions
/// on an augmented (clamped) knot vector, Cox-de Boor recursion. The last
/// interval is right-closed so the right boundary evaluates cleanly.
class BSplineBasis {
 public:
  explicit BSplineBasis(std::vector<double> augmented_knots) : t_(std::move(augmented_knots)) {}

  int size() const { return static_cast<int>(t_.size()) - kOrder; }

  double eval(int i, double x, int deriv = 0) const { return basis(i, kOrder, x, deriv); }

  Eigen::MatrixXd design(const Eigen::Ref<const Eigen::VectorXd>& x, int deriv = 0) const {
    Eigen::MatrixXd out(x.size(), size());
    for (Eigen::Index r = 0; r < x.size(); ++r)
      for (int i = 0; i < size(); ++i) out(r, i) = eval(i, x[r], deriv);
    return out;
  }

 private:
  static constexpr int kOrder = 4;  // cubic

  double basis(int i, int k, double x, int deriv) const {
    if (deriv > 0) {
      double left = 0.0, right = 0.0;
      if (t(i + k - 1) > t(i)) left = (k - 1) / (t(i + k - 1) - t(i)) * basis(i, k - 1, x, deriv - 1);
      if (t(i + k) > t(i + 1)) right = (k - 1) / (t(i + k) - t(i + 1)) * basis(i + 1, k - 1, x, deriv - 1);
      return left - right;
    }
    if (k == 1) {
      if (t(i) <= x && x < t(i + 1)) return 1.0;
      if (x == t_.back() && t(i) < t(i + 1) && t(i + 1) == t_.back()) return 1.0;
      return 0.0;
    }
    double v = 0.0;
    if (t(i + k - 1) > t(i)) v += (x - t(i)) / (t(i + k - 1) - t(i)) * basis(i, k - 1, x, 0);
    if (t(i + k) > t(i + 1)) v += (t(i + k) - x) / (t(i + k) - t(i + 1)) * basis(i + 1, k - 1, x, 0);
    return v;
  }

  double t(int i) const { return t_[static_cast<std::size_t>(i)]; }

  std::vector<double> t_;
};

}  // namespace detail

/// Natural cubic spline basis without intercept: the cubic B-spline basis on
/// the given knots, dropped intercept column, projected onto the null space
/// of the second-derivative constraints at both boundary knots. This is the
/// construction used by standard statistical software, so published
/// coefficient sets against such a basis apply directly. Columns: K+1 for K
/// internal knots; every column vanishes at the left boundary.
inline Eigen::MatrixXd natural_spline_basis(const Eigen::Ref<const Eigen::VectorXd>& x,
                                            const std::vector<double>& internal_knots,
                                            double boundary_lo, double boundary_hi) {
  if (!(boundary_lo < boundary_hi))
    throw Error("msm_projection", "spline", "boundary knots must be increasing");
  for (std::size_t i = 0; i < internal_knots.size(); ++i) {
    if (!(internal_knots[i] > boundary_lo && internal_knots[i] < boundary_hi))
      throw Error("msm_projection", "spline", "internal knots must lie strictly inside the boundary");
    if (i > 0 && !(internal_knots[i] > internal_knots[i - 1]))
      throw Error("msm_projection", "spline", "internal knots must be strictly increasing");
  }
  std::vector<double> aug;
  aug.insert(aug.end(), 4, boundary_lo);
  aug.insert(aug.end(), internal_knots.begin(), internal_knots.end());
  aug.insert(aug.end(), 4, boundary_hi);
  const detail::BSplineBasis bs(std::move(aug));

  Eigen::VectorXd boundary(2);
  boundary << boundary_lo, boundary_hi;
  // Drop the leading B-spline column (absorbed by the model intercept),
  // then remove the two boundary-curvature directions.
  const Eigen::MatrixXd full = bs.design(x);
  const Eigen::MatrixXd d2 = bs.design(boundary, 2);
  const Eigen::Index p = full.cols() - 1;
  const Eigen::MatrixXd basis = full.rightCols(p);
  const Eigen::MatrixXd constraint = d2.rightCols(p);

  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(constraint.transpose());
  const Eigen::MatrixXd q = qr.householderQ();
  return basis * q.rightCols(p - 2);
}

/// Tercile-style default internal knots for a spline on 1..M: the R type-7
/// quantiles of {1,...,M} at k/(K+1), k = 1..K.
inline std::vector<double> default_internal_knots(int M, int n_knots) {
  std::vector<double> knots(static_cast<std::size_t>(n_knots));
  for (int k = 1; k <= n_knots; ++k) {
    const double p = static_cast<double>(k) / (n_knots + 1);
    knots[static_cast<std::size_t>(k - 1)] = 1.0 + (M - 1) * p;
  }
  return knots;
}

/// Spline design over trial indices 1..M with K internal knots at tercile
/// positions (the layout used for trial-time covariate paths and MSM bases).
inline Eigen::MatrixXd trial_spline_design(int M, int n_internal_knots) {
  Eigen::VectorXd x(M);
  for (int m = 0; m < M; ++m) x[m] = m + 1;
  return natural_spline_basis(x, default_internal_knots(M, n_internal_knots), 1.0, M);
}

}  // namespace caltrend
