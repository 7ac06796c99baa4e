#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "caltrend/estimators.hpp"
#include "caltrend/numeric.hpp"
#include "caltrend/spline.hpp"

namespace caltrend {

enum class BasisKind { constant, linear, polynomial, natural_spline, saturated };

/// A candidate trend model for the effect curve: psi(m; beta) = b(m)' beta
/// with the basis rows precomputed over m = 1..M. All shipped bases are
/// linear in beta, so the curvature term of the scaling matrix vanishes.
/// Complexity ranking is the parameter dimension (declaration order breaks
/// ties downstream).
class MsmBasis {
 public:
  static MsmBasis constant(int M) {
    return MsmBasis(BasisKind::constant, "constant", Eigen::MatrixXd::Ones(M, 1));
  }

  static MsmBasis linear(int M) { return polynomial_impl(M, 1, "linear"); }

  static MsmBasis polynomial(int M, int degree) {
    if (degree < 1) throw Error("msm_projection", "basis", "polynomial degree must be >= 1");
    return polynomial_impl(M, degree, degree == 3 ? "cubic" : "poly" + std::to_string(degree));
  }

  static MsmBasis natural_spline(int M, std::vector<double> internal_knots) {
    for (double k : internal_knots)
      if (!(k > 1.0 && k < static_cast<double>(M)))
        throw Error("msm_projection", "basis", "spline knots must lie strictly inside (1, M)");
    Eigen::VectorXd x(M);
    for (int m = 0; m < M; ++m) x[m] = m + 1;
    const Eigen::MatrixXd ns = natural_spline_basis(x, internal_knots, 1.0, static_cast<double>(M));
    Eigen::MatrixXd design(M, ns.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(ns.cols()) = ns;
    MsmBasis basis(BasisKind::natural_spline, "spline" + std::to_string(internal_knots.size()),
                   std::move(design));
    basis.knots_ = std::move(internal_knots);
    return basis;
  }

  static MsmBasis saturated(int M) {
    return MsmBasis(BasisKind::saturated, "saturated", Eigen::MatrixXd::Identity(M, M));
  }

  BasisKind kind() const { return kind_; }
  const std::string& label() const { return label_; }
  int n_trials() const { return static_cast<int>(design_.rows()); }
  int dim() const { return static_cast<int>(design_.cols()); }
  int complexity_rank() const { return dim(); }
  const Eigen::MatrixXd& design() const { return design_; }
  Eigen::VectorXd row(int m1) const { return design_.row(m1 - 1); }
  const std::vector<double>& knots() const { return knots_; }

  double psi(int m1, const Eigen::Ref<const Eigen::VectorXd>& beta) const {
    return design_.row(m1 - 1).dot(beta);
  }

  Eigen::VectorXd curve(const Eigen::Ref<const Eigen::VectorXd>& beta) const { return design_ * beta; }

 private:
  MsmBasis(BasisKind kind, std::string label, Eigen::MatrixXd design)
      : kind_(kind), label_(std::move(label)), design_(std::move(design)) {}

  static MsmBasis polynomial_impl(int M, int degree, std::string label) {
    Eigen::MatrixXd design(M, degree + 1);
    for (int m = 0; m < M; ++m) {
      double v = 1.0;
      for (int d = 0; d <= degree; ++d) {
        design(m, d) = v;
        v *= static_cast<double>(m + 1);
      }
    }
    return MsmBasis(degree == 1 ? BasisKind::linear : BasisKind::polynomial, std::move(label),
                    std::move(design));
  }

  BasisKind kind_;
  std::string label_;
  Eigen::MatrixXd design_;
  std::vector<double> knots_;
};

/// Optional user trial weights w(m); the effective projection weight is
/// h(m) = w(m) * eligible fraction, so trials contribute in proportion to
/// their eligible population by default.
struct TrialWeights {
  Eigen::VectorXd w;

  static TrialWeights ones(int M) { return TrialWeights{Eigen::VectorXd::Ones(M)}; }

  Eigen::VectorXd effective(const Eigen::Ref<const Eigen::VectorXd>& eligible_fraction) const {
    if (w.size() != eligible_fraction.size())
      throw Error("msm_projection", "weights", "weight vector length does not match trial count");
    for (Eigen::Index m = 0; m < w.size(); ++m)
      if (w[m] < 0.0) throw Error("msm_projection", "weights", "weights must be nonnegative");
    return w.cwiseProduct(eligible_fraction);
  }
};

struct ConvergenceReport {
  bool closed_form = true;
  int iterations = 0;
  double residual_norm = 0.0;
};

struct MsmFit {
  std::string basis_label;
  BasisKind kind = BasisKind::constant;
  Eigen::VectorXd beta;
  Eigen::MatrixXd V_hat;
  Eigen::MatrixXd C_hat;
  Eigen::MatrixXd cov_beta;
  Eigen::VectorXd fitted;      // psi(m; beta_hat), m = 1..M
  Eigen::VectorXd fitted_var;  // b(m)' cov_beta b(m)
  Eigen::VectorXd lo, hi;      // pointwise Wald band
  double alpha = 0.05;
  ConvergenceReport convergence;
  int n_valid_trials = 0;
};

namespace detail {

/// Valid trials for projection: finite estimate and positive effective weight.
inline std::vector<int> usable_trials(const EffectCurve& curve, const Eigen::VectorXd& h) {
  std::vector<int> keep;
  for (int m = 0; m < curve.n_trials(); ++m)
    if (std::isfinite(curve.chi[m]) && h[m] > 0.0) keep.push_back(m);
  return keep;
}

}  // namespace detail

/// Scaling matrix, influence covariance and sandwich covariance at beta.
/// V follows the estimating-equation derivative (curvature term zero for the
/// linear-in-beta bases); C is the empirical covariance of per-subject
/// estimating-function contributions assembled from the effect curve's
/// influence columns.
inline void sandwich_cov(const EffectCurve& curve, const MsmBasis& basis, const TrialWeights& weights,
                         const Eigen::Ref<const Eigen::VectorXd>& beta, Eigen::MatrixXd& V_hat,
                         Eigen::MatrixXd& C_hat, Eigen::MatrixXd& cov_beta) {
  const int M = curve.n_trials();
  const int k = basis.dim();
  const Eigen::VectorXd h = weights.effective(curve.eligible_fraction);
  const auto keep = detail::usable_trials(curve, h);

  V_hat = Eigen::MatrixXd::Zero(k, k);
  for (int m : keep) V_hat.noalias() -= h[m] * basis.design().row(m).transpose() * basis.design().row(m);

  const Eigen::VectorXd psi = basis.curve(beta);
  // Per-subject estimating-function contribution:
  //   d_i = sum_m 1(E_mi) w(m) b(m) (chidag_mi - psi(m)), chidag = if * P(E_m).
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(curve.n, M);
  for (int m : keep) {
    const double wm = weights.w[m];
    const double ef = curve.eligible_fraction[m];
    T.col(m) = wm * (curve.if_contributions.col(m) * ef -
                     psi[m] * curve.eligible.col(m).cast<double>());
  }
  const Eigen::MatrixXd D = T * basis.design();  // n x k
  C_hat = D.transpose() * D / static_cast<double>(curve.n);

  const Eigen::LDLT<Eigen::MatrixXd> vldlt(V_hat);
  if (vldlt.info() != Eigen::Success)
    throw Error("msm_projection", "sandwich", "singular scaling matrix for basis '" + basis.label() + "'");
  const Eigen::MatrixXd vinv_c = vldlt.solve(C_hat);
  cov_beta = vldlt.solve(vinv_c.transpose()).transpose() / static_cast<double>(curve.n);
  // Symmetrize away solver round-off.
  cov_beta = 0.5 * (cov_beta + cov_beta.transpose()).eval();
}

/// Weighted-least-squares solution of the projection estimating equation for
/// linear-in-beta bases (the closed form; authoritative for shipped bases).
inline MsmFit fit_projection(const EffectCurve& curve, const MsmBasis& basis, const TrialWeights& weights,
                             double alpha = 0.05) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("msm_projection", "fit", "alpha must be in (0,1)");
  if (basis.n_trials() != curve.n_trials())
    throw Error("msm_projection", "fit", "basis and curve trial counts differ");
  const int k = basis.dim();
  const Eigen::VectorXd h = weights.effective(curve.eligible_fraction);
  if (h.sum() <= 0.0) throw Error("msm_projection", "fit", "all effective trial weights are zero");
  const auto keep = detail::usable_trials(curve, h);
  if (static_cast<int>(keep.size()) < k)
    throw Error("msm_projection", "fit",
                "basis '" + basis.label() + "' needs " + std::to_string(k) + " usable trials, have " +
                    std::to_string(keep.size()));

  Eigen::MatrixXd xw(static_cast<Eigen::Index>(keep.size()), k);
  Eigen::VectorXd yw(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const int m = keep[i];
    const double sw = std::sqrt(h[m]);
    xw.row(static_cast<Eigen::Index>(i)) = sw * basis.design().row(m);
    yw[static_cast<Eigen::Index>(i)] = sw * curve.chi[m];
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
  if (qr.rank() < k)
    throw Error("msm_projection", "fit", "singular Gram matrix for basis '" + basis.label() + "'");

  MsmFit fit;
  fit.basis_label = basis.label();
  fit.kind = basis.kind();
  fit.alpha = alpha;
  fit.n_valid_trials = static_cast<int>(keep.size());
  fit.beta = qr.solve(yw);
  fit.fitted = basis.curve(fit.beta);

  Eigen::VectorXd residual = Eigen::VectorXd::Zero(k);
  for (int m : keep) residual += h[m] * (curve.chi[m] - fit.fitted[m]) * basis.row(m + 1);
  fit.convergence.residual_norm = residual.cwiseAbs().maxCoeff();

  sandwich_cov(curve, basis, weights, fit.beta, fit.V_hat, fit.C_hat, fit.cov_beta);

  const double z = normal_quantile(1.0 - alpha / 2.0);
  const int M = curve.n_trials();
  fit.fitted_var.resize(M);
  fit.lo.resize(M);
  fit.hi.resize(M);
  for (int m = 0; m < M; ++m) {
    const double var = basis.design().row(m) * fit.cov_beta * basis.design().row(m).transpose();
    fit.fitted_var[m] = std::max(var, 0.0);
    const double half = z * std::sqrt(fit.fitted_var[m]);
    fit.lo[m] = fit.fitted[m] - half;
    fit.hi[m] = fit.fitted[m] + half;
  }
  return fit;
}

/// General estimating-equation problem for a (possibly nonlinear) trend
/// model psi(m; beta). The shipped bases are all linear; this solver exists
/// so nonlinear models slot in without touching the closed form, and it must
/// agree with the closed form on linear bases.
struct ProjectionProblem {
  int M = 0;
  Eigen::VectorXd h;    // effective weight per trial, zero to exclude
  Eigen::VectorXd chi;  // target values; non-finite entries must carry h = 0
  std::function<double(int m1, const Eigen::VectorXd&)> psi;
  std::function<Eigen::VectorXd(int m1, const Eigen::VectorXd&)> grad;
  std::function<Eigen::MatrixXd(int m1, const Eigen::VectorXd&)> hess;  // optional

  static ProjectionProblem from_basis(const MsmBasis& basis, const EffectCurve& curve,
                                      const TrialWeights& weights) {
    ProjectionProblem p;
    p.M = curve.n_trials();
    p.h = weights.effective(curve.eligible_fraction);
    p.chi = curve.chi;
    for (int m = 0; m < p.M; ++m)
      if (!std::isfinite(p.chi[m])) {
        p.h[m] = 0.0;
        p.chi[m] = 0.0;
      }
    p.psi = [basis](int m1, const Eigen::VectorXd& beta) { return basis.psi(m1, beta); };
    p.grad = [basis](int m1, const Eigen::VectorXd& beta) {
      (void)beta;
      return basis.row(m1);
    };
    return p;
  }

  Eigen::VectorXd equation(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(beta.size());
    for (int m = 1; m <= M; ++m) {
      if (h[m - 1] <= 0.0) continue;
      g += h[m - 1] * (chi[m - 1] - psi(m, beta)) * grad(m, beta);
    }
    return g;
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& beta) const {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(beta.size(), beta.size());
    for (int m = 1; m <= M; ++m) {
      if (h[m - 1] <= 0.0) continue;
      const Eigen::VectorXd g = grad(m, beta);
      j.noalias() -= h[m - 1] * g * g.transpose();
      if (hess) j.noalias() += h[m - 1] * (chi[m - 1] - psi(m, beta)) * hess(m, beta);
    }
    return j;
  }
};

struct NewtonResult {
  Eigen::VectorXd beta;
  ConvergenceReport report;
};

/// Damped Newton on the projection estimating equation with step-halving on
/// the residual norm. Tolerance is relative to the equation's natural scale.
inline NewtonResult solve_projection_newton(const ProjectionProblem& problem, const Eigen::VectorXd& beta0,
                                            int max_iter = 100, double tol = 1e-10) {
  NewtonResult out;
  out.beta = beta0;
  out.report.closed_form = false;
  double scale = 0.0;
  for (int m = 0; m < problem.M; ++m) scale += problem.h[m] * (1.0 + std::abs(problem.chi[m]));
  scale = std::max(scale, 1e-12);
  Eigen::VectorXd g = problem.equation(out.beta);
  std::string trace;
  for (int iter = 0; iter < max_iter; ++iter) {
    const double gnorm = g.cwiseAbs().maxCoeff();
    trace += (iter ? " " : "") + std::to_string(gnorm);
    if (gnorm <= tol * scale) {
      out.report.iterations = iter;
      out.report.residual_norm = gnorm;
      return out;
    }
    const Eigen::MatrixXd j = problem.jacobian(out.beta);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(j);
    if (!lu.isInvertible())
      throw Error("msm_projection", "newton", "singular Jacobian in Newton solve");
    const Eigen::VectorXd step = lu.solve(-g);
    double t = 1.0;
    Eigen::VectorXd candidate, gc;
    for (int half = 0; half < 40; ++half) {
      candidate = out.beta + t * step;
      gc = problem.equation(candidate);
      if (gc.cwiseAbs().maxCoeff() < gnorm) break;
      t *= 0.5;
    }
    out.beta = candidate;
    g = gc;
  }
  const double gnorm = g.cwiseAbs().maxCoeff();
  if (gnorm > tol * scale)
    throw Error("msm_projection", "newton",
                "no convergence after " + std::to_string(max_iter) + " iterations; residual trace: " + trace);
  out.report.iterations = max_iter;
  out.report.residual_norm = gnorm;
  return out;
}

}  // namespace caltrend
