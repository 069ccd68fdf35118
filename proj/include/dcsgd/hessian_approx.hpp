#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcsgd/matrix.hpp"
#include "dcsgd/model.hpp"

namespace dcsgd {

// Hessian approximators built from the gradient outer product G = g g^T:
// G itself, lambda-scaled G, and the diagonal of lambda-scaled G (the form
// the DC-ASGD update actually uses).
enum class ApproximatorForm { OuterProduct, LambdaScaled, DiagLambdaScaled };

struct ApproximatorKind {
  ApproximatorForm form = ApproximatorForm::OuterProduct;
  double lambda = 1.0;

  static ApproximatorKind outer_product() { return {ApproximatorForm::OuterProduct, 1.0}; }
  static ApproximatorKind lambda_scaled(double lambda) {
    check_lambda(lambda);
    return {ApproximatorForm::LambdaScaled, lambda};
  }
  static ApproximatorKind diag_lambda_scaled(double lambda) {
    check_lambda(lambda);
    return {ApproximatorForm::DiagLambdaScaled, lambda};
  }

 private:
  static void check_lambda(double lambda) {
    if (lambda < 0.0 || lambda > 1.0)
      throw std::invalid_argument("lambda must be in [0,1]");
  }
};

struct MseReport {
  double mse_g = 0.0;
  double mse_lambda_g = 0.0;
  double mse_diag = 0.0;
  double epsilon_t = 0.0;
  bool condition_held = false;
};

// Empirical constants for the sufficient-condition checkers, taken over a
// probe set:
// per-coordinate bounds on |d sigma_k / d w_i|, probability-ratio bounds
// sigma_k(x,w*)/sigma_k(x,w_t), and a gradient-norm bound. These are
// estimates measured by enumeration, not proved constants.
struct LipschitzEstimates {
  double l1 = 0.0;  // max over probes/labels of ||grad loss||_2
  Vec lower;        // l_i = min over probes, labels of |d sigma_k / d w_i|
  Vec upper;        // u_i = max --
  double alpha = 0.0;
  double beta = 0.0;

  bool valid() const {
    if (!(alpha > 0.0) || !(beta >= alpha) || !std::isfinite(beta)) return false;
    if (!std::isfinite(l1)) return false;
    for (std::size_t i = 0; i < lower.size(); ++i)
      if (!(lower[i] > 0.0) || !std::isfinite(upper[i])) return false;
    return true;
  }
};

constexpr int kEnumerationLimit = 64;

inline void check_enumeration(const ModelSpec& spec) {
  if (spec.k > kEnumerationLimit)
    throw std::invalid_argument("label enumeration limit exceeded");
}

namespace detail {
inline void scale_in_place(double& a, double s) { a *= s; }
inline void scale_in_place(Vec& a, double s) {
  for (double& v : a) v *= s;
}
inline void scale_in_place(Matrix& a, double s) { a *= s; }
inline void add_in_place(double& a, double b) { a += b; }
inline void add_in_place(Vec& a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}
inline void add_in_place(Matrix& a, const Matrix& b) { a += b; }
}  // namespace detail

// Exact expectation over y ~ sigma(x; w_star): sum_k sigma_k * f(k).
// f may return double, Vec or Matrix.
template <class F>
auto expected_over_labels(const Vec& x, const ParamVector& w_star, F&& f,
                          const ModelSpec& spec) {
  check_enumeration(spec);
  Vec p = predict(x, w_star, spec);
  auto acc = f(0);
  detail::scale_in_place(acc, p[0]);
  for (int k = 1; k < spec.k; ++k) {
    auto term = f(k);
    detail::scale_in_place(term, p[k]);
    detail::add_in_place(acc, term);
  }
  return acc;
}

inline Matrix approximator_matrix(const ApproximatorKind& kind, const Vec& g) {
  Matrix a = outer(g, g);
  switch (kind.form) {
    case ApproximatorForm::OuterProduct:
      return a;
    case ApproximatorForm::LambdaScaled:
      a *= kind.lambda;
      return a;
    case ApproximatorForm::DiagLambdaScaled:
      a *= kind.lambda;
      return a.diagonal_part();
  }
  throw std::logic_error("unreachable");
}

// mse^t(A) = E_{y|x,w*} ||A(y) - H(y)||_F^2, exact by enumeration.
inline double mse_of_approximator(const ApproximatorKind& kind, const Vec& x,
                                  const ParamVector& w_t, const ParamVector& w_star,
                                  const ModelSpec& spec) {
  check_enumeration(spec);
  Vec p_star = predict(x, w_star, spec);
  double mse = 0.0;
  for (int k = 0; k < spec.k; ++k) {
    Vec g = gradient(DatasetSample{x, k}, w_t, spec);
    Matrix diff = approximator_matrix(kind, g) - label_hessian(x, k, w_t, spec);
    mse += p_star[k] * diff.frobenius_sq();
  }
  return mse;
}

// epsilon_t = || E G - E H ||_F under y ~ sigma(x; w*). Vanishes at
// w_t = w_star (the two ways of writing the Fisher information agree).
inline double epsilon_t(const Vec& x, const ParamVector& w_t, const ParamVector& w_star,
                        const ModelSpec& spec) {
  check_enumeration(spec);
  Vec p_star = predict(x, w_star, spec);
  std::size_t n = spec.param_count();
  Matrix acc(n, n, 0.0);
  for (int k = 0; k < spec.k; ++k) {
    Vec g = gradient(DatasetSample{x, k}, w_t, spec);
    Matrix term = outer(g, g) - label_hessian(x, k, w_t, spec);
    term *= p_star[k];
    acc += term;
  }
  return acc.frobenius_norm();
}

enum class ConditionMode {
  // separate per-(i,j) constants C_ij for the squared-sum term and C'_ij for
  // the bias term, evaluated at the worst pair; the tighter bookkeeping and
  // the default
  PerCoordinatePair,
  // one constant C = max_ij (1/(1+lambda)) (u_i u_j beta / (l_i l_j alpha))^2
  // applied to both terms, with the bias term entering as 2 C L1^2 eps_t
  SingleConstant,
};

// Sufficient condition for mse(lambda G) <= mse(G):
//   sum_k 1/sigma_k^3 >= RHS(constants, lambda, eps_t).
inline bool lambda_mse_condition(const Vec& sigma_t, double lambda,
                                 const LipschitzEstimates& lips, double eps_t,
                                 ConditionMode mode = ConditionMode::PerCoordinatePair) {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must be in [0,1]");
  double inv_sum = 0.0, inv_cube_sum = 0.0;
  for (double s : sigma_t) {
    if (!(s > 0.0)) throw std::invalid_argument("sigma entries must be > 0");
    inv_sum += 1.0 / s;
    inv_cube_sum += 1.0 / (s * s * s);
  }
  if (!lips.valid()) return false;
  const double sq = inv_sum * inv_sum;
  const double scale = 1.0 / (1.0 + lambda);
  if (mode == ConditionMode::SingleConstant) {
    double rmax = 0.0;
    for (std::size_t i = 0; i < lips.lower.size(); ++i)
      rmax = std::max(rmax, lips.upper[i] / lips.lower[i]);
    double c = scale * std::pow(rmax * rmax * lips.beta / lips.alpha, 2.0);
    double rhs = 2.0 * c * (sq + 2.0 * lips.l1 * lips.l1 * eps_t);
    if (!std::isfinite(rhs)) return false;
    return inv_cube_sum >= rhs;
  }
  // worst (i,j) pair: C_ij grows with u/l ratios, C'_ij with 1/l, so the
  // two maxima can sit at different pairs; scan both extremes
  double rmax = 0.0, lmin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lips.lower.size(); ++i) {
    rmax = std::max(rmax, lips.upper[i] / lips.lower[i]);
    lmin = std::min(lmin, lips.lower[i]);
  }
  double c_ij = scale * std::pow(rmax, 4.0) * lips.beta * lips.beta / lips.alpha;
  double cp_ij = scale / (lips.alpha * std::pow(lmin, 4.0));
  double rhs = 2.0 * (c_ij * sq + cp_ij * lips.l1 * lips.l1 * std::fabs(eps_t));
  if (!std::isfinite(rhs)) return false;
  return inv_cube_sum >= rhs;
}

// Worst-pair constants of the per-(i,j) mode, exposed so the matching
// sufficient region can be formed from the same quantities the checker uses.
inline std::pair<double, double> lambda_mse_pair_constants(
    const LipschitzEstimates& lips, double lambda) {
  double rmax = 0.0, lmin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lips.lower.size(); ++i) {
    rmax = std::max(rmax, lips.upper[i] / lips.lower[i]);
    lmin = std::min(lmin, lips.lower[i]);
  }
  double scale = 1.0 / (1.0 + lambda);
  return {scale * std::pow(rmax, 4.0) * lips.beta * lips.beta / lips.alpha,
          scale / (lips.alpha * std::pow(lmin, 4.0))};
}

// Single worst-case constant C for a given probe's estimates.
inline double lambda_mse_single_constant(const LipschitzEstimates& lips, double lambda) {
  double rmax = 0.0;
  for (std::size_t i = 0; i < lips.lower.size(); ++i)
    rmax = std::max(rmax, lips.upper[i] / lips.lower[i]);
  return (1.0 / (1.0 + lambda)) * std::pow(rmax * rmax * lips.beta / lips.alpha, 2.0);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

// Sufficient region for the condition: some sigma_{k0} in
// [1 - (K-1)/(2C(K^2 + L1^2 eps_t)), 1].
inline Interval sufficient_sigma_region(int k, double c, double l1, double eps_t) {
  if (k < 2) throw std::invalid_argument("need K >= 2");
  if (!(c > 0)) throw std::invalid_argument("need C > 0");
  double lo = 1.0 - (k - 1) / (2.0 * c * (static_cast<double>(k) * k + l1 * l1 * eps_t));
  if (lo < 0.0) lo = 0.0;
  return {lo, 1.0};
}

// Region form matched to ConditionMode::PerCoordinatePair, built from the
// same worst-pair constants the checker evaluates.
inline Interval sufficient_sigma_region_pair(int k, double c_ij, double cp_ij,
                                             double l1, double eps_t) {
  if (k < 2) throw std::invalid_argument("need K >= 2");
  if (!(c_ij > 0) || !(cp_ij > 0)) throw std::invalid_argument("need constants > 0");
  double denom = 2.0 * (c_ij * k * k + cp_ij * l1 * l1 * std::fabs(eps_t));
  double lo = 1.0 - (k - 1) / denom;
  if (lo < 0.0) lo = 0.0;
  return {lo, 1.0};
}

// Uniform MSE bound for Diag(lambda G):
//   4 lambda^2 V1 + 4 (1-lambda)^2 L1^4 + 4 eps_t^2 + 4 eps_D.
inline double diag_mse_bound(double lambda, double v1, double l1, double eps_t,
                             double eps_d) {
  if (lambda < 0 || v1 < 0 || l1 < 0 || eps_t < 0 || eps_d < 0)
    throw std::invalid_argument("bound inputs must be >= 0");
  double bias = 1.0 - lambda;
  return 4.0 * lambda * lambda * v1 + 4.0 * bias * bias * l1 * l1 * l1 * l1 +
         4.0 * eps_t * eps_t + 4.0 * eps_d;
}

// d sigma_k / d w, by closed form for softmax regression and central
// differences otherwise.
inline Vec sigma_derivative(const Vec& x, int k, const ParamVector& w,
                            const ModelSpec& spec) {
  std::size_t n = spec.param_count();
  Vec out(n, 0.0);
  if (spec.kind == ModelKind::SoftmaxRegression) {
    Vec p = predict(x, w, spec);
    for (int c = 0; c < spec.k; ++c) {
      double s = p[k] * ((k == c ? 1.0 : 0.0) - p[c]);
      for (int j = 0; j < spec.d; ++j)
        out[static_cast<std::size_t>(c) * spec.d + j] = s * x[j];
    }
    return out;
  }
  ParamVector wp = w;
  for (std::size_t i = 0; i < n; ++i) {
    wp[i] = w[i] + kFdStep;
    double up = predict(x, wp, spec)[k];
    wp[i] = w[i] - kFdStep;
    double dn = predict(x, wp, spec)[k];
    wp[i] = w[i];
    out[i] = (up - dn) / (2.0 * kFdStep);
  }
  return out;
}

// Empirical min/max over a probe set (all labels enumerated). A set of one
// probe gives bounds that are exact for that probe, which is what the
// condition sweep uses.
inline LipschitzEstimates estimate_lipschitz(
    const std::vector<std::pair<Vec, ParamVector>>& probes, const ParamVector& w_star,
    const ModelSpec& spec) {
  if (probes.empty()) throw std::invalid_argument("empty probe set");
  check_enumeration(spec);
  std::size_t n = spec.param_count();
  LipschitzEstimates est;
  est.lower.assign(n, std::numeric_limits<double>::infinity());
  est.upper.assign(n, 0.0);
  est.alpha = std::numeric_limits<double>::infinity();
  est.beta = 0.0;
  est.l1 = 0.0;
  for (const auto& [x, w_t] : probes) {
    Vec p_t = predict(x, w_t, spec);
    Vec p_star = predict(x, w_star, spec);
    for (int k = 0; k < spec.k; ++k) {
      double ratio = p_star[k] / p_t[k];
      est.alpha = std::min(est.alpha, ratio);
      est.beta = std::max(est.beta, ratio);
      est.l1 = std::max(est.l1, norm2(gradient(DatasetSample{x, k}, w_t, spec)));
      Vec ds = sigma_derivative(x, k, w_t, spec);
      for (std::size_t i = 0; i < n; ++i) {
        double a = std::fabs(ds[i]);
        est.lower[i] = std::min(est.lower[i], a);
        est.upper[i] = std::max(est.upper[i], a);
      }
    }
  }
  return est;
}

// All three approximator MSEs for one probe, with the bias term and the
// sufficient-condition verdict under per-probe exact constants.
inline MseReport mse_report(const Vec& x, const ParamVector& w_t,
                            const ParamVector& w_star, double lambda,
                            const ModelSpec& spec) {
  MseReport rep;
  rep.mse_g = mse_of_approximator(ApproximatorKind::outer_product(), x, w_t, w_star, spec);
  rep.mse_lambda_g =
      mse_of_approximator(ApproximatorKind::lambda_scaled(lambda), x, w_t, w_star, spec);
  rep.mse_diag = mse_of_approximator(ApproximatorKind::diag_lambda_scaled(lambda), x, w_t,
                                     w_star, spec);
  rep.epsilon_t = epsilon_t(x, w_t, w_star, spec);
  LipschitzEstimates lips = estimate_lipschitz({{x, w_t}}, w_star, spec);
  rep.condition_held =
      lips.valid() &&
      lambda_mse_condition(predict(x, w_t, spec), lambda, lips, rep.epsilon_t);
  return rep;
}

// One probe of the MSE sweep; see write_sweep_csv for the file schema.
struct SweepRow {
  int probe_id = 0;
  double lambda = 0.0;
  double mse_g = 0.0;
  double mse_lambda_g = 0.0;
  double mse_diag = 0.0;
  double eps_t = 0.0;
  double eps_d = 0.0;
  bool condition_held = false;
  bool corollary_held = false;
  bool constants_valid = true;
};

// Per-probe evaluation with constants estimated from the probe itself
// (exact enumeration bounds). Probes where the ratio constants degenerate
// are marked constants_valid=false and never counted as condition holds.
inline SweepRow evaluate_probe(int probe_id, const Vec& x, const ParamVector& w_t,
                               const ParamVector& w_star, double lambda,
                               const ModelSpec& spec) {
  SweepRow row;
  row.probe_id = probe_id;
  row.lambda = lambda;
  MseReport rep = mse_report(x, w_t, w_star, lambda, spec);
  row.mse_g = rep.mse_g;
  row.mse_lambda_g = rep.mse_lambda_g;
  row.mse_diag = rep.mse_diag;
  row.eps_t = rep.epsilon_t;
  row.condition_held = rep.condition_held;
  Matrix h = label_hessian(x, 0, w_t, spec);
  row.eps_d = (h.diagonal_part() - h).frobenius_norm();
  LipschitzEstimates lips = estimate_lipschitz({{x, w_t}}, w_star, spec);
  row.constants_valid = lips.valid();
  if (row.constants_valid) {
    auto [c_ij, cp_ij] = lambda_mse_pair_constants(lips, lambda);
    if (std::isfinite(c_ij) && std::isfinite(cp_ij)) {
      Interval region =
          sufficient_sigma_region_pair(spec.k, c_ij, cp_ij, lips.l1, row.eps_t);
      Vec sigma = predict(x, w_t, spec);
      for (double s : sigma)
        if (region.contains(s)) row.corollary_held = true;
    }
  }
  return row;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open sweep csv for writing: " + path);
  out << "probe_id,lambda,mse_g,mse_lambda_g,mse_diag,eps_t,eps_d,condition_held,"
         "corollary_held\n";
  char buf[320];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%d,%d\n",
                  r.probe_id, r.lambda, r.mse_g, r.mse_lambda_g, r.mse_diag, r.eps_t,
                  r.eps_d, r.condition_held ? 1 : 0, r.corollary_held ? 1 : 0);
    out << buf;
  }
}

}  // namespace dcsgd
