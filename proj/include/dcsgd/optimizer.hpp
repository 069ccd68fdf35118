#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsgd/matrix.hpp"

namespace dcsgd {

enum class OptimizerMethod { Sequential, Asgd, Ssgd, DcAsgdConst, DcAsgdAdaptive };

struct OptimizerKind {
  OptimizerMethod method = OptimizerMethod::Sequential;
  double lambda0 = 0.0;   // DC-ASGD variance control weight
  double m = 0.0;         // MeanSquare decay, adaptive only, in [0,1)
  double epsilon = 1e-7;  // adaptive denominator floor

  static OptimizerKind sequential() { return {OptimizerMethod::Sequential, 0, 0, 1e-7}; }
  static OptimizerKind asgd() { return {OptimizerMethod::Asgd, 0, 0, 1e-7}; }
  static OptimizerKind ssgd() { return {OptimizerMethod::Ssgd, 0, 0, 1e-7}; }
  static OptimizerKind dc_asgd_const(double lambda0) {
    if (lambda0 < 0) throw std::invalid_argument("lambda0 must be >= 0");
    return {OptimizerMethod::DcAsgdConst, lambda0, 0, 1e-7};
  }
  static OptimizerKind dc_asgd_adaptive(double lambda0, double m, double epsilon = 1e-7) {
    if (lambda0 < 0) throw std::invalid_argument("lambda0 must be >= 0");
    if (m < 0 || m >= 1) throw std::invalid_argument("m must be in [0,1)");
    if (epsilon <= 0) throw std::invalid_argument("epsilon must be > 0");
    return {OptimizerMethod::DcAsgdAdaptive, lambda0, m, epsilon};
  }

  bool delay_compensated() const {
    return method == OptimizerMethod::DcAsgdConst ||
           method == OptimizerMethod::DcAsgdAdaptive;
  }
};

// Server-side MeanSquare(t) = m*MeanSquare(t-1) + (1-m)*g^2 state; one per
// experiment. The reserved velocity slot keeps the state format stable if
// momentum variants land later.
struct LambdaControllerState {
  Vec mean_square;
  Vec velocity;  // reserved, unused
  std::uint64_t step_count = 0;
};

struct LrSchedule {
  double eta0 = 0.1;
  std::vector<int> decay_epochs;  // strictly increasing
  double decay_factor = 10.0;
};

inline double lr_at(const LrSchedule& s, int epoch) {
  if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
  double eta = s.eta0;
  for (int e : s.decay_epochs)
    if (epoch >= e) eta /= s.decay_factor;
  return eta;
}

inline void check_dims(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("vector dimension mismatch");
}

inline ParamVector sgd_step(const ParamVector& w, const Vec& g, double eta) {
  check_dims(w.size(), g.size());
  if (!(eta > 0)) throw std::invalid_argument("learning rate must be > 0");
  ParamVector out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] - eta * g[i];
  return out;
}

// g + lambda * g (.) g (.) dw  -- the delay-compensated gradient. Shared by
// the ASGD server update and the DC-SSGD unfold so the arithmetic cannot
// drift between the two.
inline Vec delay_compensated_gradient(const Vec& g, double lambda, const Vec& dw) {
  check_dims(g.size(), dw.size());
  Vec out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    out[i] = g[i] + lambda * g[i] * g[i] * dw[i];
  return out;
}

inline Vec delay_compensated_gradient(const Vec& g, const Vec& lambda, const Vec& dw) {
  check_dims(g.size(), dw.size());
  check_dims(g.size(), lambda.size());
  Vec out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    out[i] = g[i] + lambda[i] * g[i] * g[i] * dw[i];
  return out;
}

inline ParamVector dc_asgd_step(const ParamVector& w_current, const Vec& g,
                                const ParamVector& w_backup, double eta, double lambda) {
  check_dims(w_current.size(), w_backup.size());
  Vec dw(w_current.size());
  for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = w_current[i] - w_backup[i];
  return sgd_step(w_current, delay_compensated_gradient(g, lambda, dw), eta);
}

inline ParamVector dc_asgd_step(const ParamVector& w_current, const Vec& g,
                                const ParamVector& w_backup, double eta,
                                const Vec& lambda) {
  check_dims(w_current.size(), w_backup.size());
  Vec dw(w_current.size());
  for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = w_current[i] - w_backup[i];
  return sgd_step(w_current, delay_compensated_gradient(g, lambda, dw), eta);
}

// First-order Taylor tier with the true Hessian: g + H*dw. Diagnostic only;
// tests use it to rank the compensation tiers.
inline Vec compensated_gradient_exact_hessian(const Vec& g, const Matrix& h,
                                              const Vec& dw) {
  check_dims(g.size(), dw.size());
  if (h.rows() != g.size() || h.cols() != dw.size())
    throw std::invalid_argument("hessian dimension mismatch");
  Vec hdw = h.apply(dw);
  Vec out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] + hdw[i];
  return out;
}

// Updates MeanSquare with the incoming gradient, then returns the
// per-coordinate lambda vector lambda0 / sqrt(MeanSquare + eps).
inline Vec adaptive_lambda(LambdaControllerState& state, const Vec& g, double lambda0,
                           double m, double epsilon) {
  if (m < 0 || m >= 1) throw std::invalid_argument("m must be in [0,1)");
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
  if (state.mean_square.empty()) state.mean_square.assign(g.size(), 0.0);
  check_dims(state.mean_square.size(), g.size());
  Vec lambda(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    state.mean_square[i] = m * state.mean_square[i] + (1.0 - m) * g[i] * g[i];
    lambda[i] = lambda0 / std::sqrt(state.mean_square[i] + epsilon);
  }
  state.step_count += 1;
  return lambda;
}

}  // namespace dcsgd
