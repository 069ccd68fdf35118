#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dcsgd/matrix.hpp"
#include "dcsgd/model.hpp"
#include "dcsgd/optimizer.hpp"

namespace dcsgd {

enum class UnfoldOrdering {
  AsGiven,
  // Greedy: at each substep apply the unapplied gradient whose compensated
  // update is smallest, keeping the intermediate point near w_t longest.
  // The appendix prescribes ordering by |w~ - w_t|^2, which depends on the
  // order itself; this greedy rule is the implementable reading.
  ByCompensatedNorm,
};

// Delay-compensated large-minibatch step: unfold the M gradients (all taken
// at w_t) sequentially, compensating each toward the moving intermediate
// point: g~ = g_j + lambda g_j (.) g_j (.) (w~ - w_t), w~ -= (eta_hat/M) g~.
inline ParamVector dc_ssgd_step(const ParamVector& w_t, const std::vector<Vec>& grads,
                                double eta_hat, double lambda,
                                UnfoldOrdering ordering = UnfoldOrdering::AsGiven) {
  if (grads.empty()) throw std::invalid_argument("empty gradient list");
  for (const Vec& g : grads)
    if (g.size() != w_t.size()) throw std::invalid_argument("gradient dim mismatch");
  const double step = eta_hat / static_cast<double>(grads.size());
  ParamVector w = w_t;
  Vec dw(w_t.size(), 0.0);
  std::vector<bool> used(grads.size(), false);
  for (std::size_t round = 0; round < grads.size(); ++round) {
    std::size_t pick = 0;
    if (ordering == UnfoldOrdering::AsGiven) {
      while (used[pick]) ++pick;
    } else {
      double best = -1.0;
      for (std::size_t j = 0; j < grads.size(); ++j) {
        if (used[j]) continue;
        Vec cand = delay_compensated_gradient(grads[j], lambda, dw);
        double nrm = norm2(cand);
        if (best < 0.0 || nrm < best) {
          best = nrm;
          pick = j;
        }
      }
    }
    used[pick] = true;
    Vec comp = delay_compensated_gradient(grads[pick], lambda, dw);
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= step * comp[i];
      dw[i] = w[i] - w_t[i];
    }
  }
  return w;
}

// Exact-Hessian tier of the same unfold: g~ = g_j + H_j (w~ - w_t). On
// quadratic losses this reproduces the sequential trajectory to rounding.
inline ParamVector dc_ssgd_step_exact_hessian(const ParamVector& w_t,
                                              const std::vector<Vec>& grads,
                                              const std::vector<Matrix>& hessians,
                                              double eta_hat) {
  if (grads.empty()) throw std::invalid_argument("empty gradient list");
  if (grads.size() != hessians.size())
    throw std::invalid_argument("need one Hessian per gradient");
  const double step = eta_hat / static_cast<double>(grads.size());
  ParamVector w = w_t;
  Vec dw(w_t.size(), 0.0);
  for (std::size_t j = 0; j < grads.size(); ++j) {
    Vec comp = compensated_gradient_exact_hessian(grads[j], hessians[j], dw);
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= step * comp[i];
      dw[i] = w[i] - w_t[i];
    }
  }
  return w;
}

// Plain large-minibatch step of Eq. (108): w_t - (eta_hat / M) sum_j g_j.
inline ParamVector large_batch_step(const ParamVector& w_t, const std::vector<Vec>& grads,
                                    double eta_hat) {
  if (grads.empty()) throw std::invalid_argument("empty gradient list");
  Vec sum(w_t.size(), 0.0);
  for (const Vec& g : grads) {
    if (g.size() != w_t.size()) throw std::invalid_argument("gradient dim mismatch");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
  }
  ParamVector w(w_t.size());
  const double step = eta_hat / static_cast<double>(grads.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w_t[i] - step * sum[i];
  return w;
}

// Distances of the compensated and plain large-batch steps from the true
// sequential M-step trajectory (learning rate eta per sub-step, gradients
// recomputed at each intermediate point, eta_hat = M * eta).
inline std::pair<double, double> compare_to_sequential(
    const ParamVector& w_t, const std::vector<std::vector<DatasetSample>>& minibatches,
    double eta, double lambda, const ModelSpec& spec,
    UnfoldOrdering ordering = UnfoldOrdering::AsGiven) {
  if (minibatches.empty()) throw std::invalid_argument("empty partition");
  const std::size_t m = minibatches.size();

  ParamVector w_seq = w_t;
  for (const auto& batch : minibatches)
    w_seq = sgd_step(w_seq, batch_gradient(batch, w_seq, spec), eta);

  std::vector<Vec> grads;
  grads.reserve(m);
  for (const auto& batch : minibatches)
    grads.push_back(batch_gradient(batch, w_t, spec));

  const double eta_hat = eta * static_cast<double>(m);
  ParamVector w_dc = dc_ssgd_step(w_t, grads, eta_hat, lambda, ordering);
  ParamVector w_plain = large_batch_step(w_t, grads, eta_hat);

  double d_dc = 0.0, d_plain = 0.0;
  for (std::size_t i = 0; i < w_t.size(); ++i) {
    d_dc += (w_dc[i] - w_seq[i]) * (w_dc[i] - w_seq[i]);
    d_plain += (w_plain[i] - w_seq[i]) * (w_plain[i] - w_seq[i]);
  }
  return {std::sqrt(d_dc), std::sqrt(d_plain)};
}

}  // namespace dcsgd
