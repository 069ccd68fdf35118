#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dcsgd/matrix.hpp"
#include "dcsgd/rng.hpp"

namespace dcsgd {

// Class labels are zero-based everywhere in memory; the CSV formats use
// one-based labels (see data.hpp).
struct DatasetSample {
  Vec x;
  int y = 0;
};

enum class ModelKind { SoftmaxRegression, Mlp };

// Bias-free models: softmax regression (K x d weight matrix) and a
// one-hidden-layer tanh MLP (h x d, then K x h). Parameters live in one
// flat vector, class-major rows first.
struct ModelSpec {
  ModelKind kind = ModelKind::SoftmaxRegression;
  int d = 0;
  int h = 0;  // hidden width, Mlp only
  int k = 0;

  static ModelSpec softmax_regression(int d, int k) {
    if (d < 1 || k < 1) throw std::invalid_argument("model dims must be >= 1");
    return ModelSpec{ModelKind::SoftmaxRegression, d, 0, k};
  }
  static ModelSpec mlp(int d, int h, int k) {
    if (d < 1 || h < 1 || k < 1) throw std::invalid_argument("model dims must be >= 1");
    return ModelSpec{ModelKind::Mlp, d, h, k};
  }

  std::size_t param_count() const {
    if (kind == ModelKind::SoftmaxRegression)
      return static_cast<std::size_t>(d) * k;
    return static_cast<std::size_t>(d) * h + static_cast<std::size_t>(h) * k;
  }
};

inline void check_params(const ParamVector& w, const ModelSpec& spec) {
  if (w.size() != spec.param_count())
    throw std::invalid_argument("parameter vector length does not match model spec");
}

// Numerically stable softmax (max subtraction); output sums to 1.
inline Vec softmax(const Vec& logits) {
  Vec p(logits.size());
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline Vec logits_of(const Vec& x, const ParamVector& w, const ModelSpec& spec) {
  check_params(w, spec);
  if (static_cast<int>(x.size()) != spec.d)
    throw std::invalid_argument("feature vector length does not match model spec");
  Vec out(spec.k, 0.0);
  if (spec.kind == ModelKind::SoftmaxRegression) {
    for (int c = 0; c < spec.k; ++c) {
      const double* row = &w[static_cast<std::size_t>(c) * spec.d];
      double s = 0.0;
      for (int j = 0; j < spec.d; ++j) s += row[j] * x[j];
      out[c] = s;
    }
  } else {
    const double* w1 = w.data();                                       // h x d
    const double* w2 = w.data() + static_cast<std::size_t>(spec.h) * spec.d;  // k x h
    Vec z(spec.h);
    for (int i = 0; i < spec.h; ++i) {
      double s = 0.0;
      for (int j = 0; j < spec.d; ++j) s += w1[i * spec.d + j] * x[j];
      z[i] = std::tanh(s);
    }
    for (int c = 0; c < spec.k; ++c) {
      double s = 0.0;
      for (int i = 0; i < spec.h; ++i) s += w2[c * spec.h + i] * z[i];
      out[c] = s;
    }
  }
  return out;
}

inline Vec predict(const Vec& x, const ParamVector& w, const ModelSpec& spec) {
  return softmax(logits_of(x, w, spec));
}

// Clamp floor keeps -log finite if a probability underflows to 0; it is
// invisible for any representable nonzero probability.
constexpr double kProbFloor = 1e-300;

inline double loss(const DatasetSample& s, const ParamVector& w, const ModelSpec& spec) {
  if (s.y < 0 || s.y >= spec.k) throw std::invalid_argument("label out of range");
  Vec p = predict(s.x, w, spec);
  return -std::log(p[s.y] + kProbFloor);
}

// Analytic gradient of the cross-entropy loss. Softmax regression block c
// is (sigma_c - 1[y=c]) * x; the MLP uses one backward pass.
inline Vec gradient(const DatasetSample& s, const ParamVector& w, const ModelSpec& spec) {
  if (s.y < 0 || s.y >= spec.k) throw std::invalid_argument("label out of range");
  check_params(w, spec);
  Vec g(w.size(), 0.0);
  if (spec.kind == ModelKind::SoftmaxRegression) {
    Vec p = predict(s.x, w, spec);
    for (int c = 0; c < spec.k; ++c) {
      double delta = p[c] - (c == s.y ? 1.0 : 0.0);
      double* row = &g[static_cast<std::size_t>(c) * spec.d];
      for (int j = 0; j < spec.d; ++j) row[j] = delta * s.x[j];
    }
  } else {
    const double* w1 = w.data();
    const double* w2 = w.data() + static_cast<std::size_t>(spec.h) * spec.d;
    Vec z(spec.h);
    for (int i = 0; i < spec.h; ++i) {
      double acc = 0.0;
      for (int j = 0; j < spec.d; ++j) acc += w1[i * spec.d + j] * s.x[j];
      z[i] = std::tanh(acc);
    }
    Vec logit(spec.k);
    for (int c = 0; c < spec.k; ++c) {
      double acc = 0.0;
      for (int i = 0; i < spec.h; ++i) acc += w2[c * spec.h + i] * z[i];
      logit[c] = acc;
    }
    Vec p = softmax(logit);
    Vec dlogit(spec.k);
    for (int c = 0; c < spec.k; ++c) dlogit[c] = p[c] - (c == s.y ? 1.0 : 0.0);
    double* g1 = g.data();
    double* g2 = g.data() + static_cast<std::size_t>(spec.h) * spec.d;
    for (int c = 0; c < spec.k; ++c)
      for (int i = 0; i < spec.h; ++i) g2[c * spec.h + i] = dlogit[c] * z[i];
    for (int i = 0; i < spec.h; ++i) {
      double dz = 0.0;
      for (int c = 0; c < spec.k; ++c) dz += w2[c * spec.h + i] * dlogit[c];
      double dpre = dz * (1.0 - z[i] * z[i]);
      for (int j = 0; j < spec.d; ++j) g1[i * spec.d + j] = dpre * s.x[j];
    }
  }
  return g;
}

template <class SampleRange>
inline double empirical_risk(const SampleRange& batch, const ParamVector& w,
                             const ModelSpec& spec) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double sum = 0.0;
  for (const auto& s : batch) sum += loss(s, w, spec);
  return sum / static_cast<double>(batch.size());
}

// Mean gradient over a batch, accumulated in sample order.
template <class SampleRange>
inline Vec batch_gradient(const SampleRange& batch, const ParamVector& w,
                          const ModelSpec& spec) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  Vec g(w.size(), 0.0);
  for (const auto& s : batch) {
    Vec gi = gradient(s, w, spec);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gi[i];
  }
  double inv = 1.0 / static_cast<double>(batch.size());
  for (double& v : g) v *= inv;
  return g;
}

constexpr double kFdStep = 1e-5;
constexpr std::size_t kHessianOracleLimit = 2000;

// Hessian oracle: central finite differences of the analytic gradient,
// symmetrized. O(n^2) evaluations; guarded against large n.
inline Matrix exact_hessian(const DatasetSample& s, const ParamVector& w,
                            const ModelSpec& spec) {
  check_params(w, spec);
  std::size_t n = w.size();
  if (n > kHessianOracleLimit) throw std::invalid_argument("oracle scale exceeded");
  Matrix h(n, n);
  ParamVector wp = w;
  for (std::size_t j = 0; j < n; ++j) {
    wp[j] = w[j] + kFdStep;
    Vec gp = gradient(s, wp, spec);
    wp[j] = w[j] - kFdStep;
    Vec gm = gradient(s, wp, spec);
    wp[j] = w[j];
    for (std::size_t i = 0; i < n; ++i) h(i, j) = (gp[i] - gm[i]) / (2.0 * kFdStep);
  }
  h.symmetrize();
  return h;
}

// Closed-form softmax-regression Hessian, (diag(sigma) - sigma sigma^T) (x) x x^T.
// Label-independent; exact to rounding, which the Fisher-identity checks need.
inline Matrix softmax_regression_hessian(const Vec& x, const ParamVector& w,
                                         const ModelSpec& spec) {
  if (spec.kind != ModelKind::SoftmaxRegression)
    throw std::invalid_argument("closed-form Hessian is softmax-regression only");
  Vec p = predict(x, w, spec);
  std::size_t n = spec.param_count();
  Matrix h(n, n);
  for (int a = 0; a < spec.k; ++a)
    for (int b = 0; b < spec.k; ++b) {
      double s = p[a] * ((a == b ? 1.0 : 0.0) - p[b]);
      for (int i = 0; i < spec.d; ++i)
        for (int j = 0; j < spec.d; ++j)
          h(static_cast<std::size_t>(a) * spec.d + i,
            static_cast<std::size_t>(b) * spec.d + j) = s * x[i] * x[j];
    }
  return h;
}

// Label-dependent Hessian for enumeration: analytic where we have the
// closed form, finite differences otherwise.
inline Matrix label_hessian(const Vec& x, int y, const ParamVector& w,
                            const ModelSpec& spec) {
  if (spec.kind == ModelKind::SoftmaxRegression)
    return softmax_regression_hessian(x, w, spec);
  return exact_hessian(DatasetSample{x, y}, w, spec);
}

inline Matrix outer_product_g(const DatasetSample& s, const ParamVector& w,
                              const ModelSpec& spec) {
  Vec g = gradient(s, w, spec);
  return outer(g, g);
}

// Draw a label from sigma(x; w_star) by inverse CDF on one uniform.
inline int sample_label(const Vec& x, const ParamVector& w_star, const ModelSpec& spec,
                        RandomSource& rng) {
  Vec p = predict(x, w_star, spec);
  double u = rng.next_uniform();
  double cum = 0.0;
  for (int c = 0; c < spec.k; ++c) {
    cum += p[c];
    if (u < cum) return c;
  }
  return spec.k - 1;
}

inline int argmax_class(const Vec& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

}  // namespace dcsgd
