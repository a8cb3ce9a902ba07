#pragma once

// Estimating combining-rule parameters from a condition system (R, d):
// least squares for the linear mixture, logistic regression for stacking,
// plus the interpretation statistics derived from each fit.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <variant>

#include "errors.hpp"
#include "rule_algebra.hpp"

namespace fusionrules {

/// Mixing weights for (T2W, DWI_hb, ADC). Not forced onto the simplex so
/// that unnormalised least-squares solutions can be represented too.
struct LinearRule {
  std::array<double, kModalities> alpha{};

  bool on_simplex(double tol = 1e-9) const {
    double sum = 0.0;
    for (double a : alpha) {
      if (a < -tol) return false;
      sum += a;
    }
    return std::abs(sum - 1.0) <= tol;
  }

  /// Divides by the L1 norm; a zero vector maps to equal thirds.
  LinearRule normalized() const {
    double l1 = 0.0;
    for (double a : alpha) l1 += std::abs(a);
    if (l1 == 0.0) return LinearRule{{1.0 / 3, 1.0 / 3, 1.0 / 3}};
    return LinearRule{{alpha[0] / l1, alpha[1] / l1, alpha[2] / l1}};
  }

  friend bool operator==(const LinearRule&, const LinearRule&) = default;
};

/// Stacking weights ordered [beta_1, beta_2, beta_3, beta_0]; the last entry is the bias.
struct StackingRule {
  std::array<double, kModalities + 1> beta{};

  double bias() const { return beta[kModalities]; }
  bool finite() const {
    for (double b : beta)
      if (!std::isfinite(b)) return false;
    return true;
  }

  friend bool operator==(const StackingRule&, const StackingRule&) = default;
};

enum class FitKind { Linear, Stacking };

struct FitReport {
  FitKind kind = FitKind::Linear;
  DecisionVector decision;
  std::variant<LinearRule, StackingRule> coefficients;
  std::array<double, kModalities> unnormalized_coefficients{};  // linear only
  double residual = 0.0;
  std::optional<std::array<double, kModalities>> t_stats;        // linear only
  std::optional<std::array<double, kModalities + 1>> odds_ratios;  // stacking only
  int iterations_used = 0;                                        // stacking only
  bool degenerate = false;

  const LinearRule& linear() const { return std::get<LinearRule>(coefficients); }
  const StackingRule& stacking() const { return std::get<StackingRule>(coefficients); }
};

struct StackingOptions {
  double learning_rate = 1.0;
  int max_iters = 10000;
};

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline Mat3 gram(const ConditionMatrix& r) {
  Mat3 g{};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < kConditions; ++k) g[i][j] += double(r(i, k)) * double(r(j, k));
  return g;
}

// Inverse of a symmetric 3x3 matrix via the adjugate.
inline Mat3 inverse(const Mat3& m) {
  const double c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
  const double c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
  const double c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
  const double det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
  double scale = 0.0;
  for (const auto& row : m)
    for (double v : row) scale = std::max(scale, std::abs(v));
  if (std::abs(det) <= 1e-12 * scale * scale * scale)
    throw NumericalError("R R^T is singular; the condition matrix does not span all modalities");
  Mat3 inv{};
  inv[0][0] = c00 / det;
  inv[1][0] = c01 / det;
  inv[2][0] = c02 / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

inline double decision_sample_variance(const DecisionVector& d) {
  double mean = 0.0;
  for (auto b : d.bits) mean += b;
  mean /= double(kConditions);
  double ss = 0.0;
  for (auto b : d.bits) ss += (b - mean) * (b - mean);
  return ss / double(kConditions - 1);
}

}  // namespace detail

/// (R R^T)^{-1}; throws NumericalError when singular.
inline detail::Mat3 normal_matrix_inverse(const ConditionMatrix& r) { return detail::inverse(detail::gram(r)); }

/// Per-condition predictions R^T alpha (not clamped).
inline std::array<double, kConditions> predict_decisions(const ConditionMatrix& r, const LinearRule& rule) {
  std::array<double, kConditions> out{};
  for (std::size_t k = 0; k < kConditions; ++k)
    for (std::size_t t = 0; t < kModalities; ++t) out[k] += rule.alpha[t] * r(t, k);
  return out;
}

/// Per-condition predictions sigma([R^T, 1] beta).
inline std::array<double, kConditions> predict_decisions(const ConditionMatrix& r, const StackingRule& rule) {
  std::array<double, kConditions> out{};
  for (std::size_t k = 0; k < kConditions; ++k) {
    double z = rule.bias();
    for (std::size_t t = 0; t < kModalities; ++t) z += rule.beta[t] * r(t, k);
    out[k] = detail::sigmoid(z);
  }
  return out;
}

/// Mean squared residual over the conditions.
inline double mean_squared_residual(const std::array<double, kConditions>& pred, const DecisionVector& d) {
  double ss = 0.0;
  for (std::size_t k = 0; k < kConditions; ++k) ss += (pred[k] - d[k]) * (pred[k] - d[k]);
  return ss / double(kConditions);
}

/// T_tau = (x_tau - alpha0) / sqrt(C_tautau), C = s^2_d (R R^T)^{-1}, with x the
/// unnormalised least-squares coefficients and s^2_d the sample variance of d
/// (divisor K-1). Empty when d is constant.
inline std::optional<std::array<double, kModalities>> t_statistics(const FitReport& report, const DecisionVector& d,
                                                                    double alpha0,
                                                                    const ConditionMatrix& r = canonical_condition_matrix()) {
  if (report.kind != FitKind::Linear) throw InvalidArgument("t-statistics require a linear fit");
  const double var = detail::decision_sample_variance(d);
  if (var == 0.0) return std::nullopt;
  const auto inv = normal_matrix_inverse(r);
  std::array<double, kModalities> t{};
  for (std::size_t i = 0; i < kModalities; ++i)
    t[i] = (report.unnormalized_coefficients[i] - alpha0) / std::sqrt(var * inv[i][i]);
  return t;
}

/// Least-squares mixing weights: x = (R R^T)^{-1} R d, alpha = x / |x|_1.
/// The residual is evaluated on x, before normalisation.
inline FitReport fit_linear(const ConditionMatrix& r, const DecisionVector& d) {
  const auto inv = normal_matrix_inverse(r);
  std::array<double, kModalities> rd{};
  for (std::size_t t = 0; t < kModalities; ++t)
    for (std::size_t k = 0; k < kConditions; ++k) rd[t] += double(r(t, k)) * d[k];

  LinearRule x;
  for (std::size_t i = 0; i < kModalities; ++i)
    for (std::size_t j = 0; j < kModalities; ++j) x.alpha[i] += inv[i][j] * rd[j];

  FitReport rep;
  rep.kind = FitKind::Linear;
  rep.decision = d;
  rep.unnormalized_coefficients = x.alpha;
  rep.residual = mean_squared_residual(predict_decisions(r, x), d);

  const double l1 = std::abs(x.alpha[0]) + std::abs(x.alpha[1]) + std::abs(x.alpha[2]);
  rep.degenerate = d.is_constant() || l1 == 0.0;
  rep.coefficients = l1 == 0.0 ? LinearRule{}.normalized() : x.normalized();
  if (!rep.degenerate) rep.t_stats = t_statistics(rep, d, 0.0, r);
  return rep;
}

inline std::array<double, kModalities + 1> odds_ratios(const StackingRule& rule) {
  std::array<double, kModalities + 1> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(rule.beta[i]);
  return out;
}

/// Logistic regression by full-batch gradient descent on the summed binary
/// cross-entropy, starting from beta = 0.
inline FitReport fit_stacking(const ConditionMatrix& r, const DecisionVector& d, const StackingOptions& opts = {}) {
  if (!(opts.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (opts.max_iters < 1) throw InvalidArgument("max_iters must be at least 1");

  StackingRule rule;
  auto& beta = rule.beta;
  int it = 0;
  for (; it < opts.max_iters; ++it) {
    std::array<double, kModalities + 1> grad{};
    for (std::size_t k = 0; k < kConditions; ++k) {
      double z = beta[kModalities];
      for (std::size_t t = 0; t < kModalities; ++t) z += beta[t] * r(t, k);
      const double err = detail::sigmoid(z) - d[k];
      for (std::size_t t = 0; t < kModalities; ++t) grad[t] += err * r(t, k);
      grad[kModalities] += err;
    }
    for (std::size_t i = 0; i < beta.size(); ++i) beta[i] -= opts.learning_rate * grad[i];
    if (!rule.finite()) break;
  }

  double loss = 0.0;
  for (std::size_t k = 0; k < kConditions; ++k) {
    double z = beta[kModalities];
    for (std::size_t t = 0; t < kModalities; ++t) z += beta[t] * r(t, k);
    loss += d[k] ? detail::softplus(-z) : detail::softplus(z);
  }
  if (!std::isfinite(loss) || !rule.finite())
    throw NumericalError("stacking fit diverged after " + std::to_string(it) + " iterations (learning rate " +
                         std::to_string(opts.learning_rate) + ")");

  FitReport rep;
  rep.kind = FitKind::Stacking;
  rep.decision = d;
  rep.coefficients = rule;
  rep.residual = mean_squared_residual(predict_decisions(r, rule), d);
  rep.odds_ratios = odds_ratios(rule);
  rep.iterations_used = it;
  rep.degenerate = d.is_constant();
  return rep;
}

}  // namespace fusionrules
