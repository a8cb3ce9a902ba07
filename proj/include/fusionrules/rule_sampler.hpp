#pragma once

// Hyperparameter generators: Dirichlet draws and simplex grids for the
// linear mixture, and acceptance-rejection enumeration of decision vectors
// for the stacking model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "hyperfit.hpp"
#include "parallel.hpp"
#include "rule_algebra.hpp"

namespace fusionrules {

namespace detail {

// log of a Gamma(shape, 1) variate. Shapes below one use
// Gamma(a) = Gamma(a + 1) * U^(1/a) so tiny shapes do not underflow to zero.
template <typename Rng>
double log_gamma_variate(double shape, Rng& rng) {
  if (shape >= 1.0) {
    std::gamma_distribution<double> g(shape, 1.0);
    return std::log(g(rng));
  }
  std::gamma_distribution<double> g(shape + 1.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double uu = u(rng);
  while (uu == 0.0) uu = u(rng);
  return std::log(g(rng)) + std::log(uu) / shape;
}

}  // namespace detail

/// One Dirichlet draw using the caller's generator.
template <typename Rng>
LinearRule sample_dirichlet(Rng& rng, const std::array<double, kModalities>& concentration) {
  for (double c : concentration)
    if (!(c > 0.0) || !std::isfinite(c)) throw InvalidArgument("Dirichlet concentrations must be positive and finite");
  std::array<double, kModalities> logs{};
  for (std::size_t i = 0; i < kModalities; ++i) logs[i] = detail::log_gamma_variate(concentration[i], rng);
  const double m = *std::max_element(logs.begin(), logs.end());
  LinearRule out;
  double sum = 0.0;
  for (std::size_t i = 0; i < kModalities; ++i) sum += out.alpha[i] = std::exp(logs[i] - m);
  for (double& a : out.alpha) a /= sum;
  return out;
}

/// Deterministic for a fixed seed.
inline LinearRule sample_dirichlet(std::uint64_t seed, const std::array<double, kModalities>& concentration) {
  std::mt19937_64 rng(seed);
  return sample_dirichlet(rng, concentration);
}

/// Every alpha with entries in {0, step, ..., 1} summing to one, ordered
/// lexicographically by (alpha_1, alpha_2).
inline std::vector<LinearRule> simplex_grid(double step) {
  if (!(step > 0.0) || step > 1.0) throw InvalidArgument("grid step must lie in (0, 1]");
  const long n = std::lround(1.0 / step);
  if (std::abs(double(n) * step - 1.0) > 1e-9) throw InvalidArgument("grid step must divide 1 evenly");
  std::vector<LinearRule> out;
  out.reserve(std::size_t((n + 1) * (n + 2) / 2));
  for (long i = 0; i <= n; ++i)
    for (long j = 0; i + j <= n; ++j) {
      const long k = n - i - j;
      out.push_back(LinearRule{{double(i) / double(n), double(j) / double(n), double(k) / double(n)}});
    }
  return out;
}

struct SampledRule {
  int rule_number = 0;
  DecisionVector decision;
  StackingRule rule;
  double residual = 0.0;       // mean over conditions
  double squared_error = 0.0;  // |d - d_hat|_2^2, the acceptance statistic
};

struct SampledRuleSet {
  std::vector<SampledRule> entries;   // accepted, sorted by rule number
  std::vector<SampledRule> rejected;  // sorted by rule number
  double eta = 0.5;
  StackingOptions options;
  int n_rules = 256;
  int accepted_count() const { return int(entries.size()); }
};

inline double acceptance_threshold(double eta) { return eta * eta / 8.0; }

/// Fits every decision vector whose number is n mod 256 for n = 1..n_rules and
/// keeps those with |d - d_hat|_2^2 <= eta^2 / 8. With n_rules = 256 this
/// covers all 8-bit decisions.
inline SampledRuleSet rejection_sample_stacking(int n_rules = 256, double eta = 0.5, const StackingOptions& opts = {},
                                                unsigned threads = 1) {
  if (n_rules < 1 || n_rules > 256) throw InvalidArgument("n_rules must lie in [1, 256]");
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");

  const auto r = canonical_condition_matrix();
  std::vector<SampledRule> fits(static_cast<std::size_t>(n_rules));
  parallel_for(fits.size(), threads, [&](std::size_t i) {
    const int number = int((i + 1) % 256);
    const auto d = decision_from_number(number);
    const auto rep = fit_stacking(r, d, opts);
    fits[i] = SampledRule{number, d, rep.stacking(), rep.residual, rep.residual * double(kConditions)};
  });
  std::sort(fits.begin(), fits.end(), [](const auto& a, const auto& b) { return a.rule_number < b.rule_number; });

  SampledRuleSet out;
  out.eta = eta;
  out.options = opts;
  out.n_rules = n_rules;
  const double limit = acceptance_threshold(eta);
  for (auto& f : fits) (f.squared_error <= limit ? out.entries : out.rejected).push_back(std::move(f));
  return out;
}

}  // namespace fusionrules
