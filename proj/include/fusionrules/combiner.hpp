#pragma once

// Voxel-wise application of combining rules to (T2W, DWI_hb, ADC)
// probability maps, and conversion of the result to a binary mask.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "components.hpp"
#include "hyperfit.hpp"
#include "volume.hpp"

namespace fusionrules {

/// Three aligned modality maps ordered (T2W, DWI_hb, ADC).
using ModalityStack = std::array<const ProbabilityVolume*, kModalities>;

inline ModalityStack stack_of(const ProbabilityVolume& t2w, const ProbabilityVolume& dwi, const ProbabilityVolume& adc) {
  return {&t2w, &dwi, &adc};
}

inline void validate_stack(const ModalityStack& v) {
  validate_aligned({GridRef::of("T2W", *v[0]), GridRef::of("DWI_hb", *v[1]), GridRef::of("ADC", *v[2])});
}

/// sum_tau w_tau * Y^tau for arbitrary weights (no simplex requirement, no range check).
inline std::vector<double> mix_voxels(const ModalityStack& v, const std::array<double, kModalities>& w) {
  validate_stack(v);
  std::vector<double> out(v[0]->size());
  const auto a = v[0]->values(), b = v[1]->values(), c = v[2]->values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w[0] * a[i] + w[1] * b[i] + w[2] * c[i];
  return out;
}

/// Z = sum_tau alpha_tau Y^tau. The rule must lie on the simplex.
inline ProbabilityVolume combine_linear(const ModalityStack& v, const LinearRule& rule) {
  if (!rule.on_simplex()) throw InvalidArgument("linear rule weights must be non-negative and sum to one");
  auto z = mix_voxels(v, rule.alpha);
  // A convex combination may overshoot 1 by an ulp.
  for (double& x : z) x = std::clamp(x, 0.0, 1.0);
  return ProbabilityVolume(v[0]->dims(), v[0]->spacing(), std::move(z), Modality::Combined);
}

/// Z = sigma(sum_tau beta_tau Y^tau + beta_0).
inline ProbabilityVolume combine_stacking(const ModalityStack& v, const StackingRule& rule) {
  if (!rule.finite()) throw InvalidArgument("stacking rule has non-finite coefficients");
  auto z = mix_voxels(v, {rule.beta[0], rule.beta[1], rule.beta[2]});
  for (double& x : z) x = detail::sigmoid(x + rule.bias());
  return ProbabilityVolume(v[0]->dims(), v[0]->spacing(), std::move(z), Modality::Combined);
}

/// Positive where at least two of the three masks are.
inline LabelVolume combine_vote(const LabelVolume& a, const LabelVolume& b, const LabelVolume& c) {
  validate_aligned({GridRef::of("mask 1", a), GridRef::of("mask 2", b), GridRef::of("mask 3", c)});
  LabelVolume out(a.dims(), a.spacing());
  for (std::size_t i = 0; i < out.size(); ++i) out.set(i, a[i] + b[i] + c[i] >= 2);
  return out;
}

struct BinarizeOptions {
  double threshold = 0.5;
  std::int64_t min_region_voxels = 27;
  Connectivity connectivity = Connectivity::TwentySix;
};

/// Voxels strictly above the threshold, then components smaller than
/// min_region_voxels removed.
inline LabelVolume binarize(const ProbabilityVolume& vol, const BinarizeOptions& opts = {}) {
  if (!(opts.threshold > 0.0 && opts.threshold < 1.0)) throw InvalidArgument("threshold must lie in (0, 1)");
  LabelVolume raw(vol.dims(), vol.spacing());
  for (std::size_t i = 0; i < vol.size(); ++i) raw.set(i, vol[i] > opts.threshold);
  return remove_small_components(raw, opts.min_region_voxels, opts.connectivity);
}

/// The two terms of the segmentation loss, summed over voxels.
struct LossTerms {
  double cross_entropy = 0.0;  // sum_i t log y + (1 - t) log(1 - y), y clipped to [eps, 1 - eps]
  double soft_dice = 0.0;      // -2 sum(y t) / (sum y + sum t); zero when both sums vanish
  double total() const { return cross_entropy + soft_dice; }
};

inline constexpr double kLossEpsilon = 1e-7;

/// Sign convention follows the loss as written: the log-likelihood term is
/// added, the soft-Dice overlap subtracted.
inline LossTerms eval_loss(const ProbabilityVolume& pred, const LabelVolume& truth) {
  validate_aligned({GridRef::of("prediction", pred), GridRef::of("truth", truth)});
  LossTerms out;
  double overlap = 0.0, sum_y = 0.0, sum_t = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double y = pred[i];
    const double t = truth[i];
    const double yc = std::clamp(y, kLossEpsilon, 1.0 - kLossEpsilon);
    out.cross_entropy += t * std::log(yc) + (1.0 - t) * std::log(1.0 - yc);
    overlap += y * t;
    sum_y += y;
    sum_t += t;
  }
  out.soft_dice = (sum_y + sum_t) > 0.0 ? -2.0 * overlap / (sum_y + sum_t) : 0.0;
  return out;
}

}  // namespace fusionrules
