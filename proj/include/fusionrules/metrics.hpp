#pragma once

// Voxel-level (DSC, HD95) and lesion-level (recall^GT, precision^Pred)
// evaluation of a predicted mask against ground truth.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "components.hpp"
#include "distance_transform.hpp"
#include "volume.hpp"

namespace fusionrules {

struct EvalConfig {
  double s_gt = 0.1;
  double s_pred = 0.1;
  Connectivity connectivity = Connectivity::TwentySix;
};

/// Optional fields are empty exactly when their denominator is zero.
struct MetricsReport {
  double dsc = 0.0;
  bool both_empty = false;
  std::optional<double> hd95_mm;
  std::optional<double> recall_gt;
  std::optional<double> precision_pred;
  int n_gt_lesions = 0;
  int n_pred_lesions = 0;
  double s_gt = 0.1;
  double s_pred = 0.1;
};

inline void validate_pair(const LabelVolume& pred, const LabelVolume& truth) {
  validate_aligned({GridRef::of("prediction", pred), GridRef::of("truth", truth)});
}

/// 2|P & G| / (|P| + |G|); 1.0 when both masks are empty.
inline double dice(const LabelVolume& pred, const LabelVolume& truth) {
  validate_pair(pred, truth);
  std::int64_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] & truth[i];
    np += pred[i];
    ng += truth[i];
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * double(inter) / double(np + ng);
}

/// Positive voxels with at least one face neighbour that is background or outside the grid.
inline LabelVolume boundary_voxels(const LabelVolume& mask) {
  const auto& d = mask.dims();
  LabelVolume out(d, mask.spacing());
  static constexpr int kFace[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        if (!mask.at(x, y, z)) continue;
        for (const auto& f : kFace) {
          const std::int64_t nx = x + f[0], ny = y + f[1], nz = z + f[2];
          if (!mask.contains(nx, ny, nz) || !mask.at(nx, ny, nz)) {
            out.set(x, y, z, true);
            break;
          }
        }
      }
  return out;
}

/// Linear-interpolation percentile (q in [0, 1]) of an ascending sequence.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::nan("");
  const double pos = q * double(sorted.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - double(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

namespace detail {

struct Box {
  std::array<std::int64_t, 3> lo{}, hi{};
  Dims dims() const { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
};

inline Box bounding_box(const LabelVolume& a, const LabelVolume& b) {
  const auto& d = a.dims();
  Box box{{d.nx, d.ny, d.nz}, {-1, -1, -1}};
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        const auto i = a.index(x, y, z);
        if (!a[i] && !b[i]) continue;
        const std::array<std::int64_t, 3> c{x, y, z};
        for (std::size_t k = 0; k < 3; ++k) {
          box.lo[k] = std::min(box.lo[k], c[k]);
          box.hi[k] = std::max(box.hi[k], c[k]);
        }
      }
  return box;
}

// Squared distance transform of `features` restricted to `box`. Exact for
// every voxel in the box when all features lie inside it.
inline std::vector<double> boxed_distance_transform(const LabelVolume& features, const Box& box) {
  const Dims bd = box.dims();
  LabelVolume crop(bd, features.spacing());
  for (std::int64_t z = 0; z < bd.nz; ++z)
    for (std::int64_t y = 0; y < bd.ny; ++y)
      for (std::int64_t x = 0; x < bd.nx; ++x)
        crop.set(x, y, z, features.at(x + box.lo[0], y + box.lo[1], z + box.lo[2]) != 0);
  return squared_distance_transform(crop);
}

// HD95 from the two boundary sets. `dist_to_g`, when given, is the squared
// distance to bg over the full grid.
inline std::optional<double> hd95_boundaries(const LabelVolume& bp, const LabelVolume& bg,
                                             const std::vector<double>* dist_to_g) {
  if (bp.empty() || bg.empty()) return std::nullopt;
  const Box box = bounding_box(bp, bg);
  const Dims bd = box.dims();
  const auto dist_to_p = boxed_distance_transform(bp, box);
  std::vector<double> local_to_g;
  if (!dist_to_g) local_to_g = boxed_distance_transform(bg, box);
  std::vector<double> pooled;
  std::size_t j = 0;
  for (std::int64_t z = 0; z < bd.nz; ++z)
    for (std::int64_t y = 0; y < bd.ny; ++y)
      for (std::int64_t x = 0; x < bd.nx; ++x, ++j) {
        const auto i = bp.index(x + box.lo[0], y + box.lo[1], z + box.lo[2]);
        if (bp[i]) pooled.push_back(std::sqrt(dist_to_g ? (*dist_to_g)[i] : local_to_g[j]));
        if (bg[i]) pooled.push_back(std::sqrt(dist_to_p[j]));
      }
  std::sort(pooled.begin(), pooled.end());
  return percentile_sorted(pooled, 0.95);
}

}  // namespace detail

/// 95th percentile of the pooled boundary-to-boundary distances in both
/// directions, in mm. Empty when either mask is empty.
inline std::optional<double> hd95(const LabelVolume& pred, const LabelVolume& truth) {
  validate_pair(pred, truth);
  if (pred.empty() || truth.empty()) return std::nullopt;
  return detail::hd95_boundaries(boundary_voxels(pred), boundary_voxels(truth), nullptr);
}

namespace detail {

// overlap[i] = number of voxels of component i+1 of `labels` that are set in `other`.
inline std::vector<std::int64_t> component_overlap(const ComponentLabels& cc, const LabelVolume& other) {
  std::vector<std::int64_t> overlap(cc.count(), 0);
  for (std::size_t v = 0; v < cc.labels.size(); ++v)
    if (cc.labels[v] && other[v]) ++overlap[cc.labels[v] - 1];
  return overlap;
}

inline std::optional<double> hit_rate(const ComponentLabels& cc, const LabelVolume& other, double s) {
  if (cc.count() == 0) return std::nullopt;
  const auto overlap = component_overlap(cc, other);
  int hits = 0;
  for (std::size_t i = 0; i < cc.count(); ++i)
    if (double(overlap[i]) / double(cc.sizes[i]) > s) ++hits;
  return double(hits) / double(cc.count());
}

inline void check_overlap_threshold(double s, const char* name) {
  if (!(s > 0.0 && s <= 1.0)) throw InvalidArgument(std::string(name) + " must lie in (0, 1]");
}

}  // namespace detail

/// Fraction of ground-truth lesions whose covered fraction by the prediction
/// exceeds s_gt. Empty when there are no ground-truth lesions.
inline std::optional<double> lesion_recall_gt(const LabelVolume& pred, const LabelVolume& truth, double s_gt,
                                              Connectivity c = Connectivity::TwentySix) {
  validate_pair(pred, truth);
  detail::check_overlap_threshold(s_gt, "s_gt");
  return detail::hit_rate(label_components(truth, c), pred, s_gt);
}

/// Fraction of predicted lesions whose fraction inside the ground truth
/// exceeds s_pred. Empty when nothing is predicted.
inline std::optional<double> lesion_precision_pred(const LabelVolume& pred, const LabelVolume& truth, double s_pred,
                                                   Connectivity c = Connectivity::TwentySix) {
  validate_pair(pred, truth);
  detail::check_overlap_threshold(s_pred, "s_pred");
  return detail::hit_rate(label_components(pred, c), truth, s_pred);
}

/// Ground-truth quantities shared by every prediction evaluated against the
/// same (zone-restricted) truth.
struct PreparedTruth {
  LabelVolume truth;
  std::optional<LabelVolume> zone;
  Connectivity connectivity = Connectivity::TwentySix;
  ComponentLabels components;
  LabelVolume boundary;
  std::vector<double> sq_distance;  // to the nearest boundary voxel, mm^2; empty if not requested
};

inline PreparedTruth prepare_truth(const LabelVolume& truth, Connectivity connectivity = Connectivity::TwentySix,
                                   const LabelVolume* zone = nullptr, bool distance_map = true) {
  PreparedTruth t;
  if (zone) {
    validate_aligned({GridRef::of("truth", truth), GridRef::of("zone mask", *zone)});
    t.zone = *zone;
    t.truth = truth.intersect(*zone);
  } else {
    t.truth = truth;
  }
  t.connectivity = connectivity;
  t.components = label_components(t.truth, connectivity);
  t.boundary = boundary_voxels(t.truth);
  if (distance_map && !t.truth.empty()) t.sq_distance = squared_distance_transform(t.boundary);
  return t;
}

/// All metrics for a prediction against prepared ground truth.
inline MetricsReport evaluate(const LabelVolume& pred_in, const PreparedTruth& t, const EvalConfig& config = {}) {
  validate_pair(pred_in, t.truth);
  detail::check_overlap_threshold(config.s_gt, "s_gt");
  detail::check_overlap_threshold(config.s_pred, "s_pred");
  if (config.connectivity != t.connectivity)
    throw InvalidArgument("evaluation connectivity differs from the prepared truth");
  std::optional<LabelVolume> restricted;
  if (t.zone) restricted = pred_in.intersect(*t.zone);
  const LabelVolume& pred = restricted ? *restricted : pred_in;

  MetricsReport r;
  r.s_gt = config.s_gt;
  r.s_pred = config.s_pred;
  r.dsc = dice(pred, t.truth);
  r.both_empty = pred.empty() && t.truth.empty();
  if (!pred.empty() && !t.truth.empty())
    r.hd95_mm = detail::hd95_boundaries(boundary_voxels(pred), t.boundary, t.sq_distance.empty() ? nullptr : &t.sq_distance);
  const auto cc_pred = label_components(pred, config.connectivity);
  r.n_gt_lesions = int(t.components.count());
  r.n_pred_lesions = int(cc_pred.count());
  r.recall_gt = detail::hit_rate(t.components, pred, config.s_gt);
  r.precision_pred = detail::hit_rate(cc_pred, t.truth, config.s_pred);
  return r;
}

/// All metrics for one pair. With a zone mask, both volumes are restricted to
/// the zone first.
inline MetricsReport evaluate(const LabelVolume& pred, const LabelVolume& truth, const EvalConfig& config = {},
                              const LabelVolume* zone = nullptr) {
  validate_pair(pred, truth);
  return evaluate(pred, prepare_truth(truth, config.connectivity, zone, false), config);
}

}  // namespace fusionrules
