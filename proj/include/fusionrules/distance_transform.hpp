#pragma once

// Exact Euclidean distance transform (lower envelope of parabolas, applied
// separably per axis) with anisotropic voxel spacing.

#include <cmath>
#include <limits>
#include <vector>

#include "volume.hpp"

namespace fusionrules {

namespace detail {

// One 1D pass over n samples f[0], f[stride], ... with sample spacing w.
// f holds squared distances (infinity for "no feature yet").
inline void edt_pass_1d(double* f, std::int64_t n, std::int64_t stride, double w, std::vector<double>& buf,
                        std::vector<std::int64_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  buf.resize(std::size_t(n));
  v.resize(std::size_t(n));
  z.resize(std::size_t(n) + 1);
  for (std::int64_t i = 0; i < n; ++i) buf[std::size_t(i)] = f[i * stride];

  const double w2 = w * w;
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    const double fq = buf[std::size_t(q)];
    if (fq == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const std::int64_t p = v[std::size_t(k)];
      const double fp = buf[std::size_t(p)];
      // Intersection of parabolas rooted at p and q, in index units.
      s = ((fq + w2 * double(q) * double(q)) - (fp + w2 * double(p) * double(p))) / (2.0 * w2 * double(q - p));
      if (s <= z[std::size_t(k)] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[std::size_t(k)]) {  // k == 0 and the new parabola dominates
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    ++k;
    v[std::size_t(k)] = q;
    z[std::size_t(k)] = s;
    z[std::size_t(k) + 1] = inf;
  }
  if (k < 0) return;  // column has no features

  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[std::size_t(j) + 1] < double(q)) ++j;
    const double dq = w * double(q - v[std::size_t(j)]);
    f[q * stride] = dq * dq + buf[std::size_t(v[std::size_t(j)])];
  }
}

}  // namespace detail

/// Squared distance in mm^2 from every voxel centre to the nearest feature
/// voxel centre; +inf everywhere when there are no features.
inline std::vector<double> squared_distance_transform(const LabelVolume& features) {
  const auto& d = features.dims();
  const auto& sp = features.spacing();
  std::vector<double> f(features.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < f.size(); ++i)
    if (features[i]) f[i] = 0.0;

  std::vector<double> buf, z;
  std::vector<std::int64_t> v;
  for (std::int64_t zz = 0; zz < d.nz; ++zz)
    for (std::int64_t y = 0; y < d.ny; ++y)
      detail::edt_pass_1d(f.data() + features.index(0, y, zz), d.nx, 1, sp.sx, buf, v, z);
  for (std::int64_t zz = 0; zz < d.nz; ++zz)
    for (std::int64_t x = 0; x < d.nx; ++x)
      detail::edt_pass_1d(f.data() + features.index(x, 0, zz), d.ny, d.nx, sp.sy, buf, v, z);
  for (std::int64_t y = 0; y < d.ny; ++y)
    for (std::int64_t x = 0; x < d.nx; ++x)
      detail::edt_pass_1d(f.data() + features.index(x, y, 0), d.nz, d.nx * d.ny, sp.sz, buf, v, z);
  return f;
}

}  // namespace fusionrules
