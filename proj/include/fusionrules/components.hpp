#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "volume.hpp"

namespace fusionrules {

/// Neighbour offsets (dx, dy, dz) for the given connectivity, excluding the centre.
inline std::vector<std::array<int, 3>> neighbor_offsets(Connectivity c) {
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (c == Connectivity::Six && manhattan > 1) continue;
        if (c == Connectivity::Eighteen && manhattan > 2) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

/// Per-voxel component labels (0 = background) plus component sizes.
struct ComponentLabels {
  std::vector<std::uint32_t> labels;
  std::vector<std::int64_t> sizes;  // sizes[id - 1]
  std::size_t count() const { return sizes.size(); }
};

/// Breadth-first flood fill. Components are numbered 1.. in order of their
/// first voxel in scan order.
inline ComponentLabels label_components(const LabelVolume& mask, Connectivity connectivity = Connectivity::TwentySix) {
  const auto& d = mask.dims();
  const auto offsets = neighbor_offsets(connectivity);
  std::vector<std::int64_t> linear;
  for (const auto& o : offsets) linear.push_back(o[0] + d.nx * (o[1] + d.ny * o[2]));
  const auto values = mask.values();
  ComponentLabels out;
  out.labels.assign(mask.size(), 0);
  std::vector<std::size_t> queue;
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!values[seed] || out.labels[seed]) continue;
    const auto id = static_cast<std::uint32_t>(out.sizes.size() + 1);
    queue.clear();
    queue.push_back(seed);
    out.labels[seed] = id;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t cur = queue[head];
      const auto [x, y, z] = mask.coords(cur);
      const bool interior = x > 0 && y > 0 && z > 0 && x < d.nx - 1 && y < d.ny - 1 && z < d.nz - 1;
      for (std::size_t k = 0; k < offsets.size(); ++k) {
        if (!interior) {
          const auto& o = offsets[k];
          const std::int64_t nx = x + o[0], ny = y + o[1], nz = z + o[2];
          if (nx < 0 || ny < 0 || nz < 0 || nx >= d.nx || ny >= d.ny || nz >= d.nz) continue;
        }
        const auto ni = std::size_t(std::int64_t(cur) + linear[k]);
        if (values[ni] && !out.labels[ni]) {
          out.labels[ni] = id;
          queue.push_back(ni);
        }
      }
    }
    out.sizes.push_back(std::int64_t(queue.size()));
  }
  return out;
}

/// Maximal connected regions of the mask.
inline LesionSet connected_components(const LabelVolume& mask, Connectivity connectivity = Connectivity::TwentySix) {
  const auto cc = label_components(mask, connectivity);
  LesionSet set;
  set.connectivity = connectivity;
  set.components.resize(cc.count());
  const double vv = mask.spacing().voxel_volume();
  for (std::size_t i = 0; i < cc.count(); ++i) {
    set.components[i].id = int(i + 1);
    set.components[i].voxels.reserve(std::size_t(cc.sizes[i]));
    set.components[i].volume_mm3 = double(cc.sizes[i]) * vv;
  }
  for (std::size_t v = 0; v < cc.labels.size(); ++v)
    if (cc.labels[v]) set.components[cc.labels[v] - 1].voxels.push_back(v);
  return set;
}

/// Drops components with fewer than min_voxels voxels.
inline LabelVolume remove_small_components(const LabelVolume& mask, std::int64_t min_voxels,
                                           Connectivity connectivity = Connectivity::TwentySix) {
  if (min_voxels <= 1) return mask;
  const auto cc = label_components(mask, connectivity);
  LabelVolume out(mask.dims(), mask.spacing());
  for (std::size_t v = 0; v < cc.labels.size(); ++v)
    if (cc.labels[v] && cc.sizes[cc.labels[v] - 1] >= min_voxels) out.set(v, true);
  return out;
}

}  // namespace fusionrules
