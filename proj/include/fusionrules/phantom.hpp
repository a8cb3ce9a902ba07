#pragma once

// Synthetic multi-modality cases: ellipsoid lesions, per-modality maps that
// mix a smoothed copy of the truth with a smooth random field, and optionally
// a truth regenerated from a planted linear rule.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "combiner.hpp"
#include "dataset.hpp"
#include "parallel.hpp"
#include "volume_io.hpp"

namespace fusionrules {

struct PhantomSpec {
  Dims dims{48, 48, 48};
  Spacing spacing{1.0, 1.0, 1.0};
  int n_lesions = 3;
  double radius_min = 3.0;  // voxels, per semi-axis
  double radius_max = 10.0;
  std::array<double, kModalities> fidelity{0.8, 0.8, 0.8};
  double noise_sd = 0.05;
  int smoothing_half_width = 1;
  std::optional<LinearRule> planted;
  BinarizeOptions binarize;
  bool zones = false;
  int max_attempts = 1000;

  void validate() const {
    if (dims.nx < 16 || dims.ny < 16 || dims.nz < 16) throw InvalidArgument("phantom dims must be at least 16^3");
    if (n_lesions < 0) throw InvalidArgument("n_lesions must be non-negative");
    if (!(radius_min >= 2.0) || !(radius_max >= radius_min))
      throw InvalidArgument("radius range must satisfy 2 <= radius_min <= radius_max");
    for (double f : fidelity)
      if (!(f >= 0.0 && f <= 1.0)) throw InvalidArgument("fidelity must lie in [0, 1]");
    if (!(noise_sd >= 0.0)) throw InvalidArgument("noise_sd must be non-negative");
    if (smoothing_half_width < 0) throw InvalidArgument("smoothing half-width must be non-negative");
    if (planted && !planted->on_simplex()) throw InvalidArgument("planted rule must lie on the simplex");
    if (max_attempts < 1) throw InvalidArgument("max_attempts must be positive");
  }
};

/// Separable triangular blur with weights (h + 1 - |k|), renormalised over
/// the taps that fall inside the grid.
inline std::vector<double> triangular_blur(std::vector<double> f, const Dims& d, int half_width) {
  if (half_width == 0) return f;
  std::vector<double> tmp(f.size());
  const std::array<std::int64_t, 3> n{d.nx, d.ny, d.nz};
  const std::array<std::int64_t, 3> stride{1, d.nx, d.nx * d.ny};
  std::vector<double> line;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::int64_t len = n[axis], st = stride[axis];
    line.resize(std::size_t(len));
    // Visit every line along `axis` by its starting voxel.
    for (std::int64_t start = 0; start < std::int64_t(f.size()); ++start) {
      if ((start / st) % len != 0) continue;
      for (std::int64_t p = 0; p < len; ++p) line[std::size_t(p)] = f[std::size_t(start + p * st)];
      for (std::int64_t p = 0; p < len; ++p) {
        double acc = 0.0, wsum = 0.0;
        for (std::int64_t k = std::max<std::int64_t>(-half_width, -p); k <= std::min<std::int64_t>(half_width, len - 1 - p);
             ++k) {
          const double w = double(half_width + 1 - std::abs(k));
          acc += w * line[std::size_t(p + k)];
          wsum += w;
        }
        tmp[std::size_t(start + p * st)] = acc / wsum;
      }
    }
    f.swap(tmp);
  }
  return f;
}

namespace detail {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;
  double extent() const { return std::max({radii[0], radii[1], radii[2]}); }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Keys (all optional): dims, spacing_mm, n_lesions, radius_min, radius_max,
/// fidelity, noise_sd, smoothing_half_width, planted_alpha, threshold,
/// min_region_voxels, zones, max_attempts.
inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  PhantomSpec s;
  try {
    if (!j.is_object()) throw DataError("phantom spec must be a JSON object");
    if (j.contains("dims")) {
      const auto v = j.at("dims").get<std::array<std::int64_t, 3>>();
      s.dims = {v[0], v[1], v[2]};
    }
    if (j.contains("spacing_mm")) {
      const auto v = j.at("spacing_mm").get<std::array<double, 3>>();
      s.spacing = {v[0], v[1], v[2]};
    }
    s.n_lesions = j.value("n_lesions", s.n_lesions);
    s.radius_min = j.value("radius_min", s.radius_min);
    s.radius_max = j.value("radius_max", s.radius_max);
    if (j.contains("fidelity")) s.fidelity = j.at("fidelity").get<std::array<double, 3>>();
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.smoothing_half_width = j.value("smoothing_half_width", s.smoothing_half_width);
    if (j.contains("planted_alpha") && !j.at("planted_alpha").is_null())
      s.planted = LinearRule{j.at("planted_alpha").get<std::array<double, 3>>()};
    s.binarize.threshold = j.value("threshold", s.binarize.threshold);
    s.binarize.min_region_voxels = j.value("min_region_voxels", s.binarize.min_region_voxels);
    s.zones = j.value("zones", s.zones);
    s.max_attempts = j.value("max_attempts", s.max_attempts);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed phantom spec: ") + e.what());
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("invalid phantom spec: ") + e.what());
  }
  return s;
}

inline nlohmann::ordered_json phantom_spec_json(const PhantomSpec& s) {
  nlohmann::ordered_json j;
  j["dims"] = {s.dims.nx, s.dims.ny, s.dims.nz};
  j["spacing_mm"] = {s.spacing.sx, s.spacing.sy, s.spacing.sz};
  j["n_lesions"] = s.n_lesions;
  j["radius_min"] = s.radius_min;
  j["radius_max"] = s.radius_max;
  j["fidelity"] = s.fidelity;
  j["noise_sd"] = s.noise_sd;
  j["smoothing_half_width"] = s.smoothing_half_width;
  j["planted_alpha"] = s.planted ? nlohmann::ordered_json(s.planted->alpha) : nlohmann::ordered_json(nullptr);
  j["threshold"] = s.binarize.threshold;
  j["min_region_voxels"] = s.binarize.min_region_voxels;
  j["zones"] = s.zones;
  j["max_attempts"] = s.max_attempts;
  return j;
}

/// Deterministic for a given seed and spec.
inline CaseRecord generate_case(std::uint64_t seed, const PhantomSpec& spec, std::string case_id = "case") {
  spec.validate();
  std::mt19937_64 rng(seed);
  const auto& d = spec.dims;
  const std::array<std::int64_t, 3> n{d.nx, d.ny, d.nz};

  // Lesion placement: bounding spheres kept at least two voxels apart.
  std::vector<detail::Ellipsoid> lesions;
  std::uniform_real_distribution<double> radius(spec.radius_min, spec.radius_max);
  for (int l = 0; l < spec.n_lesions; ++l) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
      detail::Ellipsoid e{};
      for (int a = 0; a < 3; ++a) e.radii[std::size_t(a)] = radius(rng);
      bool fits = true;
      for (int a = 0; a < 3; ++a) {
        const double lo = e.radii[std::size_t(a)] + 1.0, hi = double(n[std::size_t(a)]) - 2.0 - e.radii[std::size_t(a)];
        if (hi < lo) {
          fits = false;
          break;
        }
        e.center[std::size_t(a)] = std::uniform_real_distribution<double>(lo, hi)(rng);
      }
      if (!fits) continue;
      placed = true;
      for (const auto& o : lesions) {
        double dist2 = 0.0;
        for (int a = 0; a < 3; ++a) dist2 += std::pow(e.center[std::size_t(a)] - o.center[std::size_t(a)], 2);
        if (std::sqrt(dist2) < e.extent() + o.extent() + 2.0) {
          placed = false;
          break;
        }
      }
      if (placed) lesions.push_back(e);
    }
    if (!placed)
      throw DataError("case '" + case_id + "': could not place lesion " + std::to_string(l + 1) + " of " +
                      std::to_string(spec.n_lesions) + " after " + std::to_string(spec.max_attempts) + " attempts");
  }

  LabelVolume truth(d, spec.spacing);
  for (const auto& e : lesions) {
    std::array<std::int64_t, 3> lo{}, hi{};
    for (std::size_t a = 0; a < 3; ++a) {
      lo[a] = std::max<std::int64_t>(0, std::int64_t(std::floor(e.center[a] - e.radii[a])));
      hi[a] = std::min<std::int64_t>(n[a] - 1, std::int64_t(std::ceil(e.center[a] + e.radii[a])));
    }
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
        for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
          const double q = std::pow((double(x) - e.center[0]) / e.radii[0], 2) +
                           std::pow((double(y) - e.center[1]) / e.radii[1], 2) +
                           std::pow((double(z) - e.center[2]) / e.radii[2], 2);
          if (q <= 1.0) truth.set(x, y, z, true);
        }
  }

  // Smoothed truth that stays above 0.5 inside lesions and below it outside.
  std::vector<double> t(truth.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = truth[i];
  const auto blurred = triangular_blur(t, d, spec.smoothing_half_width);
  std::vector<double> soft(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) soft[i] = truth[i] ? 0.5 + 0.5 * blurred[i] : 0.5 * blurred[i];

  CaseRecord c;
  c.case_id = std::move(case_id);
  static constexpr Modality kMods[] = {Modality::T2W, Modality::DWI_hb, Modality::ADC};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t m = 0; m < kModalities; ++m) {
    std::vector<double> field(t.size());
    for (double& v : field) v = unit(rng);
    field = triangular_blur(std::move(field), d, spec.smoothing_half_width);
    const double f = spec.fidelity[m];
    std::vector<double> vals(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      double v = f * soft[i] + (1.0 - f) * field[i];
      if (spec.noise_sd > 0.0) v += spec.noise_sd * gauss(rng);
      // Stored at float32 precision so an on-disk round trip is lossless.
      vals[i] = double(static_cast<float>(std::clamp(v, 0.0, 1.0)));
    }
    c.modalities[m] = ProbabilityVolume(d, spec.spacing, std::move(vals), kMods[m]);
  }

  if (spec.planted) {
    const auto stack = stack_of(c.modalities[0], c.modalities[1], c.modalities[2]);
    c.truth = binarize(combine_linear(stack, *spec.planted), spec.binarize);
  } else {
    c.truth = std::move(truth);
  }

  if (spec.zones) {
    LabelVolume tz(d, spec.spacing), pz(d, spec.spacing);
    for (std::int64_t z = 0; z < d.nz; ++z)
      for (std::int64_t y = 0; y < d.ny; ++y)
        for (std::int64_t x = 0; x < d.nx; ++x) {
          const bool central = x >= d.nx / 4 && x < d.nx - d.nx / 4 && y >= d.ny / 4 && y < d.ny - d.ny / 4;
          tz.set(x, y, z, central);
          pz.set(x, y, z, !central);
        }
    c.tz = std::move(tz);
    c.pz = std::move(pz);
  }
  return c;
}

inline std::string phantom_case_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03d", i);
  return buf;
}

/// n_cases cases with seeds derived from `seed`, split by case-id hash.
inline std::vector<CaseRecord> generate_cases(std::uint64_t seed, int n_cases, const PhantomSpec& spec,
                                              std::uint64_t split_seed = 0, const SplitRatios& ratios = {},
                                              unsigned threads = 1) {
  if (n_cases < 1) throw InvalidArgument("n_cases must be at least 1");
  std::vector<CaseRecord> cases(static_cast<std::size_t>(n_cases));
  parallel_for(cases.size(), threads, [&](std::size_t i) {
    cases[i] = generate_case(detail::splitmix64(seed + i), spec, phantom_case_id(int(i)));
  });
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.case_id);
  const auto splits = assign_splits(ids, split_seed, ratios);
  for (std::size_t i = 0; i < cases.size(); ++i) cases[i].split = splits[i];
  return cases;
}

/// Writes every case's volumes under out_dir plus out_dir/manifest.json.
inline Manifest generate_dataset(std::uint64_t seed, int n_cases, const PhantomSpec& spec, const fs::path& out_dir,
                                 std::uint64_t split_seed = 0, const SplitRatios& ratios = {}, unsigned threads = 1) {
  const auto cases = generate_cases(seed, n_cases, spec, split_seed, ratios, threads);
  Manifest m;
  m.split_seed = split_seed;
  m.cases.resize(cases.size());
  parallel_for(cases.size(), threads, [&](std::size_t i) {
    const auto& c = cases[i];
    ManifestEntry e;
    e.case_id = c.case_id;
    e.split = c.split;
    e.t2w = c.case_id + "_t2w";
    e.dwi_hb = c.case_id + "_dwi_hb";
    e.adc = c.case_id + "_adc";
    e.truth = c.case_id + "_truth";
    save_volume(out_dir / e.t2w, c.modalities[0]);
    save_volume(out_dir / e.dwi_hb, c.modalities[1]);
    save_volume(out_dir / e.adc, c.modalities[2]);
    save_volume(out_dir / e.truth, c.truth);
    if (c.tz) {
      e.tz = c.case_id + "_tz";
      save_volume(out_dir / *e.tz, *c.tz);
    }
    if (c.pz) {
      e.pz = c.case_id + "_pz";
      save_volume(out_dir / *e.pz, *c.pz);
    }
    m.cases[i] = std::move(e);
  });
  detail::write_file(out_dir / "manifest.json", manifest_json(m));
  return m;
}

}  // namespace fusionrules
