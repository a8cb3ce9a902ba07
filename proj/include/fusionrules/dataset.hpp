#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "rule_algebra.hpp"
#include "volume.hpp"

namespace fusionrules {

enum class Split { Train, Validation, Test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

/// One subject: three aligned modality maps, ground truth and optional zone masks.
struct CaseRecord {
  std::string case_id;
  std::array<ProbabilityVolume, kModalities> modalities;  // T2W, DWI_hb, ADC
  LabelVolume truth;
  std::optional<LabelVolume> tz;
  std::optional<LabelVolume> pz;
  Split split = Split::Train;

  void validate() const {
    std::vector<GridRef> refs{GridRef::of(case_id + "/T2W", modalities[0]), GridRef::of(case_id + "/DWI_hb", modalities[1]),
                              GridRef::of(case_id + "/ADC", modalities[2]), GridRef::of(case_id + "/truth", truth)};
    if (tz) refs.push_back(GridRef::of(case_id + "/TZ", *tz));
    if (pz) refs.push_back(GridRef::of(case_id + "/PZ", *pz));
    validate_aligned(refs);
  }

  /// Zone restriction mask, or nullptr for the whole gland.
  const LabelVolume* zone_mask(Zone zone) const {
    switch (zone) {
      case Zone::WG: return nullptr;
      case Zone::TZ:
        if (!tz) throw DataError("case '" + case_id + "' has no TZ mask");
        return &*tz;
      case Zone::PZ:
        if (!pz) throw DataError("case '" + case_id + "' has no PZ mask");
        return &*pz;
      case Zone::Custom: break;
    }
    throw InvalidArgument("zonal evaluation supports WG, TZ and PZ");
  }
};

/// 64-bit FNV-1a over the seed bytes then the id, finished with a splitmix64 mix.
inline std::uint64_t case_hash(std::string_view case_id, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ull;
  };
  for (int i = 0; i < 8; ++i) feed(static_cast<unsigned char>(seed >> (8 * i)));
  for (char c : case_id) feed(static_cast<unsigned char>(c));
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

struct SplitRatios {
  double train = 0.66, validation = 0.17, test = 0.17;
};

/// Cases are ordered by hash(case_id, seed); the first round(n * train) go to
/// train, the next round(n * validation) to validation, the rest to test.
inline std::vector<Split> assign_splits(const std::vector<std::string>& case_ids, std::uint64_t seed,
                                        const SplitRatios& ratios = {}) {
  const double total = ratios.train + ratios.validation + ratios.test;
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 || !(total > 0))
    throw InvalidArgument("split ratios must be non-negative with a positive sum");
  const std::size_t n = case_ids.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = case_hash(case_ids[i], seed);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : case_ids[a] < case_ids[b];
  });
  const auto n_train = std::size_t(std::llround(double(n) * ratios.train / total));
  const auto n_val = std::min(n - std::min(n, n_train), std::size_t(std::llround(double(n) * ratios.validation / total)));
  std::vector<Split> out(n, Split::Test);
  for (std::size_t r = 0; r < n; ++r) {
    if (r < n_train) out[order[r]] = Split::Train;
    else if (r < n_train + n_val) out[order[r]] = Split::Validation;
  }
  return out;
}

/// Pointers to the cases of one split, in dataset order.
inline std::vector<const CaseRecord*> select_split(const std::vector<CaseRecord>& cases, Split split) {
  std::vector<const CaseRecord*> out;
  for (const auto& c : cases)
    if (c.split == split) out.push_back(&c);
  return out;
}

inline std::vector<const CaseRecord*> all_cases(const std::vector<CaseRecord>& cases) {
  std::vector<const CaseRecord*> out;
  for (const auto& c : cases) out.push_back(&c);
  return out;
}

}  // namespace fusionrules
