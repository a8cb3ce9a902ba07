#pragma once

// Boolean condition system for three modalities. A condition is one
// (T2W, DWI_hb, ADC) triple of positive/negative findings; a decision vector
// assigns a combined outcome to each of the eight conditions.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace fusionrules {

inline constexpr std::size_t kModalities = 3;
inline constexpr std::size_t kConditions = 8;

enum class Zone { WG, TZ, PZ, Custom };

inline std::string_view zone_name(Zone z) {
  switch (z) {
    case Zone::WG: return "WG";
    case Zone::TZ: return "TZ";
    case Zone::PZ: return "PZ";
    case Zone::Custom: return "custom";
  }
  return "custom";
}

inline Zone parse_zone(std::string_view s) {
  if (s == "WG") return Zone::WG;
  if (s == "TZ") return Zone::TZ;
  if (s == "PZ") return Zone::PZ;
  if (s == "custom") return Zone::Custom;
  throw InvalidArgument("unknown zone '" + std::string(s) + "' (expected WG, TZ, PZ or custom)");
}

/// 3x8 Boolean matrix; row = modality, column = condition.
class ConditionMatrix {
 public:
  using Column = std::array<std::uint8_t, kModalities>;

  constexpr ConditionMatrix() = default;
  constexpr explicit ConditionMatrix(std::array<Column, kConditions> columns) : columns_(columns) {}

  constexpr std::uint8_t operator()(std::size_t row, std::size_t col) const { return columns_[col][row]; }
  constexpr const Column& column(std::size_t col) const { return columns_[col]; }
  constexpr const std::array<Column, kConditions>& columns() const { return columns_; }

  friend constexpr bool operator==(const ConditionMatrix&, const ConditionMatrix&) = default;

 private:
  std::array<Column, kConditions> columns_{};
};

/// Column k (0-based) holds the bits of k, most significant bit in row 0.
constexpr ConditionMatrix canonical_condition_matrix() {
  std::array<ConditionMatrix::Column, kConditions> cols{};
  for (std::size_t k = 0; k < kConditions; ++k) {
    cols[k] = {static_cast<std::uint8_t>((k >> 2) & 1u), static_cast<std::uint8_t>((k >> 1) & 1u),
               static_cast<std::uint8_t>(k & 1u)};
  }
  return ConditionMatrix(cols);
}

struct DecisionVector {
  std::array<std::uint8_t, kConditions> bits{};
  Zone zone = Zone::Custom;

  constexpr std::uint8_t operator[](std::size_t k) const { return bits[k]; }
  constexpr bool is_constant() const {
    for (auto b : bits)
      if (b != bits[0]) return false;
    return true;
  }
  friend constexpr bool operator==(const DecisionVector& a, const DecisionVector& b) { return a.bits == b.bits; }
};

/// d[0] is the most significant bit.
constexpr int rule_number(const DecisionVector& d) {
  int n = 0;
  for (auto b : d.bits) n = (n << 1) | (b ? 1 : 0);
  return n;
}

inline DecisionVector decision_from_number(int n, Zone zone = Zone::Custom) {
  if (n < 0 || n > 255) throw InvalidArgument("rule number " + std::to_string(n) + " outside [0, 255]");
  DecisionVector d;
  d.zone = zone;
  for (std::size_t k = 0; k < kConditions; ++k) d.bits[k] = static_cast<std::uint8_t>((n >> (7 - k)) & 1);
  return d;
}

/// Binary PI-RADS decisions. TZ: T2W positive, or DWI_hb and ADC both
/// positive (rule 31). PZ: DWI_hb or ADC positive (rule 119). WG: T2W or
/// DWI_hb positive (rule 63).
inline DecisionVector pirads_decisions(Zone zone) {
  switch (zone) {
    case Zone::WG: return decision_from_number(63, Zone::WG);
    case Zone::TZ: return decision_from_number(31, Zone::TZ);
    case Zone::PZ: return decision_from_number(119, Zone::PZ);
    case Zone::Custom: break;
  }
  throw InvalidArgument("PI-RADS decisions are defined for WG, TZ and PZ only");
}

}  // namespace fusionrules
