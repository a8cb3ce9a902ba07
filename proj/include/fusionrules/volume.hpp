#pragma once

// Voxel grids. Linear index = x + nx * (y + ny * z), x fastest.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace fusionrules {

enum class Modality { T2W, DWI_hb, ADC, Combined, Label };

inline std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::T2W: return "T2W";
    case Modality::DWI_hb: return "DWI_hb";
    case Modality::ADC: return "ADC";
    case Modality::Combined: return "combined";
    case Modality::Label: return "label";
  }
  return "combined";
}

inline Modality parse_modality(std::string_view s) {
  if (s == "T2W") return Modality::T2W;
  if (s == "DWI_hb") return Modality::DWI_hb;
  if (s == "ADC") return Modality::ADC;
  if (s == "combined") return Modality::Combined;
  if (s == "label") return Modality::Label;
  throw DataError("unknown modality '" + std::string(s) + "'");
}

struct Dims {
  std::int64_t nx = 0, ny = 0, nz = 0;

  std::int64_t count() const { return nx * ny * nz; }
  std::int64_t operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  double sx = 1.0, sy = 1.0, sz = 1.0;

  double operator[](int axis) const { return axis == 0 ? sx : axis == 1 ? sy : sz; }
  double voxel_volume() const { return sx * sy * sz; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Dense 3D grid with physical spacing.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(Dims dims, Spacing spacing, std::vector<T> values)
      : dims_(dims), spacing_(spacing), values_(std::move(values)) {
    if (dims_.nx <= 0 || dims_.ny <= 0 || dims_.nz <= 0) throw DataError("volume dimensions must be positive");
    for (int a = 0; a < 3; ++a)
      if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a])) throw DataError("voxel spacing must be positive");
    if (std::int64_t(values_.size()) != dims_.count())
      throw DataError("volume payload has " + std::to_string(values_.size()) + " voxels, dims imply " +
                      std::to_string(dims_.count()));
  }
  Grid(Dims dims, Spacing spacing, T fill = T{})
      : Grid(dims, spacing, std::vector<T>(std::size_t(std::max<std::int64_t>(dims.count(), 0)), fill)) {}

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return values_.size(); }

  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return std::size_t(x + dims_.nx * (y + dims_.ny * z));
  }
  std::array<std::int64_t, 3> coords(std::size_t i) const {
    const auto li = std::int64_t(i);
    return {li % dims_.nx, (li / dims_.nx) % dims_.ny, li / (dims_.nx * dims_.ny)};
  }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.nx && y < dims_.ny && z < dims_.nz;
  }

  const T& operator[](std::size_t i) const { return values_[i]; }
  const T& at(std::int64_t x, std::int64_t y, std::int64_t z) const { return values_[index(x, y, z)]; }
  std::span<const T> values() const { return values_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 protected:
  std::vector<T>& mutable_values() { return values_; }

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<T> values_;
};

/// Class probabilities in [0, 1]; out-of-range values are rejected, never clamped.
class ProbabilityVolume : public Grid<double> {
 public:
  ProbabilityVolume() = default;
  ProbabilityVolume(Dims dims, Spacing spacing, std::vector<double> values, Modality modality = Modality::Combined)
      : Grid<double>(dims, spacing, std::move(values)), modality_(modality) {
    const auto v = this->values();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!(v[i] >= 0.0 && v[i] <= 1.0)) {
        const auto c = coords(i);
        throw DataError("probability " + std::to_string(v[i]) + " outside [0, 1] at voxel (" + std::to_string(c[0]) +
                        ", " + std::to_string(c[1]) + ", " + std::to_string(c[2]) + ")");
      }
  }
  ProbabilityVolume(Dims dims, Spacing spacing, double fill, Modality modality = Modality::Combined)
      : ProbabilityVolume(dims, spacing, std::vector<double>(std::size_t(dims.count()), fill), modality) {}

  Modality modality() const { return modality_; }
  ProbabilityVolume with_modality(Modality m) const {
    ProbabilityVolume out = *this;
    out.modality_ = m;
    return out;
  }

  friend bool operator==(const ProbabilityVolume&, const ProbabilityVolume&) = default;

 private:
  Modality modality_ = Modality::Combined;
};

/// Binary mask stored as 0/1 bytes.
class LabelVolume : public Grid<std::uint8_t> {
 public:
  LabelVolume() = default;
  LabelVolume(Dims dims, Spacing spacing, std::vector<std::uint8_t> values)
      : Grid<std::uint8_t>(dims, spacing, std::move(values)) {
    for (auto& v : mutable_values())
      if (v > 1) throw DataError("label volume values must be 0 or 1, found " + std::to_string(int(v)));
  }
  LabelVolume(Dims dims, Spacing spacing) : Grid<std::uint8_t>(dims, spacing, std::uint8_t{0}) {}

  void set(std::int64_t x, std::int64_t y, std::int64_t z, bool on) { mutable_values()[index(x, y, z)] = on; }
  void set(std::size_t i, bool on) { mutable_values()[i] = on; }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (auto v : values()) n += v;
    return n;
  }
  bool empty() const { return count() == 0; }

  /// Voxel-wise AND with another aligned mask.
  LabelVolume intersect(const LabelVolume& other) const {
    LabelVolume out = *this;
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] & other[i];
    return out;
  }

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

enum class Connectivity { Six = 6, Eighteen = 18, TwentySix = 26 };

inline Connectivity parse_connectivity(int c) {
  switch (c) {
    case 6: return Connectivity::Six;
    case 18: return Connectivity::Eighteen;
    case 26: return Connectivity::TwentySix;
    default: throw InvalidArgument("connectivity must be 6, 18 or 26, got " + std::to_string(c));
  }
}

struct Lesion {
  int id = 0;
  std::vector<std::size_t> voxels;  // ascending linear indices
  double volume_mm3 = 0.0;
};

struct LesionSet {
  std::vector<Lesion> components;  // ordered by first voxel in scan order, ids from 1
  Connectivity connectivity = Connectivity::TwentySix;
};

/// Anything with dims() and spacing(), paired with a name for error messages.
struct GridRef {
  std::string name;
  Dims dims;
  Spacing spacing;

  template <typename G>
  static GridRef of(std::string name, const G& g) {
    return GridRef{std::move(name), g.dims(), g.spacing()};
  }
};

/// Throws AlignmentError naming the first volume and axis that disagree with volumes[0].
inline void validate_aligned(std::span<const GridRef> volumes) {
  if (volumes.empty()) throw InvalidArgument("validate_aligned needs at least one volume");
  static constexpr const char* kAxes[] = {"x", "y", "z"};
  const auto& ref = volumes.front();
  for (const auto& v : volumes.subspan(1)) {
    for (int a = 0; a < 3; ++a) {
      if (v.dims[a] != ref.dims[a])
        throw AlignmentError("dimension mismatch: '" + v.name + "' has " + std::to_string(v.dims[a]) + " voxels along " +
                             kAxes[a] + ", '" + ref.name + "' has " + std::to_string(ref.dims[a]));
      if (v.spacing[a] != ref.spacing[a])
        throw AlignmentError("spacing mismatch: '" + v.name + "' has " + std::to_string(v.spacing[a]) + " mm along " +
                             kAxes[a] + ", '" + ref.name + "' has " + std::to_string(ref.spacing[a]) + " mm");
    }
  }
}

inline void validate_aligned(std::initializer_list<GridRef> volumes) {
  validate_aligned(std::span<const GridRef>(volumes.begin(), volumes.size()));
}

}  // namespace fusionrules
