#pragma once

// Native volume format: raw little-endian payload `<base>.raw` plus a JSON
// sidecar `<base>.json`:
//   {"dims": [nx, ny, nz], "spacing_mm": [sx, sy, sz], "dtype": "f32le" | "u8",
//    "modality": "T2W" | "DWI_hb" | "ADC" | "combined" | "label" | "variance",
//    "order": "x-fastest"}
// plus a read-only loader for uncompressed single-file NIfTI-1, and dataset
// manifests.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "volume.hpp"

namespace fusionrules {

namespace fs = std::filesystem;

using AnyVolume = std::variant<ProbabilityVolume, LabelVolume>;

namespace detail {

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file(const fs::path& p, std::string_view bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error("short write to '" + p.string() + "'");
}

inline std::uint32_t load_u32le(const unsigned char* b) {
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void store_u32le(std::uint32_t v, char* out) {
  for (int i = 0; i < 4; ++i) out[i] = char((v >> (8 * i)) & 0xffu);
}

/// "<base>", "<base>.json" or "<base>.raw" -> "<base>".
inline fs::path volume_base(const fs::path& p) {
  if (p.extension() == ".json" || p.extension() == ".raw") return fs::path(p).replace_extension();
  return p;
}

inline fs::path with_suffix(const fs::path& base, const char* suffix) {
  fs::path out = base;
  out += suffix;
  return out;
}

inline nlohmann::ordered_json sidecar(const Dims& d, const Spacing& s, const char* dtype, std::string_view modality) {
  nlohmann::ordered_json j;
  j["dims"] = {d.nx, d.ny, d.nz};
  j["spacing_mm"] = {s.sx, s.sy, s.sz};
  j["dtype"] = dtype;
  j["modality"] = std::string(modality);
  j["order"] = "x-fastest";
  return j;
}

inline std::string encode_f32le(std::span<const double> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i)
    store_u32le(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])), bytes.data() + 4 * i);
  return bytes;
}

}  // namespace detail

/// Writes `<base>.json` and `<base>.raw` (float32).
inline void save_volume(const fs::path& path, const ProbabilityVolume& v) {
  const auto base = detail::volume_base(path);
  detail::write_file(detail::with_suffix(base, ".raw"), detail::encode_f32le(v.values()));
  detail::write_file(detail::with_suffix(base, ".json"),
                     detail::sidecar(v.dims(), v.spacing(), "f32le", modality_name(v.modality())).dump(2) + "\n");
}

/// Writes `<base>.json` and `<base>.raw` (uint8).
inline void save_volume(const fs::path& path, const LabelVolume& v) {
  const auto base = detail::volume_base(path);
  const auto vals = v.values();
  detail::write_file(detail::with_suffix(base, ".raw"),
                     std::string_view(reinterpret_cast<const char*>(vals.data()), vals.size()));
  detail::write_file(detail::with_suffix(base, ".json"),
                     detail::sidecar(v.dims(), v.spacing(), "u8", "label").dump(2) + "\n");
}

/// Float grid that is not a probability map (e.g. voxel variance).
inline void save_float_grid(const fs::path& path, const Grid<double>& g, std::string_view modality) {
  const auto base = detail::volume_base(path);
  detail::write_file(detail::with_suffix(base, ".raw"), detail::encode_f32le(g.values()));
  detail::write_file(detail::with_suffix(base, ".json"),
                     detail::sidecar(g.dims(), g.spacing(), "f32le", modality).dump(2) + "\n");
}

struct RawVolume {
  Dims dims;
  Spacing spacing;
  std::string dtype;
  std::string modality;
  std::string payload;
};

/// Parses and checks the sidecar and payload length without interpreting values.
inline RawVolume read_raw_volume(const fs::path& path) {
  const auto base = detail::volume_base(path);
  const auto sidecar_path = detail::with_suffix(base, ".json");
  if (!fs::exists(sidecar_path)) throw DataError("missing volume header '" + sidecar_path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(sidecar_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed volume header '" + sidecar_path.string() + "': " + e.what());
  }
  RawVolume rv;
  try {
    const auto& d = j.at("dims");
    const auto& s = j.at("spacing_mm");
    if (d.size() != 3 || s.size() != 3) throw DataError("dims and spacing_mm must have three entries");
    rv.dims = Dims{d[0].get<std::int64_t>(), d[1].get<std::int64_t>(), d[2].get<std::int64_t>()};
    rv.spacing = Spacing{s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    rv.dtype = j.at("dtype").get<std::string>();
    rv.modality = j.value("modality", std::string("combined"));
    const auto order = j.value("order", std::string("x-fastest"));
    if (order != "x-fastest") throw DataError("unsupported voxel order '" + order + "'");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed volume header '" + sidecar_path.string() + "': " + e.what());
  }
  if (rv.dims.nx <= 0 || rv.dims.ny <= 0 || rv.dims.nz <= 0)
    throw DataError("volume dimensions must be positive in '" + sidecar_path.string() + "'");
  std::size_t elem = 0;
  if (rv.dtype == "f32le") elem = 4;
  else if (rv.dtype == "u8") elem = 1;
  else throw DataError("unsupported dtype '" + rv.dtype + "' (expected f32le or u8)");

  const auto payload_path = detail::with_suffix(base, ".raw");
  rv.payload = detail::read_file(payload_path);
  const auto expected = std::size_t(rv.dims.count()) * elem;
  if (rv.payload.size() != expected)
    throw DataError("payload '" + payload_path.string() + "' has " + std::to_string(rv.payload.size()) +
                    " bytes, expected " + std::to_string(expected));
  return rv;
}

namespace detail {

inline std::vector<double> decode_f32le(const std::string& payload) {
  std::vector<double> out(payload.size() / 4);
  const auto* b = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(load_u32le(b + 4 * i));
  return out;
}

}  // namespace detail

/// f32le volumes load as ProbabilityVolume (values must lie in [0, 1]); u8 as LabelVolume.
inline AnyVolume load_volume(const fs::path& path) {
  auto rv = read_raw_volume(path);
  try {
    if (rv.dtype == "u8") {
      std::vector<std::uint8_t> vals(rv.payload.begin(), rv.payload.end());
      return LabelVolume(rv.dims, rv.spacing, std::move(vals));
    }
    if (rv.modality == "label" || rv.modality == "variance")
      throw DataError("f32le volume with modality '" + rv.modality + "' is not a probability map");
    return ProbabilityVolume(rv.dims, rv.spacing, detail::decode_f32le(rv.payload), parse_modality(rv.modality));
  } catch (const DataError& e) {
    throw DataError("'" + detail::volume_base(path).string() + "': " + e.what());
  }
}

inline Grid<double> load_float_grid(const fs::path& path) {
  auto rv = read_raw_volume(path);
  if (rv.dtype != "f32le") throw DataError("'" + path.string() + "' is not a float volume");
  return Grid<double>(rv.dims, rv.spacing, detail::decode_f32le(rv.payload));
}

// ---------------------------------------------------------------------------
// NIfTI-1

namespace detail {

struct NiftiReader {
  const unsigned char* b;
  bool swap;

  template <typename T>
  T get(std::size_t off) const {
    std::array<unsigned char, sizeof(T)> tmp;
    std::memcpy(tmp.data(), b + off, sizeof(T));
    if (swap) std::reverse(tmp.begin(), tmp.end());
    return std::bit_cast<T>(tmp);
  }
};

}  // namespace detail

/// Uncompressed single-file NIfTI-1 (magic "n+1"), 3D, float32 or uint8.
/// scl_slope / scl_inter are applied when the slope is non-zero. Unscaled
/// uint8 data loads as a label volume, everything else as probabilities.
inline AnyVolume load_nifti1(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() >= 2 && b[0] == 0x1f && b[1] == 0x8b)
    throw DataError("'" + path.string() + "': gzip-compressed NIfTI is not supported");
  if (bytes.size() < 352) throw DataError("'" + path.string() + "': too short for a NIfTI-1 header");

  detail::NiftiReader rd{b, false};
  if (rd.get<std::int32_t>(0) != 348) {
    rd.swap = true;
    if (rd.get<std::int32_t>(0) != 348) throw DataError("'" + path.string() + "': sizeof_hdr is not 348");
  }
  if (std::memcmp(b + 344, "n+1\0", 4) != 0) {
    if (std::memcmp(b + 344, "ni1\0", 4) == 0)
      throw DataError("'" + path.string() + "': two-file NIfTI (.hdr/.img) is not supported");
    throw DataError("'" + path.string() + "': bad NIfTI magic");
  }

  const int ndim = rd.get<std::int16_t>(40);
  if (ndim < 1 || ndim > 7) throw DataError("'" + path.string() + "': invalid dim[0] = " + std::to_string(ndim));
  std::array<std::int64_t, 8> dim{};
  for (int i = 1; i <= 7; ++i) dim[std::size_t(i)] = i <= ndim ? rd.get<std::int16_t>(40 + 2 * std::size_t(i)) : 1;
  for (int i = 4; i <= ndim; ++i)
    if (dim[std::size_t(i)] != 1)
      throw DataError("'" + path.string() + "': " + std::to_string(ndim) + "D images are not supported");
  Dims dims{dim[1], dim[2], dim[3]};
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw DataError("'" + path.string() + "': non-positive dimensions");

  Spacing sp;
  for (int a = 0; a < 3; ++a) {
    const double v = std::abs(double(rd.get<float>(80 + 4 * std::size_t(a))));
    (a == 0 ? sp.sx : a == 1 ? sp.sy : sp.sz) = a < ndim ? v : 1.0;
  }

  const int datatype = rd.get<std::int16_t>(70);
  std::size_t elem = 0;
  if (datatype == 2) elem = 1;        // DT_UINT8
  else if (datatype == 16) elem = 4;  // DT_FLOAT32
  else throw DataError("'" + path.string() + "': unsupported NIfTI datatype " + std::to_string(datatype));

  const double vox_offset = rd.get<float>(108);
  const auto offset = std::size_t(vox_offset);
  if (vox_offset < 348 || double(offset) != vox_offset)
    throw DataError("'" + path.string() + "': invalid vox_offset");
  const std::size_t n = std::size_t(dims.count());
  if (bytes.size() < offset + n * elem)
    throw DataError("'" + path.string() + "': payload has " + std::to_string(bytes.size() - std::min(bytes.size(), offset)) +
                    " bytes, expected " + std::to_string(n * elem));

  const double slope = rd.get<float>(112);
  const double inter = rd.get<float>(116);
  const bool scaled = slope != 0.0 && (slope != 1.0 || inter != 0.0);

  try {
    if (datatype == 2 && !scaled) {
      std::vector<std::uint8_t> vals(b + offset, b + offset + n);
      return LabelVolume(dims, sp, std::move(vals));
    }
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double raw = datatype == 2 ? double(b[offset + i]) : double(rd.get<float>(offset + 4 * i));
      vals[i] = scaled ? raw * slope + inter : raw;
    }
    return ProbabilityVolume(dims, sp, std::move(vals), Modality::Combined);
  } catch (const DataError& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

/// Dispatches on extension: .nii goes to the NIfTI reader, anything else to the native format.
inline AnyVolume load_any(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".nii" || ext == ".gz") return load_nifti1(path);
  return load_volume(path);
}

inline ProbabilityVolume load_probability(const fs::path& path, std::optional<Modality> modality = std::nullopt) {
  auto v = load_any(path);
  if (auto* p = std::get_if<ProbabilityVolume>(&v)) return modality ? p->with_modality(*modality) : std::move(*p);
  throw DataError("'" + path.string() + "' holds a label volume, expected probabilities");
}

inline LabelVolume load_label(const fs::path& path) {
  auto v = load_any(path);
  if (auto* l = std::get_if<LabelVolume>(&v)) return std::move(*l);
  throw DataError("'" + path.string() + "' holds probabilities, expected a label volume");
}

// ---------------------------------------------------------------------------
// Manifests: {"format": "fusionrules-manifest", "version": 1, "split_seed": s,
//   "cases": [{"case_id", "split", "t2w", "dwi_hb", "adc", "truth", "tz"?, "pz"?}]}
// Paths are relative to the manifest's directory.

struct ManifestEntry {
  std::string case_id;
  Split split = Split::Train;
  std::string t2w, dwi_hb, adc, truth;
  std::optional<std::string> tz, pz;
};

struct Manifest {
  std::uint64_t split_seed = 0;
  std::vector<ManifestEntry> cases;
};

inline std::string manifest_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["format"] = "fusionrules-manifest";
  j["version"] = 1;
  j["split_seed"] = m.split_seed;
  j["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : m.cases) {
    nlohmann::ordered_json e;
    e["case_id"] = c.case_id;
    e["split"] = std::string(split_name(c.split));
    e["t2w"] = c.t2w;
    e["dwi_hb"] = c.dwi_hb;
    e["adc"] = c.adc;
    e["truth"] = c.truth;
    if (c.tz) e["tz"] = *c.tz;
    if (c.pz) e["pz"] = *c.pz;
    j["cases"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

inline Manifest parse_manifest(const std::string& text) {
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.split_seed = j.value("split_seed", std::uint64_t{0});
    for (const auto& e : j.at("cases")) {
      ManifestEntry c;
      c.case_id = e.at("case_id").get<std::string>();
      c.split = parse_split(e.value("split", std::string("train")));
      c.t2w = e.at("t2w").get<std::string>();
      c.dwi_hb = e.at("dwi_hb").get<std::string>();
      c.adc = e.at("adc").get<std::string>();
      c.truth = e.at("truth").get<std::string>();
      if (e.contains("tz")) c.tz = e.at("tz").get<std::string>();
      if (e.contains("pz")) c.pz = e.at("pz").get<std::string>();
      m.cases.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

/// Loads every case listed in the manifest (in parallel, order preserved).
inline std::vector<CaseRecord> load_dataset(const fs::path& manifest_path, unsigned threads = 1) {
  const auto m = parse_manifest(detail::read_file(manifest_path));
  const auto dir = manifest_path.parent_path();
  std::vector<CaseRecord> cases(m.cases.size());
  parallel_for(cases.size(), threads, [&](std::size_t i) {
    const auto& e = m.cases[i];
    try {
      CaseRecord c;
      c.case_id = e.case_id;
      c.split = e.split;
      c.modalities = {load_probability(dir / e.t2w, Modality::T2W), load_probability(dir / e.dwi_hb, Modality::DWI_hb),
                      load_probability(dir / e.adc, Modality::ADC)};
      c.truth = load_label(dir / e.truth);
      if (e.tz) c.tz = load_label(dir / *e.tz);
      if (e.pz) c.pz = load_label(dir / *e.pz);
      c.validate();
      cases[i] = std::move(c);
    } catch (const Error& err) {
      throw DataError("case '" + e.case_id + "': " + err.what());
    }
  });
  return cases;
}

}  // namespace fusionrules
