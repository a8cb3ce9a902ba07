#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <fusionrules/phantom.hpp>

#include "test_util.hpp"

using namespace fusionrules;

namespace {

PhantomSpec small() {
  PhantomSpec s;
  s.dims = {20, 18, 16};
  s.n_lesions = 2;
  s.radius_min = 2.0;
  s.radius_max = 4.0;
  return s;
}

// Direct 3D convolution with the separable triangular kernel, renormalised
// per axis over in-grid taps.
std::vector<double> blur_oracle(const std::vector<double>& f, int nx, int ny, int nz, int h) {
  auto w1 = [h](int k, int p, int len) {
    if (p + k < 0 || p + k >= len) return 0.0;
    return double(h + 1 - std::abs(k));
  };
  auto norm = [&](int p, int len) {
    double s = 0;
    for (int k = -h; k <= h; ++k) s += w1(k, p, len);
    return s;
  };
  std::vector<double> out(f.size());
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double acc = 0;
        for (int c = -h; c <= h; ++c)
          for (int b = -h; b <= h; ++b)
            for (int a = -h; a <= h; ++a) {
              const double w = w1(a, x, nx) * w1(b, y, ny) * w1(c, z, nz);
              if (w == 0) continue;
              acc += w * f[std::size_t((x + a) + nx * ((y + b) + ny * (z + c)))];
            }
        out[std::size_t(x + nx * (y + ny * z))] = acc / (norm(x, nx) * norm(y, ny) * norm(z, nz));
      }
  return out;
}

}  // namespace

TEST(Phantom, TriangularBlurMatchesDirectConvolution) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  const int nx = 7, ny = 5, nz = 6;
  std::vector<double> f(std::size_t(nx * ny * nz));
  for (auto& v : f) v = u(rng);
  for (int h : {0, 1, 2}) {
    const auto got = triangular_blur(f, {nx, ny, nz}, h);
    const auto want = blur_oracle(f, nx, ny, nz, h);
    for (std::size_t i = 0; i < f.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12) << "h=" << h;
  }
}

TEST(Phantom, SameSeedSameCase) {
  const auto a = generate_case(42, small(), "x");
  const auto b = generate_case(42, small(), "x");
  const auto c = generate_case(43, small(), "x");
  EXPECT_EQ(a.truth, b.truth);
  for (std::size_t m = 0; m < kModalities; ++m) EXPECT_EQ(a.modalities[m], b.modalities[m]);
  EXPECT_NE(a.modalities[0], c.modalities[0]);
}

TEST(Phantom, ValuesAreFloat32ProbabilitiesOnTheSpecGrid) {
  auto s = small();
  s.spacing = {0.5, 0.5, 3.0};
  s.noise_sd = 0.3;
  const auto c = generate_case(1, s);
  c.validate();
  EXPECT_EQ(c.truth.dims(), s.dims);
  EXPECT_EQ(c.truth.spacing(), s.spacing);
  EXPECT_EQ(c.modalities[0].modality(), Modality::T2W);
  EXPECT_EQ(c.modalities[2].modality(), Modality::ADC);
  for (const auto& m : c.modalities)
    for (std::size_t i = 0; i < m.size(); ++i) {
      ASSERT_GE(m[i], 0.0);
      ASSERT_LE(m[i], 1.0);
      ASSERT_EQ(m[i], double(float(m[i])));
    }
}

TEST(Phantom, PerfectFidelityReproducesTruth) {
  auto s = small();
  s.fidelity = {1.0, 1.0, 1.0};
  s.noise_sd = 0.0;
  const auto c = generate_case(8, s);
  EXPECT_EQ(c.truth.count() > 0, true);
  BinarizeOptions keep_all;
  keep_all.min_region_voxels = 1;
  for (const auto& m : c.modalities) EXPECT_EQ(binarize(m, keep_all), c.truth);
}

TEST(Phantom, LesionsAreSeparateEllipsoids) {
  auto s = small();
  s.n_lesions = 3;
  const auto c = generate_case(5, s);
  const auto cc = oracle::components(testutil::to_mask(c.truth), 26);
  EXPECT_EQ(cc.size(), 3u);
  const auto empty = generate_case(5, [] {
    auto e = small();
    e.n_lesions = 0;
    return e;
  }());
  EXPECT_TRUE(empty.truth.empty());
}

TEST(Phantom, PlantedRuleDefinesTruth) {
  auto s = small();
  s.planted = LinearRule{{0.2, 0.5, 0.3}};
  s.noise_sd = 0.1;
  s.fidelity = {0.6, 0.5, 0.4};
  const auto c = generate_case(9, s);
  // independent recomputation of the planted label
  LabelVolume expect(c.truth.dims(), c.truth.spacing());
  for (std::size_t i = 0; i < expect.size(); ++i)
    expect.set(i, 0.2 * c.modalities[0][i] + 0.5 * c.modalities[1][i] + 0.3 * c.modalities[2][i] > 0.5);
  auto m = testutil::to_mask(expect);
  const auto cc = oracle::components(m, 26);
  for (const auto& comp : cc)
    if (comp.size() < 27)
      for (int v : comp) m.v[std::size_t(v)] = 0;
  EXPECT_EQ(testutil::to_mask(c.truth).v, m.v);
}

TEST(Phantom, ZonesPartitionTheGrid) {
  auto s = small();
  s.zones = true;
  const auto c = generate_case(2, s);
  ASSERT_TRUE(c.tz && c.pz);
  for (std::size_t i = 0; i < c.truth.size(); ++i) ASSERT_EQ(int((*c.tz)[i]) + int((*c.pz)[i]), 1);
  EXPECT_GT(c.tz->count(), 0);
  EXPECT_GT(c.pz->count(), 0);
}

TEST(Phantom, PlacementFailureIsReported) {
  auto s = small();
  s.dims = {16, 16, 16};
  s.n_lesions = 6;
  s.radius_min = s.radius_max = 6.0;
  s.max_attempts = 20;
  EXPECT_THROW(generate_case(1, s), DataError);
}

TEST(Phantom, SpecValidation) {
  auto bad = [](auto mutate) {
    auto s = small();
    mutate(s);
    return s;
  };
  EXPECT_THROW(bad([](PhantomSpec& s) { s.dims = {8, 16, 16}; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](PhantomSpec& s) { s.fidelity[1] = 1.2; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](PhantomSpec& s) { s.radius_min = 1.0; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](PhantomSpec& s) { s.planted = LinearRule{{0.5, 0.5, 0.5}}; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](PhantomSpec& s) { s.noise_sd = -1; }).validate(), InvalidArgument);
}

TEST(Phantom, SpecJsonRoundTrip) {
  auto s = small();
  s.planted = LinearRule{{0.5, 0.5, 0.0}};
  s.spacing = {0.5, 0.5, 3.0};
  s.zones = true;
  const auto j = phantom_spec_json(s);
  const auto back = phantom_spec_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(phantom_spec_json(back).dump(), j.dump());
  EXPECT_EQ(phantom_spec_from_json(nlohmann::json::object()).dims, PhantomSpec{}.dims);
  EXPECT_THROW(phantom_spec_from_json(nlohmann::json::parse(R"({"dims": [16, 16]})")), DataError);
  EXPECT_THROW(phantom_spec_from_json(nlohmann::json::parse(R"({"fidelity": [2, 0, 0]})")), DataError);
  EXPECT_THROW(phantom_spec_from_json(nlohmann::json::parse("[1, 2]")), DataError);
}

TEST(Splits, DeterministicAndOrderIndependent) {
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back(phantom_case_id(i));
  const auto a = assign_splits(ids, 7);
  EXPECT_EQ(a, assign_splits(ids, 7));
  std::map<Split, int> n;
  for (auto s : a) ++n[s];
  EXPECT_EQ(n[Split::Train], 33);
  EXPECT_EQ(n[Split::Train] + n[Split::Validation] + n[Split::Test], 50);
  EXPECT_GE(n[Split::Validation], 8);
  EXPECT_GE(n[Split::Test], 8);

  auto shuffled = ids;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto b = assign_splits(shuffled, 7);
  std::map<std::string, Split> by_id;
  for (std::size_t i = 0; i < ids.size(); ++i) by_id[ids[i]] = a[i];
  for (std::size_t i = 0; i < shuffled.size(); ++i) EXPECT_EQ(b[i], by_id[shuffled[i]]);
  EXPECT_NE(a, assign_splits(ids, 8));
  EXPECT_THROW(assign_splits(ids, 7, {-1, 1, 1}), InvalidArgument);
}

TEST(Splits, GeneratedCasesCarryTheirSplit) {
  const auto cases = generate_cases(4, 12, small(), 3);
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.case_id);
  const auto expect = assign_splits(ids, 3);
  for (std::size_t i = 0; i < cases.size(); ++i) EXPECT_EQ(cases[i].split, expect[i]);
  EXPECT_EQ(cases[0].case_id, "case_000");
  const auto again = generate_cases(4, 12, small(), 3, {}, 3);
  for (std::size_t i = 0; i < cases.size(); ++i) EXPECT_EQ(cases[i].truth, again[i].truth);
}
