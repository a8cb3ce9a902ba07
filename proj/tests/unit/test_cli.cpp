#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Run cli(const std::string& args) {
  static const auto log = testutil::temp_dir("cli_log") / "stdout.txt";
  const std::string cmd = std::string(FUSIONRULES_CLI) + " " + args + " > " + log.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

const char* kSmallSpec =
    R"('{"dims": [20, 20, 20], "n_lesions": 2, "radius_min": 2.5, "radius_max": 4.5, "fidelity": [0.7, 0.6, 0.3], "noise_sd": 0.1}')";

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("fit").code, 1);
  EXPECT_EQ(cli("fit --rule 300").code, 1);
  EXPECT_EQ(cli("fit --rule 63 --zone WG").code, 1);
  EXPECT_EQ(cli("fit --rule 63 --format yaml").code, 1);
  EXPECT_EQ(cli("search").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, DataErrorsExitTwo) {
  const auto dir = testutil::temp_dir("cli_data");
  EXPECT_EQ(cli("evaluate --pred " + (dir / "nope").string() + " --truth " + (dir / "nope").string()).code, 2);
  EXPECT_EQ(cli("search --manifest " + (dir / "missing.json").string()).code, 2);
  std::ofstream(dir / "bad.json") << "{\"cases\": 3}";
  EXPECT_EQ(cli("search --manifest " + (dir / "bad.json").string()).code, 2);
}

TEST(Cli, FitJson) {
  const auto r = cli("fit --zone TZ --model linear --format json");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  const auto& fit = j.is_array() ? j[0] : j;
  EXPECT_EQ(fit.at("rule_number"), 31);
  EXPECT_EQ(fit.at("kind"), "linear");
  double sum = 0;
  for (const auto& a : fit.at("alpha")) sum += a.get<double>();
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Cli, FitDecisionEqualsRuleNumber) {
  const auto a = cli("fit --rule 119 --format csv");
  const auto b = cli("fit --decision 0,1,1,1,0,1,1,1 --format csv");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
}

TEST(Cli, ConfigFileSuppliesOptions) {
  const auto dir = testutil::temp_dir("cli_config");
  std::ofstream(dir / "cfg.json") << R"({"fit": {"rule": 63, "model": "linear", "format": "csv"}})";
  const auto a = cli("--config " + (dir / "cfg.json").string() + " fit");
  const auto b = cli("fit --rule 63 --model linear --format csv");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  std::ofstream(dir / "broken.json") << "{";
  EXPECT_NE(cli("--config " + (dir / "broken.json").string() + " fit --rule 1").code, 0);
}

TEST(Cli, PhantomSearchEvaluatePipeline) {
  const auto dir = testutil::temp_dir("cli_pipeline");
  const auto data = dir / "data";
  ASSERT_EQ(cli("--seed 5 phantom --n-cases 8 --spec " + std::string(kSmallSpec) + " --out-dir " + data.string()).code, 0);
  ASSERT_TRUE(fs::exists(data / "manifest.json"));
  ASSERT_TRUE(fs::exists(data / "phantom_config.json"));

  const auto out1 = dir / "s1", out4 = dir / "s4";
  ASSERT_EQ(cli("--threads 1 search --manifest " + (data / "manifest.json").string() + " --step 0.25 --split test --out-dir " +
                out1.string())
                .code,
            0);
  ASSERT_EQ(cli("--threads 4 search --manifest " + (data / "manifest.json").string() + " --step 0.25 --split test --out-dir " +
                out4.string())
                .code,
            0);
  for (const char* f : {"search_test.json", "search_test.csv", "heatmap_test.csv"}) {
    ASSERT_TRUE(fs::exists(out1 / f)) << f;
    EXPECT_EQ(slurp(out1 / f), slurp(out4 / f)) << f;
  }
  const auto j = nlohmann::json::parse(slurp(out1 / "search_test.json"));
  EXPECT_EQ(j.at("rows").size(), 15u);

  const auto m = nlohmann::json::parse(slurp(data / "manifest.json"));
  const auto& c = m.at("cases")[0];
  auto path = [&](const char* key) { return (data / c.at(key).get<std::string>()).string(); };
  const auto comb = dir / "comb";
  ASSERT_EQ(cli("combine --t2w " + path("t2w") + " --dwi " + path("dwi_hb") + " --adc " + path("adc") +
                " --rule '{\"alpha\": [0.5, 0.5, 0]}' --out " + comb.string())
                .code,
            0);
  const auto ev = cli("evaluate --pred " + comb.string() + " --truth " + path("truth") + " --out-csv " +
                      (dir / "m.csv").string());
  ASSERT_EQ(ev.code, 0);
  const auto ej = nlohmann::json::parse(ev.out);
  EXPECT_GE(ej.at("metrics").at("dsc").get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(dir / "m.csv"));

  const auto mc1 = dir / "mc1", mc2 = dir / "mc2";
  const std::string mc = "mc-uncertainty --manifest " + (data / "manifest.json").string() + " --draws 6 --out-dir ";
  ASSERT_EQ(cli("--seed 3 --threads 1 " + mc + mc1.string()).code, 0);
  ASSERT_EQ(cli("--seed 3 --threads 3 " + mc + mc2.string()).code, 0);
  EXPECT_EQ(slurp(mc1 / "uncertainty.json"), slurp(mc2 / "uncertainty.json"));
}

TEST(Cli, SampleCountsAcceptedRules) {
  const auto dir = testutil::temp_dir("cli_sample");
  const auto r = cli("sample --out " + (dir / "rules.json").string());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("accepted 104 of 256"), std::string::npos) << r.out;
  const auto j = nlohmann::json::parse(slurp(dir / "rules.json"));
  EXPECT_EQ(j.at("accepted_count"), 104);
}
