#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <fusionrules/discovery.hpp>
#include <fusionrules/phantom.hpp>

#include "test_util.hpp"

using namespace fusionrules;

namespace {

PhantomSpec small_spec() {
  PhantomSpec s;
  s.dims = {24, 24, 24};
  s.n_lesions = 2;
  s.radius_min = 2.5;
  s.radius_max = 5.0;
  return s;
}

std::vector<CaseRecord> planted_cases(std::uint64_t seed, int n) {
  auto s = small_spec();
  s.planted = LinearRule{{0.5, 0.5, 0.0}};
  s.fidelity = {0.6, 0.6, 0.2};
  s.noise_sd = 0.1;
  return generate_cases(seed, n, s, seed);
}

CombiningRule lin(double a, double b, double c) { return LinearRule{{a, b, c}}; }

}  // namespace

TEST(Discovery, LinearGridHas66Rules) {
  const auto rules = linear_rules(0.1);
  ASSERT_EQ(rules.size(), 66u);
  for (const auto& r : rules) EXPECT_TRUE(std::get<LinearRule>(r).on_simplex());
}

TEST(Discovery, PlantedRuleRanksFirst) {
  const auto cases = planted_cases(11, 6);
  const auto all = all_cases(cases);
  const auto g = evaluate_rules(all, linear_rules(0.1), RankBy::Dsc, {});
  ASSERT_EQ(g.rows.size(), 66u);
  EXPECT_EQ(rank_of(g, lin(0.5, 0.5, 0.0)), 1u);
  EXPECT_DOUBLE_EQ(g.rows[0].mean_dsc, 1.0);
  EXPECT_LT(g.rows[1].mean_dsc, 1.0);
  for (std::size_t i = 1; i < g.rows.size(); ++i) EXPECT_GE(g.rows[i - 1].mean_dsc, g.rows[i].mean_dsc);
}

TEST(Discovery, UninformativeModalityGetsNoWeight) {
  auto s = small_spec();
  s.fidelity = {0.8, 0.8, 0.0};
  s.noise_sd = 0.05;
  const auto cases = generate_cases(5, 6, s);
  const auto g = evaluate_rules(all_cases(cases), linear_rules(0.1), RankBy::Dsc, {});
  const auto& adc = g.rows[rank_of(g, lin(0.0, 0.0, 1.0)) - 1];
  EXPECT_LT(adc.mean_dsc, 0.5 * g.rows[0].mean_dsc);
  const auto& mid = g.rows[rank_of(g, lin(0.5, 0.5, 0.0)) - 1];
  EXPECT_GE(mid.mean_dsc, g.rows[0].mean_dsc - 0.01);
}

TEST(Discovery, PlantedStackingRuleRanksFirst) {
  auto cases = planted_cases(21, 4);
  const auto sampled = rejection_sample_stacking();
  const auto it = std::find_if(sampled.entries.begin(), sampled.entries.end(),
                               [](const SampledRule& e) { return e.rule_number == 63; });
  ASSERT_NE(it, sampled.entries.end());
  for (auto& c : cases)
    c.truth = binarize(combine_stacking(stack_of(c.modalities[0], c.modalities[1], c.modalities[2]), it->rule));
  const auto g = grid_search_stacking(all_cases(cases), sampled, RankBy::Dsc, {});
  EXPECT_EQ(std::get<NumberedStackingRule>(g.rows[0].rule).rule_number, 63);
  EXPECT_DOUBLE_EQ(g.rows[0].mean_dsc, 1.0);
}

TEST(Discovery, SingleRuleSet) {
  const auto cases = planted_cases(3, 3);
  const auto g = evaluate_rules(all_cases(cases), {lin(0.2, 0.3, 0.5)}, RankBy::Hd95, {});
  ASSERT_EQ(g.rows.size(), 1u);
  EXPECT_EQ(rank_of(g, lin(0.2, 0.3, 0.5)), 1u);
  EXPECT_EQ(rank_of(g, lin(0.5, 0.3, 0.2)), 0u);
}

TEST(Discovery, EmptyInputsRejected) {
  const auto cases = planted_cases(3, 2);
  std::vector<const CaseRecord*> none;
  EXPECT_THROW(evaluate_rules(none, linear_rules(0.5), RankBy::Dsc, {}), InvalidArgument);
  EXPECT_THROW(evaluate_rules(all_cases(cases), {}, RankBy::Dsc, {}), InvalidArgument);
  EXPECT_THROW(evaluate_rule(none, lin(1, 0, 0), {}), InvalidArgument);
}

TEST(Discovery, HoldoutNeedsValidationAndTest) {
  auto cases = planted_cases(3, 3);
  for (auto& c : cases) c.split = Split::Train;
  EXPECT_THROW(search_with_holdout(cases, linear_rules(0.5), RankBy::Dsc, {}), DataError);
}

TEST(Discovery, AggregateMatchesOracle) {
  const auto cases = planted_cases(8, 5);
  const CombiningRule rule = lin(0.7, 0.1, 0.2);
  const auto row = evaluate_rule(all_cases(cases), rule, {});
  double sum = 0.0;
  std::vector<double> dsc;
  for (const auto& c : cases) {
    const auto pred = binarize(combine(c, rule));
    dsc.push_back(oracle::dice(testutil::to_mask(pred), testutil::to_mask(c.truth)));
    sum += dsc.back();
  }
  const double mean = sum / double(dsc.size());
  double ss = 0.0;
  for (double d : dsc) ss += (d - mean) * (d - mean);
  EXPECT_NEAR(row.mean_dsc, mean, 1e-12);
  EXPECT_NEAR(row.sd_dsc, std::sqrt(ss / double(dsc.size() - 1)), 1e-12);
  EXPECT_EQ(row.n_cases, 5);
  ASSERT_EQ(row.case_dsc.size(), dsc.size());
  for (std::size_t i = 0; i < dsc.size(); ++i) EXPECT_NEAR(row.case_dsc[i], dsc[i], 1e-12);
}

TEST(Discovery, PreparedTruthMatchesDirectEvaluation) {
  auto s = small_spec();
  s.zones = true;
  s.fidelity = {0.7, 0.5, 0.3};
  s.noise_sd = 0.1;
  const auto cases = generate_cases(9, 3, s);
  for (Zone z : {Zone::WG, Zone::TZ, Zone::PZ}) {
    EvaluationConfig cfg;
    cfg.zone = z;
    for (const auto& c : cases) {
      const auto truth = prepare_case(c, cfg);
      for (const auto& rule : linear_rules(0.25)) {
        const auto a = evaluate_case(c, truth, rule, cfg);
        const auto pred = binarize(combine(c, rule));
        const auto b = evaluate(pred, c.truth, cfg.metrics, c.zone_mask(z));
        EXPECT_EQ(a.dsc, b.dsc);
        ASSERT_EQ(a.hd95_mm.has_value(), b.hd95_mm.has_value());
        if (a.hd95_mm) EXPECT_NEAR(*a.hd95_mm, *b.hd95_mm, 1e-9);
        EXPECT_EQ(a.recall_gt, b.recall_gt);
        EXPECT_EQ(a.precision_pred, b.precision_pred);
      }
    }
  }
}

TEST(Discovery, ZoneRestrictsEvaluation) {
  auto s = small_spec();
  s.zones = true;
  const auto cases = generate_cases(4, 2, s);
  EvaluationConfig cfg;
  cfg.zone = Zone::TZ;
  const CombiningRule rule = lin(0.1, 0.1, 0.8);
  for (const auto& c : cases) {
    const auto pred = binarize(combine(c, rule));
    const auto m = evaluate_case(c, rule, cfg);
    EXPECT_NEAR(m.dsc, oracle::dice(testutil::to_mask(pred.intersect(*c.tz)), testutil::to_mask(c.truth.intersect(*c.tz))),
                1e-12);
  }
  auto no_zone = cases;
  no_zone[0].tz.reset();
  EXPECT_THROW(evaluate_case(no_zone[0], rule, cfg), DataError);
}

TEST(Discovery, RankingKeys) {
  auto row = [](double a, double dsc, double hd, double rec, double prec) {
    AggregateRow r;
    r.rule = LinearRule{{a, 1 - a, 0}};
    r.mean_dsc = dsc;
    r.mean_hd95 = hd;
    r.mean_recall = rec;
    r.mean_precision = prec;
    return r;
  };
  const std::vector<AggregateRow> rows{row(0.1, 0.5, 3.0, 0.9, 0.2), row(0.2, 0.7, 9.0, 0.4, 0.8),
                                       row(0.3, 0.6, NAN, 0.6, 0.5)};
  auto first = [&](RankBy key) {
    auto r = rows;
    rank_rows(r, key);
    return std::get<LinearRule>(r[0].rule).alpha[0];
  };
  EXPECT_DOUBLE_EQ(first(RankBy::Dsc), 0.2);
  EXPECT_DOUBLE_EQ(first(RankBy::Hd95), 0.1);
  EXPECT_DOUBLE_EQ(first(RankBy::Recall), 0.1);
  EXPECT_DOUBLE_EQ(first(RankBy::Precision), 0.2);
  auto r = rows;
  rank_rows(r, RankBy::Hd95);
  EXPECT_DOUBLE_EQ(std::get<LinearRule>(r[2].rule).alpha[0], 0.3);
}

TEST(Discovery, LesionRecallAndPrecisionTradeOff) {
  // Truth has lesions A and B. T2W sees A, DWI_hb sees B, ADC sees A plus a
  // spurious blob S.
  const Dims d{20, 20, 20};
  CaseRecord c;
  c.case_id = "two";
  LabelVolume truth(d, {1, 1, 1});
  std::vector<double> a(std::size_t(d.count()), 0.0), b = a, e = a;
  for (std::int64_t z = 3; z < 7; ++z)
    for (std::int64_t y = 3; y < 7; ++y)
      for (std::int64_t x = 3; x < 7; ++x) {
        truth.set(x, y, z, true);
        truth.set(x + 10, y + 10, z + 10, true);
        a[std::size_t(truth.index(x, y, z))] = 1.0;
        b[std::size_t(truth.index(x + 10, y + 10, z + 10))] = 1.0;
        e[std::size_t(truth.index(x, y, z))] = 1.0;
        e[std::size_t(truth.index(x + 10, y, z))] = 1.0;
      }
  c.modalities = {ProbabilityVolume(d, {1, 1, 1}, a, Modality::T2W), ProbabilityVolume(d, {1, 1, 1}, b, Modality::DWI_hb),
                  ProbabilityVolume(d, {1, 1, 1}, e, Modality::ADC)};
  c.truth = truth;
  const std::vector<const CaseRecord*> ds{&c};

  const auto adc = evaluate_rule(ds, lin(0, 0, 1), {});
  EXPECT_DOUBLE_EQ(adc.mean_recall, 0.5);
  EXPECT_DOUBLE_EQ(adc.mean_precision, 0.5);
  // Equal thirds keep only A, where T2W and ADC agree.
  const auto third = evaluate_rule(ds, lin(1.0 / 3, 1.0 / 3, 1.0 / 3), {});
  EXPECT_DOUBLE_EQ(third.mean_recall, 0.5);
  EXPECT_DOUBLE_EQ(third.mean_precision, 1.0);
  // Any single-lesion rule loses recall; precision ranking prefers thirds over ADC.
  const auto g = evaluate_rules(ds, {lin(0, 0, 1), lin(1.0 / 3, 1.0 / 3, 1.0 / 3)}, RankBy::Precision, {});
  EXPECT_EQ(rank_of(g, lin(1.0 / 3, 1.0 / 3, 1.0 / 3)), 1u);
}

TEST(Discovery, DeterministicAcrossThreadCounts) {
  const auto cases = planted_cases(13, 4);
  EvaluationConfig one, many;
  many.threads = 3;
  const auto a = evaluate_rules(all_cases(cases), linear_rules(0.2), RankBy::Dsc, one);
  const auto b = evaluate_rules(all_cases(cases), linear_rules(0.2), RankBy::Dsc, many);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].rule, b.rows[i].rule);
    EXPECT_EQ(a.rows[i].case_dsc, b.rows[i].case_dsc);
    EXPECT_TRUE(a.rows[i].mean_hd95 == b.rows[i].mean_hd95 ||
                (std::isnan(a.rows[i].mean_hd95) && std::isnan(b.rows[i].mean_hd95)));
  }
}

TEST(Availability, RedundantModalityAddsNothing) {
  auto cases = planted_cases(6, 3);
  for (auto& c : cases) c.modalities[2] = c.modalities[0].with_modality(Modality::ADC);
  const auto t = availability_analysis(all_cases(cases), LinearRule{{0.5, 0.5, 0.0}}, {});
  ASSERT_EQ(t.rows.size(), 7u);
  const std::vector<std::string> labels{"T2W", "DWI_hb", "ADC", "T2W+DWI_hb", "T2W+ADC", "DWI_hb+ADC", "T2W+DWI_hb+ADC"};
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(t.rows[i].label, labels[i]);
  EXPECT_EQ(t.rows[0].metrics.case_dsc, t.rows[4].metrics.case_dsc);
  EXPECT_EQ(t.rows[0].metrics.case_dsc, t.rows[2].metrics.case_dsc);
  EXPECT_DOUBLE_EQ(t.rows[3].delta_dsc, 0.0);
  EXPECT_DOUBLE_EQ(t.rows[3].metrics.mean_dsc, 1.0);
  EXPECT_THROW(availability_analysis(all_cases(cases), LinearRule{{0.5, 0.6, 0.0}}, {}), InvalidArgument);
}

TEST(Uncertainty, SingleRuleHasZeroVariance) {
  const auto cases = planted_cases(7, 2);
  const auto u = monte_carlo_uncertainty(all_cases(cases), DiscreteRules{{lin(0.3, 0.3, 0.4)}}, 5, 1, {});
  for (const auto& c : u.cases) {
    EXPECT_EQ(c.var_dsc, 0.0);
    EXPECT_EQ(c.max_voxel_variance, 0.0);
  }
}

TEST(Uncertainty, TwoPointVariance) {
  const auto cases = planted_cases(7, 2);
  const CombiningRule r1 = lin(1, 0, 0), r2 = lin(0, 0, 1);
  const auto u = monte_carlo_uncertainty(all_cases(cases), DiscreteRules{{r1, r2}}, 8, 3, {});
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    const auto z1 = combine(c, r1), z2 = combine(c, r2);
    const double d1 = oracle::dice(testutil::to_mask(binarize(z1)), testutil::to_mask(c.truth));
    const double d2 = oracle::dice(testutil::to_mask(binarize(z2)), testutil::to_mask(c.truth));
    EXPECT_NEAR(u.cases[ci].var_dsc, std::pow((d1 - d2) / 2, 2), 1e-12);
    EXPECT_NEAR(u.cases[ci].mean_dsc, (d1 + d2) / 2, 1e-12);
    for (std::size_t i = 0; i < z1.size(); ++i)
      ASSERT_NEAR(u.cases[ci].voxel_variance[i], std::pow((z1[i] - z2[i]) / 2, 2), 1e-12);
  }
}

TEST(Uncertainty, StratifiedDraws) {
  const std::vector<CombiningRule> support{lin(1, 0, 0), lin(0, 1, 0), lin(0, 0, 1)};
  const auto draws = draw_rules(DiscreteRules{support}, 9, 4);
  for (const auto& r : support) EXPECT_EQ(std::count(draws.begin(), draws.end(), r), 3);
  EXPECT_EQ(draws, draw_rules(DiscreteRules{support}, 9, 4));
  EXPECT_THROW(draw_rules(DiscreteRules{}, 3, 1), InvalidArgument);
}

TEST(Uncertainty, ConcentrationShrinksVariance) {
  const auto cases = planted_cases(2, 1);
  const auto loose = monte_carlo_uncertainty(all_cases(cases), DirichletRules{{1, 1, 1}}, 40, 5, {});
  const auto tight = monte_carlo_uncertainty(all_cases(cases), DirichletRules{{100, 100, 100}}, 40, 5, {});
  EXPECT_LT(tight.cases[0].mean_voxel_variance, 0.1 * loose.cases[0].mean_voxel_variance);
  EXPECT_THROW(monte_carlo_uncertainty(all_cases(cases), DirichletRules{}, 1, 5, {}), InvalidArgument);
}
