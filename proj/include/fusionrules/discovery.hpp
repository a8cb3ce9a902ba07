#pragma once

// Rule evaluation over datasets: grid-search rule discovery, modality
// availability analysis and Monte-Carlo uncertainty over rule distributions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "combiner.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "rule_sampler.hpp"

namespace fusionrules {

struct NumberedStackingRule {
  int rule_number = 0;
  StackingRule rule;
  friend bool operator==(const NumberedStackingRule&, const NumberedStackingRule&) = default;
};

using CombiningRule = std::variant<LinearRule, NumberedStackingRule>;

struct EvaluationConfig {
  BinarizeOptions binarize;
  EvalConfig metrics;
  Zone zone = Zone::WG;
  unsigned threads = 1;
};

inline ProbabilityVolume combine(const CaseRecord& c, const CombiningRule& rule) {
  const auto stack = stack_of(c.modalities[0], c.modalities[1], c.modalities[2]);
  return std::visit(
      [&](const auto& r) {
        if constexpr (std::is_same_v<std::decay_t<decltype(r)>, LinearRule>)
          return combine_linear(stack, r);
        else
          return combine_stacking(stack, r.rule);
      },
      rule);
}

namespace detail {

template <typename F>
auto for_case(const CaseRecord& c, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw DataError("case '" + c.case_id + "': " + e.what());
  }
}

}  // namespace detail

/// Validated case truth restricted to the configured zone, ready for repeated evaluation.
inline PreparedTruth prepare_case(const CaseRecord& c, const EvaluationConfig& cfg, bool distance_map = true) {
  return detail::for_case(c, [&] {
    c.validate();
    return prepare_truth(c.truth, cfg.metrics.connectivity, c.zone_mask(cfg.zone), distance_map);
  });
}

/// Combine, binarise and evaluate one case against its prepared truth.
inline MetricsReport evaluate_case(const CaseRecord& c, const PreparedTruth& truth, const CombiningRule& rule,
                                   const EvaluationConfig& cfg) {
  return detail::for_case(c, [&] { return evaluate(binarize(combine(c, rule), cfg.binarize), truth, cfg.metrics); });
}

/// Combine, binarise, restrict to the configured zone and evaluate one case.
inline MetricsReport evaluate_case(const CaseRecord& c, const CombiningRule& rule, const EvaluationConfig& cfg) {
  return evaluate_case(c, prepare_case(c, cfg, false), rule, cfg);
}

/// Per-rule aggregate over a set of cases. Means of optional metrics are over
/// the cases where the metric is defined; NaN when defined for none.
struct AggregateRow {
  CombiningRule rule;
  int n_cases = 0;
  double mean_dsc = 0.0;
  double sd_dsc = 0.0;
  double mean_hd95 = 0.0;
  int n_hd95 = 0;
  double mean_recall = 0.0;
  int n_recall = 0;
  double mean_precision = 0.0;
  int n_precision = 0;
  std::vector<double> case_dsc;
};

namespace detail {

struct MeanSd {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  int n = 0;
};

// Fixed left-to-right reduction so results do not depend on scheduling.
inline MeanSd mean_sd(std::span<const double> xs) {
  MeanSd r;
  r.n = int(xs.size());
  if (xs.empty()) return r;
  double s = 0.0;
  for (double x : xs) s += x;
  r.mean = s / double(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.sd = xs.size() > 1 ? std::sqrt(ss / double(xs.size() - 1)) : 0.0;
  return r;
}

inline AggregateRow aggregate(const CombiningRule& rule, const std::vector<MetricsReport>& reports) {
  AggregateRow row;
  row.rule = rule;
  row.n_cases = int(reports.size());
  std::vector<double> hd, rec, prec;
  for (const auto& m : reports) {
    row.case_dsc.push_back(m.dsc);
    if (m.hd95_mm) hd.push_back(*m.hd95_mm);
    if (m.recall_gt) rec.push_back(*m.recall_gt);
    if (m.precision_pred) prec.push_back(*m.precision_pred);
  }
  const auto d = mean_sd(row.case_dsc);
  row.mean_dsc = d.mean;
  row.sd_dsc = d.sd;
  const auto h = mean_sd(hd), r = mean_sd(rec), p = mean_sd(prec);
  row.mean_hd95 = h.mean;
  row.n_hd95 = h.n;
  row.mean_recall = r.mean;
  row.n_recall = r.n;
  row.mean_precision = p.mean;
  row.n_precision = p.n;
  return row;
}

}  // namespace detail

/// Mean/sd of every metric for one rule. Cases are evaluated in parallel
/// (cfg.threads); aggregation order is the dataset order.
inline AggregateRow evaluate_rule(std::span<const CaseRecord* const> dataset, const CombiningRule& rule,
                                  const EvaluationConfig& cfg) {
  if (dataset.empty()) throw InvalidArgument("cannot evaluate a rule on an empty dataset");
  std::vector<MetricsReport> reports(dataset.size());
  parallel_for(dataset.size(), cfg.threads, [&](std::size_t i) { reports[i] = evaluate_case(*dataset[i], rule, cfg); });
  return detail::aggregate(rule, reports);
}

enum class RankBy { Dsc, Hd95, Recall, Precision };

inline std::string_view rank_by_name(RankBy r) {
  switch (r) {
    case RankBy::Dsc: return "dsc";
    case RankBy::Hd95: return "hd95";
    case RankBy::Recall: return "recall";
    case RankBy::Precision: return "precision";
  }
  return "dsc";
}

inline RankBy parse_rank_by(std::string_view s) {
  if (s == "dsc") return RankBy::Dsc;
  if (s == "hd95") return RankBy::Hd95;
  if (s == "recall") return RankBy::Recall;
  if (s == "precision") return RankBy::Precision;
  throw InvalidArgument("unknown ranking key '" + std::string(s) + "'");
}

struct GridSearchResult {
  std::vector<AggregateRow> rows;  // best first
  RankBy rank_by = RankBy::Dsc;
  Split split = Split::Validation;
};

namespace detail {

// Larger is better; undefined values rank last.
inline double ranking_score(const AggregateRow& r, RankBy key) {
  constexpr double worst = -std::numeric_limits<double>::infinity();
  auto finite_or = [](double v, double fallback) { return std::isnan(v) ? fallback : v; };
  switch (key) {
    case RankBy::Dsc: return finite_or(r.mean_dsc, worst);
    case RankBy::Hd95: return std::isnan(r.mean_hd95) ? worst : -r.mean_hd95;
    case RankBy::Recall: return finite_or(r.mean_recall, worst);
    case RankBy::Precision: return finite_or(r.mean_precision, worst);
  }
  return worst;
}

inline bool rule_less(const CombiningRule& a, const CombiningRule& b) {
  if (a.index() != b.index()) return a.index() < b.index();
  if (const auto* la = std::get_if<LinearRule>(&a)) return la->alpha < std::get<LinearRule>(b).alpha;
  return std::get<NumberedStackingRule>(a).rule_number < std::get<NumberedStackingRule>(b).rule_number;
}

}  // namespace detail

/// Sorts best first: ranking key, then lower HD95, then lexicographic rule.
inline void rank_rows(std::vector<AggregateRow>& rows, RankBy key) {
  std::stable_sort(rows.begin(), rows.end(), [key](const AggregateRow& a, const AggregateRow& b) {
    const double sa = detail::ranking_score(a, key), sb = detail::ranking_score(b, key);
    if (sa != sb) return sa > sb;
    const double ha = std::isnan(a.mean_hd95) ? std::numeric_limits<double>::infinity() : a.mean_hd95;
    const double hb = std::isnan(b.mean_hd95) ? std::numeric_limits<double>::infinity() : b.mean_hd95;
    if (ha != hb) return ha < hb;
    return detail::rule_less(a.rule, b.rule);
  });
}

/// Evaluates every rule and ranks them. Cases are visited in order, each
/// truth prepared once; rules are evaluated in parallel within a case.
inline GridSearchResult evaluate_rules(std::span<const CaseRecord* const> dataset, const std::vector<CombiningRule>& rules,
                                       RankBy rank_by, const EvaluationConfig& cfg, Split split = Split::Validation) {
  if (dataset.empty()) throw InvalidArgument("grid search needs at least one case");
  if (rules.empty()) throw InvalidArgument("grid search needs at least one rule");
  std::vector<std::vector<MetricsReport>> reports(rules.size(), std::vector<MetricsReport>(dataset.size()));
  for (std::size_t ci = 0; ci < dataset.size(); ++ci) {
    const CaseRecord& c = *dataset[ci];
    const auto truth = prepare_case(c, cfg);
    parallel_for(rules.size(), cfg.threads,
                 [&](std::size_t i) { reports[i][ci] = evaluate_case(c, truth, rules[i], cfg); });
  }
  GridSearchResult out;
  out.rank_by = rank_by;
  out.split = split;
  out.rows.reserve(rules.size());
  for (std::size_t i = 0; i < rules.size(); ++i) out.rows.push_back(detail::aggregate(rules[i], reports[i]));
  rank_rows(out.rows, rank_by);
  return out;
}

inline GridSearchResult grid_search_linear(std::span<const CaseRecord* const> dataset, double step, RankBy rank_by,
                                           const EvaluationConfig& cfg, Split split = Split::Validation) {
  std::vector<CombiningRule> rules;
  for (const auto& r : simplex_grid(step)) rules.emplace_back(r);
  return evaluate_rules(dataset, rules, rank_by, cfg, split);
}

inline GridSearchResult grid_search_stacking(std::span<const CaseRecord* const> dataset, const SampledRuleSet& sampled,
                                             RankBy rank_by, const EvaluationConfig& cfg,
                                             Split split = Split::Validation) {
  if (sampled.entries.empty()) throw InvalidArgument("sampled rule set has no accepted rules");
  std::vector<CombiningRule> rules;
  for (const auto& e : sampled.entries) rules.emplace_back(NumberedStackingRule{e.rule_number, e.rule});
  return evaluate_rules(dataset, rules, rank_by, cfg, split);
}

/// Ranking on the validation split, every rule re-evaluated and re-ranked on the test split.
struct HoldoutSearch {
  GridSearchResult validation;
  GridSearchResult test;
};

inline HoldoutSearch search_with_holdout(const std::vector<CaseRecord>& cases, const std::vector<CombiningRule>& rules,
                                         RankBy rank_by, const EvaluationConfig& cfg) {
  const auto val = select_split(cases, Split::Validation);
  const auto test = select_split(cases, Split::Test);
  if (val.empty() || test.empty()) throw DataError("dataset needs non-empty validation and test splits");
  return {evaluate_rules(val, rules, rank_by, cfg, Split::Validation),
          evaluate_rules(test, rules, rank_by, cfg, Split::Test)};
}

inline std::vector<CombiningRule> linear_rules(double step) {
  std::vector<CombiningRule> rules;
  for (const auto& r : simplex_grid(step)) rules.emplace_back(r);
  return rules;
}

inline std::vector<CombiningRule> stacking_rules(const SampledRuleSet& sampled) {
  std::vector<CombiningRule> rules;
  for (const auto& e : sampled.entries) rules.emplace_back(NumberedStackingRule{e.rule_number, e.rule});
  return rules;
}

/// 1-based position of `rule` in a ranked result, 0 when absent.
inline std::size_t rank_of(const GridSearchResult& result, const CombiningRule& rule) {
  for (std::size_t i = 0; i < result.rows.size(); ++i)
    if (result.rows[i].rule == rule) return i + 1;
  return 0;
}

struct AvailabilityRow {
  std::string label;  // e.g. "T2W+DWI_hb"
  unsigned modalities = 0;  // bit tau set when modality tau is used
  AggregateRow metrics;
  double delta_dsc = 0.0;  // relative to the base rule
  double delta_hd95 = 0.0;
  double delta_recall = 0.0;
  double delta_precision = 0.0;
};

struct AvailabilityTable {
  AggregateRow base;
  std::vector<AvailabilityRow> rows;
};

/// Evaluates the seven non-empty modality subsets (one-hot, equal-weight
/// pairs, equal thirds) and reports differences to the base rule.
inline AvailabilityTable availability_analysis(std::span<const CaseRecord* const> dataset, const LinearRule& base_rule,
                                               const EvaluationConfig& cfg) {
  if (!base_rule.on_simplex()) throw InvalidArgument("base rule must lie on the simplex");
  static constexpr const char* kNames[] = {"T2W", "DWI_hb", "ADC"};
  static constexpr unsigned kSubsets[] = {0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111};

  AvailabilityTable table;
  table.base = evaluate_rule(dataset, base_rule, cfg);
  for (unsigned subset : kSubsets) {
    LinearRule rule;
    std::string label;
    const int used = std::popcount(subset);
    for (std::size_t t = 0; t < kModalities; ++t)
      if (subset & (1u << t)) {
        rule.alpha[t] = used == 3 ? 1.0 / 3.0 : 1.0 / double(used);
        label += (label.empty() ? "" : "+") + std::string(kNames[t]);
      }
    AvailabilityRow row;
    row.label = label;
    row.modalities = subset;
    row.metrics = evaluate_rule(dataset, rule, cfg);
    row.delta_dsc = row.metrics.mean_dsc - table.base.mean_dsc;
    row.delta_hd95 = row.metrics.mean_hd95 - table.base.mean_hd95;
    row.delta_recall = row.metrics.mean_recall - table.base.mean_recall;
    row.delta_precision = row.metrics.mean_precision - table.base.mean_precision;
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// Dirichlet over linear rules.
struct DirichletRules {
  std::array<double, kModalities> concentration{1.0, 1.0, 1.0};
};

/// Uniform over a finite support. Draws are stratified: every block of
/// support.size() consecutive draws is a random permutation of the support.
struct DiscreteRules {
  std::vector<CombiningRule> support;
};

using RuleDistribution = std::variant<DirichletRules, DiscreteRules>;

inline std::vector<CombiningRule> draw_rules(const RuleDistribution& dist, int n_draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CombiningRule> out;
  out.reserve(std::size_t(std::max(n_draws, 0)));
  if (const auto* dir = std::get_if<DirichletRules>(&dist)) {
    for (int i = 0; i < n_draws; ++i) out.emplace_back(sample_dirichlet(rng, dir->concentration));
    return out;
  }
  const auto& support = std::get<DiscreteRules>(dist).support;
  if (support.empty()) throw InvalidArgument("discrete rule distribution has empty support");
  std::vector<std::size_t> perm(support.size());
  while (int(out.size()) < n_draws) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t k = 0; k < perm.size() && int(out.size()) < n_draws; ++k) out.push_back(support[perm[k]]);
  }
  return out;
}

struct CaseUncertainty {
  std::string case_id;
  Grid<double> voxel_variance;  // population variance of Z across draws
  double mean_dsc = 0.0;
  double var_dsc = 0.0;  // population variance across draws
  double mean_voxel_variance = 0.0;
  double max_voxel_variance = 0.0;
};

struct UncertaintyResult {
  std::vector<CombiningRule> draws;
  std::vector<CaseUncertainty> cases;
};

/// Draws n_draws rules once (seeded), applies each to every case, and
/// accumulates voxel-wise and DSC variance across draws.
inline UncertaintyResult monte_carlo_uncertainty(std::span<const CaseRecord* const> dataset, const RuleDistribution& dist,
                                                 int n_draws, std::uint64_t seed, const EvaluationConfig& cfg) {
  if (n_draws < 2) throw InvalidArgument("Monte-Carlo uncertainty needs at least two draws");
  UncertaintyResult out;
  out.draws = draw_rules(dist, n_draws, seed);
  out.cases.resize(dataset.size());
  parallel_for(dataset.size(), cfg.threads, [&](std::size_t ci) {
    const CaseRecord& c = *dataset[ci];
    const auto zone = detail::for_case(c, [&] {
      c.validate();
      return c.zone_mask(cfg.zone);
    });
    const LabelVolume truth = zone ? c.truth.intersect(*zone) : c.truth;
    std::vector<double> mean(c.truth.size(), 0.0), m2(c.truth.size(), 0.0);
    std::vector<double> dscs;
    for (std::size_t k = 0; k < out.draws.size(); ++k) {
      const auto z = combine(c, out.draws[k]);
      const double n = double(k + 1);
      for (std::size_t i = 0; i < mean.size(); ++i) {
        const double delta = z[i] - mean[i];
        mean[i] += delta / n;
        m2[i] += delta * (z[i] - mean[i]);
      }
      const auto pred = binarize(z, cfg.binarize);
      dscs.push_back(detail::for_case(c, [&] { return dice(zone ? pred.intersect(*zone) : pred, truth); }));
    }
    CaseUncertainty cu;
    cu.case_id = c.case_id;
    for (double& v : m2) v /= double(out.draws.size());
    cu.mean_voxel_variance = 0.0;
    for (double v : m2) {
      cu.mean_voxel_variance += v;
      cu.max_voxel_variance = std::max(cu.max_voxel_variance, v);
    }
    cu.mean_voxel_variance /= double(m2.size());
    cu.voxel_variance = Grid<double>(c.truth.dims(), c.truth.spacing(), std::move(m2));
    // Welford again, so identical draws give exactly zero.
    double dm = 0.0, dss = 0.0;
    for (std::size_t k = 0; k < dscs.size(); ++k) {
      const double delta = dscs[k] - dm;
      dm += delta / double(k + 1);
      dss += delta * (dscs[k] - dm);
    }
    cu.mean_dsc = dm;
    cu.var_dsc = dss / double(dscs.size());
    out.cases[ci] = std::move(cu);
  });
  return out;
}

}  // namespace fusionrules
