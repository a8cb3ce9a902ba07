#pragma once

// JSON and CSV renderings of results. JSON keeps full double precision
// (shortest round-trip form) so reports parse back losslessly; CSV cells use
// six significant digits. Field order is fixed. Undefined metrics are null in
// JSON and empty in CSV.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "discovery.hpp"
#include "hyperfit.hpp"
#include "metrics.hpp"
#include "rule_algebra.hpp"
#include "rule_sampler.hpp"
#include "volume_io.hpp"

namespace fusionrules {

using Json = nlohmann::ordered_json;

enum class ReportFormat { Json, Csv };

/// "%.6g"; empty for NaN.
inline std::string fmt6(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace detail {

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
inline Json number_or_null(const std::optional<double>& v) { return v ? number_or_null(*v) : Json(nullptr); }

template <std::size_t N>
Json array_json(const std::array<double, N>& a) {
  Json j = Json::array();
  for (double v : a) j.push_back(number_or_null(v));
  return j;
}

template <std::size_t N>
std::array<double, N> array_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != N) throw DataError("expected an array of " + std::to_string(N) + " numbers");
  std::array<double, N> a{};
  for (std::size_t i = 0; i < N; ++i) a[i] = j[i].is_null() ? std::nan("") : j[i].get<double>();
  return a;
}

inline std::string csv_join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out + "\n";
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt6(*v) : ""; }

}  // namespace detail

// --------------------------------------------------------------------------
// Decisions and rules

inline Json decision_json(const DecisionVector& d) {
  Json j = Json::array();
  for (auto b : d.bits) j.push_back(int(b));
  return j;
}

inline DecisionVector decision_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != kConditions) throw DataError("decision vector must be an array of 8 entries");
  DecisionVector d;
  for (std::size_t k = 0; k < kConditions; ++k) {
    const int b = j[k].get<int>();
    if (b != 0 && b != 1) throw DataError("decision entries must be 0 or 1");
    d.bits[k] = std::uint8_t(b);
  }
  return d;
}

inline std::string decision_string(const DecisionVector& d) {
  std::string s = "[";
  for (std::size_t k = 0; k < kConditions; ++k) s += (k ? " " : "") + std::to_string(int(d.bits[k]));
  return s + "]";
}

inline Json rule_json(const CombiningRule& rule) {
  Json j;
  if (const auto* l = std::get_if<LinearRule>(&rule)) {
    j["type"] = "linear";
    j["alpha"] = detail::array_json(l->alpha);
  } else {
    const auto& s = std::get<NumberedStackingRule>(rule);
    j["type"] = "stacking";
    j["rule_number"] = s.rule_number;
    j["decision"] = decision_json(decision_from_number(s.rule_number));
    j["beta"] = detail::array_json(s.rule.beta);
  }
  return j;
}

/// Accepts {"alpha": [3]}, {"beta": [4]} (optionally with "rule_number").
inline CombiningRule rule_from_json(const nlohmann::json& j) {
  try {
    if (j.contains("alpha")) return LinearRule{detail::array_from<kModalities>(j.at("alpha"))};
    if (j.contains("beta"))
      return NumberedStackingRule{j.value("rule_number", -1), StackingRule{detail::array_from<kModalities + 1>(j.at("beta"))}};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed rule: ") + e.what());
  }
  throw DataError("rule must contain \"alpha\" (linear) or \"beta\" (stacking)");
}

inline std::string rule_label(const CombiningRule& rule) {
  if (const auto* l = std::get_if<LinearRule>(&rule))
    return "[" + fmt6(l->alpha[0]) + " " + fmt6(l->alpha[1]) + " " + fmt6(l->alpha[2]) + "]";
  return "rule " + std::to_string(std::get<NumberedStackingRule>(rule).rule_number);
}

// --------------------------------------------------------------------------
// FitReport

inline Json fit_report_json(const FitReport& r) {
  Json j;
  j["kind"] = r.kind == FitKind::Linear ? "linear" : "stacking";
  j["zone"] = std::string(zone_name(r.decision.zone));
  j["rule_number"] = rule_number(r.decision);
  j["decision"] = decision_json(r.decision);
  if (r.kind == FitKind::Linear) {
    j["alpha"] = detail::array_json(r.linear().alpha);
    j["unnormalized_coefficients"] = detail::array_json(r.unnormalized_coefficients);
  } else {
    j["beta"] = detail::array_json(r.stacking().beta);
  }
  j["residual"] = r.residual;
  j["t_stats"] = r.t_stats ? detail::array_json(*r.t_stats) : Json(nullptr);
  j["odds_ratios"] = r.odds_ratios ? detail::array_json(*r.odds_ratios) : Json(nullptr);
  j["iterations_used"] = r.iterations_used;
  j["degenerate"] = r.degenerate;
  return j;
}

inline FitReport fit_report_from_json(const nlohmann::json& j) {
  try {
    FitReport r;
    r.kind = j.at("kind").get<std::string>() == "linear" ? FitKind::Linear : FitKind::Stacking;
    r.decision = decision_from_json(j.at("decision"));
    r.decision.zone = parse_zone(j.value("zone", std::string("custom")));
    if (r.kind == FitKind::Linear) {
      r.coefficients = LinearRule{detail::array_from<kModalities>(j.at("alpha"))};
      r.unnormalized_coefficients = detail::array_from<kModalities>(j.at("unnormalized_coefficients"));
    } else {
      r.coefficients = StackingRule{detail::array_from<kModalities + 1>(j.at("beta"))};
    }
    r.residual = j.at("residual").get<double>();
    if (!j.at("t_stats").is_null()) r.t_stats = detail::array_from<kModalities>(j.at("t_stats"));
    if (!j.at("odds_ratios").is_null()) r.odds_ratios = detail::array_from<kModalities + 1>(j.at("odds_ratios"));
    r.iterations_used = j.at("iterations_used").get<int>();
    r.degenerate = j.at("degenerate").get<bool>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed fit report: ") + e.what());
  }
}

inline std::string fit_csv_header() {
  return detail::csv_join({"zone", "rule_number", "decision", "kind", "c1", "c2", "c3", "c0", "residual", "stat1", "stat2",
                           "stat3", "stat0"});
}

inline std::string fit_csv_row(const FitReport& r) {
  std::vector<std::string> cells{std::string(zone_name(r.decision.zone)), std::to_string(rule_number(r.decision)),
                                 decision_string(r.decision), r.kind == FitKind::Linear ? "linear" : "stacking"};
  if (r.kind == FitKind::Linear) {
    for (double a : r.linear().alpha) cells.push_back(fmt6(a));
    cells.push_back("");
  } else {
    for (double b : r.stacking().beta) cells.push_back(fmt6(b));
  }
  cells.push_back(fmt6(r.residual));
  if (r.t_stats) {
    for (double t : *r.t_stats) cells.push_back(fmt6(t));
    cells.push_back("");
  } else if (r.odds_ratios) {
    for (double o : *r.odds_ratios) cells.push_back(fmt6(o));
  } else {
    cells.insert(cells.end(), 4, "");
  }
  return detail::csv_join(cells);
}

/// Human-readable row: zone, rule number, decision, coefficients, residual, importance.
inline std::string fit_table_row(const FitReport& r) {
  std::ostringstream os;
  os << zone_name(r.decision.zone) << "  " << rule_number(r.decision) << "  " << decision_string(r.decision) << "  ";
  auto list = [&os](const auto& arr) {
    os << "[";
    for (std::size_t i = 0; i < arr.size(); ++i) os << (i ? ", " : "") << fmt6(arr[i]);
    os << "]";
  };
  if (r.kind == FitKind::Linear) {
    os << "linear     alpha=";
    list(r.linear().alpha);
    os << "  residual=" << fmt6(r.residual) << "  T=";
    if (r.t_stats) list(*r.t_stats);
    else os << "undefined";
  } else {
    os << "nonlinear  beta=";
    list(r.stacking().beta);
    os << "  residual=" << fmt6(r.residual) << "  exp(beta)=";
    if (r.odds_ratios) list(*r.odds_ratios);
  }
  if (r.degenerate) os << "  (degenerate)";
  return os.str();
}

// --------------------------------------------------------------------------
// SampledRuleSet

inline Json sampled_entry_json(const SampledRule& e) {
  Json j;
  j["rule_number"] = e.rule_number;
  j["decision"] = decision_json(e.decision);
  j["beta"] = detail::array_json(e.rule.beta);
  j["residual"] = e.residual;
  j["squared_error"] = e.squared_error;
  return j;
}

inline Json sampled_rule_set_json(const SampledRuleSet& s) {
  Json j;
  j["format"] = "fusionrules-sampled-rules";
  j["eta"] = s.eta;
  j["threshold"] = acceptance_threshold(s.eta);
  j["learning_rate"] = s.options.learning_rate;
  j["max_iters"] = s.options.max_iters;
  j["n_rules"] = s.n_rules;
  j["accepted_count"] = s.accepted_count();
  j["accepted"] = Json::array();
  for (const auto& e : s.entries) j["accepted"].push_back(sampled_entry_json(e));
  j["rejected"] = Json::array();
  for (const auto& e : s.rejected) j["rejected"].push_back(sampled_entry_json(e));
  return j;
}

inline SampledRuleSet sampled_rule_set_from_json(const nlohmann::json& j) {
  try {
    SampledRuleSet s;
    s.eta = j.at("eta").get<double>();
    s.options.learning_rate = j.value("learning_rate", 1.0);
    s.options.max_iters = j.value("max_iters", 10000);
    s.n_rules = j.value("n_rules", 256);
    auto entry = [](const nlohmann::json& e) {
      SampledRule r;
      r.rule_number = e.at("rule_number").get<int>();
      r.decision = decision_from_json(e.at("decision"));
      r.rule.beta = detail::array_from<kModalities + 1>(e.at("beta"));
      r.residual = e.at("residual").get<double>();
      r.squared_error = e.at("squared_error").get<double>();
      return r;
    };
    for (const auto& e : j.at("accepted")) s.entries.push_back(entry(e));
    if (j.contains("rejected"))
      for (const auto& e : j.at("rejected")) s.rejected.push_back(entry(e));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sampled rule set: ") + e.what());
  }
}

// --------------------------------------------------------------------------
// MetricsReport

inline Json metrics_json(const MetricsReport& m) {
  Json j;
  j["dsc"] = m.dsc;
  j["both_empty"] = m.both_empty;
  j["hd95_mm"] = detail::number_or_null(m.hd95_mm);
  j["recall_gt"] = detail::number_or_null(m.recall_gt);
  j["precision_pred"] = detail::number_or_null(m.precision_pred);
  j["n_gt_lesions"] = m.n_gt_lesions;
  j["n_pred_lesions"] = m.n_pred_lesions;
  j["s_gt"] = m.s_gt;
  j["s_pred"] = m.s_pred;
  return j;
}

inline std::string metrics_csv_header() {
  return detail::csv_join({"case_id", "dsc", "both_empty", "hd95_mm", "recall_gt", "precision_pred", "n_gt_lesions",
                           "n_pred_lesions", "s_gt", "s_pred"});
}

inline std::string metrics_csv_row(const std::string& case_id, const MetricsReport& m) {
  return detail::csv_join({case_id, fmt6(m.dsc), m.both_empty ? "1" : "0", detail::fmt_opt(m.hd95_mm),
                           detail::fmt_opt(m.recall_gt), detail::fmt_opt(m.precision_pred),
                           std::to_string(m.n_gt_lesions), std::to_string(m.n_pred_lesions), fmt6(m.s_gt),
                           fmt6(m.s_pred)});
}

// --------------------------------------------------------------------------
// Grid search

inline Json aggregate_json(const AggregateRow& r) {
  Json j;
  j["rule"] = rule_json(r.rule);
  j["n_cases"] = r.n_cases;
  j["mean_dsc"] = detail::number_or_null(r.mean_dsc);
  j["sd_dsc"] = detail::number_or_null(r.sd_dsc);
  j["mean_hd95_mm"] = detail::number_or_null(r.mean_hd95);
  j["n_hd95"] = r.n_hd95;
  j["mean_recall_gt"] = detail::number_or_null(r.mean_recall);
  j["n_recall"] = r.n_recall;
  j["mean_precision_pred"] = detail::number_or_null(r.mean_precision);
  j["n_precision"] = r.n_precision;
  return j;
}

inline Json grid_search_json(const GridSearchResult& g, const Json& config = Json::object()) {
  Json j;
  j["split"] = std::string(split_name(g.split));
  j["rank_by"] = std::string(rank_by_name(g.rank_by));
  j["config"] = config;
  j["rows"] = Json::array();
  for (const auto& r : g.rows) j["rows"].push_back(aggregate_json(r));
  return j;
}

/// One row per rule, best first, in the layout of a top-k rule table.
inline std::string grid_search_csv(const GridSearchResult& g) {
  std::string out = detail::csv_join({"rank", "split", "type", "rule_number", "decision", "w1", "w2", "w3", "w0",
                                      "mean_dsc", "sd_dsc", "mean_hd95_mm", "mean_recall_gt", "mean_precision_pred",
                                      "n_cases"});
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto& r = g.rows[i];
    std::vector<std::string> cells{std::to_string(i + 1), std::string(split_name(g.split))};
    if (const auto* l = std::get_if<LinearRule>(&r.rule)) {
      cells.insert(cells.end(), {"linear", "", "", fmt6(l->alpha[0]), fmt6(l->alpha[1]), fmt6(l->alpha[2]), ""});
    } else {
      const auto& s = std::get<NumberedStackingRule>(r.rule);
      cells.insert(cells.end(), {"stacking", std::to_string(s.rule_number),
                                 s.rule_number >= 0 ? decision_string(decision_from_number(s.rule_number)) : "",
                                 fmt6(s.rule.beta[0]), fmt6(s.rule.beta[1]), fmt6(s.rule.beta[2]), fmt6(s.rule.beta[3])});
    }
    cells.insert(cells.end(), {fmt6(r.mean_dsc), fmt6(r.sd_dsc), fmt6(r.mean_hd95), fmt6(r.mean_recall),
                               fmt6(r.mean_precision), std::to_string(r.n_cases)});
    out += detail::csv_join(cells);
  }
  return out;
}

/// (alpha_1, alpha_2, metric) with alpha_3 = 1 - alpha_1 - alpha_2, ordered by (alpha_1, alpha_2).
inline std::string heatmap_csv(const GridSearchResult& g, RankBy metric) {
  std::vector<std::pair<std::array<double, 3>, double>> cells;
  for (const auto& r : g.rows)
    if (const auto* l = std::get_if<LinearRule>(&r.rule)) {
      double v = r.mean_dsc;
      if (metric == RankBy::Hd95) v = r.mean_hd95;
      else if (metric == RankBy::Recall) v = r.mean_recall;
      else if (metric == RankBy::Precision) v = r.mean_precision;
      cells.emplace_back(l->alpha, v);
    }
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out = detail::csv_join({"alpha1", "alpha2", "alpha3", std::string(rank_by_name(metric))});
  for (const auto& [a, v] : cells) out += detail::csv_join({fmt6(a[0]), fmt6(a[1]), fmt6(a[2]), fmt6(v)});
  return out;
}

// --------------------------------------------------------------------------
// Availability

inline Json availability_json(const AvailabilityTable& t, const Json& config = Json::object()) {
  Json j;
  j["config"] = config;
  j["base"] = aggregate_json(t.base);
  j["rows"] = Json::array();
  for (const auto& r : t.rows) {
    Json row;
    row["modalities"] = r.label;
    row["metrics"] = aggregate_json(r.metrics);
    row["delta_dsc"] = detail::number_or_null(r.delta_dsc);
    row["delta_hd95_mm"] = detail::number_or_null(r.delta_hd95);
    row["delta_recall_gt"] = detail::number_or_null(r.delta_recall);
    row["delta_precision_pred"] = detail::number_or_null(r.delta_precision);
    j["rows"].push_back(std::move(row));
  }
  return j;
}

inline std::string availability_csv(const AvailabilityTable& t) {
  std::string out = detail::csv_join({"modalities", "alpha1", "alpha2", "alpha3", "mean_dsc", "sd_dsc", "mean_hd95_mm",
                                      "mean_recall_gt", "mean_precision_pred", "delta_dsc", "delta_hd95_mm"});
  auto row = [&out](const std::string& label, const AggregateRow& m, double dd, double dh) {
    const auto& a = std::get<LinearRule>(m.rule).alpha;
    out += detail::csv_join({label, fmt6(a[0]), fmt6(a[1]), fmt6(a[2]), fmt6(m.mean_dsc), fmt6(m.sd_dsc),
                             fmt6(m.mean_hd95), fmt6(m.mean_recall), fmt6(m.mean_precision), fmt6(dd), fmt6(dh)});
  };
  row("base", t.base, 0.0, 0.0);
  for (const auto& r : t.rows) row(r.label, r.metrics, r.delta_dsc, r.delta_hd95);
  return out;
}

// --------------------------------------------------------------------------
// Monte-Carlo uncertainty

inline Json uncertainty_json(const UncertaintyResult& u, const Json& config = Json::object()) {
  Json j;
  j["config"] = config;
  j["n_draws"] = u.draws.size();
  j["draws"] = Json::array();
  for (const auto& r : u.draws) j["draws"].push_back(rule_json(r));
  j["cases"] = Json::array();
  for (const auto& c : u.cases) {
    Json cj;
    cj["case_id"] = c.case_id;
    cj["mean_dsc"] = detail::number_or_null(c.mean_dsc);
    cj["var_dsc"] = detail::number_or_null(c.var_dsc);
    cj["mean_voxel_variance"] = c.mean_voxel_variance;
    cj["max_voxel_variance"] = c.max_voxel_variance;
    j["cases"].push_back(std::move(cj));
  }
  return j;
}

inline std::string uncertainty_csv(const UncertaintyResult& u) {
  std::string out = detail::csv_join({"case_id", "mean_dsc", "var_dsc", "mean_voxel_variance", "max_voxel_variance"});
  for (const auto& c : u.cases)
    out += detail::csv_join(
        {c.case_id, fmt6(c.mean_dsc), fmt6(c.var_dsc), fmt6(c.mean_voxel_variance), fmt6(c.max_voxel_variance)});
  return out;
}

// --------------------------------------------------------------------------

inline std::string render_json(const Json& j) { return j.dump(2) + "\n"; }

/// Writes a rendered report (JSON text or CSV) to `path`.
inline void write_report(const std::string& rendered, const fs::path& path) { detail::write_file(path, rendered); }

inline void write_report(const Json& j, ReportFormat format, const fs::path& path) {
  if (format != ReportFormat::Json) throw InvalidArgument("a JSON document can only be written as JSON");
  detail::write_file(path, render_json(j));
}

inline void write_report(const GridSearchResult& g, ReportFormat format, const fs::path& path,
                         const Json& config = Json::object()) {
  detail::write_file(path, format == ReportFormat::Json ? render_json(grid_search_json(g, config)) : grid_search_csv(g));
}

inline void write_report(const FitReport& r, ReportFormat format, const fs::path& path) {
  detail::write_file(path, format == ReportFormat::Json ? render_json(fit_report_json(r)) : fit_csv_header() + fit_csv_row(r));
}

inline void write_report(const MetricsReport& m, ReportFormat format, const fs::path& path,
                         const std::string& case_id = "case") {
  detail::write_file(path, format == ReportFormat::Json ? render_json(metrics_json(m))
                                                        : metrics_csv_header() + metrics_csv_row(case_id, m));
}

inline void write_report(const AvailabilityTable& t, ReportFormat format, const fs::path& path,
                         const Json& config = Json::object()) {
  detail::write_file(path, format == ReportFormat::Json ? render_json(availability_json(t, config)) : availability_csv(t));
}

inline void write_report(const UncertaintyResult& u, ReportFormat format, const fs::path& path,
                         const Json& config = Json::object()) {
  detail::write_file(path, format == ReportFormat::Json ? render_json(uncertainty_json(u, config)) : uncertainty_csv(u));
}

}  // namespace fusionrules
