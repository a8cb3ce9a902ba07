// fusionrules command-line interface.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <fusionrules/fusionrules.hpp>

namespace fr = fusionrules;
using fr::Json;

namespace {

// Reads a JSON object as CLI11 configuration. Top-level keys set global
// options; a nested object keyed by a subcommand name sets that subcommand's
// options.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> out;
    collect(j, "", {}, out);
    return out;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const nlohmann::json& j, const std::string& name, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& out) {
    if (j.is_object()) {
      if (!name.empty()) parents.push_back(name);
      for (auto it = j.begin(); it != j.end(); ++it) collect(*it, it.key(), parents, out);
      return;
    }
    CLI::ConfigItem item;
    item.name = name;
    item.parents = std::move(parents);
    if (j.is_array())
      for (const auto& v : j) item.inputs.push_back(scalar(v));
    else
      item.inputs.push_back(scalar(j));
    out.push_back(std::move(item));
  }
};

struct Globals {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  unsigned workers() const { return fr::resolve_threads(threads); }
};

// Options shared by commands that binarise and evaluate.
struct EvalFlags {
  double threshold = 0.5;
  std::int64_t min_region = 27;
  int connectivity = 26;
  double s_gt = 0.1;
  double s_pred = 0.1;
  std::string zone = "WG";

  void add(CLI::App* cmd, bool with_zone = true) {
    cmd->add_option("--threshold", threshold, "Binarisation threshold")->capture_default_str();
    cmd->add_option("--min-region", min_region, "Minimum component size kept after binarisation (voxels)")
        ->capture_default_str();
    cmd->add_option("--connectivity", connectivity, "Voxel connectivity (6, 18 or 26)")->capture_default_str();
    cmd->add_option("--s-gt", s_gt, "Overlap threshold for lesion-level recall")->capture_default_str();
    cmd->add_option("--s-pred", s_pred, "Overlap threshold for lesion-level precision")->capture_default_str();
    if (with_zone) cmd->add_option("--zone", zone, "Evaluation zone: WG, TZ or PZ")->capture_default_str();
  }

  fr::EvaluationConfig config(unsigned threads) const {
    fr::EvaluationConfig c;
    c.binarize.threshold = threshold;
    c.binarize.min_region_voxels = min_region;
    c.binarize.connectivity = fr::parse_connectivity(connectivity);
    c.metrics.s_gt = s_gt;
    c.metrics.s_pred = s_pred;
    c.metrics.connectivity = c.binarize.connectivity;
    c.zone = fr::parse_zone(zone);
    c.threads = threads;
    return c;
  }

  Json echo() const {
    Json j;
    j["threshold"] = threshold;
    j["min_region_voxels"] = min_region;
    j["connectivity"] = connectivity;
    j["s_gt"] = s_gt;
    j["s_pred"] = s_pred;
    j["zone"] = zone;
    return j;
  }
};

std::array<double, 3> parse_triple(const std::vector<double>& v, const char* what) {
  if (v.size() != 3) throw fr::InvalidArgument(std::string(what) + " needs exactly three values");
  return {v[0], v[1], v[2]};
}

// Inline JSON when the text starts with '{' or '[', otherwise a file path.
nlohmann::json json_argument(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\n");
  const bool inline_json = first != std::string::npos && (text[first] == '{' || text[first] == '[');
  const std::string body = inline_json ? text : fr::detail::read_file(text);
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw fr::DataError(std::string("invalid JSON in '") + (inline_json ? "inline argument" : text) + "': " + e.what());
  }
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-")
    std::cout << text;
  else
    fr::write_report(text, path);
}

// ---------------------------------------------------------------------------

struct FitCmd {
  int rule = -1;
  std::string zone;
  std::vector<int> decision;
  std::string model = "both";
  double lr = 1.0;
  int iters = 10000;
  std::string format = "table";
  std::string out;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("fit", "Fit linear and/or stacking hyperparameters to a decision vector");
    auto* g = cmd->add_option_group("decision source");
    g->add_option("--rule", rule, "Rule number 0-255");
    g->add_option("--zone", zone, "PI-RADS zone: WG, TZ or PZ");
    g->add_option("--decision", decision, "Eight 0/1 decisions, condition 0 first")->expected(8)->delimiter(',');
    g->require_option(1);
    cmd->add_option("--model", model, "linear, stacking or both")
        ->check(CLI::IsMember({"linear", "stacking", "both"}))
        ->capture_default_str();
    cmd->add_option("--lr", lr, "Stacking learning rate")->capture_default_str();
    cmd->add_option("--iters", iters, "Stacking iterations")->capture_default_str();
    cmd->add_option("--format", format, "table, json or csv")
        ->check(CLI::IsMember({"table", "json", "csv"}))
        ->capture_default_str();
    cmd->add_option("--out", out, "Output file (default stdout)");
    cmd->callback([this] { run(); });
  }

  void run() const {
    fr::DecisionVector d;
    if (!zone.empty()) {
      d = fr::pirads_decisions(fr::parse_zone(zone));
    } else if (rule >= 0 || decision.empty()) {
      d = fr::decision_from_number(rule);
    } else {
      d = fr::decision_from_json(nlohmann::json(decision));
    }
    const auto R = fr::canonical_condition_matrix();
    std::vector<fr::FitReport> reports;
    if (model != "stacking") reports.push_back(fr::fit_linear(R, d));
    if (model != "linear") reports.push_back(fr::fit_stacking(R, d, {lr, iters}));
    for (auto& r : reports) r.decision.zone = d.zone;

    std::string text;
    if (format == "json") {
      Json j = Json::array();
      for (const auto& r : reports) j.push_back(fr::fit_report_json(r));
      text = fr::render_json(j);
    } else if (format == "csv") {
      text = fr::fit_csv_header();
      for (const auto& r : reports) text += fr::fit_csv_row(r);
    } else {
      for (const auto& r : reports) text += fr::fit_table_row(r) + "\n";
    }
    emit(text, out);
  }
};

struct SampleCmd {
  const Globals* globals = nullptr;
  double eta = 0.5;
  double lr = 1.0;
  int iters = 10000;
  int n_rules = 256;
  std::string out;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("sample", "Rejection-sample separable stacking rules");
    cmd->add_option("--eta", eta, "Acceptance tolerance")->capture_default_str();
    cmd->add_option("--lr", lr, "Stacking learning rate")->capture_default_str();
    cmd->add_option("--iters", iters, "Stacking iterations")->capture_default_str();
    cmd->add_option("--n-rules", n_rules, "Number of candidate decisions")->capture_default_str();
    cmd->add_option("--out", out, "Write the sampled rule set as JSON");
    cmd->callback([this] { run(); });
  }

  void run() const {
    const auto set = fr::rejection_sample_stacking(n_rules, eta, {lr, iters}, globals->workers());
    if (!out.empty()) fr::write_report(fr::render_json(fr::sampled_rule_set_json(set)), out);
    std::cout << "accepted " << set.accepted_count() << " of " << set.n_rules << " (threshold "
              << fr::fmt6(fr::acceptance_threshold(eta)) << ")\n";
    std::cout << "rule_number,decision,residual,squared_error\n";
    for (const auto& e : set.entries)
      std::cout << e.rule_number << "," << fr::decision_string(e.decision) << "," << fr::fmt6(e.residual) << ","
                << fr::fmt6(e.squared_error) << "\n";
  }
};

struct CombineCmd {
  std::string t2w, dwi, adc;
  std::string rule;
  bool vote = false;
  std::string out, binary_out;
  EvalFlags flags;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("combine", "Combine three modality maps with a rule");
    cmd->add_option("--t2w", t2w, "T2W probability volume")->required();
    cmd->add_option("--dwi", dwi, "DWI_hb probability volume")->required();
    cmd->add_option("--adc", adc, "ADC probability volume")->required();
    auto* r = cmd->add_option("--rule", rule, "Rule as inline JSON or a file: {\"alpha\": [...]} or {\"beta\": [...]}");
    auto* v = cmd->add_flag("--vote", vote, "Majority vote of the binarised modalities");
    r->excludes(v);
    cmd->add_option("--out", out, "Combined probability volume (native format)");
    cmd->add_option("--binary-out", binary_out, "Binarised label volume (native format)");
    flags.add(cmd, false);
    cmd->callback([this] { run(); });
  }

  void run() const {
    if (!vote && rule.empty()) throw fr::InvalidArgument("combine needs --rule or --vote");
    if (out.empty() && binary_out.empty()) throw fr::InvalidArgument("combine needs --out and/or --binary-out");
    const auto cfg = flags.config(1);
    const auto a = fr::load_probability(t2w, fr::Modality::T2W);
    const auto b = fr::load_probability(dwi, fr::Modality::DWI_hb);
    const auto c = fr::load_probability(adc, fr::Modality::ADC);
    fr::validate_aligned({fr::GridRef::of(t2w, a), fr::GridRef::of(dwi, b), fr::GridRef::of(adc, c)});
    if (vote) {
      if (!out.empty()) throw fr::InvalidArgument("--vote produces a label volume; use --binary-out");
      const auto v = fr::combine_vote(fr::binarize(a, cfg.binarize), fr::binarize(b, cfg.binarize),
                                      fr::binarize(c, cfg.binarize));
      fr::save_volume(binary_out, v);
      std::cout << "vote: " << v.count() << " positive voxels\n";
      return;
    }
    fr::CaseRecord rec;
    rec.modalities = {a, b, c};
    const auto combined = fr::combine(rec, fr::rule_from_json(json_argument(rule)));
    if (!out.empty()) fr::save_volume(out, combined);
    if (!binary_out.empty()) {
      const auto bin = fr::binarize(combined, cfg.binarize);
      fr::save_volume(binary_out, bin);
      std::cout << "binarised: " << bin.count() << " positive voxels\n";
    }
  }
};

struct EvaluateCmd {
  std::string pred, truth, zone_mask, out_json, out_csv, case_id = "case";
  EvalFlags flags;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("evaluate", "Voxel- and lesion-level metrics for one prediction");
    cmd->add_option("--pred", pred, "Prediction (label, or probability to be binarised)")->required();
    cmd->add_option("--truth", truth, "Ground-truth label volume")->required();
    cmd->add_option("--zone-mask", zone_mask, "Optional zone mask restricting evaluation");
    cmd->add_option("--case-id", case_id, "Identifier used in the CSV row")->capture_default_str();
    cmd->add_option("--out-json", out_json, "JSON report path");
    cmd->add_option("--out-csv", out_csv, "CSV report path");
    flags.add(cmd, false);
    cmd->callback([this] { run(); });
  }

  void run() const {
    const auto cfg = flags.config(1);
    const auto any = fr::load_any(pred);
    const fr::LabelVolume p = std::holds_alternative<fr::LabelVolume>(any)
                                  ? std::get<fr::LabelVolume>(any)
                                  : fr::binarize(std::get<fr::ProbabilityVolume>(any), cfg.binarize);
    const auto t = fr::load_label(truth);
    std::optional<fr::LabelVolume> zone;
    if (!zone_mask.empty()) zone = fr::load_label(zone_mask);
    const auto m = fr::evaluate(p, t, cfg.metrics, zone ? &*zone : nullptr);
    Json j;
    j["config"] = flags.echo();
    j["config"].erase("zone");
    j["metrics"] = fr::metrics_json(m);
    const auto text = fr::render_json(j);
    if (!out_json.empty()) fr::write_report(text, out_json);
    if (!out_csv.empty()) fr::write_report(fr::metrics_csv_header() + fr::metrics_csv_row(case_id, m), out_csv);
    std::cout << text;
  }
};

// "holdout" ranks on validation and re-ranks on test; otherwise one split.
std::vector<std::pair<fr::Split, std::vector<const fr::CaseRecord*>>> split_sets(const std::vector<fr::CaseRecord>& cases,
                                                                                 const std::string& which) {
  std::vector<std::pair<fr::Split, std::vector<const fr::CaseRecord*>>> out;
  if (which == "holdout") {
    out.emplace_back(fr::Split::Validation, fr::select_split(cases, fr::Split::Validation));
    out.emplace_back(fr::Split::Test, fr::select_split(cases, fr::Split::Test));
  } else {
    const auto s = fr::parse_split(which);
    out.emplace_back(s, fr::select_split(cases, s));
  }
  for (const auto& [s, v] : out)
    if (v.empty()) throw fr::DataError("split '" + std::string(fr::split_name(s)) + "' has no cases");
  return out;
}

struct SearchCmd {
  const Globals* globals = nullptr;
  std::string manifest, mode = "linear", rules, rank_by = "dsc", split = "holdout", out_dir;
  double step = 0.1;
  int top_k = 10;
  bool availability = false;
  EvalFlags flags;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("search", "Grid search over combining rules on a dataset");
    cmd->add_option("--manifest", manifest, "Dataset manifest")->required();
    cmd->add_option("--mode", mode, "linear or stacking")
        ->check(CLI::IsMember({"linear", "stacking"}))
        ->capture_default_str();
    cmd->add_option("--rules", rules, "Sampled rule set JSON (stacking; sampled afresh when omitted)");
    cmd->add_option("--step", step, "Simplex grid step (linear)")->capture_default_str();
    cmd->add_option("--rank-by", rank_by, "dsc, hd95, recall or precision")->capture_default_str();
    cmd->add_option("--split", split, "holdout, train, validation or test")->capture_default_str();
    cmd->add_option("--top-k", top_k, "Rows printed per split")->capture_default_str();
    cmd->add_flag("--availability", availability,
                  "Also tabulate modality availability around the best validation rule (linear)");
    cmd->add_option("--out-dir", out_dir, "Directory for JSON/CSV reports");
    flags.add(cmd);
    cmd->callback([this] { run(); });
  }

  void run() const {
    const auto key = fr::parse_rank_by(rank_by);
    const auto cfg = flags.config(globals->workers());
    std::vector<fr::CombiningRule> candidates;
    if (mode == "linear") {
      candidates = fr::linear_rules(step);
    } else {
      const auto set = rules.empty() ? fr::rejection_sample_stacking(256, 0.5, {}, globals->workers())
                                     : fr::sampled_rule_set_from_json(json_argument(rules));
      candidates = fr::stacking_rules(set);
    }
    const auto cases = fr::load_dataset(manifest, globals->workers());

    Json echo = flags.echo();
    echo["command"] = "search";
    echo["mode"] = mode;
    if (mode == "linear") echo["step"] = step;
    echo["rank_by"] = rank_by;
    echo["seed"] = globals->seed;
    echo["n_rules"] = candidates.size();

    std::optional<fr::GridSearchResult> validation;
    for (const auto& [s, set] : split_sets(cases, split)) {
      const auto result = fr::evaluate_rules(set, candidates, key, cfg, s);
      const std::string name(fr::split_name(s));
      if (!out_dir.empty()) {
        fr::write_report(result, fr::ReportFormat::Json, fs_path(out_dir) / ("search_" + name + ".json"), echo);
        fr::write_report(result, fr::ReportFormat::Csv, fs_path(out_dir) / ("search_" + name + ".csv"));
        if (mode == "linear")
          fr::write_report(fr::heatmap_csv(result, key), fs_path(out_dir) / ("heatmap_" + name + ".csv"));
      }
      std::cout << "# " << name << " (" << set.size() << " cases, ranked by " << rank_by << ")\n";
      fr::GridSearchResult top = result;
      if (top_k > 0 && top.rows.size() > std::size_t(top_k)) top.rows.resize(std::size_t(top_k));
      std::cout << fr::grid_search_csv(top);
      if (s == fr::Split::Validation) validation = result;
    }

    if (availability) {
      if (mode != "linear") throw fr::InvalidArgument("--availability applies to linear search");
      const auto& base_rows = validation ? validation->rows : std::vector<fr::AggregateRow>{};
      if (base_rows.empty()) throw fr::InvalidArgument("--availability needs a validation ranking");
      const auto base = std::get<fr::LinearRule>(base_rows.front().rule);
      const auto test = fr::select_split(cases, split == "holdout" ? fr::Split::Test : fr::Split::Validation);
      const auto table = fr::availability_analysis(test, base, cfg);
      if (!out_dir.empty()) {
        fr::write_report(table, fr::ReportFormat::Json, fs_path(out_dir) / "availability.json", echo);
        fr::write_report(table, fr::ReportFormat::Csv, fs_path(out_dir) / "availability.csv");
      }
      std::cout << "# availability\n" << fr::availability_csv(table);
    }
  }

  static fr::fs::path fs_path(const std::string& s) { return fr::fs::path(s); }
};

std::vector<fr::CombiningRule> rules_from_json(const nlohmann::json& j) {
  if (j.is_object() && j.contains("accepted")) return fr::stacking_rules(fr::sampled_rule_set_from_json(j));
  const auto& list = j.is_object() && j.contains("rules") ? j.at("rules") : j;
  if (!list.is_array()) throw fr::DataError("rule list must be an array of rule objects");
  std::vector<fr::CombiningRule> out;
  for (const auto& r : list) out.push_back(fr::rule_from_json(r));
  if (out.empty()) throw fr::DataError("rule list is empty");
  return out;
}

struct UncertaintyCmd {
  const Globals* globals = nullptr;
  std::string manifest, mode = "dirichlet", rules, split = "all", out_dir;
  std::vector<double> concentration{1.0, 1.0, 1.0};
  int draws = 100;
  bool save_maps = false;
  EvalFlags flags;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("mc-uncertainty", "Monte-Carlo rule uncertainty per case");
    cmd->add_option("--manifest", manifest, "Dataset manifest")->required();
    cmd->add_option("--mode", mode, "dirichlet or rules")
        ->check(CLI::IsMember({"dirichlet", "rules"}))
        ->capture_default_str();
    cmd->add_option("--concentration", concentration, "Dirichlet concentration (three values)")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--rules", rules, "Rule list (inline JSON or file) drawn uniformly in rules mode");
    cmd->add_option("--draws", draws, "Number of rule draws")->capture_default_str();
    cmd->add_option("--split", split, "all, train, validation or test")->capture_default_str();
    cmd->add_flag("--save-maps", save_maps, "Write per-case voxel variance volumes");
    cmd->add_option("--out-dir", out_dir, "Directory for JSON/CSV reports");
    flags.add(cmd);
    cmd->callback([this] { run(); });
  }

  void run() const {
    fr::RuleDistribution dist;
    if (mode == "dirichlet") {
      dist = fr::DirichletRules{parse_triple(concentration, "--concentration")};
    } else {
      if (rules.empty()) throw fr::InvalidArgument("rules mode needs --rules");
      dist = fr::DiscreteRules{rules_from_json(json_argument(rules))};
    }
    const auto cfg = flags.config(globals->workers());
    const auto cases = fr::load_dataset(manifest, globals->workers());
    const auto set = split == "all" ? fr::all_cases(cases) : fr::select_split(cases, fr::parse_split(split));
    if (set.empty()) throw fr::DataError("no cases in split '" + split + "'");
    const auto result = fr::monte_carlo_uncertainty(set, dist, draws, globals->seed, cfg);

    Json echo = flags.echo();
    echo["command"] = "mc-uncertainty";
    echo["mode"] = mode;
    if (mode == "dirichlet") echo["concentration"] = concentration;
    echo["draws"] = draws;
    echo["split"] = split;
    echo["seed"] = globals->seed;
    if (!out_dir.empty()) {
      const fr::fs::path dir(out_dir);
      fr::write_report(result, fr::ReportFormat::Json, dir / "uncertainty.json", echo);
      fr::write_report(result, fr::ReportFormat::Csv, dir / "uncertainty.csv");
      if (save_maps)
        for (const auto& c : result.cases) fr::save_float_grid(dir / (c.case_id + "_variance"), c.voxel_variance, "variance");
    }
    std::cout << fr::uncertainty_csv(result);
  }
};

struct PhantomCmd {
  const Globals* globals = nullptr;
  std::string spec, out_dir;
  int n_cases = 10;
  std::optional<std::uint64_t> split_seed;
  std::vector<double> ratios{0.66, 0.17, 0.17};

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("phantom", "Generate a synthetic dataset");
    cmd->add_option("--spec", spec, "Phantom spec (inline JSON or file)");
    cmd->add_option("--n-cases", n_cases, "Number of cases")->capture_default_str();
    cmd->add_option("--split-seed", split_seed, "Seed for the case-hash split (default: --seed)");
    cmd->add_option("--split-ratios", ratios, "train,validation,test ratios")->delimiter(',')->capture_default_str();
    cmd->add_option("--out-dir", out_dir, "Output directory")->required();
    cmd->callback([this] { run(); });
  }

  void run() const {
    const auto ps = spec.empty() ? fr::PhantomSpec{} : fr::phantom_spec_from_json(json_argument(spec));
    ps.validate();
    const auto r = parse_triple(ratios, "--split-ratios");
    const std::uint64_t ss = split_seed.value_or(globals->seed);
    fr::fs::create_directories(out_dir);
    const auto m = fr::generate_dataset(globals->seed, n_cases, ps, out_dir, ss, {r[0], r[1], r[2]}, globals->workers());
    Json echo;
    echo["command"] = "phantom";
    echo["seed"] = globals->seed;
    echo["split_seed"] = ss;
    echo["n_cases"] = n_cases;
    echo["split_ratios"] = ratios;
    echo["spec"] = fr::phantom_spec_json(ps);
    fr::write_report(fr::render_json(echo), fr::fs::path(out_dir) / "phantom_config.json");
    int counts[3] = {0, 0, 0};
    for (const auto& c : m.cases) ++counts[int(c.split)];
    std::cout << "wrote " << m.cases.size() << " cases to " << out_dir << " (train " << counts[0] << ", validation "
              << counts[1] << ", test " << counts[2] << ")\n";
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interpretable multi-modality combining rules: fitting, sampling, combination and evaluation"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with option values");

  Globals globals;
  app.add_option("--seed", globals.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", globals.threads, "Worker threads (0 = hardware concurrency)")->capture_default_str();

  FitCmd fit;
  SampleCmd sample;
  sample.globals = &globals;
  CombineCmd combine;
  EvaluateCmd evaluate;
  SearchCmd search;
  search.globals = &globals;
  UncertaintyCmd uncertainty;
  uncertainty.globals = &globals;
  PhantomCmd phantom;
  phantom.globals = &globals;
  fit.add(app);
  sample.add(app);
  combine.add(app);
  evaluate.add(app);
  search.add(app);
  uncertainty.add(app);
  phantom.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const fr::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
