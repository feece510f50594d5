#include "multiwave/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "multiwave/design.hpp"
#include "multiwave/errors.hpp"
#include "multiwave/simgen.hpp"

namespace multiwave {

namespace {

namespace fs = std::filesystem;

std::string join(const std::vector<std::string>& v, const char* sep = ",") {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? sep : "") + v[k];
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

std::string header(const RunConfig& config) {
  return "# multiwave " + config.mode + " config_hash=" + config.hash() +
         " seed=" + std::to_string(config.seed) + "\n";
}

std::ofstream open_output(const RunConfig& config, const std::string& name) {
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  const fs::path path = fs::path(config.output_dir) / name;
  std::ofstream out(path);
  if (!out) throw InputError("cli", "cannot write '" + path.string() + "'");
  out << header(config);
  return out;
}

void log(const std::string& line) { std::cerr << "multiwave: " << line << '\n'; }

std::string vec_text(std::span<const Index> v) {
  std::string out = "(";
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + std::to_string(v[k]);
  return out + ")";
}

double parse_number(const std::string& text, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw InputError("cli", where + ": '" + text + "' is not a number");
  }
  return v;
}

/// Priors file: header `model,term,mean,variance`, one row per coefficient;
/// model is `outcome` or `imputation`, term a coefficient name such as
/// `(Intercept)`, `X` or `age<1`. Coefficients not listed stay flat.
PriorPair read_priors(const std::string& path, const ModelPair& models) {
  std::ifstream in(path);
  if (!in) throw InputError("cli", "cannot open priors file '" + path + "'");
  PriorPair priors{PriorSpec::flat(models.outcome.width()), PriorSpec::flat(models.imputation.width())};
  const auto out_names = models.outcome.coefficient_names();
  const auto imp_names = models.imputation.coefficient_names();

  std::string line;
  bool seen_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
    if (!seen_header) {
      if (f != std::vector<std::string>{"model", "term", "mean", "variance"}) {
        throw InputError("cli", path + ": header must be model,term,mean,variance");
      }
      seen_header = true;
      continue;
    }
    const std::string where = path + ":" + std::to_string(line_no);
    if (f.size() != 4) throw InputError("cli", where + ": expected 4 fields");
    const bool is_outcome = f[0] == "outcome";
    if (!is_outcome && f[0] != "imputation") {
      throw InputError("cli", where + ": model must be 'outcome' or 'imputation'");
    }
    const auto& names = is_outcome ? out_names : imp_names;
    auto it = std::find(names.begin(), names.end(), f[1]);
    if (it == names.end()) {
      throw InputError("cli", where + ": unknown coefficient '" + f[1] + "'; expected one of " + join(names, ", "));
    }
    PriorSpec& spec = is_outcome ? priors.outcome : priors.imputation;
    const auto j = static_cast<Index>(it - names.begin());
    spec.mean[j] = parse_number(f[2], where);
    spec.variance[j] = parse_number(f[3], where);
  }
  priors.outcome.validate(models.outcome.width());
  priors.imputation.validate(models.imputation.width());
  return priors;
}

struct LoadedCohort {
  CohortTable table;
  std::optional<Vector> full_x;
  Stratification strata;
};

LoadedCohort load_cohort(const RunConfig& config, const ModelPair& models) {
  if (config.input_csv.empty()) throw InputError("cli", "design mode needs --input");
  if (config.strata.empty()) throw InputError("cli", "design mode needs --strata");
  ColumnRoles roles;
  roles.outcome = config.outcome;
  roles.expensive = config.expensive;
  for (const auto& t : models.outcome.terms) {
    if (t.column != config.expensive) roles.covariates.push_back(t.column);
  }
  for (const auto& t : models.imputation.terms) {
    if (std::find(roles.covariates.begin(), roles.covariates.end(), t.column) == roles.covariates.end()) {
      roles.auxiliaries.push_back(t.column);
    }
  }
  CsvCohort csv = read_cohort_csv(config.input_csv, roles);
  if (!csv.table.has_column(config.outcome)) {
    throw InputError("cli", "outcome column '" + config.outcome + "' is not in the input");
  }
  Stratification s = stratify(csv.table, config.strata);
  CohortTable table = csv.table.with_strata(s.labels);
  if (table.n_sampled() > 0) table = table.reweighted_by_stratum();
  return {std::move(table), std::move(csv.full_x), std::move(s)};
}

ModelPair make_models(const RunConfig& config) {
  if (config.outcome_terms.empty()) throw InputError("cli", "--outcome-terms is required");
  if (config.imputation_terms.empty()) throw InputError("cli", "--imputation-terms is required");
  ModelPair models;
  models.outcome = {config.outcome, parse_terms(config.outcome_terms)};
  models.imputation = {config.expensive, parse_terms(config.imputation_terms)};
  models.target = models.outcome.coefficient_index(config.target.empty() ? config.expensive : config.target);
  return models;
}

void write_allocation(const RunConfig& config, const LoadedCohort& cohort,
                      const std::vector<std::pair<int, std::vector<Index>>>& waves) {
  auto out = open_output(config, "allocation.csv");
  out << "wave,stratum";
  for (const auto& c : config.strata) out << ',' << c;
  out << ",N_h,n_h\n";
  const auto sizes = cohort.table.stratum_sizes();
  for (const auto& [wave, counts] : waves) {
    for (std::size_t h = 0; h < counts.size(); ++h) {
      out << wave << ',' << h;
      for (double v : cohort.strata.cells[h]) out << ',' << num(v);
      out << ',' << sizes[h] << ',' << counts[h] << '\n';
    }
  }
}

nlohmann::json wave_record(const RunConfig& config, const WavePlan& plan) {
  nlohmann::json j;
  j["wave"] = plan.wave_index;
  j["design"] = config.design;
  j["fraction"] = plan.fraction;
  j["seed"] = plan.rng_seed;
  j["allocation"] = plan.allocation.sizes;
  j["objective"] = std::isfinite(plan.allocation.objective) ? nlohmann::json(plan.allocation.objective)
                                                            : nlohmann::json(nullptr);
  j["realized"] = plan.realized;
  j["sd"] = plan.sd;
  std::vector<Index> rows = plan.rows;
  std::sort(rows.begin(), rows.end());
  j["rows"] = rows;
  return j;
}

void write_waves(const RunConfig& config, const std::vector<nlohmann::json>& records) {
  auto out = open_output(config, "waves.log");
  for (const auto& r : records) out << r.dump() << '\n';
}

DesignConfig design_config(const RunConfig& config, const ModelPair& models) {
  DesignConfig dc;
  dc.kind = parse_design_kind(config.design);
  if (!config.fraction.empty() && is_two_wave(dc.kind)) dc.fraction = WaveFraction::parse(config.fraction);
  if (dc.kind == DesignKind::twowave_prior) {
    if (config.priors_csv.empty()) throw InputError("cli", "twowave-prior needs --priors");
    dc.priors = read_priors(config.priors_csv, models);
  }
  dc.floor = config.floor;
  dc.validate(models);
  return dc;
}

WavePlan make_plan(int index, Allocation alloc, std::vector<Index> sizes, std::vector<double> sd,
                   double fraction, const CohortTable& table, std::uint64_t seed) {
  WavePlan plan;
  plan.wave_index = index;
  plan.allocation = std::move(alloc);
  plan.rng_seed = derive_seed(seed, {static_cast<std::uint64_t>(index)});
  plan.fraction = fraction;
  plan.sd = std::move(sd);
  plan.rows = draw_stratified_sample(table, sizes, plan.rng_seed);
  plan.realized = std::move(sizes);
  return plan;
}

void design_full(const RunConfig& config, const LoadedCohort& cohort, const ModelPair& models,
                 const DesignConfig& dc) {
  const DesignRun run = run_design(cohort.table, *cohort.full_x, models, dc, config.n, config.seed);
  std::vector<std::pair<int, std::vector<Index>>> waves;
  std::vector<nlohmann::json> records;
  for (const auto& w : run.waves) {
    waves.emplace_back(w.wave_index, w.realized);
    records.push_back(wave_record(config, w));
    log("wave " + std::to_string(w.wave_index) + " allocation " + vec_text(w.realized));
  }
  if (run.wave1_degenerate) log("warning: wave-1 fits were degenerate; last iterates used");
  for (int h : run.fallback_strata) log("warning: stratum " + std::to_string(h) + " uses its prior-based sd");
  write_allocation(config, cohort, waves);
  write_waves(config, records);

  const auto& est = run.final_estimate;
  const auto names = models.outcome.coefficient_names();
  const Vector se = est.standard_errors();
  auto out = open_output(config, "estimate.csv");
  out << "term,estimate,se\n";
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto k = static_cast<Index>(j);
    out << names[j] << ',' << num(est.calibrated_fit.beta[k]) << ',' << num(se[k]) << '\n';
  }
  const CohortTable& sampled = *run.sampled;
  auto wout = open_output(config, "weights.csv");
  wout << "row,stratum,weight,calibrated_weight\n";
  const auto labels = sampled.strata();
  for (std::size_t k = 0; k < est.sampled_rows.size(); ++k) {
    const Index i = est.sampled_rows[k];
    wout << i << ',' << labels[static_cast<std::size_t>(i)] << ',' << num(sampled.weight(i)) << ','
         << num(est.calibration.weights[static_cast<Index>(k)]) << '\n';
  }
  log("estimate " + names[static_cast<std::size_t>(models.target)] + " = " +
      num(est.calibrated_fit.beta[models.target]) + " (se " + num(se[models.target]) + ")");
}

void design_wave1(const RunConfig& config, const LoadedCohort& cohort, const ModelPair& models,
                  const DesignConfig& dc) {
  const auto strata = summarize_strata(cohort.table);
  Allocation alloc;
  std::vector<double> sd;
  Index budget = config.n;
  if (is_two_wave(dc.kind)) budget = dc.fraction->wave1_size(config.n);
  switch (dc.kind) {
    case DesignKind::single_proportional:
    case DesignKind::twowave_proportional:
      alloc = proportional_allocation(strata, budget, dc.floor);
      break;
    case DesignKind::single_balanced:
    case DesignKind::twowave_balanced:
      alloc = balanced_allocation(strata, budget, dc.floor);
      break;
    case DesignKind::twowave_prior:
      sd = expected_influence_sd(cohort.table, models, dc.priors->outcome.mean, dc.priors->imputation.mean);
      alloc = prior_wave1_design(cohort.table, models, *dc.priors, budget, dc.floor);
      break;
    case DesignKind::optimal_full_data:
      throw InputError("multiwave", "optimal-full-data needs X on every row");
  }
  const double fraction = dc.fraction ? dc.fraction->value() : 1.0;
  auto sizes = alloc.sizes;
  const WavePlan plan = make_plan(1, std::move(alloc), std::move(sizes), std::move(sd), fraction,
                                  cohort.table, config.seed);
  log("wave 1 plan " + vec_text(plan.realized));
  write_allocation(config, cohort, {{1, plan.realized}});
  write_waves(config, {wave_record(config, plan)});
}

void design_wave2(const RunConfig& config, const LoadedCohort& cohort, const ModelPair& models,
                  const DesignConfig& dc) {
  if (!is_two_wave(dc.kind)) {
    throw InputError("multiwave", "the input already has a phase-2 sample; only two-wave designs can extend it");
  }
  std::vector<double> prior_sd;
  if (dc.priors) {
    prior_sd = expected_influence_sd(cohort.table, models, dc.priors->outcome.mean, dc.priors->imputation.mean);
  }
  const Wave1Analysis analysis = wave1_analysis(cohort.table, models, dc.priors, prior_sd);
  if (analysis.degenerate) log("warning: wave-1 fits were degenerate; last iterates used");
  for (int h : analysis.fallback_strata) log("warning: stratum " + std::to_string(h) + " uses its prior-based sd");

  auto strata = summarize_strata(cohort.table, analysis.sd);
  const auto already = cohort.table.sampled_per_stratum();
  Allocation target = exact_integer_allocation(strata, config.n, dc.floor);
  auto extra = wave2_allocation(target, strata, already);
  const double fraction = static_cast<double>(cohort.table.n_sampled()) / static_cast<double>(config.n);
  const WavePlan plan = make_plan(2, std::move(target), std::move(extra), analysis.sd, 1.0 - fraction,
                                  cohort.table, config.seed);
  log("wave 2 plan " + vec_text(plan.realized));
  write_allocation(config, cohort, {{1, already}, {2, plan.realized}});
  write_waves(config, {wave_record(config, plan)});
}

}  // namespace

std::string RunConfig::canonical() const {
  std::ostringstream os;
  os << "mode=" << mode << "\nseed=" << seed << '\n';
  if (mode == "design") {
    os << "input=" << input_csv << "\noutcome=" << outcome << "\nexpensive=" << expensive
       << "\noutcome_terms=" << outcome_terms << "\nimputation_terms=" << imputation_terms
       << "\nstrata=" << join(strata) << "\ntarget=" << target << "\ndesign=" << design << "\nn=" << n
       << "\nfraction=" << fraction << "\nfloor=" << floor << "\npriors=" << priors_csv << '\n';
  } else {
    os << "N=" << cohort_size << "\nn=" << n << "\nreps=" << reps << "\nbeta1=" << num(beta1)
       << "\nsensitivity=" << num(sensitivity) << "\nspecificity=" << num(specificity)
       << "\nexposure_prev=" << num(exposure_prev) << "\nfractions=" << join(fractions)
       << "\ndesigns=" << join(designs) << '\n';
  }
  return os.str();
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(std::hash<std::string>{}(canonical())));
  return buf;
}

void cmd_design(const RunConfig& config) {
  if (config.n <= 0) throw InputError("cli", "design mode needs a positive budget --n");
  const ModelPair models = make_models(config);
  const DesignConfig dc = design_config(config, models);
  const LoadedCohort cohort = load_cohort(config, models);
  log("cohort of " + std::to_string(cohort.table.n_rows()) + " rows in " +
      std::to_string(cohort.table.n_strata()) + " strata " + vec_text(cohort.table.stratum_sizes()));
  if (cohort.full_x) {
    design_full(config, cohort, models, dc);
  } else if (cohort.table.n_sampled() == 0) {
    design_wave1(config, cohort, models, dc);
  } else {
    design_wave2(config, cohort, models, dc);
  }
}

void cmd_simulate(const RunConfig& config) {
  ScenarioConfig sc;
  sc.N = config.cohort_size;
  sc.n = config.n > 0 ? config.n : 300;
  sc.reps = config.reps;
  sc.beta1 = config.beta1;
  sc.sensitivity = config.sensitivity;
  sc.specificity = config.specificity;
  sc.exposure_prev = config.exposure_prev;
  sc.seed = config.seed;
  sc.threads = config.threads;
  sc.fractions.clear();
  for (const auto& f : config.fractions) sc.fractions.push_back(WaveFraction::parse(f));
  if (!config.designs.empty()) {
    std::vector<DesignKind> kinds;
    for (const auto& d : config.designs) kinds.push_back(parse_design_kind(d));
    for (const auto& d : default_designs(sc)) {
      if (std::find(kinds.begin(), kinds.end(), d.kind) != kinds.end()) sc.designs.push_back(d);
    }
  }
  sc.validate();
  log("simulating " + std::to_string(sc.reps) + " replicates, N=" + std::to_string(sc.N) +
      ", n=" + std::to_string(sc.n));
  const ScenarioResult result = run_scenario(sc);
  for (const auto& e : result.exclusions) log("excluded " + e);
  auto out = open_output(config, "metrics.csv");
  write_metrics_csv(out, result.rows);
}

int run_cli(int argc, char** argv) {
  RunConfig config;
  CLI::App app{"Multi-wave two-phase sampling designs"};
  app.set_config("--config", "", "TOML configuration file; command-line flags override it");
  app.require_subcommand(1);

  auto common = [&](CLI::App* sub) {
    sub->add_option("--out", config.output_dir, "Output directory");
    sub->add_option("--seed", config.seed, "Master seed");
    sub->add_option("--n", config.n, "Phase-2 budget");
  };

  auto* design = app.add_subcommand("design", "Allocate and analyze a phase-2 sample for a CSV cohort");
  common(design);
  design->add_option("--input", config.input_csv, "Cohort CSV");
  design->add_option("--outcome", config.outcome, "Outcome column");
  design->add_option("--expensive", config.expensive, "Phase-2 variable column");
  design->add_option("--outcome-terms", config.outcome_terms, "Outcome model terms, e.g. X,Z1,spline(age,1)");
  design->add_option("--imputation-terms", config.imputation_terms, "Imputation model terms");
  design->add_option("--strata", config.strata, "Discrete columns defining the strata")->delimiter(',');
  design->add_option("--target", config.target, "Outcome main effect to target (default: the phase-2 variable)");
  design->add_option("--design", config.design, "Design kind");
  design->add_option("--fraction", config.fraction, "Wave-1 share of the budget, e.g. 1/2");
  design->add_option("--floor", config.floor, "Minimum phase-2 units per stratum");
  design->add_option("--priors", config.priors_csv, "Priors CSV (model,term,mean,variance)");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo comparison of designs on synthetic cohorts");
  common(simulate);
  simulate->add_option("--N", config.cohort_size, "Cohort size");
  simulate->add_option("--reps", config.reps, "Replicates");
  simulate->add_option("--beta1", config.beta1, "True coefficient of X");
  simulate->add_option("--sensitivity", config.sensitivity, "P(A=1 | X=1)");
  simulate->add_option("--specificity", config.specificity, "P(A=0 | X=0)");
  simulate->add_option("--prevalence", config.exposure_prev, "P(X=1)");
  simulate->add_option("--fractions", config.fractions, "Wave-1 fractions")->delimiter(',');
  simulate->add_option("--designs", config.designs, "Design kinds to run (default: all)")->delimiter(',');
  simulate->add_option("--threads", config.threads, "Worker threads (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (design->parsed()) {
      config.mode = "design";
      cmd_design(config);
    } else {
      config.mode = "simulate";
      cmd_simulate(config);
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

}  // namespace multiwave
