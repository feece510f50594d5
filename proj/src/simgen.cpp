#include "multiwave/simgen.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "multiwave/errors.hpp"

namespace multiwave {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double logit(double p) { return std::log(p / (1.0 - p)); }

std::string format_fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return kNaN;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

std::string first_error(const std::vector<std::string>& errors, const std::string& label) {
  for (const auto& e : errors) {
    if (e.find(" " + label + ": ") != std::string::npos) return e;
  }
  return "none recorded";
}

}  // namespace

std::vector<ScenarioPrior> ScenarioConfig::default_priors() {
  const double near = std::sqrt(0.1) / 2.0;
  return {{"prior1", near, 0.1}, {"prior2", near, 1.0}, {"prior3", 0.5, 0.1}, {"prior4", 0.5, 1.0}};
}

void ScenarioConfig::validate() const {
  auto prob = [](double p, bool allow_one) { return p > 0.0 && (p < 1.0 || (allow_one && p == 1.0)); };
  if (N < 2) throw InputError("simgen", "cohort size must be at least 2");
  if (reps < 1) throw InputError("simgen", "at least one replicate is required");
  if (!std::isfinite(beta1)) throw InputError("simgen", "beta1 must be finite");
  if (!prob(sensitivity, true) || !prob(specificity, true)) {
    throw InputError("simgen", "sensitivity and specificity must lie in (0, 1]");
  }
  if (!prob(exposure_prev, false)) throw InputError("simgen", "exposure prevalence must lie in (0, 1)");
  if (n < 1 || n > N) throw InputError("simgen", "phase-2 budget must lie in [1, N]");
  for (const auto& f : fractions) {
    if (f.numerator <= 0 || f.numerator >= f.denominator) {
      throw InputError("simgen", "wave-1 fractions must lie in (0, 1)");
    }
  }
  for (const auto& p : priors) {
    if (!(p.variance > 0.0) || !std::isfinite(p.variance) || !std::isfinite(p.shift)) {
      throw InputError("simgen", "prior '" + p.name + "' needs a finite shift and positive variance");
    }
  }
  for (const auto& d : designs) {
    if (d.prior && *d.prior >= priors.size()) throw InputError("simgen", "design refers to a missing prior");
  }
}

std::vector<ScenarioDesign> default_designs(const ScenarioConfig& config) {
  std::vector<ScenarioDesign> out{{DesignKind::optimal_full_data, {}, {}},
                                  {DesignKind::single_proportional, {}, {}},
                                  {DesignKind::single_balanced, {}, {}}};
  for (const auto& f : config.fractions) out.push_back({DesignKind::twowave_proportional, f, {}});
  for (const auto& f : config.fractions) out.push_back({DesignKind::twowave_balanced, f, {}});
  for (std::size_t p = 0; p < config.priors.size(); ++p) {
    for (const auto& f : config.fractions) out.push_back({DesignKind::twowave_prior, f, p});
  }
  return out;
}

std::string design_label(const ScenarioConfig& config, const ScenarioDesign& design) {
  std::string label(to_string(design.kind));
  if (design.prior) label += ":" + config.priors[*design.prior].name;
  if (design.fraction) label += "@" + design.fraction->label();
  return label;
}

SimulatedCohort generate_cohort(const ScenarioConfig& config, int rep) {
  config.validate();
  std::mt19937_64 rng(derive_seed(config.seed, {static_cast<std::uint64_t>(rep), 0}));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto bern = [&](double p) { return unif(rng) < p ? 1.0 : 0.0; };

  const Index n = config.N;
  Vector x(n), a(n), z1(n), z2(n), y(n);
  for (Index i = 0; i < n; ++i) {
    x[i] = bern(config.exposure_prev);
    a[i] = x[i] == 1.0 ? bern(config.sensitivity) : 1.0 - bern(config.specificity);
    z1[i] = unif(rng);
    z2[i] = bern(0.6);
    y[i] = bern(expit(-2.0 + config.beta1 * x[i] + z1[i] + z2[i]));
  }
  ColumnRoles roles;
  roles.outcome = "Y";
  roles.covariates = {"Z1", "Z2"};
  roles.auxiliaries = {"A"};
  CohortTable table({"Y", "A", "Z1", "Z2"}, {y, a, z1, z2}, roles);
  return {stratified(table, {"Z2", "A", "Y"}), std::move(x)};
}

ModelPair scenario_models() {
  ModelPair m;
  m.outcome = {"Y", parse_terms("X, Z1, Z2")};
  m.imputation = {"X", parse_terms("A, Z1, Z2")};
  m.target = 1;
  return m;
}

Vector true_outcome_beta(const ScenarioConfig& config) {
  Vector b(4);
  b << -2.0, config.beta1, 1.0, 1.0;
  return b;
}

Vector true_imputation_alpha(const ScenarioConfig& config) {
  const double prev = config.exposure_prev;
  const double p_a0 = prev * (1.0 - config.sensitivity) /
                      (prev * (1.0 - config.sensitivity) + (1.0 - prev) * config.specificity);
  const double p_a1 = prev * config.sensitivity /
                      (prev * config.sensitivity + (1.0 - prev) * (1.0 - config.specificity));
  Vector a(4);
  a << logit(p_a0), logit(p_a1) - logit(p_a0), 0.0, 0.0;
  return a;
}

PriorPair scenario_prior(const ScenarioConfig& config, const ScenarioPrior& prior) {
  const Vector beta = true_outcome_beta(config);
  const Vector alpha = true_imputation_alpha(config);
  if (!alpha.allFinite()) {
    throw InputError("simgen", "prior-based designs need sensitivity and specificity below 1");
  }
  return {PriorSpec::normal(beta.array() - prior.shift, prior.variance),
          PriorSpec::normal(alpha.array() - prior.shift, prior.variance)};
}

std::vector<double> run_replicate(const ScenarioConfig& config,
                                  const std::vector<ScenarioDesign>& designs, int rep,
                                  std::vector<std::string>* errors) {
  const SimulatedCohort cohort = generate_cohort(config, rep);
  const ModelPair models = scenario_models();
  std::vector<double> out(designs.size(), kNaN);
  for (std::size_t d = 0; d < designs.size(); ++d) {
    DesignConfig dc;
    dc.kind = designs[d].kind;
    dc.fraction = designs[d].fraction;
    const std::uint64_t seed =
        derive_seed(config.seed, {static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(d) + 1});
    try {
      if (designs[d].prior) dc.priors = scenario_prior(config, config.priors[*designs[d].prior]);
      const DesignRun run = run_design(cohort.table, cohort.true_x, models, dc, config.n, seed);
      out[d] = run.final_estimate.calibrated_fit.beta[models.target];
    } catch (const Error& e) {
      if (errors) {
        errors->push_back("rep " + std::to_string(rep) + " " + design_label(config, designs[d]) + ": " +
                          e.what());
      }
    }
  }
  return out;
}

ScenarioResult run_scenario(const ScenarioConfig& config) {
  config.validate();
  ScenarioResult result;
  result.designs = config.designs.empty() ? default_designs(config) : config.designs;
  const auto& designs = result.designs;
  const std::size_t n_designs = designs.size();
  for (const auto& d : designs) {
    DesignConfig dc;
    dc.kind = d.kind;
    dc.fraction = d.fraction;
    if (d.prior) dc.priors = scenario_prior(config, config.priors[*d.prior]);
    dc.validate(scenario_models());
  }

  std::vector<std::vector<double>> by_rep(static_cast<std::size_t>(config.reps));
  std::vector<std::vector<std::string>> errors(static_cast<std::size_t>(config.reps));
  parallel_for(config.reps, config.threads, [&](int r) {
    const auto k = static_cast<std::size_t>(r);
    by_rep[k] = run_replicate(config, designs, r, &errors[k]);
  });

  // Reduction in replicate order.
  result.estimates.assign(n_designs, std::vector<double>(static_cast<std::size_t>(config.reps)));
  for (std::size_t r = 0; r < by_rep.size(); ++r) {
    for (std::size_t d = 0; d < n_designs; ++d) result.estimates[d][r] = by_rep[r][d];
    for (auto& e : errors[r]) result.exclusions.push_back(std::move(e));
  }

  std::optional<std::size_t> reference;
  for (std::size_t d = 0; d < n_designs; ++d) {
    if (designs[d].kind == DesignKind::optimal_full_data) {
      reference = d;
      break;
    }
  }

  for (std::size_t d = 0; d < n_designs; ++d) {
    const auto& est = result.estimates[d];
    MetricRow row;
    row.design = std::string(to_string(designs[d].kind));
    if (designs[d].prior) row.prior = config.priors[*designs[d].prior].name;
    if (designs[d].fraction) row.fraction = designs[d].fraction->label();

    std::vector<double> sq;
    for (double b : est) {
      if (std::isfinite(b)) sq.push_back((b - config.beta1) * (b - config.beta1));
    }
    row.reps_used = static_cast<int>(sq.size());
    row.excluded = config.reps - row.reps_used;
    if (row.excluded > 0.02 * config.reps) {
      throw NumericalError("simgen", design_label(config, designs[d]) + " failed on " +
                                         std::to_string(row.excluded) + " of " +
                                         std::to_string(config.reps) + " replicates; first: " +
                                         first_error(result.exclusions, design_label(config, designs[d])));
    }
    double mse = 0.0;
    for (double s : sq) mse += s;
    mse = sq.empty() ? kNaN : mse / static_cast<double>(sq.size());
    row.mse_times_10 = 10.0 * mse;
    row.mc_se = std::sqrt(sample_variance(sq) / static_cast<double>(sq.size()));

    row.ere = kNaN;
    if (reference) {
      std::vector<double> ref, own;
      for (std::size_t r = 0; r < est.size(); ++r) {
        const double a = result.estimates[*reference][r];
        if (std::isfinite(a) && std::isfinite(est[r])) {
          ref.push_back(a);
          own.push_back(est[r]);
        }
      }
      row.ere = sample_variance(ref) / sample_variance(own);
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "design,prior,fraction,mse_x10,ere,reps_used,excluded,mc_se_x10\n";
  for (const auto& r : rows) {
    out << r.design << ',' << r.prior << ',' << r.fraction << ',' << format_fixed(r.mse_times_10, 2)
        << ',' << format_fixed(r.ere, 2) << ',' << r.reps_used << ',' << r.excluded << ','
        << format_fixed(10.0 * r.mc_se, 3) << '\n';
  }
}

}  // namespace multiwave
