#include "multiwave/design.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>

#include "multiwave/errors.hpp"

namespace multiwave {

namespace {

constexpr std::array<std::pair<DesignKind, std::string_view>, 6> kKindNames{{
    {DesignKind::single_proportional, "single-proportional"},
    {DesignKind::single_balanced, "single-balanced"},
    {DesignKind::optimal_full_data, "optimal-full-data"},
    {DesignKind::twowave_proportional, "twowave-proportional"},
    {DesignKind::twowave_balanced, "twowave-balanced"},
    {DesignKind::twowave_prior, "twowave-prior"},
}};

constexpr const char* kXZero = "__x0";
constexpr const char* kXOne = "__x1";
constexpr const char* kOracle = "__oracle_x";

std::vector<StratumSummary> with_sd(std::vector<StratumSummary> strata, std::span<const double> sd) {
  for (std::size_t h = 0; h < strata.size(); ++h) strata[h].sd = sd[h];
  return strata;
}

std::vector<Index> realized_counts(const CohortTable& table, std::span<const Index> rows) {
  std::vector<Index> counts(static_cast<std::size_t>(table.n_strata()), 0);
  auto labels = table.strata();
  for (Index i : rows) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  return counts;
}

// Fit on the wave-1 rows; separated or stalled unpenalized fits fall back to
// their last iterate.
Vector fit_or_last(const Matrix& x, const Vector& y, const Vector& w,
                   const std::optional<PriorSpec>& prior, bool& degenerate) {
  try {
    return fit_weighted_logistic(x, y, w, prior).beta;
  } catch (const SeparationError& e) {
    degenerate = true;
    return e.last_iterate().beta;
  } catch (const ConvergenceError& e) {
    degenerate = true;
    return e.last_iterate().beta;
  }
}

// Pre-specified designs: sd of the estimated influence functions among the
// wave-1 units of each stratum, from the weighted maximum-likelihood fit.
Wave1Analysis wave1_sample_analysis(const CohortTable& table, const ModelPair& models,
                                    const std::vector<Index>& rows, const Vector& w) {
  Wave1Analysis out;
  const DesignData d = build_design_matrix(table, models.outcome, XSource::observed(), rows);
  out.outcome_beta = fit_or_last(d.matrix, d.response, w, std::nullopt, out.degenerate);
  Eigen::LLT<Matrix> llt(logistic_information(d.matrix, w, std::nullopt, out.outcome_beta));
  if (llt.info() != Eigen::Success) {
    throw NumericalError("multiwave", "wave-1 information matrix is singular");
  }
  const Vector r = llt.solve(Vector::Unit(models.outcome.width(), models.target));
  const Vector lin = d.matrix * r;
  const Vector eta = d.matrix * out.outcome_beta;

  const auto labels = table.strata();
  const auto h_count = static_cast<std::size_t>(table.n_strata());
  std::vector<std::vector<double>> by_stratum(h_count);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto kk = static_cast<Index>(k);
    const double h = (d.response[kk] - expit(eta[kk])) * lin[kk];
    by_stratum[static_cast<std::size_t>(labels[static_cast<std::size_t>(rows[k])])].push_back(h);
  }
  out.sd.assign(h_count, 0.0);
  for (std::size_t s = 0; s < h_count; ++s) {
    const auto& v = by_stratum[s];
    if (v.size() < 2) continue;
    double m = 0.0;
    for (double h : v) m += h;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double h : v) ss += (h - m) * (h - m);
    out.sd[s] = std::sqrt(ss / static_cast<double>(v.size() - 1));
    if (!std::isfinite(out.sd[s])) {
      throw NumericalError("multiwave", "wave-1 influence sd is not finite in stratum " + std::to_string(s));
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(DesignKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

DesignKind parse_design_kind(std::string_view name) {
  std::string valid;
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
    valid += (valid.empty() ? "" : ", ") + std::string(n);
  }
  throw InputError("multiwave", "unknown design '" + std::string(name) + "'; valid kinds: " + valid);
}

bool is_two_wave(DesignKind kind) {
  return kind == DesignKind::twowave_proportional || kind == DesignKind::twowave_balanced ||
         kind == DesignKind::twowave_prior;
}

std::string WaveFraction::label() const {
  return std::to_string(numerator) + "/" + std::to_string(denominator);
}

Index WaveFraction::wave1_size(Index n) const {
  return (2 * n * numerator + denominator) / (2 * denominator);
}

WaveFraction WaveFraction::parse(std::string_view text) {
  auto fail = [&]() -> WaveFraction {
    throw InputError("multiwave", "malformed wave-1 fraction '" + std::string(text) + "'");
  };
  WaveFraction f;
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    auto a = text.substr(0, slash);
    auto b = text.substr(slash + 1);
    if (std::from_chars(a.data(), a.data() + a.size(), f.numerator).ptr != a.data() + a.size() ||
        std::from_chars(b.data(), b.data() + b.size(), f.denominator).ptr != b.data() + b.size()) {
      return fail();
    }
  } else {
    double v = 0.0;
    if (std::from_chars(text.data(), text.data() + text.size(), v).ptr != text.data() + text.size()) {
      return fail();
    }
    f.denominator = 1000000;
    f.numerator = static_cast<int>(std::lround(v * f.denominator));
    const int g = std::gcd(f.numerator, f.denominator);
    if (g > 0) {
      f.numerator /= g;
      f.denominator /= g;
    }
  }
  if (f.denominator <= 0 || f.numerator <= 0 || f.numerator >= f.denominator) {
    throw InputError("multiwave", "wave-1 fraction must lie strictly between 0 and 1");
  }
  return f;
}

void DesignConfig::validate(const ModelPair& models) const {
  const std::string kind_name(to_string(kind));
  if (kind == DesignKind::twowave_prior) {
    if (!priors) throw InputError("multiwave", kind_name + " requires priors");
    priors->outcome.validate(models.outcome.width());
    priors->imputation.validate(models.imputation.width());
    if (!priors->outcome.is_fully_informative() || !priors->imputation.is_fully_informative()) {
      throw InputError("multiwave", kind_name + " requires informative (finite-variance) priors");
    }
  } else if (priors) {
    throw InputError("multiwave", "priors are only used by twowave-prior, not " + kind_name);
  }
  if (is_two_wave(kind) && !fraction) {
    throw InputError("multiwave", kind_name + " requires a wave-1 fraction");
  }
  if (!is_two_wave(kind) && fraction) {
    throw InputError("multiwave", kind_name + " is single-wave; a wave-1 fraction is not allowed");
  }
  if (floor < 0) throw InputError("multiwave", "floor must be non-negative");
  if (models.target <= 0 || models.target >= models.outcome.width()) {
    throw InputError("multiwave", "target coefficient out of range");
  }
}

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(master),
                                   static_cast<std::uint32_t>(master >> 32)};
  for (auto p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::vector<double> expected_influence_sd(const CohortTable& table, const ModelPair& models,
                                          const Vector& outcome_beta, const Vector& imputation_alpha) {
  const Index n = table.n_rows();
  const Vector& observed = table.expensive_values();
  for (Index i = 0; i < n; ++i) {
    if (table.in_phase2(i) && observed[i] != 0.0 && observed[i] != 1.0) {
      throw InputError("multiwave", "design-stage expectation needs a binary X");
    }
  }
  if (outcome_beta.size() != models.outcome.width() ||
      imputation_alpha.size() != models.imputation.width()) {
    throw InputError("multiwave", "coefficient vectors do not match the models");
  }

  const CohortTable shadow = table.with_imputation(kXZero, Vector::Zero(n))
                                 .with_imputation(kXOne, Vector::Ones(n));
  const Matrix x0 = build_predictors(shadow, models.outcome, XSource::imputed(kXZero));
  const Matrix x1 = build_predictors(shadow, models.outcome, XSource::imputed(kXOne));
  const Matrix za = build_predictors(shadow, models.imputation, XSource::imputed(kXZero));
  const Vector& y = table.outcome();

  const Vector eta0 = x0 * outcome_beta;
  const Vector eta1 = x1 * outcome_beta;
  const Vector eta_a = za * imputation_alpha;
  Vector q(n), mu0(n), mu1(n);
  for (Index i = 0; i < n; ++i) {
    mu0[i] = expit(eta0[i]);
    mu1[i] = expit(eta1[i]);
    if (table.in_phase2(i)) {
      q[i] = observed[i];
      continue;
    }
    // P(X = 1 | A, Z, Y) by Bayes' rule, on the log scale.
    const double log_prior1 = -std::log1p(std::exp(-eta_a[i]));
    const double log_prior0 = -std::log1p(std::exp(eta_a[i]));
    const double l1 = y[i] == 1.0 ? std::log(mu1[i]) : std::log1p(-mu1[i]);
    const double l0 = y[i] == 1.0 ? std::log(mu0[i]) : std::log1p(-mu0[i]);
    const double a = log_prior1 + l1;
    const double b = log_prior0 + l0;
    q[i] = std::isfinite(a - b) ? expit(a - b) : (a > b ? 1.0 : 0.0);
  }

  const Vector v1 = q.cwiseProduct(mu1.cwiseProduct((1.0 - mu1.array()).matrix()));
  const Vector v0 = (1.0 - q.array()).matrix().cwiseProduct(mu0.cwiseProduct((1.0 - mu0.array()).matrix()));
  const Matrix info = x1.transpose() * v1.asDiagonal() * x1 + x0.transpose() * v0.asDiagonal() * x0;
  Eigen::LLT<Matrix> llt(info);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("multiwave", "expected information matrix is singular");
  }
  const Vector r = llt.solve(Vector::Unit(models.outcome.width(), models.target));
  const Vector lin0 = x0 * r;
  const Vector lin1 = x1 * r;

  Vector mean(n), within(n);
  for (Index i = 0; i < n; ++i) {
    const double h0 = (y[i] - mu0[i]) * lin0[i];
    const double h1 = (y[i] - mu1[i]) * lin1[i];
    mean[i] = q[i] * h1 + (1.0 - q[i]) * h0;
    within[i] = q[i] * (1.0 - q[i]) * (h1 - h0) * (h1 - h0);
  }

  // Var = Var_rows(E_X h) + E_rows(Var_X h) within each stratum.
  const auto rows = table.rows_by_stratum();
  std::vector<double> sd(rows.size());
  for (std::size_t h = 0; h < rows.size(); ++h) {
    double m = 0.0, w = 0.0;
    for (Index i : rows[h]) {
      m += mean[i];
      w += within[i];
    }
    const double size = static_cast<double>(rows[h].size());
    m /= size;
    double ss = 0.0;
    for (Index i : rows[h]) ss += (mean[i] - m) * (mean[i] - m);
    sd[h] = std::sqrt(ss / size + w / size);
  }
  return sd;
}

Allocation prior_wave1_design(const CohortTable& table, const ModelPair& models,
                              const PriorPair& priors, Index n_a, Index floor) {
  priors.outcome.validate(models.outcome.width());
  priors.imputation.validate(models.imputation.width());
  if (!priors.outcome.is_fully_informative() || !priors.imputation.is_fully_informative()) {
    throw InputError("multiwave",
                     "prior-informed wave 1 needs informative priors; use a pre-specified design "
                     "when priors are flat");
  }
  // With no phase-2 data the posterior mode is the prior mean.
  const auto sd = expected_influence_sd(table, models, priors.outcome.mean, priors.imputation.mean);
  return exact_integer_allocation(with_sd(summarize_strata(table), sd), n_a, floor);
}

std::vector<Index> draw_stratified_sample(const CohortTable& table, std::span<const Index> sizes,
                                          std::uint64_t seed) {
  if (static_cast<int>(sizes.size()) != table.n_strata()) {
    throw InputError("multiwave", "one sample size is required per stratum");
  }
  std::mt19937_64 rng(seed);
  std::vector<Index> drawn;
  const auto rows = table.rows_by_stratum();
  for (std::size_t h = 0; h < rows.size(); ++h) {
    std::vector<Index> available;
    for (Index i : rows[h]) {
      if (!table.in_phase2(i)) available.push_back(i);
    }
    if (sizes[h] < 0 || sizes[h] > static_cast<Index>(available.size())) {
      throw InputError("multiwave", "allocation of " + std::to_string(sizes[h]) + " in stratum " +
                                        std::to_string(h) + " exceeds the " +
                                        std::to_string(available.size()) + " available rows");
    }
    std::sample(available.begin(), available.end(), std::back_inserter(drawn), sizes[h], rng);
  }
  return drawn;
}

CohortTable reveal(const CohortTable& table, std::span<const Index> rows, const Vector& oracle_x) {
  if (oracle_x.size() != table.n_rows()) throw InputError("multiwave", "oracle X has the wrong length");
  std::vector<double> xs;
  xs.reserve(rows.size());
  for (Index i : rows) xs.push_back(oracle_x[i]);
  return table.with_phase2(rows, xs).reweighted_by_stratum();
}

Wave1Analysis wave1_analysis(const CohortTable& table, const ModelPair& models,
                             const std::optional<PriorPair>& priors, std::span<const double> prior_sd) {
  if (priors) {
    priors->outcome.validate(models.outcome.width());
    priors->imputation.validate(models.imputation.width());
    if (!priors->outcome.is_fully_informative() || !priors->imputation.is_fully_informative()) {
      throw InputError("multiwave", "wave-1 analysis with priors needs finite prior variances");
    }
  }
  const auto rows = table.sampled_rows();
  if (rows.empty()) throw InputError("multiwave", "wave-1 sample is empty");
  const auto n = static_cast<Index>(rows.size());

  // Weights rescaled to sum to the sample size so the prior is weighed
  // against the number of measured subjects.
  Vector w(n);
  for (Index k = 0; k < n; ++k) w[k] = table.weight(rows[static_cast<std::size_t>(k)]);
  w *= static_cast<double>(n) / w.sum();

  Wave1Analysis out;
  if (!priors) return wave1_sample_analysis(table, models, rows, w);
  const DesignData imp = build_design_matrix(table, models.imputation, XSource::observed(), rows);
  out.imputation_alpha = fit_or_last(imp.matrix, imp.response, w,
                                     priors ? std::optional(priors->imputation) : std::nullopt,
                                     out.degenerate);
  const DesignData outc = build_design_matrix(table, models.outcome, XSource::observed(), rows);
  out.outcome_beta = fit_or_last(outc.matrix, outc.response, w,
                                 priors ? std::optional(priors->outcome) : std::nullopt,
                                 out.degenerate);

  out.sd = expected_influence_sd(table, models, out.outcome_beta, out.imputation_alpha);
  for (std::size_t h = 0; h < out.sd.size(); ++h) {
    if (out.sd[h] > 0.0 && std::isfinite(out.sd[h])) continue;
    if (!prior_sd.empty()) {
      out.sd[h] = prior_sd[h];
      out.fallback_strata.push_back(static_cast<int>(h));
    } else if (!std::isfinite(out.sd[h])) {
      throw NumericalError("multiwave", "wave-1 influence sd is not finite in stratum " +
                                            std::to_string(h));
    }
  }
  return out;
}

std::vector<double> full_data_sd(const CohortTable& table, const ModelPair& models,
                                 const Vector& oracle_x) {
  const CohortTable full = table.with_imputation(kOracle, oracle_x);
  const DesignData data = build_design_matrix(full, models.outcome, XSource::imputed(kOracle));
  const Vector ones = Vector::Ones(data.matrix.rows());
  const FitResult fit = fit_weighted_logistic(data.matrix, data.response, ones);
  const InfluenceSet inf = influence_functions(fit, data.matrix, data.response, ones, models.target);
  return stratum_sd(table, inf.target());
}

DesignRun run_design(const CohortTable& table, const Vector& oracle_x, const ModelPair& models,
                     const DesignConfig& config, Index n, std::uint64_t seed) {
  config.validate(models);
  if (!table.is_stratified()) throw InputError("multiwave", "the cohort must be stratified");
  if (table.n_sampled() != 0) throw InputError("multiwave", "the cohort already has a phase-2 sample");
  if (oracle_x.size() != table.n_rows()) throw InputError("multiwave", "oracle X has the wrong length");

  const auto strata = summarize_strata(table);
  DesignRun run;
  run.config = config;
  CohortTable current = table;

  auto sample_wave = [&](int index, Allocation alloc, std::span<const Index> sizes,
                         std::vector<double> sd, double fraction) {
    WavePlan plan;
    plan.wave_index = index;
    plan.allocation = std::move(alloc);
    plan.rng_seed = derive_seed(seed, {static_cast<std::uint64_t>(index)});
    plan.fraction = fraction;
    plan.sd = std::move(sd);
    plan.rows = draw_stratified_sample(current, sizes, plan.rng_seed);
    plan.realized = realized_counts(current, plan.rows);
    current = reveal(current, plan.rows, oracle_x);
    run.waves.push_back(std::move(plan));
  };

  if (!is_two_wave(config.kind)) {
    Allocation alloc;
    std::vector<double> sd;
    switch (config.kind) {
      case DesignKind::single_proportional:
        alloc = proportional_allocation(strata, n, config.floor);
        break;
      case DesignKind::single_balanced:
        alloc = balanced_allocation(strata, n, config.floor);
        break;
      default:
        sd = full_data_sd(table, models, oracle_x);
        alloc = exact_integer_allocation(with_sd(strata, sd), n, config.floor);
        break;
    }
    const auto sizes = alloc.sizes;
    sample_wave(1, std::move(alloc), sizes, std::move(sd), 1.0);
  } else {
    const Index n_a = config.fraction->wave1_size(n);
    Allocation first;
    std::vector<double> prior_sd;
    switch (config.kind) {
      case DesignKind::twowave_proportional:
        first = proportional_allocation(strata, n_a, config.floor);
        break;
      case DesignKind::twowave_balanced:
        first = balanced_allocation(strata, n_a, config.floor);
        break;
      default:
        prior_sd = expected_influence_sd(table, models, config.priors->outcome.mean,
                                         config.priors->imputation.mean);
        first = exact_integer_allocation(with_sd(strata, prior_sd), n_a, config.floor);
        break;
    }
    const auto first_sizes = first.sizes;
    sample_wave(1, std::move(first), first_sizes, prior_sd, config.fraction->value());

    const Wave1Analysis analysis = wave1_analysis(current, models, config.priors, prior_sd);
    run.wave1_degenerate = analysis.degenerate;
    run.fallback_strata = analysis.fallback_strata;
    const auto updated = with_sd(strata, analysis.sd);
    Allocation target = exact_integer_allocation(updated, n, config.floor);
    const auto extra = wave2_allocation(target, updated, current.sampled_per_stratum());
    sample_wave(2, std::move(target), extra, analysis.sd, 1.0 - config.fraction->value());
  }

  if (current.n_sampled() != n) {
    throw NumericalError("multiwave", "sampled " + std::to_string(current.n_sampled()) +
                                          " units, expected " + std::to_string(n));
  }
  run.final_estimate = raking_estimator(current, models.outcome, models.imputation);
  run.sampled = std::move(current);
  return run;
}

}  // namespace multiwave
