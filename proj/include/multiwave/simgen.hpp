#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "multiwave/design.hpp"

namespace multiwave {

/// Normal prior shifted below the true coefficients: mean = truth - shift.
struct ScenarioPrior {
  std::string name;
  double shift = 0.0;
  double variance = 1.0;
};

/// One design evaluated in a scenario. `prior` indexes ScenarioConfig::priors.
struct ScenarioDesign {
  DesignKind kind = DesignKind::optimal_full_data;
  std::optional<WaveFraction> fraction;
  std::optional<std::size_t> prior;
};

/// Synthetic cohorts with a misclassified binary surrogate A of X:
/// X ~ Bern(prev), P(A=1|X=1) = se, P(A=0|X=0) = sp, Z1 ~ U(0,1),
/// Z2 ~ Bern(0.6), logit P(Y=1) = -2 + beta1 X + Z1 + Z2; strata are the
/// occupied cells of (Z2, A, Y).
struct ScenarioConfig {
  Index N = 1000;
  int reps = 1000;
  double beta1 = 1.0;
  double sensitivity = 0.8;
  double specificity = 0.8;
  double exposure_prev = 0.15;
  /// Phase-2 budget.
  Index n = 300;
  std::vector<WaveFraction> fractions{{1, 6}, {2, 6}, {3, 6}, {4, 6}, {5, 6}};
  std::vector<ScenarioPrior> priors = default_priors();
  /// Designs to run; empty means `default_designs`.
  std::vector<ScenarioDesign> designs;
  std::uint64_t seed = 20240601;
  /// Worker threads; 0 means all available cores.
  int threads = 0;

  static std::vector<ScenarioPrior> default_priors();
  void validate() const;
};

/// Optimal, the two single-wave rules, then every two-wave rule at every
/// fraction (proportional, balanced, each prior in order).
std::vector<ScenarioDesign> default_designs(const ScenarioConfig& config);

std::string design_label(const ScenarioConfig& config, const ScenarioDesign& design);

struct SimulatedCohort {
  CohortTable table;
  /// X for every row; only revealed on sampled rows by the designs.
  Vector true_x;
};

SimulatedCohort generate_cohort(const ScenarioConfig& config, int rep);

/// Outcome Y ~ X + Z1 + Z2 and imputation X ~ A + Z1 + Z2; target is X.
ModelPair scenario_models();
Vector true_outcome_beta(const ScenarioConfig& config);
/// Imputation coefficients implied by the generator: X depends on A only.
Vector true_imputation_alpha(const ScenarioConfig& config);
PriorPair scenario_prior(const ScenarioConfig& config, const ScenarioPrior& prior);

struct MetricRow {
  std::string design;
  std::string prior;
  std::string fraction;
  double mse_times_10 = 0.0;
  /// var(optimal) / var(design) on the replicates where both succeeded.
  double ere = 0.0;
  int reps_used = 0;
  int excluded = 0;
  /// Monte Carlo s.e. of the MSE; NaN when fewer than two replicates.
  double mc_se = 0.0;
};

struct ScenarioResult {
  std::vector<ScenarioDesign> designs;
  std::vector<MetricRow> rows;
  /// estimates[d][r]: target estimate of design d at replicate r, NaN if excluded.
  std::vector<std::vector<double>> estimates;
  std::vector<std::string> exclusions;
};

/// Target estimates of every design on one replicate (NaN where a design
/// failed; the message goes to `errors` when given).
std::vector<double> run_replicate(const ScenarioConfig& config,
                                  const std::vector<ScenarioDesign>& designs, int rep,
                                  std::vector<std::string>* errors = nullptr);

/// Runs all replicates and aggregates. Throws NumericalError when a design
/// fails on more than 2% of replicates.
ScenarioResult run_scenario(const ScenarioConfig& config);

/// MSE x 10 and ERE to two decimals, one row per design.
void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows);

/// Runs body(i) for i in [0, count) on `threads` workers (0 = all cores).
/// Results must be written to per-index slots for a deterministic outcome.
inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, std::max(count, 1));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::jthread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) body(i);
    });
  }
}

}  // namespace multiwave
