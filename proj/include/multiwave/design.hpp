#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "multiwave/allocation.hpp"
#include "multiwave/cohort.hpp"
#include "multiwave/glm.hpp"
#include "multiwave/raking.hpp"

namespace multiwave {

enum class DesignKind {
  single_proportional,
  single_balanced,
  optimal_full_data,
  twowave_proportional,
  twowave_balanced,
  twowave_prior,
};

std::string_view to_string(DesignKind kind);
/// Accepts the hyphenated names printed by `to_string`; throws InputError
/// listing the valid kinds otherwise.
DesignKind parse_design_kind(std::string_view name);
bool is_two_wave(DesignKind kind);

/// Share of the phase-2 budget spent at wave 1, as a ratio of integers.
struct WaveFraction {
  int numerator = 1;
  int denominator = 2;

  double value() const { return static_cast<double>(numerator) / denominator; }
  std::string label() const;
  /// n_a = round(n * fraction).
  Index wave1_size(Index n) const;
  static WaveFraction parse(std::string_view text);
  bool operator==(const WaveFraction&) const = default;
};

struct PriorPair {
  PriorSpec outcome;
  PriorSpec imputation;
};

/// The models a design works with. `target` is the outcome coefficient whose
/// variance the design minimizes.
struct ModelPair {
  ModelSpec outcome;
  ModelSpec imputation;
  Index target = 1;
};

struct DesignConfig {
  DesignKind kind = DesignKind::optimal_full_data;
  std::optional<WaveFraction> fraction;
  std::optional<PriorPair> priors;
  Index floor = 2;

  /// Priors iff twowave-prior; fraction iff two-wave.
  void validate(const ModelPair& models) const;
};

struct WavePlan {
  int wave_index = 1;
  Allocation allocation;
  /// Units actually drawn in this wave per stratum.
  std::vector<Index> realized;
  std::uint64_t rng_seed = 0;
  double fraction = 1.0;
  /// Per-stratum sd the allocation was computed from (empty for fixed rules).
  std::vector<double> sd;
  std::vector<Index> rows;
};

struct DesignRun {
  DesignConfig config;
  std::vector<WavePlan> waves;
  RakingResult final_estimate;
  /// The cohort with the combined phase-2 sample and its weights.
  std::optional<CohortTable> sampled;
  /// Wave-1 fits hit separation or non-convergence and the last iterate was used.
  bool wave1_degenerate = false;
  /// Strata whose wave-1 sd fell back to the prior-based value.
  std::vector<int> fallback_strata;
};

/// Expected design-stage influence of the target coefficient. Rows in phase 2
/// use their observed X; other rows average over X ~ Bernoulli(P(X=1 | A, Z, Y)),
/// the posterior that combines the imputation model and the outcome model at
/// the given coefficients. The information matrix is the expected full-cohort
/// information. Returns per-stratum sd by the law of total variance.
std::vector<double> expected_influence_sd(const CohortTable& table, const ModelPair& models,
                                          const Vector& outcome_beta, const Vector& imputation_alpha);

/// Wave-1 allocation from priors and phase-1 data alone.
Allocation prior_wave1_design(const CohortTable& table, const ModelPair& models,
                              const PriorPair& priors, Index n_a, Index floor = 2);

/// Per-stratum SRS without replacement among rows not yet in phase 2.
std::vector<Index> draw_stratified_sample(const CohortTable& table, std::span<const Index> sizes,
                                          std::uint64_t seed);

/// Measures X on `rows` (from `oracle_x`) and reweights the combined sample.
CohortTable reveal(const CohortTable& table, std::span<const Index> rows, const Vector& oracle_x);

struct Wave1Analysis {
  std::vector<double> sd;
  Vector outcome_beta;
  Vector imputation_alpha;
  bool degenerate = false;
  std::vector<int> fallback_strata;
};

/// Per-stratum sd for the wave-2 allocation.
///
/// With priors: MAP refits of both models on the wave-1 sample (weights
/// normalized to the sample size) and expected influence over the whole cohort.
/// Strata whose sd is not positive and finite take `prior_sd` when given.
///
/// Without priors (pre-specified wave 1): weighted maximum-likelihood fit of
/// the outcome model on the wave-1 sample and the sample sd of its influence
/// functions among the wave-1 units of each stratum. A separated fit
/// contributes its last iterate; `imputation_alpha` is left empty.
Wave1Analysis wave1_analysis(const CohortTable& table, const ModelPair& models,
                             const std::optional<PriorPair>& priors,
                             std::span<const double> prior_sd = {});

/// Full-data influence sd per stratum from the outcome fit with the true X.
std::vector<double> full_data_sd(const CohortTable& table, const ModelPair& models,
                                 const Vector& oracle_x);

/// Executes a design end to end on a cohort whose X is known (`oracle_x`),
/// revealing X only on sampled rows, and finishes with the raking estimator.
DesignRun run_design(const CohortTable& table, const Vector& oracle_x, const ModelPair& models,
                     const DesignConfig& config, Index n, std::uint64_t seed);

/// Derives a stream seed from a master seed and a path of stream indices.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

}  // namespace multiwave
