#pragma once

#include <vector>

#include "multiwave/cohort.hpp"
#include "multiwave/glm.hpp"

namespace multiwave {

struct RakeOptions {
  int max_iterations = 100;
  /// Newton stops when every scaled residual is below this, relative to
  /// 1 + |scaled total|.
  double tolerance = 1e-10;
};

/// Poisson-distance calibration of base weights.
struct Calibration {
  /// Multiplier g_i = exp(S_i' lambda); always positive.
  Vector multiplier;
  /// Calibrated weights g_i w_i.
  Vector weights;
  Vector lambda;
  bool converged = false;
  int iterations = 0;
  /// max_j |sum_i g_i w_i S_ij - T_j| / (1 + |T_j|).
  double max_residual = 0.0;
};

/// Solves sum_i w_i exp(S_i' lambda) S_i = totals by damped Newton on the
/// convex dual. Rows of `aux` are sampled subjects.
Calibration rake(const Matrix& aux, const Vector& totals, const Vector& base_weights,
                 const RakeOptions& options = {});

/// Plug-in calibration variables: fits the imputation model on phase 2, imputes
/// E[X] for every row, refits the outcome model on the whole cohort with the
/// imputed X and returns that fit's influence functions (N x p). Columns for
/// coefficients that are aliased in the imputed fit are zero.
Matrix build_plugin_auxiliaries(const CohortTable& table, const ModelSpec& outcome,
                                const ModelSpec& imputation);

struct RakingResult {
  Calibration calibration;
  /// Outcome fit on phase 2 with the calibrated weights.
  FitResult calibrated_fit;
  /// Design-based variance of `calibrated_fit.beta`.
  Matrix variance;
  std::vector<Index> sampled_rows;

  Vector standard_errors() const { return variance.diagonal().cwiseSqrt(); }
};

/// Generalized raking estimator: calibrates to the cohort totals of the plug-in
/// influence functions plus the cohort size, then refits the outcome model.
RakingResult raking_estimator(const CohortTable& table, const ModelSpec& outcome,
                              const ModelSpec& imputation);

struct WeightedResult {
  FitResult fit;
  Matrix variance;
};

/// Plain inverse-probability-weighted estimator on phase 2, for comparison.
WeightedResult weighted_estimator(const CohortTable& table, const ModelSpec& outcome);

}  // namespace multiwave
