#pragma once

#include <optional>
#include <span>
#include <vector>

#include "multiwave/cohort.hpp"
#include "multiwave/errors.hpp"

namespace multiwave {

struct FitOptions {
  int max_iterations = 50;
  /// Bound on max_j |score_j| / sqrt(max(1, I_jj)).
  double score_tolerance = 1e-8;
  /// Bound on the relative Newton step max_j |d_j| / (1 + |beta_j|).
  double step_tolerance = 1e-10;
  /// Linear predictors are clamped to [-eta_cap, eta_cap].
  double eta_cap = 30.0;
};

/// Weighted, optionally prior-penalized logistic fit.
struct FitResult {
  Vector beta;
  /// X' diag(w mu (1-mu)) X + diag(1/v) at beta.
  Matrix information;
  bool converged = false;
  int iterations = 0;
  /// -2 * weighted log-likelihood.
  double deviance = 0.0;
  /// Penalized log-likelihood at beta.
  double objective = 0.0;
  /// Objective after every accepted iterate, starting from the initial point.
  std::vector<double> objective_trace;
};

/// Thrown when IRLS exhausts its iterations; carries the last iterate.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, FitResult last)
      : NumericalError("glm", what), last_(std::move(last)) {}
  const FitResult& last_iterate() const { return last_; }

 private:
  FitResult last_;
};

/// Thrown when an unpenalized fit drives a linear predictor into the cap,
/// which signals (quasi-)complete separation. Carries the last iterate.
class SeparationError : public NumericalError {
 public:
  SeparationError(const std::string& what, FitResult last)
      : NumericalError("glm", what), last_(std::move(last)) {}
  const FitResult& last_iterate() const { return last_; }

 private:
  FitResult last_;
};

/// Per-subject delta-betas. Row i is I^{-1} w_i (y_i - mu_i) x_i, so the sum
/// of rows approximates beta_hat - beta_0.
struct InfluenceSet {
  Matrix h;
  Index target_column = 0;

  Vector target() const { return h.col(target_column); }
};

/// Maximizes sum_i w_i [y_i eta_i - log(1 + e^eta_i)] - 1/2 sum_j (b_j - m_j)^2 / v_j
/// by Newton-Raphson (IRLS) with step halving.
FitResult fit_weighted_logistic(const Matrix& x, const Vector& y, const Vector& w,
                                const std::optional<PriorSpec>& prior = std::nullopt,
                                const FitOptions& options = {});

double penalized_objective(const Matrix& x, const Vector& y, const Vector& w,
                           const std::optional<PriorSpec>& prior, const Vector& beta);

Vector penalized_score(const Matrix& x, const Vector& y, const Vector& w,
                       const std::optional<PriorSpec>& prior, const Vector& beta);

/// Information matrix X' diag(w mu (1-mu)) X + prior precision at beta.
Matrix logistic_information(const Matrix& x, const Vector& w,
                            const std::optional<PriorSpec>& prior, const Vector& beta);

InfluenceSet influence_functions(const FitResult& fit, const Matrix& x, const Vector& y,
                                 const Vector& w, Index target_column = 0);

/// Stratified with-replacement variance with finite-population correction:
/// sum_h (1 - n_h/N_h) n_h/(n_h - 1) sum_{i in h} (z_i - zbar_h)(z_i - zbar_h)'.
/// `contributions` holds one weighted influence row per sampled subject and
/// `strata` the matching labels.
Matrix stratified_variance(const Matrix& contributions, std::span<const int> strata,
                           std::span<const Index> sampled, std::span<const Index> population);

/// Design-based variance of a weighted estimator from its influence set.
Matrix sandwich_variance(const FitResult& fit, const InfluenceSet& influence,
                         std::span<const int> strata, std::span<const Index> sampled,
                         std::span<const Index> population);

double expit(double eta);

}  // namespace multiwave
