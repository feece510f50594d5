#include "multiwave/raking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace multiwave {

namespace {

constexpr const char* kPluginColumn = "__plugin_x";

double dual_objective(const Matrix& s, const Vector& totals, const Vector& w, const Vector& lambda) {
  const Vector eta = s * lambda;
  double sum = 0.0;
  for (Index i = 0; i < eta.size(); ++i) sum += w[i] * std::exp(eta[i]);
  return sum - totals.dot(lambda);
}

std::string join(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? ", " : "") + std::to_string(v[k]);
  return out;
}

// Columns of `m` that add rank when taken left to right.
std::vector<Index> independent_columns(const Matrix& m) {
  std::vector<Index> kept;
  Matrix acc(m.rows(), 0);
  for (Index j = 0; j < m.cols(); ++j) {
    Matrix trial(m.rows(), acc.cols() + 1);
    trial << acc, m.col(j);
    Eigen::ColPivHouseholderQR<Matrix> qr(trial);
    if (qr.rank() == trial.cols()) {
      acc = std::move(trial);
      kept.push_back(j);
    }
  }
  return kept;
}

}  // namespace

Calibration rake(const Matrix& aux, const Vector& totals, const Vector& base_weights,
                 const RakeOptions& options) {
  const Index n = aux.rows();
  const Index q = aux.cols();
  if (totals.size() != q) throw InputError("raking", "one total is required per auxiliary column");
  if (base_weights.size() != n) throw InputError("raking", "one base weight is required per row");
  if (q == 0) throw InputError("raking", "no auxiliary columns");
  if (q > n) throw InputError("raking", "more auxiliary columns than sampled rows");
  if (!aux.allFinite() || !totals.allFinite()) throw InputError("raking", "non-finite auxiliaries");
  for (Index i = 0; i < n; ++i) {
    if (!(base_weights[i] > 0.0) || !std::isfinite(base_weights[i])) {
      throw InputError("raking", "base weights must be positive and finite");
    }
  }

  // Work with columns scaled to unit max-abs; lambda is mapped back at the end.
  Vector scale(q);
  std::vector<Index> zero_columns;
  for (Index j = 0; j < q; ++j) {
    scale[j] = aux.col(j).cwiseAbs().maxCoeff();
    if (scale[j] == 0.0) zero_columns.push_back(j);
  }
  if (!zero_columns.empty()) {
    throw NumericalError("raking", "auxiliary columns are identically zero on the sample: " +
                                       join(zero_columns));
  }
  const Matrix s = aux * scale.cwiseInverse().asDiagonal();
  const Vector t = totals.cwiseQuotient(scale);

  {
    const Matrix weighted = base_weights.cwiseSqrt().asDiagonal() * s;
    Eigen::ColPivHouseholderQR<Matrix> qr(weighted);
    qr.setThreshold(1e-10);
    if (qr.rank() < q) {
      std::vector<Index> collinear;
      for (Index k = qr.rank(); k < q; ++k) collinear.push_back(qr.colsPermutation().indices()[k]);
      std::sort(collinear.begin(), collinear.end());
      throw NumericalError("raking", "auxiliary matrix is rank deficient; collinear columns: " +
                                         join(collinear));
    }
  }

  auto residual = [&](const Vector& g) {
    // Unscaled residual relative to 1 + |T_j|.
    const Vector r = (s.transpose() * base_weights.cwiseProduct(g) - t).cwiseProduct(scale);
    double worst = 0.0;
    for (Index j = 0; j < q; ++j) worst = std::max(worst, std::abs(r[j]) / (1.0 + std::abs(totals[j])));
    return worst;
  };

  Calibration out;
  Vector lambda = Vector::Zero(q);
  Vector g = Vector::Ones(n);
  double phi = dual_objective(s, t, base_weights, lambda);
  out.max_residual = residual(g);
  while (out.max_residual >= options.tolerance) {
    if (out.iterations >= options.max_iterations) {
      throw NumericalError("raking", "calibration infeasible: Newton did not converge in " +
                                         std::to_string(options.max_iterations) + " iterations");
    }
    const Vector wg = base_weights.cwiseProduct(g);
    const Vector grad = s.transpose() * wg - t;
    const Matrix hess = s.transpose() * wg.asDiagonal() * s;
    Eigen::LDLT<Matrix> ldlt(hess);
    if (ldlt.info() != Eigen::Success) {
      throw NumericalError("raking", "calibration infeasible: singular Newton system");
    }
    const Vector step = -ldlt.solve(grad);

    // Changes within the rounding error of the dual objective count as descent.
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(phi));
    double tstep = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving, tstep *= 0.5) {
      const Vector candidate = lambda + tstep * step;
      const double value = dual_objective(s, t, base_weights, candidate);
      if (std::isfinite(value) && value <= phi + slack) {
        lambda = candidate;
        phi = value;
        accepted = true;
        break;
      }
    }
    ++out.iterations;
    if (!accepted) {
      if (out.max_residual < 1e-8) break;  // stalled at rounding level
      throw NumericalError("raking", "calibration infeasible: step halving failed");
    }
    g = (s * lambda).array().exp().matrix();
    out.max_residual = residual(g);
  }

  out.converged = true;
  out.multiplier = std::move(g);
  out.weights = base_weights.cwiseProduct(out.multiplier);
  out.lambda = lambda.cwiseQuotient(scale);
  return out;
}

Matrix build_plugin_auxiliaries(const CohortTable& table, const ModelSpec& outcome,
                                const ModelSpec& imputation) {
  const auto rows = table.sampled_rows();
  if (rows.empty()) throw InputError("raking", "phase-2 sample is empty");
  const Vector& x = table.expensive_values();
  bool has0 = false, has1 = false;
  for (Index i : rows) {
    has0 = has0 || x[i] == 0.0;
    has1 = has1 || x[i] == 1.0;
  }
  if (!has0 || !has1) {
    throw InputError("raking", "phase-2 sample must contain both X = 0 and X = 1");
  }

  const DesignData imp = build_design_matrix(table, imputation, XSource::observed(), rows);
  Vector w(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) w[static_cast<Index>(k)] = table.weight(rows[k]);
  // The imputation model only shapes the auxiliaries, so a separated fit is
  // still usable: its last iterate imputes X as (nearly) 0 or 1.
  FitResult imp_fit;
  try {
    imp_fit = fit_weighted_logistic(imp.matrix, imp.response, w);
  } catch (const SeparationError& e) {
    imp_fit = e.last_iterate();
  }

  // E[X | phase-1] for every row.
  const Matrix imp_all = build_predictors(table, imputation, XSource::observed(), {});
  Vector xhat = imp_all * imp_fit.beta;
  for (Index i = 0; i < xhat.size(); ++i) xhat[i] = expit(xhat[i]);
  const CohortTable imputed = table.with_imputation(kPluginColumn, std::move(xhat));

  const DesignData full = build_design_matrix(imputed, outcome, XSource::imputed(kPluginColumn));
  const Vector ones = Vector::Ones(full.matrix.rows());
  const auto kept = independent_columns(full.matrix);

  Matrix reduced(full.matrix.rows(), static_cast<Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) reduced.col(static_cast<Index>(k)) = full.matrix.col(kept[k]);
  const FitResult fit = fit_weighted_logistic(reduced, full.response, ones);
  const InfluenceSet inf = influence_functions(fit, reduced, full.response, ones);

  Matrix h = Matrix::Zero(full.matrix.rows(), full.matrix.cols());
  for (std::size_t k = 0; k < kept.size(); ++k) h.col(kept[k]) = inf.h.col(static_cast<Index>(k));
  return h;
}

RakingResult raking_estimator(const CohortTable& table, const ModelSpec& outcome,
                              const ModelSpec& imputation) {
  const auto rows = table.sampled_rows();
  if (rows.empty()) throw InputError("raking", "phase-2 sample is empty");
  const auto n = static_cast<Index>(rows.size());
  for (Index i : rows) {
    if (!std::isfinite(table.weight(i))) throw InputError("raking", "sampled rows need weights");
  }

  const Matrix plugin = build_plugin_auxiliaries(table, outcome, imputation);
  std::vector<Index> used;
  for (Index j = 0; j < plugin.cols(); ++j) {
    if (plugin.col(j).cwiseAbs().maxCoeff() > 0.0) used.push_back(j);
  }

  // Calibration variables: the cohort count plus the non-aliased plug-in columns.
  const auto q = static_cast<Index>(used.size()) + 1;
  Vector totals(q);
  totals[0] = static_cast<double>(table.n_rows());
  for (std::size_t k = 0; k < used.size(); ++k) totals[static_cast<Index>(k) + 1] = plugin.col(used[k]).sum();
  Matrix aux(n, q);
  Vector base(n);
  for (Index r = 0; r < n; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    aux(r, 0) = 1.0;
    for (std::size_t k = 0; k < used.size(); ++k) aux(r, static_cast<Index>(k) + 1) = plugin(i, used[k]);
    base[r] = table.weight(i);
  }

  RakingResult out;
  out.sampled_rows = rows;
  out.calibration = rake(aux, totals, base);

  const DesignData data = build_design_matrix(table, outcome, XSource::observed(), rows);
  const Vector& cw = out.calibration.weights;
  out.calibrated_fit = fit_weighted_logistic(data.matrix, data.response, cw);

  // Linearization: residualize the unit influence on the calibration variables
  // (weighted by the calibrated weights), then apply the stratified formula.
  const InfluenceSet inf = influence_functions(out.calibrated_fit, data.matrix, data.response,
                                               Vector::Ones(n));
  const Matrix gram = aux.transpose() * cw.asDiagonal() * aux;
  const Matrix coef = gram.ldlt().solve(aux.transpose() * cw.asDiagonal() * inf.h);
  const Matrix resid = inf.h - aux * coef;
  const Matrix contributions = cw.asDiagonal() * resid;

  std::vector<int> labels(rows.size());
  auto strata = table.strata();
  for (std::size_t k = 0; k < rows.size(); ++k) labels[k] = strata[static_cast<std::size_t>(rows[k])];
  const auto sampled = table.sampled_per_stratum();
  const auto population = table.stratum_sizes();
  out.variance = stratified_variance(contributions, labels, sampled, population);
  return out;
}

WeightedResult weighted_estimator(const CohortTable& table, const ModelSpec& outcome) {
  const auto rows = table.sampled_rows();
  if (rows.empty()) throw InputError("raking", "phase-2 sample is empty");
  const DesignData data = build_design_matrix(table, outcome, XSource::observed(), rows);
  Vector w(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) w[static_cast<Index>(k)] = table.weight(rows[k]);
  WeightedResult out;
  out.fit = fit_weighted_logistic(data.matrix, data.response, w);
  const InfluenceSet inf = influence_functions(out.fit, data.matrix, data.response, w);
  std::vector<int> labels(rows.size());
  auto strata = table.strata();
  for (std::size_t k = 0; k < rows.size(); ++k) labels[k] = strata[static_cast<std::size_t>(rows[k])];
  out.variance = stratified_variance(inf.h, labels, table.sampled_per_stratum(), table.stratum_sizes());
  return out;
}

}  // namespace multiwave
