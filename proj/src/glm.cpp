#include "multiwave/glm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <limits>

namespace multiwave {

namespace {

struct Penalty {
  Vector precision;
  Vector mean;
  bool active = false;
};

Penalty make_penalty(const std::optional<PriorSpec>& prior, Index p) {
  Penalty pen{Vector::Zero(p), Vector::Zero(p), false};
  if (!prior) return pen;
  prior->validate(p);
  for (Index j = 0; j < p; ++j) {
    if (std::isfinite(prior->variance[j])) {
      pen.precision[j] = 1.0 / prior->variance[j];
      pen.mean[j] = prior->mean[j];
      pen.active = true;
    }
  }
  return pen;
}

double softplus(double eta) {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

struct State {
  Vector eta;
  Vector mu;
  double loglik = 0.0;
  double objective = 0.0;
  bool capped = false;
};

State evaluate(const Matrix& x, const Vector& y, const Vector& w, const Penalty& pen,
               const Vector& beta, double cap) {
  State s;
  s.eta = x * beta;
  s.mu.resize(s.eta.size());
  for (Index i = 0; i < s.eta.size(); ++i) {
    double eta = s.eta[i];
    if (std::abs(eta) > cap) {
      s.capped = true;
      eta = std::copysign(cap, eta);
      s.eta[i] = eta;
    }
    s.mu[i] = expit(eta);
    s.loglik += w[i] * (y[i] * eta - softplus(eta));
  }
  const Vector diff = beta - pen.mean;
  s.objective = s.loglik - 0.5 * diff.cwiseProduct(diff).dot(pen.precision);
  return s;
}

void check_inputs(const Matrix& x, const Vector& y, const Vector& w) {
  if (x.rows() != y.size() || x.rows() != w.size()) {
    throw InputError("glm", "design, response and weights differ in length");
  }
  if (x.rows() == 0) throw InputError("glm", "no rows to fit");
  for (Index i = 0; i < y.size(); ++i) {
    if (!(y[i] >= 0.0 && y[i] <= 1.0)) throw InputError("glm", "response must lie in [0, 1]");
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
      throw InputError("glm", "weights must be positive and finite");
    }
  }
  if (!x.allFinite()) throw InputError("glm", "design matrix has non-finite entries");
}

Matrix information_at(const Matrix& x, const Vector& w, const Vector& mu, const Penalty& pen) {
  const Vector v = w.cwiseProduct(mu.cwiseProduct((1.0 - mu.array()).matrix()));
  Matrix info = x.transpose() * v.asDiagonal() * x;
  info.diagonal() += pen.precision;
  return info;
}

double scaled_score(const Vector& g, const Matrix& info) {
  double worst = 0.0;
  for (Index j = 0; j < g.size(); ++j) {
    worst = std::max(worst, std::abs(g[j]) / std::sqrt(std::max(1.0, info(j, j))));
  }
  return worst;
}

std::string format_sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

double expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double penalized_objective(const Matrix& x, const Vector& y, const Vector& w,
                           const std::optional<PriorSpec>& prior, const Vector& beta) {
  check_inputs(x, y, w);
  return evaluate(x, y, w, make_penalty(prior, x.cols()), beta,
                  std::numeric_limits<double>::infinity())
      .objective;
}

Vector penalized_score(const Matrix& x, const Vector& y, const Vector& w,
                       const std::optional<PriorSpec>& prior, const Vector& beta) {
  check_inputs(x, y, w);
  const Penalty pen = make_penalty(prior, x.cols());
  const State s = evaluate(x, y, w, pen, beta, std::numeric_limits<double>::infinity());
  return x.transpose() * w.cwiseProduct(y - s.mu) -
         pen.precision.cwiseProduct(beta - pen.mean);
}

Matrix logistic_information(const Matrix& x, const Vector& w,
                            const std::optional<PriorSpec>& prior, const Vector& beta) {
  const Penalty pen = make_penalty(prior, x.cols());
  Vector mu = x * beta;
  for (Index i = 0; i < mu.size(); ++i) mu[i] = expit(mu[i]);
  return information_at(x, w, mu, pen);
}

FitResult fit_weighted_logistic(const Matrix& x, const Vector& y, const Vector& w,
                                const std::optional<PriorSpec>& prior, const FitOptions& options) {
  check_inputs(x, y, w);
  const Index p = x.cols();
  const Penalty pen = make_penalty(prior, p);

  FitResult fit;
  fit.beta = pen.mean;
  State state = evaluate(x, y, w, pen, fit.beta, options.eta_cap);
  fit.objective_trace.push_back(state.objective);

  auto finish = [&](bool converged) {
    fit.converged = converged;
    fit.information = information_at(x, w, state.mu, pen);
    fit.deviance = -2.0 * state.loglik;
    fit.objective = state.objective;
  };
  auto guard_separation = [&]() {
    if (state.capped && !pen.active) {
      finish(false);
      throw SeparationError(
          "linear predictor reached the cap of " + std::to_string(options.eta_cap) +
              " (separation); an informative prior is required",
          fit);
    }
  };

  for (;;) {
    const Vector g = x.transpose() * w.cwiseProduct(y - state.mu) -
                     pen.precision.cwiseProduct(fit.beta - pen.mean);
    const Matrix info = information_at(x, w, state.mu, pen);
    Eigen::LLT<Matrix> llt(info);
    if (llt.info() != Eigen::Success) {
      finish(false);
      throw NumericalError("glm", "information matrix is singular (rank-deficient design)");
    }
    const Vector step = llt.solve(g);
    double rel = 0.0;
    for (Index j = 0; j < p; ++j) {
      rel = std::max(rel, std::abs(step[j]) / (1.0 + std::abs(fit.beta[j])));
    }
    const double score = scaled_score(g, info);
    if (score < options.score_tolerance && rel < options.step_tolerance) {
      finish(true);
      return fit;
    }
    if (fit.iterations >= options.max_iterations) {
      finish(false);
      throw ConvergenceError(
          "IRLS did not converge in " + std::to_string(options.max_iterations) +
              " iterations (scaled score " + format_sci(score) + ", relative step " +
              format_sci(rel) + ")",
          fit);
    }

    // Near the optimum the gain of a Newton step is below the rounding error of
    // the objective, so changes within that error count as ascent.
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(state.objective));
    double t = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      const Vector candidate = fit.beta + t * step;
      State next = evaluate(x, y, w, pen, candidate, options.eta_cap);
      if (next.objective >= state.objective - slack) {
        fit.beta = candidate;
        state = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No ascent left at machine precision.
      if (score < std::sqrt(options.score_tolerance)) {
        finish(true);
        return fit;
      }
      finish(false);
      throw ConvergenceError("step halving failed to increase the objective", fit);
    }
    ++fit.iterations;
    fit.objective_trace.push_back(state.objective);
    guard_separation();
  }
}

InfluenceSet influence_functions(const FitResult& fit, const Matrix& x, const Vector& y,
                                 const Vector& w, Index target_column) {
  check_inputs(x, y, w);
  if (!fit.converged) throw NumericalError("glm", "influence functions need a converged fit");
  if (target_column < 0 || target_column >= x.cols()) {
    throw InputError("glm", "target column out of range");
  }
  Eigen::LLT<Matrix> llt(fit.information);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("glm", "information matrix is singular");
  }
  Vector mu = x * fit.beta;
  for (Index i = 0; i < mu.size(); ++i) mu[i] = expit(mu[i]);
  const Vector resid = w.cwiseProduct(y - mu);
  // h = diag(resid) X I^{-1}; I is symmetric.
  Matrix h = llt.solve((resid.asDiagonal() * x).transpose()).transpose();
  return {std::move(h), target_column};
}

Matrix stratified_variance(const Matrix& contributions, std::span<const int> strata,
                           std::span<const Index> sampled, std::span<const Index> population) {
  if (static_cast<Index>(strata.size()) != contributions.rows()) {
    throw InputError("glm", "one stratum label is required per contribution row");
  }
  if (sampled.size() != population.size()) {
    throw InputError("glm", "sampled and population counts differ in length");
  }
  const auto H = sampled.size();
  const Index p = contributions.cols();
  std::vector<Index> seen(H, 0);
  for (int h : strata) {
    if (h < 0 || static_cast<std::size_t>(h) >= H) throw InputError("glm", "stratum label out of range");
    ++seen[static_cast<std::size_t>(h)];
  }

  Matrix mean = Matrix::Zero(static_cast<Index>(H), p);
  for (Index i = 0; i < contributions.rows(); ++i) {
    mean.row(strata[static_cast<std::size_t>(i)]) += contributions.row(i);
  }
  Matrix var = Matrix::Zero(p, p);
  std::vector<Matrix> within(H, Matrix::Zero(p, p));
  for (std::size_t h = 0; h < H; ++h) {
    if (seen[h] != sampled[h]) {
      throw InputError("glm", "stratum " + std::to_string(h) + " row count does not match n_h");
    }
    if (seen[h] > 0) mean.row(static_cast<Index>(h)) /= static_cast<double>(seen[h]);
  }
  for (Index i = 0; i < contributions.rows(); ++i) {
    const auto h = static_cast<std::size_t>(strata[static_cast<std::size_t>(i)]);
    const Eigen::RowVectorXd d = contributions.row(i) - mean.row(static_cast<Index>(h));
    within[h].noalias() += d.transpose() * d;
  }
  for (std::size_t h = 0; h < H; ++h) {
    const double fpc = 1.0 - static_cast<double>(sampled[h]) / static_cast<double>(population[h]);
    if (fpc <= 0.0) continue;
    if (sampled[h] < 2) {
      throw NumericalError("glm", "stratum " + std::to_string(h) +
                                      " has fewer than 2 sampled units; variance is undefined");
    }
    const double nh = static_cast<double>(sampled[h]);
    var += fpc * nh / (nh - 1.0) * within[h];
  }
  return var;
}

Matrix sandwich_variance(const FitResult& fit, const InfluenceSet& influence,
                         std::span<const int> strata, std::span<const Index> sampled,
                         std::span<const Index> population) {
  if (!fit.converged) throw NumericalError("glm", "variance needs a converged fit");
  return stratified_variance(influence.h, strata, sampled, population);
}

}  // namespace multiwave
