#pragma once

// Independent reference computations used by the unit and acceptance tests.
// None of these call the library routine they are used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "multiwave/allocation.hpp"
#include "multiwave/cohort.hpp"

namespace oracle {

using multiwave::Index;
using multiwave::Matrix;
using multiwave::StratumSummary;
using multiwave::Vector;

inline std::vector<StratumSummary> strata(const std::vector<Index>& populations, const std::vector<double>& sds) {
  std::vector<StratumSummary> out(populations.size());
  for (std::size_t h = 0; h < out.size(); ++h) {
    out[h].stratum_id = static_cast<int>(h);
    out[h].population = populations[h];
    out[h].sd = sds[h];
  }
  return out;
}

/// sum_h N_h^2 sd_h^2 (1/n_h - 1/N_h), infinite for an empty stratum with sd > 0.
inline double variance_proxy(const std::vector<StratumSummary>& s, const std::vector<Index>& n) {
  double total = 0.0;
  for (std::size_t h = 0; h < s.size(); ++h) {
    const double a = static_cast<double>(s[h].population) * s[h].sd;
    if (a == 0.0) continue;
    if (n[h] == 0) return std::numeric_limits<double>::infinity();
    total += a * a * (1.0 / static_cast<double>(n[h]) - 1.0 / static_cast<double>(s[h].population));
  }
  return total;
}

struct BruteForce {
  double objective = std::numeric_limits<double>::infinity();
  std::vector<Index> sizes;
};

/// Minimum of the variance proxy over every integer vector in the box that sums to n.
inline BruteForce enumerate_allocations(const std::vector<StratumSummary>& s, Index n,
                                        const std::vector<Index>& floors, const std::vector<Index>& ceilings) {
  BruteForce best;
  std::vector<Index> cur(s.size());
  std::function<void(std::size_t, Index)> rec = [&](std::size_t h, Index left) {
    if (h + 1 == s.size()) {
      if (left < floors[h] || left > ceilings[h]) return;
      cur[h] = left;
      const double v = variance_proxy(s, cur);
      if (v < best.objective) {
        best.objective = v;
        best.sizes = cur;
      }
      return;
    }
    for (Index k = floors[h]; k <= std::min(ceilings[h], left); ++k) {
      cur[h] = k;
      rec(h + 1, left - k);
    }
  };
  rec(0, n);
  return best;
}

/// Rounds the continuous Neyman allocation, clamps to [floor, N_h] and repairs
/// the total one unit at a time by largest remainder.
inline std::vector<Index> round_and_repair(const std::vector<StratumSummary>& s, Index n, Index floor) {
  double denom = 0.0;
  for (const auto& x : s) denom += static_cast<double>(x.population) * x.sd;
  std::vector<double> target(s.size());
  std::vector<Index> out(s.size());
  Index total = 0;
  for (std::size_t h = 0; h < s.size(); ++h) {
    target[h] = static_cast<double>(n) * static_cast<double>(s[h].population) * s[h].sd / denom;
    out[h] = std::clamp<Index>(static_cast<Index>(std::llround(target[h])), std::min(floor, s[h].population),
                               s[h].population);
    total += out[h];
  }
  while (total != n) {
    std::size_t pick = s.size();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t h = 0; h < s.size(); ++h) {
      const double gap = total < n ? target[h] - static_cast<double>(out[h]) : static_cast<double>(out[h]) - target[h];
      const bool movable = total < n ? out[h] < s[h].population : out[h] > std::min(floor, s[h].population);
      if (movable && gap > best) {
        best = gap;
        pick = h;
      }
    }
    out[pick] += total < n ? 1 : -1;
    total += total < n ? 1 : -1;
  }
  return out;
}

/// Central finite-difference gradient.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double rel_step = 1e-6) {
  Vector g(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(x[j]));
    Vector a = x, b = x;
    a[j] += h;
    b[j] -= h;
    g[j] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// Poisson-distance calibration to (N, T) with auxiliaries (1, s): lambda_1 has
/// a closed form given lambda_2, and lambda_2 solves a monotone tilted-mean
/// equation by bisection.
inline std::pair<double, double> rake_two_column(const Vector& s, const Vector& w, double total_n, double total_s) {
  auto tilted_mean = [&](double l2) {
    // Stable: subtract the max exponent.
    double m = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < s.size(); ++i) m = std::max(m, l2 * s[i]);
    double num = 0.0, den = 0.0;
    for (Index i = 0; i < s.size(); ++i) {
      const double e = w[i] * std::exp(l2 * s[i] - m);
      num += e * s[i];
      den += e;
    }
    return num / den;
  };
  const double goal = total_s / total_n;
  double lo = -50.0, hi = 50.0;
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    (tilted_mean(mid) < goal ? lo : hi) = mid;
  }
  const double l2 = 0.5 * (lo + hi);
  double den = 0.0;
  for (Index i = 0; i < s.size(); ++i) den += w[i] * std::exp(l2 * s[i]);
  return {std::log(total_n / den), l2};
}

/// Penalized weighted log-likelihood written out term by term.
inline double logistic_objective(const Matrix& x, const Vector& y, const Vector& w, const Vector& beta,
                                 const Vector& prior_mean = {}, const Vector& prior_var = {}) {
  double f = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const double eta = x.row(i).dot(beta);
    f += w[i] * (y[i] * eta - std::log1p(std::exp(eta)));
  }
  for (Index j = 0; j < prior_mean.size(); ++j) {
    if (std::isfinite(prior_var[j])) f -= 0.5 * (beta[j] - prior_mean[j]) * (beta[j] - prior_mean[j]) / prior_var[j];
  }
  return f;
}

struct LogisticData {
  Matrix x;
  Vector y;
  Vector w;
};

/// Random design with an intercept column, Bernoulli responses from `beta`.
inline LogisticData random_logistic(std::mt19937_64& rng, Index n, const Vector& beta, bool weighted) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LogisticData d{Matrix(n, beta.size()), Vector(n), Vector(n)};
  for (Index i = 0; i < n; ++i) {
    d.x(i, 0) = 1.0;
    for (Index j = 1; j < beta.size(); ++j) d.x(i, j) = z(rng);
    const double p = 1.0 / (1.0 + std::exp(-d.x.row(i).dot(beta)));
    d.y[i] = u(rng) < p ? 1.0 : 0.0;
    d.w[i] = weighted ? 0.5 + 4.5 * u(rng) : 1.0;
  }
  return d;
}

/// Total-variation distance between two integer allocations, in units.
inline double tv_distance(const std::vector<Index>& a, const std::vector<Index>& b) {
  double d = 0.0;
  for (std::size_t h = 0; h < a.size(); ++h) d += std::abs(static_cast<double>(a[h] - b[h]));
  return 0.5 * d;
}

}  // namespace oracle
