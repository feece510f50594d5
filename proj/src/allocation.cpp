#include "multiwave/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "multiwave/errors.hpp"

namespace multiwave {

namespace {

double weight_of(const StratumSummary& s) {
  return static_cast<double>(s.population) * s.sd;
}

double priority(const StratumSummary& s, Index n_h) {
  const double a = weight_of(s);
  if (a <= 0.0) return 0.0;
  if (n_h == 0) return std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(n_h);
  return a / std::sqrt(n * (n + 1.0));
}

void check_strata(std::span<const StratumSummary> strata) {
  if (strata.empty()) throw InputError("allocation", "no strata");
  for (const auto& s : strata) {
    if (s.population <= 0) throw InputError("allocation", "every stratum needs N_h > 0");
    if (!(s.sd >= 0.0) || !std::isfinite(s.sd)) {
      throw InputError("allocation", "stratum sd must be finite and non-negative");
    }
  }
}

}  // namespace

Index Allocation::total() const { return std::accumulate(sizes.begin(), sizes.end(), Index{0}); }

std::vector<double> neyman_continuous(std::span<const StratumSummary> strata, Index n) {
  check_strata(strata);
  if (n <= 0) throw InputError("allocation", "sample size must be positive");
  double denom = 0.0;
  for (const auto& s : strata) denom += weight_of(s);
  if (denom <= 0.0) {
    throw InputError("allocation", "every stratum has sd 0; nothing to allocate on");
  }
  std::vector<double> out;
  out.reserve(strata.size());
  for (const auto& s : strata) out.push_back(static_cast<double>(n) * weight_of(s) / denom);
  return out;
}

double allocation_objective(std::span<const StratumSummary> strata, std::span<const Index> sizes) {
  if (strata.size() != sizes.size()) throw InputError("allocation", "size vector has wrong length");
  double total = 0.0;
  for (std::size_t h = 0; h < strata.size(); ++h) {
    const double a = weight_of(strata[h]);
    if (a == 0.0) continue;
    if (sizes[h] == 0) return std::numeric_limits<double>::infinity();
    const double N = static_cast<double>(strata[h].population);
    total += a * a * (1.0 / static_cast<double>(sizes[h]) - 1.0 / N);
  }
  return total;
}

Allocation exact_integer_allocation(std::span<const StratumSummary> strata, Index n,
                                    std::span<const Index> floors,
                                    std::span<const Index> ceilings) {
  check_strata(strata);
  const auto H = strata.size();
  if (floors.size() != H || ceilings.size() != H) {
    throw InputError("allocation", "floors and ceilings need one entry per stratum");
  }
  Index floor_total = 0;
  Index ceiling_total = 0;
  for (std::size_t h = 0; h < H; ++h) {
    if (floors[h] < 0 || floors[h] > ceilings[h]) {
      throw InputError("allocation", "floor infeasible: stratum " + std::to_string(h) +
                                         " has floor " + std::to_string(floors[h]) +
                                         " above its ceiling " + std::to_string(ceilings[h]));
    }
    if (ceilings[h] > strata[h].population) {
      throw InputError("allocation", "ceiling of stratum " + std::to_string(h) + " exceeds N_h");
    }
    floor_total += floors[h];
    ceiling_total += ceilings[h];
  }
  if (n < floor_total) {
    throw InputError("allocation", "floor infeasible: floors sum to " + std::to_string(floor_total) +
                                       " but the budget is " + std::to_string(n));
  }
  if (n > ceiling_total) {
    throw InputError("allocation", "ceiling infeasible: ceilings sum to " +
                                       std::to_string(ceiling_total) + " but the budget is " +
                                       std::to_string(n));
  }

  Allocation out;
  out.sizes.assign(floors.begin(), floors.end());
  out.floors.assign(floors.begin(), floors.end());
  out.ceilings.assign(ceilings.begin(), ceilings.end());

  for (Index unit = floor_total; unit < n; ++unit) {
    std::size_t best = H;
    double best_priority = -1.0;
    for (std::size_t h = 0; h < H; ++h) {
      if (out.sizes[h] >= ceilings[h]) continue;
      const double p = priority(strata[h], out.sizes[h]);
      // Relative tolerance so that rescaled inputs keep the same tie pattern.
      const bool better = best == H ||
                          (std::isinf(p) && !std::isinf(best_priority)) ||
                          (!std::isinf(p) && !std::isinf(best_priority) &&
                           p > best_priority * (1.0 + 1e-12) + 1e-300);
      if (better) {
        best = h;
        best_priority = p;
      }
    }
    ++out.sizes[best];
  }
  out.objective = allocation_objective(strata, out.sizes);
  return out;
}

Allocation exact_integer_allocation(std::span<const StratumSummary> strata, Index n, Index floor) {
  check_strata(strata);
  std::vector<Index> floors, ceilings;
  for (const auto& s : strata) {
    floors.push_back(std::min(floor, s.population));
    ceilings.push_back(s.population);
  }
  return exact_integer_allocation(strata, n, floors, ceilings);
}

std::vector<Index> wave2_allocation(const Allocation& target, std::span<const StratumSummary> strata,
                                    std::span<const Index> already) {
  check_strata(strata);
  if (already.size() != strata.size()) {
    throw InputError("allocation", "already-sampled counts need one entry per stratum");
  }
  const Index n = target.total();
  const Index taken = std::accumulate(already.begin(), already.end(), Index{0});
  if (taken > n) {
    throw InputError("allocation", "already sampled " + std::to_string(taken) +
                                       " units, more than the budget " + std::to_string(n));
  }
  std::vector<Index> floors(already.begin(), already.end());
  std::vector<Index> ceilings;
  for (const auto& s : strata) ceilings.push_back(s.population);
  const Allocation combined = exact_integer_allocation(strata, n, floors, ceilings);
  std::vector<Index> extra(strata.size());
  for (std::size_t h = 0; h < strata.size(); ++h) extra[h] = combined.sizes[h] - already[h];
  return extra;
}

Allocation proportional_allocation(std::span<const StratumSummary> strata, Index n, Index floor) {
  std::vector<StratumSummary> equal(strata.begin(), strata.end());
  for (auto& s : equal) s.sd = 1.0;
  Allocation out = exact_integer_allocation(equal, n, floor);
  out.objective = allocation_objective(strata, out.sizes);
  return out;
}

Allocation balanced_allocation(std::span<const StratumSummary> strata, Index n, Index floor) {
  check_strata(strata);
  const auto H = strata.size();
  Allocation out;
  for (const auto& s : strata) {
    out.floors.push_back(std::min(floor, s.population));
    out.ceilings.push_back(s.population);
  }
  const Index floor_total = std::accumulate(out.floors.begin(), out.floors.end(), Index{0});
  const Index ceiling_total = std::accumulate(out.ceilings.begin(), out.ceilings.end(), Index{0});
  if (n < floor_total) {
    throw InputError("allocation", "floor infeasible: floors sum to " + std::to_string(floor_total) +
                                       " but the budget is " + std::to_string(n));
  }
  if (n > ceiling_total) {
    throw InputError("allocation", "ceiling infeasible: budget exceeds the cohort size");
  }

  out.sizes.assign(H, 0);
  std::vector<char> capped(H, 0);
  Index remaining = n;
  for (;;) {
    Index open = 0;
    for (std::size_t h = 0; h < H; ++h) open += capped[h] ? 0 : 1;
    const Index share = remaining / open;
    Index extra = remaining % open;
    bool newly_capped = false;
    for (std::size_t h = 0; h < H; ++h) {
      if (capped[h]) continue;
      const Index want = share + (extra > 0 ? 1 : 0);
      if (want > out.ceilings[h]) {
        out.sizes[h] = out.ceilings[h];
        capped[h] = 1;
        remaining -= out.ceilings[h];
        newly_capped = true;
        break;
      }
      if (extra > 0) --extra;
    }
    if (newly_capped) continue;
    extra = remaining % open;
    for (std::size_t h = 0; h < H; ++h) {
      if (capped[h]) continue;
      out.sizes[h] = share + (extra > 0 ? 1 : 0);
      if (extra > 0) --extra;
    }
    break;
  }
  out.objective = allocation_objective(strata, out.sizes);
  return out;
}

}  // namespace multiwave
