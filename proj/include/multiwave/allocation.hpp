#pragma once

#include <span>
#include <vector>

#include "multiwave/cohort.hpp"

namespace multiwave {

/// Integer phase-2 sample sizes per stratum with the box they were solved in.
struct Allocation {
  std::vector<Index> sizes;
  /// sum_h N_h^2 sd_h^2 (1/n_h - 1/N_h) at `sizes`.
  double objective = 0.0;
  std::vector<Index> floors;
  std::vector<Index> ceilings;

  Index total() const;
};

/// Neyman allocation n_h = n N_h sd_h / sum_k N_k sd_k (real valued).
std::vector<double> neyman_continuous(std::span<const StratumSummary> strata, Index n);

/// Variance proxy sum_h N_h^2 sd_h^2 (1/n_h - 1/N_h); infinite when a stratum
/// with positive sd gets no units.
double allocation_objective(std::span<const StratumSummary> strata, std::span<const Index> sizes);

/// Exact integer minimizer of `allocation_objective` subject to
/// floors <= n_h <= ceilings and sum n_h = n. Starts from the floors and hands
/// out one unit at a time to the stratum with the largest N_h sd_h /
/// sqrt(n_h (n_h + 1)); ties go to the lowest stratum index.
Allocation exact_integer_allocation(std::span<const StratumSummary> strata, Index n,
                                    std::span<const Index> floors,
                                    std::span<const Index> ceilings);

/// Same with a common floor and ceilings N_h.
Allocation exact_integer_allocation(std::span<const StratumSummary> strata, Index n,
                                    Index floor = 2);

/// Units to add to `already` so the combined sample is optimal for the total
/// of `target`, using the updated sd in `strata`. Never negative.
std::vector<Index> wave2_allocation(const Allocation& target,
                                    std::span<const StratumSummary> strata,
                                    std::span<const Index> already);

/// Proportional-to-N_h integer allocation (Huntington-Hill rounding) with a floor.
Allocation proportional_allocation(std::span<const StratumSummary> strata, Index n,
                                   Index floor = 2);

/// Equal allocation n/H with the remainder to the lowest indices. Strata that
/// cannot absorb their share are censused and the excess is re-split among
/// the others.
Allocation balanced_allocation(std::span<const StratumSummary> strata, Index n, Index floor = 2);

}  // namespace multiwave
