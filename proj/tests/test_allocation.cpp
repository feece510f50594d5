#include <doctest.h>

#include <numeric>
#include <random>

#include "multiwave/allocation.hpp"
#include "multiwave/errors.hpp"
#include "oracles.hpp"

using namespace multiwave;

namespace {

std::vector<Index> sizes_of(const std::vector<StratumSummary>& s) {
  std::vector<Index> out;
  for (const auto& x : s) out.push_back(x.population);
  return out;
}

}  // namespace

TEST_CASE("continuous Neyman allocation is proportional to N_h sd_h") {
  const auto s = oracle::strata({100, 200, 50}, {1.0, 0.5, 4.0});
  const auto n = neyman_continuous(s, 60);
  CHECK(n[0] == doctest::Approx(60.0 * 100 / 400));
  CHECK(n[1] == doctest::Approx(60.0 * 100 / 400));
  CHECK(n[2] == doctest::Approx(60.0 * 200 / 400));
  CHECK_THROWS_AS(neyman_continuous(oracle::strata({10, 10}, {0.0, 0.0}), 5), InputError);
}

TEST_CASE("exact allocation matches exhaustive search on small instances") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> hdist(1, 4), ndist(1, 8), fdist(0, 2);
  std::uniform_real_distribution<double> sdist(0.0, 3.0);
  int checked = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    const int H = hdist(rng);
    std::vector<Index> N;
    std::vector<double> sd;
    std::vector<Index> floors, ceilings;
    for (int h = 0; h < H; ++h) {
      N.push_back(ndist(rng));
      // Some zero sds and some exact ties.
      const double r = sdist(rng);
      sd.push_back(r < 0.3 ? 0.0 : (r < 0.6 ? 1.0 : r));
      floors.push_back(std::min<Index>(fdist(rng), N.back()));
      ceilings.push_back(N.back());
    }
    const Index lo = std::accumulate(floors.begin(), floors.end(), Index{0});
    const Index hi = std::min<Index>(12, std::accumulate(N.begin(), N.end(), Index{0}));
    if (lo > hi) continue;
    const Index n = std::uniform_int_distribution<Index>(lo, hi)(rng);
    const auto s = oracle::strata(N, sd);
    const auto brute = oracle::enumerate_allocations(s, n, floors, ceilings);
    const auto got = exact_integer_allocation(s, n, floors, ceilings);
    REQUIRE(got.total() == n);
    for (int h = 0; h < H; ++h) {
      REQUIRE(got.sizes[h] >= floors[h]);
      REQUIRE(got.sizes[h] <= ceilings[h]);
    }
    const double v = oracle::variance_proxy(s, got.sizes);
    if (std::isinf(brute.objective)) {
      CHECK(std::isinf(v));
    } else {
      CHECK(v <= brute.objective * (1.0 + 1e-12) + 1e-15);
    }
    ++checked;
  }
  CHECK(checked > 2000);
}

TEST_CASE("exact allocation never loses to rounded Neyman") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<Index> ndist(3, 400);
  std::uniform_real_distribution<double> sdist(0.05, 5.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int H = std::uniform_int_distribution<int>(2, 10)(rng);
    std::vector<Index> N;
    std::vector<double> sd;
    for (int h = 0; h < H; ++h) {
      N.push_back(ndist(rng));
      sd.push_back(sdist(rng));
    }
    const Index total = std::accumulate(N.begin(), N.end(), Index{0});
    const Index n = std::uniform_int_distribution<Index>(2 * H, total)(rng);
    const auto s = oracle::strata(N, sd);
    const auto got = exact_integer_allocation(s, n, 2);
    const auto rounded = oracle::round_and_repair(s, n, 2);
    CHECK(oracle::variance_proxy(s, got.sizes) <= oracle::variance_proxy(s, rounded) * (1.0 + 1e-12));
  }
}

TEST_CASE("exact allocation is invariant to rescaling the sd") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const int H = std::uniform_int_distribution<int>(2, 8)(rng);
    std::vector<Index> N;
    std::vector<double> sd, scaled;
    for (int h = 0; h < H; ++h) {
      N.push_back(std::uniform_int_distribution<Index>(2, 300)(rng));
      // Include exact ties, which exercise the tie-breaking rule.
      sd.push_back(trial % 3 == 0 ? 1.0 : std::uniform_real_distribution<double>(0.1, 2.0)(rng));
      scaled.push_back(sd.back() * 7.3);
    }
    const Index total = std::accumulate(N.begin(), N.end(), Index{0});
    const Index n = std::uniform_int_distribution<Index>(2 * H, total)(rng);
    CHECK(exact_integer_allocation(oracle::strata(N, sd), n, 2).sizes ==
          exact_integer_allocation(oracle::strata(N, scaled), n, 2).sizes);
  }
}

TEST_CASE("greedy allocations are nested in the budget") {
  const auto s = oracle::strata({40, 25, 300, 7, 90}, {0.3, 2.0, 0.1, 5.0, 1.1});
  auto prev = exact_integer_allocation(s, 10, 2).sizes;
  for (Index n = 11; n <= 462; ++n) {
    const auto cur = exact_integer_allocation(s, n, 2).sizes;
    for (std::size_t h = 0; h < cur.size(); ++h) CHECK(cur[h] >= prev[h]);
    prev = cur;
  }
}

TEST_CASE("ties go to the lowest stratum index") {
  const auto s = oracle::strata({10, 10, 10}, {1.0, 1.0, 1.0});
  CHECK(exact_integer_allocation(s, 7, 0).sizes == std::vector<Index>{3, 2, 2});
}

TEST_CASE("infeasible budgets are reported") {
  const auto s = oracle::strata({10, 10, 10}, {1.0, 1.0, 1.0});
  try {
    exact_integer_allocation(s, 5, 2);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("floor infeasible") != std::string::npos);
  }
  try {
    exact_integer_allocation(s, 31, 2);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("ceiling infeasible") != std::string::npos);
  }
  CHECK_THROWS_AS(balanced_allocation(s, 5, 2), InputError);
}

TEST_CASE("a stratum with zero sd only receives its floor") {
  const auto s = oracle::strata({50, 50, 50}, {0.0, 1.0, 2.0});
  const auto a = exact_integer_allocation(s, 30, 2);
  CHECK(a.sizes[0] == 2);
  CHECK(a.total() == 30);
}

TEST_CASE("wave-2 allocation tops up the combined sample") {
  const auto s = oracle::strata({100, 100}, {1.0, 1.0});
  Allocation target;
  target.sizes = {10, 10};
  const std::vector<Index> already{14, 2};
  CHECK(wave2_allocation(target, s, already) == std::vector<Index>{0, 4});

  // Never negative, and the combined sample is optimal within the box.
  const auto s2 = oracle::strata({30, 40, 50}, {3.0, 1.0, 0.5});
  Allocation t2;
  t2.sizes = {10, 10, 10};
  const std::vector<Index> done{2, 12, 2};
  const auto extra = wave2_allocation(t2, s2, done);
  std::vector<Index> combined(3), ceilings{30, 40, 50};
  for (int h = 0; h < 3; ++h) {
    CHECK(extra[h] >= 0);
    combined[h] = done[h] + extra[h];
  }
  const auto brute = oracle::enumerate_allocations(s2, 30, done, ceilings);
  CHECK(oracle::variance_proxy(s2, combined) == doctest::Approx(brute.objective).epsilon(1e-12));
}

TEST_CASE("balanced allocation splits evenly with remainder to low indices") {
  const auto eight = oracle::strata({100, 100, 100, 100, 100, 100, 100, 100}, std::vector<double>(8, 1.0));
  CHECK(balanced_allocation(eight, 400).sizes == std::vector<Index>(8, 50));
  CHECK(balanced_allocation(oracle::strata({50, 50, 50}, {1, 1, 1}), 10).sizes == std::vector<Index>{4, 3, 3});
  // A small stratum is censused and its share re-split.
  CHECK(balanced_allocation(oracle::strata({3, 100, 100}, {1, 1, 1}), 90).sizes == std::vector<Index>{3, 44, 43});
}

TEST_CASE("proportional allocation reproduces the stratum shares") {
  const std::vector<Index> N{1257, 1769, 107, 113, 223, 284, 84, 78};
  const auto s = oracle::strata(N, std::vector<double>(8, 0.0));
  const auto a = proportional_allocation(s, 720);
  const std::vector<double> shares{0.32, 0.45, 0.03, 0.03, 0.06, 0.07, 0.02, 0.02};
  CHECK(a.total() == 720);
  for (std::size_t h = 0; h < N.size(); ++h) {
    CHECK(std::abs(static_cast<double>(a.sizes[h]) / 720.0 - shares[h]) < 0.005 + 1.0 / 720.0);
  }
  CHECK(sizes_of(s) == N);
}
