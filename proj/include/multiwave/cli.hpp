#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "multiwave/cohort.hpp"

namespace multiwave {

/// Resolved options of one CLI invocation (file values overridden by flags).
struct RunConfig {
  std::string mode;
  std::string output_dir = ".";
  std::uint64_t seed = 20240601;

  // design
  std::string input_csv;
  std::string outcome = "Y";
  std::string expensive = "X";
  std::string outcome_terms;
  std::string imputation_terms;
  std::vector<std::string> strata;
  /// Outcome main effect whose variance the design targets; defaults to X.
  std::string target;
  std::string design = "optimal-full-data";
  Index n = 0;
  std::string fraction;
  Index floor = 2;
  std::string priors_csv;

  // simulate
  Index cohort_size = 1000;
  int reps = 1000;
  double beta1 = 1.0;
  double sensitivity = 0.8;
  double specificity = 0.8;
  double exposure_prev = 0.15;
  std::vector<std::string> fractions{"1/6", "2/6", "3/6", "4/6", "5/6"};
  std::vector<std::string> designs;
  int threads = 0;

  /// Canonical `key=value` text of every field that affects outputs.
  std::string canonical() const;
  /// 16 hex digits identifying `canonical()`.
  std::string hash() const;
};

/// Writes allocation.csv and waves.log, plus estimate.csv and weights.csv
/// when the final analysis can be run.
void cmd_design(const RunConfig& config);

/// Writes metrics.csv.
void cmd_simulate(const RunConfig& config);

/// Parses arguments and dispatches. Returns 0 on success, 2 on input or
/// configuration errors and 3 on numerical failures.
int run_cli(int argc, char** argv);

}  // namespace multiwave
