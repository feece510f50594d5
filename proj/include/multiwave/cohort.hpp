#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace multiwave {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Which phase-1 columns play which part in the models. `expensive` names the
/// phase-2 variable X; it is not a phase-1 column.
struct ColumnRoles {
  std::string outcome;
  std::vector<std::string> covariates;
  std::vector<std::string> auxiliaries;
  std::string expensive = "X";
};

/// Per-stratum bookkeeping: phase-1 size, phase-2 size and the standard
/// deviation of the target influence function within the stratum.
struct StratumSummary {
  int stratum_id = 0;
  Index population = 0;
  Index sampled = 0;
  double sd = 0.0;
};

/// A two-phase cohort. Phase-1 columns are shared and immutable; the phase-2
/// state (R, observed X, weights) and imputation shadow columns are carried by
/// value, and every mutation returns a new table.
class CohortTable {
 public:
  CohortTable(std::vector<std::string> names, std::vector<Vector> columns, ColumnRoles roles);

  Index n_rows() const { return phase1_->n_rows; }
  const ColumnRoles& roles() const { return phase1_->roles; }

  bool has_column(const std::string& name) const;
  const Vector& column(const std::string& name) const;
  const std::vector<std::string>& column_names() const { return phase1_->names; }
  const Vector& outcome() const { return column(roles().outcome); }

  // Stratification (frozen once assigned).
  bool is_stratified() const { return strata_ != nullptr; }
  std::span<const int> strata() const;
  int n_strata() const { return n_strata_; }
  std::vector<Index> stratum_sizes() const;
  std::vector<Index> sampled_per_stratum() const;
  std::vector<std::vector<Index>> rows_by_stratum() const;

  // Phase-2 state.
  bool in_phase2(Index i) const { return phase2_[static_cast<std::size_t>(i)] != 0; }
  std::vector<Index> sampled_rows() const;
  Index n_sampled() const;
  std::optional<double> expensive(Index i) const;
  /// Observed X with NaN where R = 0.
  const Vector& expensive_values() const { return x_; }
  /// Sampling weight 1/pi; NaN where R = 0.
  double weight(Index i) const { return weight_[i]; }
  const Vector& weights() const { return weight_; }

  // Imputation shadow columns.
  bool has_imputation(const std::string& name) const;
  const Vector& imputation(const std::string& name) const;

  // Copy-on-write derivations.
  CohortTable with_strata(std::vector<int> labels) const;
  /// Adds rows to phase 2 and records their measured X. Rows already sampled
  /// are rejected. Weights of the new rows are left undefined until
  /// `reweighted_by_stratum` or `with_weights` is applied.
  CohortTable with_phase2(std::span<const Index> rows, std::span<const double> x_values) const;
  /// Replaces the weights of all sampled rows (length n_rows, ignored where R = 0).
  CohortTable with_weights(const Vector& weights) const;
  /// w_i = N_h / n_h for every sampled row: the stratified-SRS weight of the
  /// combined sample.
  CohortTable reweighted_by_stratum() const;
  CohortTable with_imputation(const std::string& name, Vector values) const;

 private:
  struct Phase1 {
    Index n_rows = 0;
    std::vector<std::string> names;
    std::vector<Vector> columns;
    std::map<std::string, std::size_t> lookup;
    ColumnRoles roles;
  };

  std::shared_ptr<const Phase1> phase1_;
  std::shared_ptr<const std::vector<int>> strata_;
  int n_strata_ = 0;
  std::vector<std::uint8_t> phase2_;
  Vector x_;
  Vector weight_;
  std::map<std::string, std::shared_ptr<const Vector>> imputations_;
};

/// One model term. Spline terms expand into the pair (min(a,k), max(a-k,0)).
struct Term {
  enum class Kind { main, interaction, spline };

  Kind kind = Kind::main;
  std::string column;
  std::string other;
  double knot = 0.0;

  static Term main_effect(std::string column);
  static Term interaction(std::string a, std::string b);
  static Term linear_spline(std::string column, double knot);

  std::vector<std::string> coefficient_names() const;
  bool operator==(const Term&) const = default;
};

/// Parses a comma-separated term list: `a`, `a*b`, `spline(a,k)`.
std::vector<Term> parse_terms(const std::string& text);

/// Logistic regression structure: response column plus ordered terms. The
/// intercept is always present and comes first.
struct ModelSpec {
  std::string response;
  std::vector<Term> terms;

  Index width() const;
  std::vector<std::string> coefficient_names() const;
  /// Index of the coefficient for the main effect of `column`.
  Index coefficient_index(const std::string& column) const;
};

/// Independent normal priors, one per coefficient. Infinite variance is flat.
struct PriorSpec {
  Vector mean;
  Vector variance;

  static PriorSpec flat(Index width);
  static PriorSpec normal(Vector mean, double variance);

  Index width() const { return mean.size(); }
  bool is_flat() const;
  bool is_fully_informative() const;
  /// Throws InputError on length mismatch or non-positive variances.
  void validate(Index width) const;
};

/// Where X comes from when a model references it.
struct XSource {
  enum class Kind { observed, imputed };
  Kind kind = Kind::observed;
  std::string column;

  static XSource observed() { return {}; }
  static XSource imputed(std::string column) { return {Kind::imputed, std::move(column)}; }
};

struct DesignData {
  Matrix matrix;
  Vector response;
};

/// Builds the design matrix (intercept first, then terms in order) and the
/// response for the listed rows, or every row when `rows` is empty.
DesignData build_design_matrix(const CohortTable& table, const ModelSpec& spec,
                               const XSource& x_source, std::span<const Index> rows = {});

/// The design matrix alone; the response column is not touched.
Matrix build_predictors(const CohortTable& table, const ModelSpec& spec, const XSource& x_source,
                        std::span<const Index> rows = {});

struct Stratification {
  std::vector<int> labels;
  std::vector<StratumSummary> summaries;
  /// Cell values, one row per stratum, in stratifier column order.
  std::vector<std::vector<double>> cells;
};

/// Cross-classifies the listed discrete columns. Strata are the occupied
/// cells in lexicographic order.
Stratification stratify(const CohortTable& table, const std::vector<std::string>& columns);

/// Convenience: stratifies and returns the table carrying the labels.
CohortTable stratified(const CohortTable& table, const std::vector<std::string>& columns);

/// Group counts per stratum with the given sd values (zeros when omitted).
std::vector<StratumSummary> summarize_strata(const CohortTable& table,
                                             std::span<const double> sd = {});

/// Population standard deviation of `values` within each stratum.
std::vector<double> stratum_sd(const CohortTable& table, const Vector& values);

// CSV ingestion.

struct CsvCohort {
  CohortTable table;
  /// Fully observed X, when the file carries X on every row.
  std::optional<Vector> full_x;
};

/// Reads a headered CSV. Every column except X is parsed as numeric; X may
/// contain empty fields. A fully observed X is returned in `full_x` and the
/// table starts with an empty phase 2; a partially observed X marks the
/// observed rows as phase 2.
CsvCohort read_cohort_csv(const std::string& path, const ColumnRoles& roles);

}  // namespace multiwave
