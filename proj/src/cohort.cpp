#include "multiwave/cohort.hpp"

#include <cmath>
#include <limits>

#include "multiwave/errors.hpp"

namespace multiwave {

namespace {
constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
}

CohortTable::CohortTable(std::vector<std::string> names, std::vector<Vector> columns,
                         ColumnRoles column_roles) {
  if (names.size() != columns.size()) {
    throw InputError("data-model", "column names and columns differ in length");
  }
  auto data = std::make_shared<Phase1>();
  data->n_rows = columns.empty() ? 0 : columns.front().size();
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].size() != data->n_rows) {
      throw InputError("data-model", "column '" + names[j] + "' has the wrong length");
    }
    if (!data->lookup.emplace(names[j], j).second) {
      throw InputError("data-model", "duplicate column '" + names[j] + "'");
    }
  }
  data->names = std::move(names);
  data->columns = std::move(columns);
  data->roles = std::move(column_roles);
  if (data->lookup.count(data->roles.expensive) != 0) {
    throw InputError("data-model", "expensive variable '" + data->roles.expensive +
                                       "' must not be a phase-1 column");
  }
  phase1_ = std::move(data);

  if (!roles().outcome.empty()) {
    const Vector& y = column(roles().outcome);
    for (Index i = 0; i < y.size(); ++i) {
      if (y[i] != 0.0 && y[i] != 1.0) {
        throw InputError("data-model", "outcome '" + roles().outcome + "' must be binary");
      }
    }
  }
  for (const auto& c : roles().covariates) (void)column(c);
  for (const auto& c : roles().auxiliaries) (void)column(c);

  const auto n = static_cast<std::size_t>(n_rows());
  phase2_.assign(n, 0);
  x_ = Vector::Constant(n_rows(), kMissing);
  weight_ = Vector::Constant(n_rows(), kMissing);
}

bool CohortTable::has_column(const std::string& name) const {
  return phase1_->lookup.count(name) != 0;
}

const Vector& CohortTable::column(const std::string& name) const {
  auto it = phase1_->lookup.find(name);
  if (it == phase1_->lookup.end()) {
    throw InputError("data-model", "missing column '" + name + "'");
  }
  return phase1_->columns[it->second];
}

std::span<const int> CohortTable::strata() const {
  if (!strata_) throw InputError("data-model", "table has not been stratified");
  return *strata_;
}

std::vector<Index> CohortTable::stratum_sizes() const {
  std::vector<Index> sizes(static_cast<std::size_t>(n_strata_), 0);
  for (int h : strata()) ++sizes[static_cast<std::size_t>(h)];
  return sizes;
}

std::vector<Index> CohortTable::sampled_per_stratum() const {
  std::vector<Index> counts(static_cast<std::size_t>(n_strata_), 0);
  auto labels = strata();
  for (Index i = 0; i < n_rows(); ++i) {
    if (in_phase2(i)) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  return counts;
}

std::vector<std::vector<Index>> CohortTable::rows_by_stratum() const {
  std::vector<std::vector<Index>> rows(static_cast<std::size_t>(n_strata_));
  auto labels = strata();
  for (Index i = 0; i < n_rows(); ++i) {
    rows[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
  }
  return rows;
}

std::vector<Index> CohortTable::sampled_rows() const {
  std::vector<Index> rows;
  for (Index i = 0; i < n_rows(); ++i) {
    if (in_phase2(i)) rows.push_back(i);
  }
  return rows;
}

Index CohortTable::n_sampled() const {
  Index count = 0;
  for (auto r : phase2_) count += r;
  return count;
}

std::optional<double> CohortTable::expensive(Index i) const {
  if (!in_phase2(i)) return std::nullopt;
  return x_[i];
}

bool CohortTable::has_imputation(const std::string& name) const {
  return imputations_.count(name) != 0;
}

const Vector& CohortTable::imputation(const std::string& name) const {
  auto it = imputations_.find(name);
  if (it == imputations_.end()) {
    throw InputError("data-model", "unknown imputation column '" + name + "'");
  }
  return *it->second;
}

CohortTable CohortTable::with_strata(std::vector<int> labels) const {
  if (static_cast<Index>(labels.size()) != n_rows()) {
    throw InputError("data-model", "stratum labels must cover every row");
  }
  int h_max = -1;
  for (int h : labels) {
    if (h < 0) throw InputError("data-model", "stratum labels must be non-negative");
    h_max = std::max(h_max, h);
  }
  std::vector<char> seen(static_cast<std::size_t>(h_max + 1), 0);
  for (int h : labels) seen[static_cast<std::size_t>(h)] = 1;
  for (std::size_t h = 0; h < seen.size(); ++h) {
    if (!seen[h]) {
      throw InputError("data-model", "stratum " + std::to_string(h) + " has no rows");
    }
  }
  CohortTable out = *this;
  out.strata_ = std::make_shared<const std::vector<int>>(std::move(labels));
  out.n_strata_ = h_max + 1;
  return out;
}

CohortTable CohortTable::with_phase2(std::span<const Index> rows,
                                     std::span<const double> x_values) const {
  if (rows.size() != x_values.size()) {
    throw InputError("data-model", "one X value is required per sampled row");
  }
  CohortTable out = *this;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index i = rows[k];
    if (i < 0 || i >= n_rows()) throw InputError("data-model", "row index out of range");
    if (out.in_phase2(i)) {
      throw InputError("data-model", "row " + std::to_string(i) + " is already in phase 2");
    }
    if (!std::isfinite(x_values[k])) {
      throw InputError("data-model", "measured X must be finite");
    }
    out.phase2_[static_cast<std::size_t>(i)] = 1;
    out.x_[i] = x_values[k];
  }
  return out;
}

CohortTable CohortTable::with_weights(const Vector& weights) const {
  if (weights.size() != n_rows()) throw InputError("data-model", "weights must cover every row");
  CohortTable out = *this;
  for (Index i = 0; i < n_rows(); ++i) {
    if (!in_phase2(i)) {
      out.weight_[i] = kMissing;
      continue;
    }
    if (!(weights[i] >= 1.0)) {
      throw InputError("data-model", "sampling weights must be at least 1");
    }
    out.weight_[i] = weights[i];
  }
  return out;
}

CohortTable CohortTable::reweighted_by_stratum() const {
  const auto population = stratum_sizes();
  const auto sampled = sampled_per_stratum();
  auto labels = strata();
  CohortTable out = *this;
  for (Index i = 0; i < n_rows(); ++i) {
    if (!in_phase2(i)) continue;
    const auto h = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    out.weight_[i] = static_cast<double>(population[h]) / static_cast<double>(sampled[h]);
  }
  return out;
}

CohortTable CohortTable::with_imputation(const std::string& name, Vector values) const {
  if (values.size() != n_rows()) {
    throw InputError("data-model", "imputation '" + name + "' must cover every row");
  }
  CohortTable out = *this;
  out.imputations_[name] = std::make_shared<const Vector>(std::move(values));
  return out;
}

// PriorSpec

PriorSpec PriorSpec::flat(Index width) {
  return {Vector::Zero(width), Vector::Constant(width, std::numeric_limits<double>::infinity())};
}

PriorSpec PriorSpec::normal(Vector mean, double variance) {
  Vector var = Vector::Constant(mean.size(), variance);
  return {std::move(mean), std::move(var)};
}

bool PriorSpec::is_flat() const {
  return (variance.array() == std::numeric_limits<double>::infinity()).all();
}

bool PriorSpec::is_fully_informative() const { return variance.allFinite(); }

void PriorSpec::validate(Index width) const {
  if (mean.size() != width || variance.size() != width) {
    throw InputError("data-model", "prior length " + std::to_string(mean.size()) +
                                       " does not match model width " + std::to_string(width));
  }
  if (!mean.allFinite()) throw InputError("data-model", "prior means must be finite");
  for (Index j = 0; j < width; ++j) {
    if (!(variance[j] > 0.0)) throw InputError("data-model", "prior variances must be positive");
  }
}

// Stratum helpers

std::vector<StratumSummary> summarize_strata(const CohortTable& table, std::span<const double> sd) {
  const auto population = table.stratum_sizes();
  const auto sampled = table.sampled_per_stratum();
  if (!sd.empty() && static_cast<int>(sd.size()) != table.n_strata()) {
    throw InputError("data-model", "one sd value is required per stratum");
  }
  std::vector<StratumSummary> out(population.size());
  for (std::size_t h = 0; h < population.size(); ++h) {
    out[h] = {static_cast<int>(h), population[h], sampled[h], sd.empty() ? 0.0 : sd[h]};
  }
  return out;
}

std::vector<double> stratum_sd(const CohortTable& table, const Vector& values) {
  if (values.size() != table.n_rows()) {
    throw InputError("data-model", "values must cover every row");
  }
  const auto rows = table.rows_by_stratum();
  std::vector<double> sd(rows.size(), 0.0);
  for (std::size_t h = 0; h < rows.size(); ++h) {
    double mean = 0.0;
    for (Index i : rows[h]) mean += values[i];
    mean /= static_cast<double>(rows[h].size());
    double ss = 0.0;
    for (Index i : rows[h]) ss += (values[i] - mean) * (values[i] - mean);
    sd[h] = std::sqrt(ss / static_cast<double>(rows[h].size()));
  }
  return sd;
}

}  // namespace multiwave
