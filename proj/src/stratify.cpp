#include <algorithm>
#include <cmath>
#include <map>

#include "multiwave/cohort.hpp"
#include "multiwave/errors.hpp"

namespace multiwave {

Stratification stratify(const CohortTable& table, const std::vector<std::string>& columns) {
  const Index n = table.n_rows();
  std::vector<const Vector*> cols;
  for (const auto& name : columns) {
    const Vector& c = table.column(name);
    for (Index i = 0; i < n; ++i) {
      if (!std::isfinite(c[i]) || c[i] != std::round(c[i])) {
        throw InputError("data-model", "stratifier '" + name +
                                           "' is not discrete (non-integer value at row " +
                                           std::to_string(i) + ")");
      }
    }
    cols.push_back(&c);
  }

  // std::map orders cells lexicographically.
  std::map<std::vector<double>, int> cells;
  std::vector<std::vector<double>> keys(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& key = keys[static_cast<std::size_t>(i)];
    key.reserve(cols.size());
    for (const Vector* c : cols) key.push_back((*c)[i]);
    cells.emplace(key, 0);
  }

  Stratification out;
  int next = 0;
  for (auto& [key, label] : cells) {
    label = next++;
    out.cells.push_back(key);
  }
  out.labels.resize(static_cast<std::size_t>(n));
  out.summaries.resize(cells.size());
  for (std::size_t h = 0; h < cells.size(); ++h) out.summaries[h].stratum_id = static_cast<int>(h);
  for (Index i = 0; i < n; ++i) {
    const int h = cells.at(keys[static_cast<std::size_t>(i)]);
    out.labels[static_cast<std::size_t>(i)] = h;
    ++out.summaries[static_cast<std::size_t>(h)].population;
    if (table.in_phase2(i)) ++out.summaries[static_cast<std::size_t>(h)].sampled;
  }
  return out;
}

CohortTable stratified(const CohortTable& table, const std::vector<std::string>& columns) {
  return table.with_strata(stratify(table, columns).labels);
}

}  // namespace multiwave
