#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

#include "multiwave/cohort.hpp"
#include "multiwave/errors.hpp"

namespace multiwave {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_double(const std::string& text, double& value) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

CsvCohort read_cohort_csv(const std::string& path, const ColumnRoles& roles) {
  std::ifstream in(path);
  if (!in) throw InputError("data-model", "cannot open '" + path + "'");

  std::string line;
  while (std::getline(in, line) && (line.empty() || line.front() == '#')) {
  }
  if (line.empty()) throw InputError("data-model", "'" + path + "' has no header row");
  const auto header = split_line(line);

  std::vector<std::vector<double>> values(header.size());
  std::vector<char> x_present;
  std::size_t x_col = header.size();
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == roles.expensive) x_col = j;
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r" || line.front() == '#') continue;
    const auto fields = split_line(line);
    if (fields.size() != header.size()) {
      throw InputError("data-model", path + ":" + std::to_string(line_no) + ": expected " +
                                         std::to_string(header.size()) + " fields");
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      double v = std::numeric_limits<double>::quiet_NaN();
      if (j == x_col && fields[j].empty()) {
        x_present.push_back(0);
      } else {
        if (!parse_double(fields[j], v)) {
          throw InputError("data-model", path + ":" + std::to_string(line_no) + ": column '" +
                                             header[j] + "' is not numeric");
        }
        if (j == x_col) x_present.push_back(1);
      }
      values[j].push_back(v);
    }
  }

  std::vector<std::string> names;
  std::vector<Vector> columns;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j == x_col) continue;
    names.push_back(header[j]);
    columns.push_back(Eigen::Map<const Vector>(values[j].data(), static_cast<Index>(values[j].size())));
  }
  CohortTable table(std::move(names), std::move(columns), roles);

  if (x_col == header.size()) return {std::move(table), std::nullopt};

  const Vector x = Eigen::Map<const Vector>(values[x_col].data(), static_cast<Index>(values[x_col].size()));
  std::size_t observed = 0;
  for (char c : x_present) observed += static_cast<std::size_t>(c);
  if (observed == x_present.size()) return {std::move(table), x};
  if (observed == 0) return {std::move(table), std::nullopt};

  std::vector<Index> rows;
  std::vector<double> xs;
  for (std::size_t i = 0; i < x_present.size(); ++i) {
    if (x_present[i]) {
      rows.push_back(static_cast<Index>(i));
      xs.push_back(x[static_cast<Index>(i)]);
    }
  }
  return {table.with_phase2(rows, xs), std::nullopt};
}

}  // namespace multiwave
