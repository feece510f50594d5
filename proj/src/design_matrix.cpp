#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "multiwave/cohort.hpp"
#include "multiwave/errors.hpp"

namespace multiwave {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_knot(double k) {
  std::ostringstream os;
  os << k;
  return os.str();
}

// Resolves a column referenced by a term for the requested rows: X comes from
// the chosen source, everything else from phase 1.
Vector gather(const CohortTable& table, const std::string& name, const XSource& source,
              std::span<const Index> rows) {
  const auto n = static_cast<Index>(rows.size());
  Vector out(n);
  if (name == table.roles().expensive) {
    if (source.kind == XSource::Kind::observed) {
      const Vector& x = table.expensive_values();
      for (Index k = 0; k < n; ++k) {
        const Index i = rows[static_cast<std::size_t>(k)];
        if (!table.in_phase2(i)) {
          throw InputError("data-model", "X is not observed for row " + std::to_string(i));
        }
        out[k] = x[i];
      }
    } else {
      const Vector& x = table.imputation(source.column);
      for (Index k = 0; k < n; ++k) out[k] = x[rows[static_cast<std::size_t>(k)]];
    }
    return out;
  }
  const Vector& col = table.column(name);
  for (Index k = 0; k < n; ++k) out[k] = col[rows[static_cast<std::size_t>(k)]];
  return out;
}

}  // namespace

Term Term::main_effect(std::string column) { return {Kind::main, std::move(column), {}, 0.0}; }

Term Term::interaction(std::string a, std::string b) {
  return {Kind::interaction, std::move(a), std::move(b), 0.0};
}

Term Term::linear_spline(std::string column, double knot) {
  return {Kind::spline, std::move(column), {}, knot};
}

std::vector<std::string> Term::coefficient_names() const {
  switch (kind) {
    case Kind::main:
      return {column};
    case Kind::interaction:
      return {column + ":" + other};
    case Kind::spline:
      return {column + "<" + format_knot(knot), column + ">" + format_knot(knot)};
  }
  return {};
}

std::vector<Term> parse_terms(const std::string& text) {
  std::vector<Term> terms;
  std::size_t pos = 0;
  const std::string s = text;
  while (pos < s.size()) {
    // Split on commas that are not inside parentheses.
    std::size_t end = pos;
    int depth = 0;
    while (end < s.size() && (s[end] != ',' || depth > 0)) {
      if (s[end] == '(') ++depth;
      if (s[end] == ')') --depth;
      ++end;
    }
    std::string token = trim(std::string_view(s).substr(pos, end - pos));
    pos = end + 1;
    if (token.empty()) continue;

    if (token.rfind("spline(", 0) == 0 && token.back() == ')') {
      std::string inner = token.substr(7, token.size() - 8);
      auto comma = inner.find(',');
      if (comma == std::string::npos) {
        throw InputError("data-model", "spline term needs a knot: '" + token + "'");
      }
      std::string col = trim(inner.substr(0, comma));
      std::string knot_text = trim(inner.substr(comma + 1));
      double knot = 0.0;
      auto [ptr, ec] = std::from_chars(knot_text.data(), knot_text.data() + knot_text.size(), knot);
      if (ec != std::errc() || ptr != knot_text.data() + knot_text.size() || col.empty()) {
        throw InputError("data-model", "malformed spline term '" + token + "'");
      }
      terms.push_back(Term::linear_spline(col, knot));
    } else if (auto star = token.find('*'); star != std::string::npos) {
      std::string a = trim(token.substr(0, star));
      std::string b = trim(token.substr(star + 1));
      if (a.empty() || b.empty() || b.find('*') != std::string::npos) {
        throw InputError("data-model", "malformed interaction term '" + token + "'");
      }
      terms.push_back(Term::interaction(a, b));
    } else {
      if (token.find_first_of("() ") != std::string::npos) {
        throw InputError("data-model", "malformed term '" + token + "'");
      }
      terms.push_back(Term::main_effect(token));
    }
  }
  return terms;
}

Index ModelSpec::width() const {
  Index p = 1;
  for (const auto& t : terms) p += t.kind == Term::Kind::spline ? 2 : 1;
  return p;
}

std::vector<std::string> ModelSpec::coefficient_names() const {
  std::vector<std::string> names{"(Intercept)"};
  for (const auto& t : terms) {
    for (auto& n : t.coefficient_names()) names.push_back(std::move(n));
  }
  return names;
}

Index ModelSpec::coefficient_index(const std::string& column) const {
  Index j = 1;
  for (const auto& t : terms) {
    if (t.kind == Term::Kind::main && t.column == column) return j;
    j += t.kind == Term::Kind::spline ? 2 : 1;
  }
  throw InputError("data-model", "model for '" + response + "' has no main effect '" + column + "'");
}

Matrix build_predictors(const CohortTable& table, const ModelSpec& spec, const XSource& x_source,
                        std::span<const Index> rows) {
  std::vector<Index> all;
  if (rows.empty()) {
    all.resize(static_cast<std::size_t>(table.n_rows()));
    for (Index i = 0; i < table.n_rows(); ++i) all[static_cast<std::size_t>(i)] = i;
    rows = all;
  }
  const auto n = static_cast<Index>(rows.size());

  Matrix m(n, spec.width());
  m.col(0).setOnes();
  Index j = 1;
  for (const auto& term : spec.terms) {
    const Vector a = gather(table, term.column, x_source, rows);
    switch (term.kind) {
      case Term::Kind::main:
        m.col(j++) = a;
        break;
      case Term::Kind::interaction:
        m.col(j++) = a.cwiseProduct(gather(table, term.other, x_source, rows));
        break;
      case Term::Kind::spline:
        m.col(j++) = a.array().min(term.knot).matrix();
        m.col(j++) = (a.array() - term.knot).max(0.0).matrix();
        break;
    }
  }
  return m;
}

DesignData build_design_matrix(const CohortTable& table, const ModelSpec& spec,
                               const XSource& x_source, std::span<const Index> rows) {
  std::vector<Index> all;
  if (rows.empty()) {
    all.resize(static_cast<std::size_t>(table.n_rows()));
    for (Index i = 0; i < table.n_rows(); ++i) all[static_cast<std::size_t>(i)] = i;
    rows = all;
  }
  return {build_predictors(table, spec, x_source, rows), gather(table, spec.response, x_source, rows)};
}

}  // namespace multiwave
