#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "multiwave/cohort.hpp"
#include "multiwave/errors.hpp"

using namespace multiwave;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index j = 0;
  for (double x : v) out[j++] = x;
  return out;
}

CohortTable small_table() {
  ColumnRoles roles;
  roles.outcome = "Y";
  roles.covariates = {"age"};
  roles.auxiliaries = {"A"};
  return CohortTable({"Y", "A", "age"},
                     {vec({0, 1, 1, 0, 1, 0}), vec({1, 0, 1, 1, 0, 0}), vec({0.5, 2.0, 1.0, 3.0, 0.2, 1.5})},
                     roles);
}

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << body;
  return path;
}

}  // namespace

TEST_CASE("term lists parse into main effects, interactions and splines") {
  const auto terms = parse_terms("X, A*Z1 , spline(age,1)");
  REQUIRE(terms.size() == 3);
  CHECK(terms[0] == Term::main_effect("X"));
  CHECK(terms[1] == Term::interaction("A", "Z1"));
  CHECK(terms[2] == Term::linear_spline("age", 1.0));
  ModelSpec spec{"Y", terms};
  CHECK(spec.width() == 5);
  CHECK(spec.coefficient_names() == std::vector<std::string>{"(Intercept)", "X", "A:Z1", "age<1", "age>1"});
  CHECK(spec.coefficient_index("X") == 1);
  CHECK_THROWS_AS(spec.coefficient_index("A"), InputError);
  CHECK_THROWS_AS(parse_terms("spline(age)"), InputError);
  CHECK_THROWS_AS(parse_terms("a*"), InputError);
  CHECK_THROWS_AS(parse_terms("a b"), InputError);
}

TEST_CASE("spline terms split at the knot") {
  const CohortTable t = small_table();
  const ModelSpec spec{"Y", parse_terms("spline(age,1)")};
  const std::vector<Index> rows{0, 1, 2};
  const Matrix m = build_predictors(t, spec, XSource::observed(), rows);
  Matrix expected(3, 3);
  expected << 1, 0.5, 0, 1, 1, 1, 1, 1, 0;
  CHECK(m == expected);
}

TEST_CASE("interaction columns are elementwise products") {
  const CohortTable t = small_table();
  const DesignData d = build_design_matrix(t, {"Y", parse_terms("A*age")}, XSource::observed());
  for (Index i = 0; i < t.n_rows(); ++i) {
    CHECK(d.matrix(i, 1) == t.column("A")[i] * t.column("age")[i]);
    CHECK(d.response[i] == t.column("Y")[i]);
  }
}

TEST_CASE("X comes from phase 2 or from an imputation column") {
  const CohortTable t = small_table().with_phase2(std::vector<Index>{1, 4}, std::vector<double>{1.0, 0.0});
  const ModelSpec spec{"Y", parse_terms("X")};
  const std::vector<Index> rows{1, 4};
  CHECK(build_predictors(t, spec, XSource::observed(), rows).col(1) == vec({1, 0}));
  CHECK_THROWS_AS(build_predictors(t, spec, XSource::observed()), InputError);
  const CohortTable imp = t.with_imputation("xhat", Vector::Constant(6, 0.25));
  CHECK(build_predictors(imp, spec, XSource::imputed("xhat")).col(1).isApprox(Vector::Constant(6, 0.25)));
}

TEST_CASE("strata are occupied cells in lexicographic order") {
  const CohortTable t = small_table();
  const Stratification s = stratify(t, {"A", "Y"});
  // Cells: (0,0) rows 5; (0,1) rows 1,4; (1,0) rows 0,3; (1,1) row 2.
  CHECK(s.cells == std::vector<std::vector<double>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  CHECK(s.labels == std::vector<int>{2, 1, 3, 2, 1, 0});
  std::vector<Index> sizes;
  for (const auto& x : s.summaries) sizes.push_back(x.population);
  CHECK(sizes == std::vector<Index>{1, 2, 2, 1});
  CHECK_THROWS_WITH_AS(stratify(t, {"age"}), doctest::Contains("not discrete"), InputError);
}

TEST_CASE("stratum labels are frozen and validated") {
  const CohortTable t = small_table();
  CHECK_THROWS_AS(t.strata(), InputError);
  CHECK_THROWS_AS(t.with_strata({0, 1}), InputError);
  CHECK_THROWS_AS(t.with_strata({0, 0, 2, 2, 0, 0}), InputError);  // stratum 1 empty
  const CohortTable s = t.with_strata({0, 0, 1, 1, 0, 1});
  CHECK(s.n_strata() == 2);
  CHECK(s.stratum_sizes() == std::vector<Index>{3, 3});
}

TEST_CASE("phase-2 updates are copy-on-write and reject resampling") {
  const CohortTable base = stratified(small_table(), {"A"});
  const std::vector<Index> rows{0, 5};
  const CohortTable one = base.with_phase2(rows, std::vector<double>{1, 0});
  CHECK(base.n_sampled() == 0);
  CHECK(one.n_sampled() == 2);
  CHECK(one.expensive(0) == 1.0);
  CHECK(!one.expensive(1).has_value());
  CHECK_THROWS_WITH_AS(one.with_phase2(std::vector<Index>{5}, std::vector<double>{1}),
                       doctest::Contains("already in phase 2"), InputError);
  CHECK_THROWS_AS(one.with_phase2(std::vector<Index>{2}, std::vector<double>{std::nan("")}), InputError);
}

TEST_CASE("stratified reweighting sums to the stratum sizes") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cell(0, 3);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 200;
    Vector y(n), a(n);
    for (Index i = 0; i < n; ++i) {
      y[i] = coin(rng);
      a[i] = cell(rng);
    }
    ColumnRoles roles;
    roles.outcome = "Y";
    const CohortTable t = stratified(CohortTable({"Y", "A"}, {y, a}, roles), {"A", "Y"});
    std::vector<Index> rows;
    std::vector<double> xs;
    for (const auto& members : t.rows_by_stratum()) {
      for (std::size_t k = 0; k < members.size(); k += 3) {
        rows.push_back(members[k]);
        xs.push_back(0.0);
      }
    }
    const CohortTable w = t.with_phase2(rows, xs).reweighted_by_stratum();
    std::vector<double> sums(static_cast<std::size_t>(w.n_strata()), 0.0);
    for (Index i : w.sampled_rows()) sums[static_cast<std::size_t>(w.strata()[static_cast<std::size_t>(i)])] += w.weight(i);
    const auto sizes = w.stratum_sizes();
    for (std::size_t h = 0; h < sums.size(); ++h) CHECK(sums[h] == doctest::Approx(static_cast<double>(sizes[h])).epsilon(1e-12));
  }
}

TEST_CASE("weights below one are rejected") {
  const CohortTable t = small_table().with_phase2(std::vector<Index>{0}, std::vector<double>{1});
  Vector w = Vector::Constant(6, std::nan(""));
  w[0] = 0.5;
  CHECK_THROWS_AS(t.with_weights(w), InputError);
}

TEST_CASE("priors validate lengths and variances") {
  PriorSpec flat = PriorSpec::flat(3);
  CHECK(flat.is_flat());
  CHECK(!flat.is_fully_informative());
  PriorSpec normal = PriorSpec::normal(vec({0, 1, 2}), 0.5);
  CHECK(normal.is_fully_informative());
  CHECK_NOTHROW(normal.validate(3));
  CHECK_THROWS_AS(normal.validate(2), InputError);
  normal.variance[1] = 0.0;
  CHECK_THROWS_AS(normal.validate(3), InputError);
}

TEST_CASE("binary outcomes and distinct names are enforced") {
  ColumnRoles roles;
  roles.outcome = "Y";
  CHECK_THROWS_AS(CohortTable({"Y"}, {vec({0, 2})}, roles), InputError);
  CHECK_THROWS_AS(CohortTable({"Y", "Y"}, {vec({0, 1}), vec({0, 1})}, roles), InputError);
  CHECK_THROWS_AS(CohortTable({"Y", "B"}, {vec({0, 1}), vec({0})}, roles), InputError);
  CHECK_THROWS_AS(small_table().column("nope"), InputError);
}

TEST_CASE("CSV with fully observed X returns it separately") {
  const auto path = temp_file("mw_full.csv", "# comment\nY,A,X\n0,1,1\n1,0,0\n1,1,1\n");
  ColumnRoles roles;
  roles.outcome = "Y";
  const CsvCohort c = read_cohort_csv(path.string(), roles);
  REQUIRE(c.full_x.has_value());
  CHECK(*c.full_x == vec({1, 0, 1}));
  CHECK(c.table.n_sampled() == 0);
  CHECK(!c.table.has_column("X"));
}

TEST_CASE("CSV with partially observed X starts phase 2") {
  const auto path = temp_file("mw_partial.csv", "Y,A,X\n0,1,1\n1,0,\n1,1,0\n0,0,\n");
  ColumnRoles roles;
  roles.outcome = "Y";
  const CsvCohort c = read_cohort_csv(path.string(), roles);
  CHECK(!c.full_x.has_value());
  CHECK(c.table.sampled_rows() == std::vector<Index>{0, 2});
  CHECK(c.table.expensive(2) == 0.0);
}

TEST_CASE("CSV errors carry file and line") {
  ColumnRoles roles;
  roles.outcome = "Y";
  const auto bad = temp_file("mw_bad.csv", "Y,A\n0,1\n1,x\n");
  CHECK_THROWS_WITH_AS(read_cohort_csv(bad.string(), roles), doctest::Contains(":3: column 'A' is not numeric"),
                       InputError);
  const auto ragged = temp_file("mw_ragged.csv", "Y,A\n0\n");
  CHECK_THROWS_AS(read_cohort_csv(ragged.string(), roles), InputError);
  CHECK_THROWS_AS(read_cohort_csv("/nonexistent/file.csv", roles), InputError);
}
