#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>

#include "multiwave/allocation.hpp"
#include "multiwave/errors.hpp"
#include "multiwave/glm.hpp"
#include "multiwave/raking.hpp"
#include "multiwave/simgen.hpp"

namespace py = pybind11;
using namespace multiwave;

namespace {

std::vector<StratumSummary> summaries(const std::vector<Index>& populations, const std::vector<double>& sds) {
  if (populations.size() != sds.size()) throw InputError("allocation", "populations and sds differ in length");
  std::vector<StratumSummary> out(populations.size());
  for (std::size_t h = 0; h < out.size(); ++h) {
    out[h].stratum_id = static_cast<int>(h);
    out[h].population = populations[h];
    out[h].sd = sds[h];
  }
  return out;
}

std::optional<PriorSpec> prior_from(const std::optional<Vector>& mean, const std::optional<Vector>& variance) {
  if (!mean && !variance) return std::nullopt;
  if (!mean || !variance) throw InputError("glm", "prior_mean and prior_variance go together");
  return PriorSpec{*mean, *variance};
}

py::dict fit_dict(const FitResult& fit) {
  py::dict d;
  d["beta"] = fit.beta;
  d["information"] = fit.information;
  d["converged"] = fit.converged;
  d["iterations"] = fit.iterations;
  d["deviance"] = fit.deviance;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-wave two-phase sampling designs";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InputError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  m.def("neyman_continuous",
        [](const std::vector<Index>& populations, const std::vector<double>& sds, Index n) {
          return neyman_continuous(summaries(populations, sds), n);
        },
        py::arg("populations"), py::arg("sds"), py::arg("n"));

  m.def("exact_integer_allocation",
        [](const std::vector<Index>& populations, const std::vector<double>& sds, Index n, Index floor) {
          return exact_integer_allocation(summaries(populations, sds), n, floor).sizes;
        },
        py::arg("populations"), py::arg("sds"), py::arg("n"), py::arg("floor") = 2);

  m.def("fit_weighted_logistic",
        [](const Matrix& x, const Vector& y, const Vector& w, const std::optional<Vector>& prior_mean,
           const std::optional<Vector>& prior_variance) {
          return fit_dict(fit_weighted_logistic(x, y, w, prior_from(prior_mean, prior_variance)));
        },
        py::arg("x"), py::arg("y"), py::arg("w"), py::arg("prior_mean") = py::none(),
        py::arg("prior_variance") = py::none());

  m.def("influence_functions",
        [](const Matrix& x, const Vector& y, const Vector& w) {
          const FitResult fit = fit_weighted_logistic(x, y, w);
          return influence_functions(fit, x, y, w).h;
        },
        py::arg("x"), py::arg("y"), py::arg("w"),
        "Delta-beta rows of the unpenalized weighted fit.");

  m.def("rake",
        [](const Matrix& aux, const Vector& totals, const Vector& base_weights) {
          const Calibration c = rake(aux, totals, base_weights);
          py::dict d;
          d["weights"] = c.weights;
          d["multiplier"] = c.multiplier;
          d["lambda"] = c.lambda;
          d["iterations"] = c.iterations;
          d["max_residual"] = c.max_residual;
          return d;
        },
        py::arg("aux"), py::arg("totals"), py::arg("base_weights"));

  m.def("generate_cohort",
        [](double beta1, double sensitivity, double specificity, Index n_rows, std::uint64_t seed, int rep) {
          ScenarioConfig cfg;
          cfg.beta1 = beta1;
          cfg.sensitivity = sensitivity;
          cfg.specificity = specificity;
          cfg.N = n_rows;
          cfg.n = std::min<Index>(cfg.n, n_rows);
          cfg.seed = seed;
          const SimulatedCohort c = generate_cohort(cfg, rep);
          py::dict d;
          for (const auto& name : c.table.column_names()) d[py::str(name)] = c.table.column(name);
          d["X"] = c.true_x;
          auto labels = c.table.strata();
          d["stratum"] = std::vector<int>(labels.begin(), labels.end());
          return d;
        },
        py::arg("beta1") = 1.0, py::arg("sensitivity") = 0.8, py::arg("specificity") = 0.8,
        py::arg("n_rows") = 1000, py::arg("seed") = 20240601, py::arg("rep") = 0);

  m.def("run_scenario",
        [](double beta1, double sensitivity, double specificity, Index n_rows, Index n, int reps,
           std::uint64_t seed, const std::vector<std::string>& designs, int threads) {
          ScenarioConfig cfg;
          cfg.beta1 = beta1;
          cfg.sensitivity = sensitivity;
          cfg.specificity = specificity;
          cfg.N = n_rows;
          cfg.n = n;
          cfg.reps = reps;
          cfg.seed = seed;
          cfg.threads = threads;
          if (!designs.empty()) {
            std::vector<DesignKind> kinds;
            for (const auto& d : designs) kinds.push_back(parse_design_kind(d));
            for (const auto& d : default_designs(cfg)) {
              if (std::find(kinds.begin(), kinds.end(), d.kind) != kinds.end()) cfg.designs.push_back(d);
            }
          }
          ScenarioResult result;
          {
            py::gil_scoped_release release;
            result = run_scenario(cfg);
          }
          py::list rows;
          for (const auto& r : result.rows) {
            py::dict d;
            d["design"] = r.design;
            d["prior"] = r.prior;
            d["fraction"] = r.fraction;
            d["mse_times_10"] = r.mse_times_10;
            d["ere"] = r.ere;
            d["reps_used"] = r.reps_used;
            d["excluded"] = r.excluded;
            d["mc_se"] = r.mc_se;
            rows.append(d);
          }
          return rows;
        },
        py::arg("beta1") = 1.0, py::arg("sensitivity") = 0.8, py::arg("specificity") = 0.8,
        py::arg("n_rows") = 1000, py::arg("n") = 300, py::arg("reps") = 100, py::arg("seed") = 20240601,
        py::arg("designs") = std::vector<std::string>{}, py::arg("threads") = 0);
}
