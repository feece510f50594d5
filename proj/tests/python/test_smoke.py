import math

import numpy as np
import pytest

import multiwave


def test_exact_allocation_sums_to_budget():
    sizes = multiwave.exact_integer_allocation([100, 200, 50], [1.0, 0.5, 2.0], 60)
    assert sum(sizes) == 60
    assert all(s >= 2 for s in sizes)


def test_continuous_neyman_is_proportional_to_n_sd():
    n = multiwave.neyman_continuous([100, 300], [1.0, 1.0], 40)
    assert n == pytest.approx([10.0, 30.0])


def test_logistic_fit_and_influence():
    rng = np.random.default_rng(1)
    x = np.column_stack([np.ones(500), rng.normal(size=500)])
    y = (rng.uniform(size=500) < 1 / (1 + np.exp(-(0.3 + x[:, 1])))).astype(float)
    w = np.ones(500)
    fit = multiwave.fit_weighted_logistic(x, y, w)
    assert fit["converged"]
    h = multiwave.influence_functions(x, y, w)
    assert h.shape == (500, 2)
    assert np.abs(h.sum(axis=0)).max() < 1e-8


def test_rake_meets_totals():
    aux = np.column_stack([np.ones(5), np.arange(5.0)])
    w = np.full(5, 2.0)
    out = multiwave.rake(aux, np.array([11.0, 24.0]), w)
    assert aux.T @ out["weights"] == pytest.approx([11.0, 24.0])


def test_generate_cohort_columns():
    c = multiwave.generate_cohort(n_rows=200, rep=3)
    assert set(c) >= {"Y", "A", "Z1", "Z2", "X", "stratum"}
    assert len(c["X"]) == 200


def test_run_scenario_rows():
    rows = multiwave.run_scenario(reps=2, designs=["optimal-full-data"], threads=1)
    assert rows[0]["design"] == "optimal-full-data"
    assert rows[0]["ere"] == 1.0
    assert math.isfinite(rows[0]["mse_times_10"])


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError, match="floor infeasible"):
        multiwave.exact_integer_allocation([10, 10], [1.0, 1.0], 3)
