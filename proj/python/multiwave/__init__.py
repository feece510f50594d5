"""Multi-wave two-phase sampling designs."""

from ._core import (
    exact_integer_allocation,
    fit_weighted_logistic,
    generate_cohort,
    influence_functions,
    neyman_continuous,
    rake,
    run_scenario,
)

__all__ = [
    "exact_integer_allocation",
    "fit_weighted_logistic",
    "generate_cohort",
    "influence_functions",
    "neyman_continuous",
    "rake",
    "run_scenario",
]
