"""Expectation propagation for linear regression with spike-and-slab priors.

Two solvers share one model: damped sequential EP (``run_rep``) and the
double-loop, energy-descending variant with positivity constraints
(``run_pcep``). ``exact_posterior`` enumerates all spike/slab assignments
for small problems.
"""

from .energy import energy, energy_at, lower_bound
from .errors import (
    ConstraintError,
    DescentViolationError,
    EqualityConstraintError,
    InequalityConstraintError,
    NonFiniteError,
    NonKKTPointError,
    NotPositiveDefiniteError,
    SSEPError,
)
from .model import ModelInstance, NaturalTuple, log_Z, posterior_moments
from .oracle import exact_posterior
from .pc_ep import inner_maximize, run_pcep
from .r_ep import EPResult, run_rep
from .tilted import tilted_moments

__version__ = "0.1.0"

__all__ = [
    "ConstraintError", "DescentViolationError", "EPResult", "EqualityConstraintError",
    "InequalityConstraintError", "ModelInstance", "NaturalTuple", "NonFiniteError",
    "NonKKTPointError", "NotPositiveDefiniteError", "SSEPError", "energy", "energy_at",
    "exact_posterior", "inner_maximize", "log_Z", "lower_bound", "posterior_moments",
    "run_pcep", "run_rep", "tilted_moments",
]
