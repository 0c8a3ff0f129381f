"""EP energy E = -log Z(site) - log Zhat(cavity) + log Ztilde(marginal)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EqualityConstraintError
from .model import DEFAULT_EPS, LOG_2PI, ModelInstance, NaturalTuple, log_Z
from .tilted import log_Z_hat

EQUALITY_TOL = 1e-10


@dataclass(frozen=True)
class EnergyBreakdown:
    neg_log_Z: float
    neg_log_Z_hat: float
    log_Z_tilde: float

    @property
    def total(self) -> float:
        return self.neg_log_Z + self.neg_log_Z_hat + self.log_Z_tilde


def log_Z_tilde_terms(marginal: NaturalTuple) -> np.ndarray:
    v1, v2 = marginal.first, marginal.second
    return 0.5 * LOG_2PI - 0.5 * np.log(v2) + 0.5 * v1**2 / v2


def log_Z_tilde(marginal: NaturalTuple, eps: float = DEFAULT_EPS) -> float:
    marginal.check(3 * eps, "marginal")
    return float(np.sum(log_Z_tilde_terms(marginal)))


def check_admissible(marginal, cavity, site, eps=DEFAULT_EPS):
    """Raise if (marginal, cavity, site) violates the coupling or the precision bounds."""
    gap = max(
        np.max(np.abs(marginal.first - site.first - cavity.first)),
        np.max(np.abs(marginal.second - site.second - cavity.second)),
    )
    scale = 1.0 + max(np.max(np.abs(marginal.first)), np.max(np.abs(marginal.second)))
    if not gap <= EQUALITY_TOL * scale:
        raise EqualityConstraintError(f"marginal != site + cavity (gap {gap:.3g})")
    site.check(eps, "site")
    cavity.check(eps, "cavity")
    marginal.check(3 * eps, "marginal")


def energy(model: ModelInstance, marginal: NaturalTuple, cavity: NaturalTuple,
           site: NaturalTuple, eps: float = DEFAULT_EPS, check: bool = True) -> EnergyBreakdown:
    if check:
        check_admissible(marginal, cavity, site, eps)
    return EnergyBreakdown(
        neg_log_Z=-log_Z(model, site),
        neg_log_Z_hat=-log_Z_hat(cavity, model),
        log_Z_tilde=float(np.sum(log_Z_tilde_terms(marginal))),
    )


def energy_at(model: ModelInstance, marginal: NaturalTuple, site: NaturalTuple,
              eps: float = DEFAULT_EPS, check: bool = True) -> EnergyBreakdown:
    """Energy with the cavity implied by the coupling, cavity = marginal - site."""
    cavity = marginal - site
    if check:
        site.check(eps, "site")
        cavity.check(eps, "cavity")
        marginal.check(3 * eps, "marginal")
    return energy(model, marginal, cavity, site, eps, check=False)


def lower_bound(n: int, d: int, noise_var: float) -> float:
    """Lower bound on the inner-maximized energy max over (cavity, site) of E, for any admissible marginal."""
    if n < 1 or d < 1:
        raise ValueError(f"need n, d >= 1, got n={n}, d={d}")
    if not noise_var > 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    return 0.5 * n * np.log(2.0 * np.pi * noise_var) - 0.5 * d * np.log(2.0)

