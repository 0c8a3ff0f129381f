"""Moments of the one-dimensional tilted distributions.

For a cavity with natural parameters (c1, c2) the tilted density is

    P(w) ∝ exp(c1 w - c2 w^2 / 2) [p N(w | 0, v) + (1 - p) delta(w)].

Every function here is vectorized over coordinates: cavity parameters may be
scalars or arrays of equal shape, prior parameters are scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InequalityConstraintError, NonFiniteError


def logistic(x):
    """Logistic function, branching on sign so exp never overflows."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class TiltedMoments:
    mean: np.ndarray
    second_moment: np.ndarray
    variance: np.ndarray
    log_partition: np.ndarray
    slab_responsibility: np.ndarray


def slab_log_ratio(cav_1, cav_2, slab_var):
    """Log-density ratio of w = 0 under the spike-free and slab-convolved cavities.

    Algebraically this is -log(c2)/2 - log(1/c2 + v)/2 + (c1/c2)^2 (c2 - 1/(1/c2 + v)) / 2,
    rearranged so that nothing cancels for small c2.
    """
    q = cav_2 * slab_var
    return -0.5 * np.log1p(q) + 0.5 * cav_1**2 * slab_var / (1.0 + q)


def tilted_ab(cav_1, cav_2, slab_prob, slab_var):
    """The (a, b) derivative quantities of the tilted log-partition.

    E_P[w] = (c1 - a) / c2 and E_P[w^2] = 1/c2 - (a^2 - b)/c2^2 + E_P[w]^2.
    Returned for cross-checking; :func:`tilted_moments` uses the equivalent
    mixture form, which keeps its accuracy when c2 is tiny.
    """
    cav_1 = np.asarray(cav_1, dtype=float)
    cav_2 = np.asarray(cav_2, dtype=float)
    rho = np.log(slab_prob) - np.log1p(-slab_prob)
    r = logistic(slab_log_ratio(cav_1, cav_2, slab_var) + rho)
    q1 = 1.0 + cav_2 * slab_var
    a = r * cav_1 / q1 + (1.0 - r) * cav_1
    b = (
        r * (cav_1**2 - cav_2 - slab_var * cav_2**2) / q1**2
        + (1.0 - r) * (cav_1**2 - cav_2)
    )
    return a, b


def tilted_moments(cav_1, cav_2, slab_prob: float, slab_var: float) -> TiltedMoments:
    cav_1 = np.asarray(cav_1, dtype=float)
    cav_2 = np.asarray(cav_2, dtype=float)
    if np.any(~(cav_2 > 0)):
        raise InequalityConstraintError("cavity precision must be positive")
    if not 0.0 < slab_prob < 1.0:
        raise ValueError(f"slab_prob must lie in (0, 1), got {slab_prob}")
    if not slab_var > 0:
        raise ValueError(f"slab_var must be positive, got {slab_var}")

    log_p = np.log(slab_prob)
    log_1mp = np.log1p(-slab_prob)
    q1 = 1.0 + cav_2 * slab_var
    ratio = slab_log_ratio(cav_1, cav_2, slab_var)
    r = logistic(ratio + log_p - log_1mp)

    # slab component of P is N(slab_mean, slab_cov)
    slab_cov = slab_var / q1
    slab_mean = cav_1 * slab_cov
    mean = r * slab_mean
    second = r * (slab_cov + slab_mean**2)
    var = r * slab_cov + r * (1.0 - r) * slab_mean**2
    log_z = np.logaddexp(log_1mp, log_p + ratio)

    out = TiltedMoments(mean, second, var, log_z, r)
    for name in ("mean", "second_moment", "variance", "log_partition"):
        if not np.all(np.isfinite(getattr(out, name))):
            raise NonFiniteError(f"non-finite tilted {name}")
    return out


def tilted_stat_cov(cav_1, cav_2, slab_prob: float, slab_var: float):
    """Var(w), Cov(w, w^2) and Var(w^2) under the tilted distribution."""
    cav_1 = np.asarray(cav_1, dtype=float)
    cav_2 = np.asarray(cav_2, dtype=float)
    q1 = 1.0 + cav_2 * slab_var
    r = logistic(slab_log_ratio(cav_1, cav_2, slab_var)
                 + np.log(slab_prob) - np.log1p(-slab_prob))
    s = slab_var / q1
    mu = cav_1 * s
    m2 = s + mu**2
    var_w = r * s + r * (1.0 - r) * mu**2
    cov_w_w2 = r * (mu**3 + 3.0 * mu * s) - r**2 * mu * m2
    var_w2 = r * (mu**4 + 6.0 * mu**2 * s + 3.0 * s**2) - r**2 * m2**2
    return var_w, cov_w_w2, np.maximum(var_w2, 0.0)


def log_Z_hat(cavity, model) -> float:
    """Sum over coordinates of the tilted log-partitions."""
    tm = tilted_moments(cavity.first, cavity.second, model.slab_prob, model.slab_var)
    return float(np.sum(tm.log_partition))
