"""Double-loop EP with positivity constraints.

The outer loop walks the marginal parameters ``v``; for each ``v`` the inner
loop maximizes the energy over the site parameters (the cavity is ``v - site``).
Lagrange multipliers of the inner problem feed a closed-form outer step that
can only lower the inner maximum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .energy import energy, log_Z_tilde_terms, lower_bound
from .errors import DescentViolationError, NonFiniteError, NonKKTPointError
from .model import (
    DEFAULT_EPS,
    ModelInstance,
    NaturalTuple,
    PosteriorMoments,
    log_Z_from_moments,
    posterior_covariance,
    posterior_moments,
)
from .r_ep import EPResult
from .tilted import TiltedMoments, tilted_moments, tilted_stat_cov

log = logging.getLogger(__name__)

ACTIVE_TOL = 1e-12
MU_TOL = 1e-8
INNER_TOL_FLOOR = 1e-10
NEWTON_DECREMENT_TOL = 1e-14
# a failed line search below this predicted gain is roundoff, not a solver failure
NOISE_DECREMENT_TOL = 1e-10


class Active(Enum):
    NONE = 0
    SITE_AT_EPS = 1
    CAVITY_AT_EPS = 2


@dataclass(frozen=True)
class Multipliers:
    lambda_1: np.ndarray
    lambda_2: np.ndarray
    mu_1: np.ndarray  # cavity bound
    mu_2: np.ndarray  # site bound


@dataclass
class InnerSolution:
    site_star: NaturalTuple
    cavity_star: NaturalTuple
    marginal: NaturalTuple
    inner_value: float
    active_set: list
    q_moments: PosteriorMoments
    p_moments: TiltedMoments
    grad_norm: float
    iterations: int
    degraded: bool = False
    multipliers: Optional[Multipliers] = None


def _evaluate(model, marginal, site, hessian=False):
    """Energy and its site-gradient (and Hessian) together with the moments behind them.

    The gradient is (E_P[w] - E_Q[w], (E_Q[w^2] - E_P[w^2]) / 2); the Hessian is
    minus the sum of the Q and P covariances of the statistics (w, -w^2/2).
    """
    cavity = marginal - site
    qm = posterior_moments(model, site)
    pm = tilted_moments(cavity.first, cavity.second, model.slab_prob, model.slab_var)
    value = (
        -log_Z_from_moments(model, qm)
        - np.sum(pm.log_partition)
        + np.sum(log_Z_tilde_terms(marginal))
    )
    g1 = pm.mean - qm.mean
    g2 = 0.5 * (qm.second_moment - pm.second_moment)
    if not hessian:
        return float(value), g1, g2, qm, pm
    d = model.d
    S = posterior_covariance(model, site)
    m = qm.mean
    H = np.empty((2 * d, 2 * d))
    H[:d, :d] = S
    H[:d, d:] = -S * m[None, :]
    H[d:, :d] = H[:d, d:].T
    H[d:, d:] = 0.5 * S**2 + S * np.outer(m, m)
    var_w, cov_w_w2, var_w2 = tilted_stat_cov(cavity.first, cavity.second,
                                              model.slab_prob, model.slab_var)
    idx = np.arange(d)
    H[idx, idx] += var_w
    H[idx, d + idx] += -0.5 * cov_w_w2
    H[d + idx, idx] += -0.5 * cov_w_w2
    H[d + idx, d + idx] += 0.25 * var_w2
    return float(value), g1, g2, qm, pm, -H


def project_into_box(site: NaturalTuple, marginal: NaturalTuple, eps: float = DEFAULT_EPS) -> NaturalTuple:
    second = np.clip(site.second, eps, marginal.second - eps)
    return NaturalTuple(site.first, second)


class _Scaled:
    """Site parameters in the variables (site.first / sqrt(v2), site.second / v2)."""

    def __init__(self, model, marginal, eps):
        self.model = model
        self.marginal = marginal
        self.eps = eps
        self.d = model.d
        v2 = marginal.second
        self.v2 = v2
        self.root = np.sqrt(v2)
        self.scale = np.concatenate([self.root, v2])
        self.lo = np.concatenate([np.full(self.d, -np.inf), eps / v2])
        self.hi = np.concatenate([np.full(self.d, np.inf), (v2 - eps) / v2])

    def project(self, z):
        return np.clip(z, self.lo, self.hi)

    def to_site(self, z):
        d, eps, v2 = self.d, self.eps, self.v2
        s = np.clip(z[d:], self.lo[d:], self.hi[d:])
        second = s * v2
        second = np.where(s <= self.lo[d:], eps, second)
        second = np.where(s >= self.hi[d:], v2 - eps, second)
        return NaturalTuple(z[:d] * self.root, second)

    def from_site(self, site):
        return np.concatenate([site.first / self.root, site.second / self.v2])

    def objective(self, z, hessian=False):
        """-E and its derivatives in scaled variables (to be minimized)."""
        out = _evaluate(self.model, self.marginal, self.to_site(z), hessian)
        value, g1, g2 = out[:3]
        if not np.isfinite(value):
            raise NonFiniteError("inner objective is not finite")
        g = -np.concatenate([g1, g2]) * self.scale
        if hessian:
            return -value, g, -out[5] * np.outer(self.scale, self.scale)
        return -value, g

    def projected_gradient(self, z, g):
        pg = g.copy()
        at_lo = z <= self.lo
        at_hi = z >= self.hi
        pg[at_lo] = np.minimum(pg[at_lo], 0.0)
        pg[at_hi] = np.maximum(pg[at_hi], 0.0)
        return float(np.max(np.abs(pg)))


def _solve_lbfgsb(prob, z0, tol, max_iter):
    res = optimize.minimize(
        prob.objective, z0, jac=True, method="L-BFGS-B",
        bounds=list(zip(np.where(np.isinf(prob.lo), None, prob.lo),
                        np.where(np.isinf(prob.hi), None, prob.hi))),
        options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0, "maxcor": 20, "maxls": 50},
    )
    return res.x, int(res.nit), False


def _newton_direction(H, g, held):
    free = ~held
    p = np.zeros_like(g)
    Hf = H[np.ix_(free, free)]
    try:
        c = linalg.cho_factor(Hf)
        p[free] = -linalg.cho_solve(c, g[free])
    except linalg.LinAlgError:
        ridge = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(Hf)))))
        p[free] = -np.linalg.solve(Hf + ridge * np.eye(Hf.shape[0]), g[free])
    p[held] = -g[held] / np.maximum(np.diag(H)[held], 1e-12)
    return p


def _solve_newton(prob, z, tol, max_iter):
    """Projected Newton iteration for a smooth convex function on a box."""
    z = prob.project(z)
    f, g, H = prob.objective(z, hessian=True)
    pg = prob.projected_gradient(z, g)
    it = 0
    while it < max_iter:
        if pg < tol:
            break
        it += 1
        width = min(1e-3, float(np.max(np.abs(z - prob.project(z - g)))))
        held = ((z <= prob.lo + width) & (g > 0)) | ((z >= prob.hi - width) & (g < 0))
        p = _newton_direction(H, g, held)
        flat = NEWTON_DECREMENT_TOL * (1.0 + abs(f))
        decrement = -(g @ (prob.project(z + p) - z))
        if decrement < flat:
            # clipping a long Newton step can turn it uphill: hold what it clips
            clipped = ~held & ((z + p < prob.lo) | (z + p > prob.hi))
            if clipped.any():
                p = _newton_direction(H, g, held | clipped)
            decrement = -(g @ (prob.project(z + p) - z))
            if decrement < flat:
                # diagonally scaled projected gradient, a descent direction whenever pg > 0
                p = -g / np.maximum(np.diag(H), 1e-12)
                decrement = -(g @ (prob.project(z + p) - z))
                if decrement < flat:
                    # predicted gain is at roundoff level: f is exact to machine precision,
                    # and the gradient left over is noise from an ill-conditioned A
                    return z, it - 1, True
        alpha = 1.0
        accepted = False
        for _ in range(60):
            z_new = prob.project(z + alpha * p)
            f_new, _ = prob.objective(z_new)
            if f_new <= f + 1e-4 * g @ (z_new - z):
                accepted = True
                break
            alpha *= 0.5
        if not accepted or not f_new < f:
            return z, it, pg < tol or decrement < NOISE_DECREMENT_TOL * (1.0 + abs(f))
        z = z_new
        f, g, H = prob.objective(z, hessian=True)
        pg = prob.projected_gradient(z, g)
    return z, it, pg < tol


def inner_maximize(model: ModelInstance, marginal: NaturalTuple, warm_start: Optional[NaturalTuple] = None,
                   eps: float = DEFAULT_EPS, inner_tol: float = 1e-8,
                   inner_max_iters: int = 500, solver: str = "newton") -> InnerSolution:
    """Maximize E(marginal, marginal - site, site) over site with eps <= site.second <= marginal.second - eps.

    Works in the rescaled variables (site.first / sqrt(v2), site.second / v2),
    v2 = marginal.second, in which the curvature stays moderate even when
    precisions span many orders of magnitude; ``inner_tol`` bounds the
    projected gradient in these variables. ``solver`` is "newton" (projected
    Newton with the exact Hessian) or "lbfgsb".
    """
    marginal.check(3 * eps, "marginal")
    prob = _Scaled(model, marginal, eps)
    if warm_start is None:
        warm_start = marginal.scale(0.5)
    z0 = prob.project(prob.from_site(project_into_box(warm_start, marginal, eps)))
    if solver == "newton":
        z, nit, flat = _solve_newton(prob, z0, inner_tol, inner_max_iters)
    elif solver == "lbfgsb":
        z, nit, flat = _solve_lbfgsb(prob, z0, inner_tol, inner_max_iters)
    else:
        raise ValueError(f"unknown solver {solver!r}")

    d = model.d
    v2 = marginal.second
    site = prob.to_site(z)
    at_site = z[d:] <= prob.lo[d:]
    at_cav = z[d:] >= prob.hi[d:]
    at_site |= site.second - eps <= ACTIVE_TOL
    at_cav |= (v2 - site.second) - eps <= ACTIVE_TOL * np.maximum(1.0, v2)
    # pin active coordinates exactly onto their bound
    second = np.where(at_site, eps, site.second)
    second = np.where(at_cav, v2 - eps, second)
    site = NaturalTuple(site.first, second)
    cavity = NaturalTuple(marginal.first - site.first, np.where(at_cav, eps, v2 - second))

    value, g1, g2, qm, pm = _evaluate(model, marginal, site)
    pg = prob.projected_gradient(np.concatenate([z[:d], np.where(at_site, prob.lo[d:], np.where(at_cav, prob.hi[d:], z[d:]))]),
                                 -np.concatenate([g1, g2]) * prob.scale)
    active = [
        Active.SITE_AT_EPS if a else Active.CAVITY_AT_EPS if c else Active.NONE
        for a, c in zip(at_site, at_cav)
    ]
    degraded = not (pg < inner_tol or flat)
    if degraded:
        log.debug("inner solve stopped at projected gradient %.3g after %d iterations", pg, nit)
    return InnerSolution(
        site_star=site, cavity_star=cavity, marginal=marginal, inner_value=value,
        active_set=active, q_moments=qm, p_moments=pm, grad_norm=pg,
        iterations=nit, degraded=degraded,
    )


def extract_multipliers(sol: InnerSolution, model: Optional[ModelInstance] = None) -> Multipliers:
    """Lagrange multipliers of the inner problem from its stationarity conditions.

    lambda_1 = -E_Q[w]; lambda_2 + mu_1 = E_P[w^2] / 2; lambda_2 + mu_2 = E_Q[w^2] / 2,
    with mu_1 (cavity bound) or mu_2 (site bound) zero whenever its bound is slack.
    """
    qm, pm = sol.q_moments, sol.p_moments
    eq2 = qm.second_moment
    ep2 = pm.second_moment
    lam1 = -qm.mean
    site_active = np.array([a is Active.SITE_AT_EPS for a in sol.active_set])
    lam2 = np.where(site_active, 0.5 * ep2, 0.5 * eq2)
    mu1 = 0.5 * ep2 - lam2
    mu2 = 0.5 * eq2 - lam2
    cav_active = np.array([a is Active.CAVITY_AT_EPS for a in sol.active_set])
    interior = ~(site_active | cav_active)
    mu1 = np.where(site_active | interior, 0.0, mu1)
    mu2 = np.where(cav_active | interior, 0.0, mu2)
    worst = max(np.max(mu1), np.max(mu2))
    if worst > MU_TOL:
        raise NonKKTPointError(f"recovered multiplier {worst:.3g} > 0; inner solve not converged")
    mult = Multipliers(lam1, lam2, np.minimum(mu1, 0.0), np.minimum(mu2, 0.0))
    sol.multipliers = mult
    return mult


def outer_update(mult: Multipliers, eps: float = DEFAULT_EPS) -> NaturalTuple:
    """Minimize lambda_1.v1 + lambda_2.v2 + log Ztilde(v) subject to v2 >= 3 eps."""
    lam1 = np.asarray(mult.lambda_1, dtype=float)
    lam2 = np.asarray(mult.lambda_2, dtype=float)
    denom = 2.0 * lam2 - lam1**2
    if not np.all(np.isfinite(denom)):
        raise NonFiniteError("non-finite multipliers")
    if np.any(denom <= 0):
        # the per-coordinate objective decreases without bound in v2
        raise ValueError("2 lambda_2 - lambda_1^2 must be positive")
    v2 = np.maximum(1.0 / denom, 3.0 * eps)
    return NaturalTuple(-lam1 * v2, v2)


def initial_marginal(model: ModelInstance, eps: float = DEFAULT_EPS) -> NaturalTuple:
    return NaturalTuple.constant(model.d, 0.0, max(2.0 / model.slab_var, 3.0 * eps))


def descent_slack(value: float) -> float:
    return 1e-8 * (1.0 + abs(value))


def site_scale(sol: InnerSolution) -> np.ndarray:
    """Per-site log scale so that log Z(site) + sum(scale) approximates log evidence."""
    return sol.p_moments.log_partition - log_Z_tilde_terms(sol.marginal)


def rescaled_warm_start(sol: InnerSolution, marginal: NaturalTuple, eps: float = DEFAULT_EPS) -> NaturalTuple:
    """Carry the previous site/cavity split over to a new marginal.

    The cavity keeps its mean and its share of the marginal precision.
    """
    ratio = marginal.second / sol.marginal.second
    cavity = NaturalTuple(sol.cavity_star.first * ratio, sol.cavity_star.second * ratio)
    return project_into_box(marginal - cavity, marginal, eps)


def extrapolate(v_old: NaturalTuple, v_new: NaturalTuple, kappa: float, eps: float = DEFAULT_EPS) -> NaturalTuple:
    first = v_old.first + kappa * (v_new.first - v_old.first)
    second = v_old.second + kappa * (v_new.second - v_old.second)
    return NaturalTuple(first, np.maximum(second, 3.0 * eps))


def run_pcep(model: ModelInstance, eps: float = DEFAULT_EPS, outer_tol: float = 1e-8,
             max_outer: int = 200, inner_tol: float = 1e-8, inner_max_iters: int = 500,
             marginal: Optional[NaturalTuple] = None, accelerate: bool = True,
             max_kappa: float = 1024.0, solver: str = "newton") -> EPResult:
    """Double-loop minimization of the constrained EP energy.

    With ``accelerate`` the outer step is over-relaxed, v + kappa (v_plain - v),
    and kept only when its inner maximum is below the current energy; on
    rejection the plain step is taken and kappa resets to 2. Spike-dominated
    coordinates otherwise approach their fixed point at a rate close to 1.
    """
    if max_outer < 1:
        raise ValueError("max_outer must be >= 1")
    if not (eps > 0 and outer_tol > 0 and inner_tol > 0 and inner_max_iters >= 1):
        raise ValueError("eps, outer_tol, inner_tol and inner_max_iters must be positive")
    v = initial_marginal(model, eps) if marginal is None else marginal
    bound = lower_bound(model.n, model.d, model.noise_var)
    sol = inner_maximize(model, v, v.scale(0.5), eps, inner_tol, inner_max_iters, solver)
    inner_total = sol.iterations
    trace = [sol.inner_value]
    converged = False
    kappa = 1.0
    n_accel = 0
    while len(trace) < max_outer:
        mult = extract_multipliers(sol, model)
        v_plain = outer_update(mult, eps)
        new = None
        if accelerate and kappa > 1.0:
            v_try = extrapolate(v, v_plain, kappa, eps)
            cand = inner_maximize(model, v_try, rescaled_warm_start(sol, v_try, eps),
                                  eps, inner_tol, inner_max_iters, solver)
            inner_total += cand.iterations
            if cand.inner_value <= trace[-1]:
                new = cand
                n_accel += 1
                kappa = min(2.0 * kappa, max_kappa)
        if new is None:
            new = inner_maximize(model, v_plain, rescaled_warm_start(sol, v_plain, eps),
                                 eps, inner_tol, inner_max_iters, solver)
            inner_total += new.iterations
            kappa = 2.0
        value = new.inner_value
        if value > trace[-1] + descent_slack(trace[-1]):
            raise DescentViolationError(
                f"energy rose from {trace[-1]:.12g} to {value:.12g} at outer step {len(trace)}",
                trace + [value])
        if value < bound - descent_slack(bound):
            log.warning("energy %.6g below lower bound %.6g", value, bound)
        drop = trace[-1] - value
        trace.append(value)
        sol, v = new, new.marginal
        if drop < outer_tol:
            converged = True
            break
        if drop < 10 * outer_tol:
            inner_tol = max(0.5 * inner_tol, INNER_TOL_FLOOR)

    delta = trace[-2] - trace[-1] if len(trace) > 1 else np.inf
    return EPResult(
        site=sol.site_star, moments=sol.q_moments, energy_trace=trace, converged=converged,
        iterations=len(trace), max_delta=float(delta), inner_iterations=inner_total,
        log_evidence=-sol.inner_value,
        info={"inner": sol, "marginal": sol.marginal, "lower_bound": bound,
              "accelerated_steps": n_accel},
    )


def inner_energy_check(model, sol, eps=DEFAULT_EPS):
    """Recompute the inner value through the validated energy entry point."""
    return energy(model, sol.marginal, sol.cavity_star, sol.site_star, eps).total
