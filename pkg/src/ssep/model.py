"""Linear regression with spike-and-slab priors and its Gaussian EP approximation.

The approximation Q(w) multiplies the likelihood N(y | Xw, noise_var I) by one
Gaussian site per coefficient, exp(site.first[i] w_i - site.second[i] w_i^2 / 2).
Its precision is A = X^T X / noise_var + diag(site.second).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InequalityConstraintError, NotPositiveDefiniteError

DEFAULT_EPS = 1e-6
SLAB_PROB_CLAMP = 1e-12
WOODBURY_MAX_COND = 1e6

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ModelInstance:
    X: np.ndarray
    y: np.ndarray
    noise_var: float
    slab_prob: float
    slab_var: float

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got {X.shape}")
        if y.shape != (n,):
            raise ValueError(f"y has shape {y.shape}, expected ({n},)")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        if not self.noise_var > 0 or not np.isfinite(self.noise_var):
            raise ValueError(f"noise_var must be positive, got {self.noise_var}")
        if not self.slab_var > 0 or not np.isfinite(self.slab_var):
            raise ValueError(f"slab_var must be positive, got {self.slab_var}")
        if not 0.0 < self.slab_prob < 1.0:
            raise ValueError(f"slab_prob must lie in (0, 1), got {self.slab_prob}")
        p = min(max(float(self.slab_prob), SLAB_PROB_CLAMP), 1.0 - SLAB_PROB_CLAMP)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "noise_var", float(self.noise_var))
        object.__setattr__(self, "slab_var", float(self.slab_var))
        object.__setattr__(self, "slab_prob", p)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def log_odds(self) -> float:
        return float(np.log(self.slab_prob) - np.log1p(-self.slab_prob))


@dataclass(frozen=True)
class NaturalTuple:
    """Per-coordinate Gaussian natural parameters (linear, precision)."""

    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        first = np.array(self.first, dtype=float).reshape(-1)
        second = np.array(self.second, dtype=float).reshape(-1)
        if first.shape != second.shape:
            raise ValueError(f"length mismatch: {first.shape} vs {second.shape}")
        first.setflags(write=False)
        second.setflags(write=False)
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second", second)

    def __len__(self):
        return self.first.shape[0]

    def __add__(self, other: NaturalTuple) -> NaturalTuple:
        return NaturalTuple(self.first + other.first, self.second + other.second)

    def __sub__(self, other: NaturalTuple) -> NaturalTuple:
        return NaturalTuple(self.first - other.first, self.second - other.second)

    def scale(self, c: float) -> NaturalTuple:
        return NaturalTuple(c * self.first, c * self.second)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.first, self.second])

    @classmethod
    def from_vector(cls, vec) -> NaturalTuple:
        vec = np.asarray(vec, dtype=float)
        d = vec.shape[0] // 2
        return cls(vec[:d], vec[d:])

    @classmethod
    def constant(cls, d: int, first: float, second: float) -> NaturalTuple:
        return cls(np.full(d, float(first)), np.full(d, float(second)))

    def check(self, lower: float, name: str = "tuple") -> NaturalTuple:
        """Raise unless all entries are finite and ``second >= lower``."""
        if not (np.all(np.isfinite(self.first)) and np.all(np.isfinite(self.second))):
            raise InequalityConstraintError(f"{name} has non-finite entries")
        if np.any(self.second < lower):
            i = int(np.argmin(self.second))
            raise InequalityConstraintError(
                f"{name}.second[{i}] = {self.second[i]:.6g} < {lower:.6g}"
            )
        return self


@dataclass(frozen=True)
class PosteriorMoments:
    """Moments of the normalized Q.

    ``quadratic_term`` is (b^T A^-1 b - y^T y / noise_var) / 2 with
    b = site.first + X^T y / noise_var, evaluated in residual form.
    """

    mean: np.ndarray
    marg_var: np.ndarray
    log_det_A: float
    quadratic_term: float

    @property
    def second_moment(self) -> np.ndarray:
        return self.marg_var + self.mean**2

    def marginal(self) -> NaturalTuple:
        """Natural parameters of the per-coordinate marginals of Q."""
        prec = 1.0 / self.marg_var
        return NaturalTuple(self.mean * prec, prec)


def _cholesky(M, what):
    try:
        return linalg.cholesky(M, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite: {exc}") from None


def _moments_direct(model, site):
    X, s2 = model.X, model.noise_var
    A = X.T @ X / s2
    A[np.diag_indices_from(A)] += site.second
    L = _cholesky(A, "A")
    b = site.first + X.T @ model.y / s2
    mean = linalg.cho_solve((L, True), b)
    L_inv = linalg.solve_triangular(L, np.eye(model.d), lower=True)
    marg_var = np.sum(L_inv**2, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return mean, marg_var, log_det


def _moments_woodbury(model, site):
    # A^-1 = D^-1 - D^-1 X^T K^-1 X D^-1 with K = noise_var I + X D^-1 X^T
    X, s2 = model.X, model.noise_var
    dinv = 1.0 / site.second
    XD = X * dinv
    K = XD @ X.T
    K[np.diag_indices_from(K)] += s2
    L = _cholesky(K, "noise_var I + X D^-1 X^T")
    b = site.first + X.T @ model.y / s2
    db = dinv * b
    mean = db - XD.T @ linalg.cho_solve((L, True), X @ db)
    V = linalg.solve_triangular(L, XD, lower=True)
    marg_var = dinv - np.sum(V**2, axis=0)
    log_det = (
        np.sum(np.log(site.second))
        + 2.0 * np.sum(np.log(np.diag(L)))
        - model.n * np.log(s2)
    )
    return mean, marg_var, log_det


def choose_method(model: ModelInstance, site: NaturalTuple) -> str:
    """Woodbury when n < d, unless tiny site precisions make it inaccurate.

    cond(noise_var I + X D^-1 X^T) <= 1 + |X|_F^2 max(1/site.second) / noise_var;
    sites near the positivity bound push this past 1e10 and the Woodbury
    log-determinant then loses about six digits.
    """
    if model.n >= model.d:
        return "direct"
    bound = 1.0 + np.sum(model.X**2) * np.max(1.0 / site.second) / model.noise_var
    return "woodbury" if bound <= WOODBURY_MAX_COND else "direct"


def posterior_moments(model: ModelInstance, site: NaturalTuple, method: str = "auto") -> PosteriorMoments:
    """Mean, marginal variances and log-partition pieces of Q for the given sites.

    ``method`` is "direct" (d x d Cholesky), "woodbury" (n x n Cholesky) or
    "auto", which picks Woodbury iff n < d and the n x n system is well
    conditioned (see :func:`choose_method`).
    """
    if len(site) != model.d:
        raise ValueError(f"site has length {len(site)}, model has d = {model.d}")
    if np.any(~(site.second > 0)):
        raise NotPositiveDefiniteError("site precisions must be positive")
    if method == "auto":
        method = choose_method(model, site)
    if method == "direct":
        mean, marg_var, log_det = _moments_direct(model, site)
    elif method == "woodbury":
        mean, marg_var, log_det = _moments_woodbury(model, site)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(marg_var > 0):
        raise NotPositiveDefiniteError("non-positive marginal variance from factorization")
    # -(1/2) min_w [|y - Xw|^2 / s2 + w^T D w - 2 site.first^T w], attained at the mean;
    # avoids cancelling y^T y / s2 against b^T A^-1 b.
    resid = model.y - model.X @ mean
    quad = -0.5 * (
        resid @ resid / model.noise_var
        + np.sum(site.second * mean**2)
        - 2.0 * site.first @ mean
    )
    return PosteriorMoments(mean, marg_var, float(log_det), float(quad))


def posterior_covariance(model: ModelInstance, site: NaturalTuple) -> np.ndarray:
    """Full covariance A^-1 of Q (d x d)."""
    X, s2 = model.X, model.noise_var
    if choose_method(model, site) == "woodbury":
        dinv = 1.0 / site.second
        XD = X * dinv
        K = XD @ X.T
        K[np.diag_indices_from(K)] += s2
        L = _cholesky(K, "noise_var I + X D^-1 X^T")
        V = linalg.solve_triangular(L, XD, lower=True)
        return np.diag(dinv) - V.T @ V
    A = X.T @ X / s2
    A[np.diag_indices_from(A)] += site.second
    L = _cholesky(A, "A")
    return linalg.cho_solve((L, True), np.eye(model.d))


def log_Z_from_moments(model: ModelInstance, moments: PosteriorMoments) -> float:
    return (
        -0.5 * model.n * (LOG_2PI + np.log(model.noise_var))
        + moments.quadratic_term
        - 0.5 * moments.log_det_A
        + 0.5 * model.d * LOG_2PI
    )


def log_Z(model: ModelInstance, site: NaturalTuple, method: str = "auto") -> float:
    """log of the integral of the likelihood times the Gaussian sites."""
    return float(log_Z_from_moments(model, posterior_moments(model, site, method)))
