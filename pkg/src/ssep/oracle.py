"""Exact posterior by enumerating all 2^d spike/slab assignments."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .model import LOG_2PI, ModelInstance

MAX_D = 15


@dataclass(frozen=True)
class ExactPosterior:
    mean: np.ndarray
    marg_var: np.ndarray
    log_evidence: float
    inclusion_prob: np.ndarray
    log_weights: np.ndarray  # normalized, one per configuration


def configurations(d: int) -> np.ndarray:
    """All binary vectors of length d, as a (2^d, d) bool array in lexicographic order."""
    return np.array(list(itertools.product((False, True), repeat=d)), dtype=bool).reshape(-1, d)


def _config_terms(model, z):
    """log N(y | 0, s2 I + v X_z X_z^T) and the conditional posterior of w_z."""
    X, y, s2, v = model.X, model.y, model.noise_var, model.slab_var
    n = model.n
    Xz = X[:, z]
    cov = s2 * np.eye(n) + v * Xz @ Xz.T
    L = linalg.cholesky(cov, lower=True)
    alpha = linalg.solve_triangular(L, y, lower=True)
    log_lik = -0.5 * alpha @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI
    k = Xz.shape[1]
    if k == 0:
        return log_lik, np.zeros(0), np.zeros(0)
    # posterior precision of w_z: X_z^T X_z / s2 + I / v
    prec = Xz.T @ Xz / s2 + np.eye(k) / v
    c, low = linalg.cho_factor(prec, lower=True)
    mean = linalg.cho_solve((c, low), Xz.T @ y / s2)
    cov_w = linalg.cho_solve((c, low), np.eye(k))
    return log_lik, mean, np.diag(cov_w)


def exact_posterior(model: ModelInstance, max_d: int = MAX_D) -> ExactPosterior:
    d = model.d
    if d > max_d:
        raise ValueError(f"d = {d} exceeds max_d = {max_d}")
    log_p = np.log(model.slab_prob)
    log_q = np.log1p(-model.slab_prob)
    Z = configurations(d)
    log_w = np.empty(len(Z))
    first = np.zeros((len(Z), d))
    second = np.zeros((len(Z), d))
    for j, z in enumerate(Z):
        k = int(z.sum())
        log_lik, mean, var = _config_terms(model, z)
        log_w[j] = k * log_p + (d - k) * log_q + log_lik
        first[j, z] = mean
        second[j, z] = var + mean**2
    log_ev = float(logsumexp(log_w))
    log_norm = log_w - log_ev
    weights = np.exp(log_norm)
    mean = weights @ first
    m2 = weights @ second
    incl = weights @ Z.astype(float)
    return ExactPosterior(
        mean=mean,
        marg_var=np.maximum(m2 - mean**2, 0.0),
        log_evidence=log_ev,
        inclusion_prob=np.clip(incl, 0.0, 1.0),
        log_weights=log_norm,
    )
