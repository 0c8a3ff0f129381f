"""Quick self-checks at small d, used by ``ssep validate``."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .energy import log_Z_tilde_terms, lower_bound
from .model import LOG_2PI, ModelInstance, NaturalTuple, log_Z, posterior_moments
from .oracle import exact_posterior
from .pc_ep import run_pcep
from .r_ep import run_rep
from .tilted import tilted_moments


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def random_instance(rng, d, n, noise_std=0.005, slab_prob=0.2, slab_var=1.0):
    w = np.where(rng.random(d) < slab_prob, rng.normal(0.0, np.sqrt(slab_var), d), 0.0)
    X = rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    y = X @ w + noise_std * rng.standard_normal(n)
    return ModelInstance(X, y, noise_std**2, slab_prob, slab_var)


def _rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def check_gradients(rng, trials=10, h=1e-6) -> Check:
    worst = 0.0
    for _ in range(trials):
        d, n = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        model = ModelInstance(rng.standard_normal((n, d)), rng.standard_normal(n), 0.5, 0.3, 1.5)
        site = NaturalTuple(rng.normal(size=d), rng.uniform(0.5, 3.0, d))
        qm = posterior_moments(model, site)
        i = int(rng.integers(d))
        e = np.zeros(d)
        e[i] = h
        fd1 = (log_Z(model, NaturalTuple(site.first + e, site.second))
               - log_Z(model, NaturalTuple(site.first - e, site.second))) / (2 * h)
        fd2 = (log_Z(model, NaturalTuple(site.first, site.second + e))
               - log_Z(model, NaturalTuple(site.first, site.second - e))) / (2 * h)
        worst = max(worst, _rel(fd1, qm.mean[i]), _rel(fd2, -0.5 * qm.second_moment[i]))

        c1, c2 = rng.normal(), rng.uniform(0.2, 5.0)
        tm = tilted_moments(c1, c2, model.slab_prob, model.slab_var)
        lz = lambda a, b: tilted_moments(a, b, model.slab_prob, model.slab_var).log_partition
        worst = max(worst,
                    _rel((lz(c1 + h, c2) - lz(c1 - h, c2)) / (2 * h), tm.mean),
                    _rel((lz(c1, c2 + h) - lz(c1, c2 - h)) / (2 * h), -0.5 * tm.second_moment))

        v1, v2 = rng.normal(), rng.uniform(0.2, 5.0)
        lt = lambda a, b: log_Z_tilde_terms(NaturalTuple([a], [b]))[0]
        worst = max(worst,
                    _rel((lt(v1 + h, v2) - lt(v1 - h, v2)) / (2 * h), v1 / v2),
                    _rel((lt(v1, v2 + h) - lt(v1, v2 - h)) / (2 * h), -0.5 * (1 / v2 + (v1 / v2) ** 2)))
    return Check("gradient coherence", worst < 1e-5, f"max rel err {worst:.2e}")


def check_tilted_quadrature(rng, points=40) -> Check:
    worst = 0.0
    for _ in range(points):
        c1, c2 = rng.uniform(-3, 3), rng.uniform(0.1, 10.0)
        p, v = rng.uniform(0.05, 0.95), rng.uniform(0.2, 3.0)
        tm = tilted_moments(c1, c2, p, v)
        # slab part by quadrature, spike part (point mass at 0) contributes 1 - p to Z only
        dens = lambda w: p * np.exp(c1 * w - 0.5 * c2 * w * w - 0.5 * w * w / v) / np.sqrt(2 * np.pi * v)
        z = (1 - p) + integrate.quad(dens, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
        m1 = integrate.quad(lambda w: w * dens(w), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)[0] / z
        m2 = integrate.quad(lambda w: w * w * dens(w), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)[0] / z
        worst = max(worst, abs(np.log(z) - tm.log_partition), abs(m1 - tm.mean), abs(m2 - tm.second_moment))
    return Check("tilted moments vs quadrature", worst < 1e-7, f"max abs err {worst:.2e}")


def check_oracle_formulations(rng, d=5, n=3) -> Check:
    model = random_instance(rng, d, n)
    ex = exact_posterior(model)
    X, y, s2, v, p = model.X, model.y, model.noise_var, model.slab_var, model.slab_prob
    log_w, means = [], []
    for z in itertools.product((False, True), repeat=d):
        z = np.array(z)
        k = int(z.sum())
        prec = X[:, z].T @ X[:, z] / s2 + np.eye(k) / v
        b = X[:, z].T @ y / s2
        mu = np.linalg.solve(prec, b) if k else np.zeros(0)
        logdet = np.linalg.slogdet(prec)[1] if k else 0.0
        log_ev = -0.5 * n * (LOG_2PI + np.log(s2)) - 0.5 * y @ y / s2 + 0.5 * b @ mu - 0.5 * logdet - 0.5 * k * np.log(v)
        log_w.append(k * np.log(p) + (d - k) * np.log1p(-p) + log_ev)
        full = np.zeros(d)
        full[z] = mu
        means.append(full)
    log_w = np.array(log_w)
    mean = np.exp(log_w - logsumexp(log_w)) @ np.array(means)
    err = max(abs(logsumexp(log_w) - ex.log_evidence), float(np.max(np.abs(mean - ex.mean))))
    return Check("oracle, two enumerations agree", err < 1e-8, f"max err {err:.2e}")


def check_gaussian_limit(rng, d=5, n=3) -> Check:
    model = random_instance(rng, d, n, slab_prob=1.0 - 1e-12)
    ex = exact_posterior(model)
    rep = run_rep(model, damping=1.0, max_iter=50)
    pc = run_pcep(model, max_outer=20)
    err = max(float(np.max(np.abs(rep.mean - ex.mean))), float(np.max(np.abs(pc.mean - ex.mean))))
    return Check("Gaussian limit matches oracle", err < 1e-6 and rep.converged, f"max err {err:.2e}")


def check_descent(rng, runs=5, d=8, n=4) -> Check:
    bad = 0
    for _ in range(runs):
        model = random_instance(rng, d, n)
        trace = np.array(run_pcep(model, max_outer=60).energy_trace)
        slack = 1e-8 * (1.0 + np.abs(trace[:-1]))
        bad += int(np.sum(np.diff(trace) > slack))
        bad += int(np.sum(trace < lower_bound(n, d, model.noise_var)))
    return Check("PC-EP descent and lower bound", bad == 0, f"{runs} runs, {bad} violations")


def run_checks(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [
        check_gradients(rng),
        check_tilted_quadrature(rng),
        check_oracle_formulations(rng),
        check_gaussian_limit(rng),
        check_descent(rng),
    ]
