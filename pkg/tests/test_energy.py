import numpy as np
import pytest
from scipy import integrate

from conftest import generic_instance, sparse_instance
from ssep.energy import (
    EnergyBreakdown,
    check_admissible,
    energy,
    energy_at,
    log_Z_tilde,
    lower_bound,
)
from ssep.errors import EqualityConstraintError, InequalityConstraintError
from ssep.model import LOG_2PI, ModelInstance, NaturalTuple, log_Z
from ssep.pc_ep import inner_maximize
from ssep.r_ep import cavity_from, run_rep
from ssep.tilted import log_Z_hat

EPS = 1e-6


def test_log_Z_tilde_closed_forms():
    assert log_Z_tilde(NaturalTuple([0.0], [1.0])) == pytest.approx(0.91894, abs=1e-5)
    assert log_Z_tilde(NaturalTuple([2.0], [2.0])) == pytest.approx(0.5 * np.log(np.pi) + 1.0, abs=1e-14)
    assert log_Z_tilde(NaturalTuple([2.0], [2.0])) == pytest.approx(1.57236, abs=1e-5)


def test_log_Z_tilde_quadrature(rng):
    v = NaturalTuple(rng.normal(size=4), rng.uniform(0.3, 3.0, 4))
    ref = sum(np.log(integrate.quad(lambda w: np.exp(a * w - 0.5 * b * w * w), -np.inf, np.inf,
                                    epsabs=1e-14, epsrel=1e-13)[0])
              for a, b in zip(v.first, v.second))
    assert log_Z_tilde(v) == pytest.approx(ref, abs=1e-9)


def test_log_Z_tilde_rejects_small_precision():
    with pytest.raises(InequalityConstraintError):
        log_Z_tilde(NaturalTuple([0.0], [2e-6]), eps=EPS)


def test_toy_energy_from_closed_forms():
    model = ModelInstance([[0.0]], [0.0], 1.0, 0.5, 1.0)
    half = NaturalTuple([0.0], [1.0])
    e = energy(model, NaturalTuple([0.0], [2.0]), half, half)
    expect_log_Z = 0.0
    expect_log_Z_hat = np.log(0.5 + 0.5 * 2**-0.5)
    expect_tilde = 0.5 * LOG_2PI - 0.5 * np.log(2.0)
    assert e.neg_log_Z == pytest.approx(-expect_log_Z, abs=1e-14)
    assert e.neg_log_Z_hat == pytest.approx(-expect_log_Z_hat, abs=1e-14)
    assert e.log_Z_tilde == pytest.approx(expect_tilde, abs=1e-14)
    assert e.total == e.neg_log_Z + e.neg_log_Z_hat + e.log_Z_tilde


def test_lower_bound_values():
    assert lower_bound(10, 25, 0.005**2) == pytest.approx(-52.46, abs=5e-3)
    assert lower_bound(3, 6, 1 / (2 * np.pi)) == pytest.approx(-3 * np.log(2), abs=1e-14)
    with pytest.raises(ValueError):
        lower_bound(0, 3, 1.0)
    with pytest.raises(ValueError):
        lower_bound(3, 0, 1.0)
    with pytest.raises(ValueError):
        lower_bound(3, 3, 0.0)


def _random_marginal(rng, d):
    return NaturalTuple(rng.normal(size=d) * rng.choice([0.1, 1.0, 10.0]),
                        np.exp(rng.uniform(np.log(3 * EPS), np.log(1e6), d)))


def test_midpoint_triples_respect_lower_bound():
    rng = np.random.default_rng(7)
    models = [sparse_instance(s, d=int(rng.integers(1, 7)), n=int(rng.integers(1, 5)),
                              noise_std=float(rng.choice([0.005, 0.1, 1.0])))
              for s in range(20)]
    worst = np.inf
    for k in range(10_000):
        model = models[k % len(models)]
        v = _random_marginal(rng, model.d)
        mid = v.scale(0.5)
        e = energy(model, v, mid, mid, EPS).total
        worst = min(worst, e - lower_bound(model.n, model.d, model.noise_var))
    assert worst >= -1e-9


def test_per_term_bounds_at_midpoint(rng):
    for s in range(50):
        model = sparse_instance(s, d=4, n=3, noise_std=0.1)
        v = _random_marginal(rng, 4)
        v1, v2 = v.first, v.second
        mid = v.scale(0.5)
        a = v1**2 / (4 * v2)
        lz = log_Z(model, mid)
        assert -lz >= 0.5 * model.n * np.log(2 * np.pi * model.noise_var) - 2 * np.log(4 * np.pi) \
            - np.sum(a - 0.5 * np.log(v2)) - 1e-9
        assert log_Z_tilde(v) >= 2 * LOG_2PI + np.sum(2 * a - 0.5 * np.log(v2)) - 1e-9
        assert -log_Z_hat(mid, model) >= -np.sum(a) - 1e-9


def test_inner_maxima_respect_lower_bound(rng):
    for s in range(15):
        model = sparse_instance(s, d=6, n=3)
        v = _random_marginal(rng, 6)
        sol = inner_maximize(model, v, v.scale(0.5))
        assert sol.inner_value >= lower_bound(3, 6, model.noise_var) - 1e-9


def test_bound_does_not_hold_at_every_admissible_triple():
    # opposite linear parameters in site and cavity keep the marginal fixed while
    # -log Zhat falls like -t^2: the bound needs the inner maximum (or the midpoint)
    model = sparse_instance(0, d=2, n=2)
    v = NaturalTuple([0.0, 0.0], [2.0, 2.0])
    t = 20.0
    site = NaturalTuple([t, 0.0], [1.0, 1.0])
    e = energy_at(model, v, site, EPS).total
    assert e < lower_bound(2, 2, model.noise_var) - 50


def test_rep_fixed_point_is_stationary():
    rng = np.random.default_rng(11)
    model = generic_instance(rng, 4, 3, noise_var=0.3)
    res = run_rep(model, damping=0.7, max_iter=2000, tol=1e-12)
    assert res.converged
    site = res.site
    marginal = site + cavity_from(site, res.moments, EPS)
    e0 = energy_at(model, marginal, site, EPS).total
    h = 1e-4
    for i in range(4):
        for part in (0, 1):
            e = np.zeros(4)
            e[i] = h
            bump = NaturalTuple(e, np.zeros(4)) if part == 0 else NaturalTuple(np.zeros(4), e)
            # move the site, keep the marginal: cavity absorbs the change
            up = energy_at(model, marginal, site + bump, EPS).total
            dn = energy_at(model, marginal, site - bump, EPS).total
            assert abs(up - e0) < 1e-7 and abs(dn - e0) < 1e-7
            assert abs(up - dn) / (2 * h) < 1e-6
            # move the marginal with the site, cavity fixed
            up = energy_at(model, marginal + bump, site + bump, EPS).total
            dn = energy_at(model, marginal - bump, site - bump, EPS).total
            assert abs(up - dn) / (2 * h) < 1e-6


def test_admissibility_errors():
    v = NaturalTuple([0.0], [2.0])
    site = NaturalTuple([0.0], [1.0])
    check_admissible(v, v - site, site, EPS)
    with pytest.raises(EqualityConstraintError):
        check_admissible(v, NaturalTuple([0.1], [1.0]), site, EPS)
    with pytest.raises(InequalityConstraintError):
        check_admissible(NaturalTuple([0.0], [1.0]), NaturalTuple([0.0], [1.5]), NaturalTuple([0.0], [-0.5]), EPS)
    with pytest.raises(InequalityConstraintError):
        check_admissible(NaturalTuple([0.0], [2.5e-6]), NaturalTuple([0.0], [1.5e-6]),
                         NaturalTuple([0.0], [1e-6]), EPS)
    with pytest.raises(InequalityConstraintError):
        energy_at(ModelInstance([[1.0]], [0.0], 1.0, 0.5, 1.0), v, NaturalTuple([0.0], [2.0]), EPS)


def test_breakdown_total():
    b = EnergyBreakdown(1.5, -0.25, 2.0)
    assert b.total == 3.25
