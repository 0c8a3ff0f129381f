import numpy as np
import pytest
from scipy import integrate

from conftest import generic_instance, random_site, sparse_instance
from ssep.errors import InequalityConstraintError, NotPositiveDefiniteError
from ssep.model import (
    LOG_2PI,
    ModelInstance,
    NaturalTuple,
    choose_method,
    log_Z,
    posterior_covariance,
    posterior_moments,
)


def test_zero_design_gives_prior_moments():
    model = ModelInstance(np.zeros((3, 4)), np.zeros(3), 1.0, 0.2, 1.0)
    m = posterior_moments(model, NaturalTuple.constant(4, 0.0, 1.0))
    np.testing.assert_allclose(m.mean, 0.0)
    np.testing.assert_allclose(m.marg_var, 1.0)


def test_scalar_closed_form():
    model = ModelInstance([[1.0]], [1.0], 1.0, 0.5, 1.0)
    m = posterior_moments(model, NaturalTuple([0.0], [1.0]))
    np.testing.assert_allclose(m.mean, [0.5])
    np.testing.assert_allclose(m.marg_var, [0.5])


def test_log_Z_decoupled():
    # N(0 | 0, 1) integrated against exp(-w^2/2): (2 pi)^(-1/2) (2 pi)^(1/2) = 1
    model = ModelInstance([[0.0]], [0.0], 1.0, 0.5, 1.0)
    f = lambda w: np.exp(-0.5 * LOG_2PI - 0.5 * w * w)
    ref = np.log(integrate.quad(f, -np.inf, np.inf, epsabs=1e-14)[0])
    assert ref == pytest.approx(0.0, abs=1e-12)
    assert log_Z(model, NaturalTuple([0.0], [1.0])) == pytest.approx(ref, abs=1e-12)


def test_log_Z_scalar_quadrature():
    # integral of N(1 | w, 1) exp(-w^2 / 2) dw
    model = ModelInstance([[1.0]], [1.0], 1.0, 0.5, 1.0)
    f = lambda w: np.exp(-0.5 * (1.0 - w) ** 2 - 0.5 * LOG_2PI - 0.5 * w * w)
    ref = np.log(integrate.quad(f, -np.inf, np.inf, epsabs=1e-14)[0])
    assert log_Z(model, NaturalTuple([0.0], [1.0])) == pytest.approx(ref, abs=1e-8)


def test_log_Z_dense_formula(rng):
    # the textbook expression, evaluated with explicit inverses
    for _ in range(5):
        model = generic_instance(rng, 4, 6)
        site = random_site(rng, 4)
        X, y, s2 = model.X, model.y, model.noise_var
        A = X.T @ X / s2 + np.diag(site.second)
        b = site.first + X.T @ y / s2
        ref = (-0.5 * model.n * np.log(2 * np.pi * s2) - 0.5 * y @ y / s2
               + 0.5 * b @ np.linalg.solve(A, b) - 0.5 * np.linalg.slogdet(A)[1] + 0.5 * model.d * LOG_2PI)
        assert log_Z(model, site) == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_woodbury_matches_direct(rng):
    for _ in range(10):
        model = generic_instance(rng, 8, 3)
        site = random_site(rng, 8)
        a = posterior_moments(model, site, "direct")
        b = posterior_moments(model, site, "woodbury")
        np.testing.assert_allclose(b.mean, a.mean, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(b.marg_var, a.marg_var, rtol=1e-10)
        assert log_Z(model, site, "woodbury") == pytest.approx(log_Z(model, site, "direct"), rel=1e-10)


def test_moments_against_dense_inverse(rng):
    model = generic_instance(rng, 8, 3)
    site = random_site(rng, 8)
    A = model.X.T @ model.X / model.noise_var + np.diag(site.second)
    S = np.linalg.inv(A)
    m = S @ (site.first + model.X.T @ model.y / model.noise_var)
    for method in ("direct", "woodbury"):
        pm = posterior_moments(model, site, method)
        np.testing.assert_allclose(pm.mean, m, rtol=1e-10)
        np.testing.assert_allclose(pm.marg_var, np.diag(S), rtol=1e-10)
    np.testing.assert_allclose(posterior_covariance(model, site), S, rtol=1e-9, atol=1e-12)


def test_method_selection():
    rng = np.random.default_rng(1)
    wide = generic_instance(rng, 8, 3)
    tall = generic_instance(rng, 3, 8)
    assert choose_method(wide, NaturalTuple.constant(8, 0.0, 1.0)) == "woodbury"
    assert choose_method(tall, NaturalTuple.constant(3, 0.0, 1.0)) == "direct"
    # tiny site precisions make the n x n system ill-conditioned
    assert choose_method(wide, NaturalTuple.constant(8, 0.0, 1e-6)) == "direct"


def test_log_Z_gradients(rng):
    h = 1e-6
    for _ in range(10):
        d = int(rng.integers(1, 8))
        model = generic_instance(rng, d, int(rng.integers(1, 6)))
        site = random_site(rng, d)
        pm = posterior_moments(model, site)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            g1 = (log_Z(model, NaturalTuple(site.first + e, site.second))
                  - log_Z(model, NaturalTuple(site.first - e, site.second))) / (2 * h)
            g2 = (log_Z(model, NaturalTuple(site.first, site.second + e))
                  - log_Z(model, NaturalTuple(site.first, site.second - e))) / (2 * h)
            assert g1 == pytest.approx(pm.mean[i], rel=1e-5, abs=1e-7)
            assert g2 == pytest.approx(-0.5 * (pm.marg_var[i] + pm.mean[i] ** 2), rel=1e-5, abs=1e-7)


def test_zero_design_scaling():
    # with X = 0 the moments are those of the sites alone
    model = ModelInstance(np.zeros((2, 3)), np.ones(2), 0.7, 0.2, 1.0)
    site = NaturalTuple([1.0, -2.0, 0.5], [2.0, 4.0, 0.5])
    for c in (0.5, 3.0):
        pm = posterior_moments(model, site.scale(c))
        np.testing.assert_allclose(pm.marg_var, 1.0 / (c * site.second))
        np.testing.assert_allclose(pm.mean, site.first / site.second)


def test_log_Z_extended_precision():
    # widely spread site precisions; at 1e-6 the value itself is only defined to ~1e-6
    # by the rounding of X, so the reference stops at 1e-2
    import mpmath

    model = sparse_instance(3, d=12, n=4)
    rng = np.random.default_rng(3)
    prec = np.where(rng.random(12) < 0.5, 1e-2, 1e3)
    site = NaturalTuple(prec * rng.normal(size=12) * 0.1, prec)
    mpmath.mp.dps = 50
    X, y, s2 = model.X, model.y, model.noise_var
    A = mpmath.matrix((X.T @ X).tolist()) / s2
    for i in range(12):
        A[i, i] += mpmath.mpf(site.second[i])
    b = mpmath.matrix(site.first.tolist()) + mpmath.matrix((X.T @ y).tolist()) / s2
    yy = sum(mpmath.mpf(v) ** 2 for v in y)
    quad = (b.T * mpmath.lu_solve(A, b))[0]
    ref = (-2 * mpmath.log(2 * mpmath.pi * s2) - yy / (2 * s2)
           + quad / 2 - mpmath.log(mpmath.det(A)) / 2 + 6 * mpmath.log(2 * mpmath.pi))
    assert log_Z(model, site) == pytest.approx(float(ref), abs=1e-9)


def test_invalid_models():
    with pytest.raises(ValueError):
        ModelInstance(np.ones((2, 2)), np.ones(3), 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        ModelInstance(np.ones((2, 2)), np.ones(2), 0.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        ModelInstance(np.ones((2, 2)), np.ones(2), 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ModelInstance(np.ones((2, 2)), np.ones(2), 1.0, 0.5, -1.0)
    with pytest.raises(ValueError):
        ModelInstance([[np.nan]], [1.0], 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        ModelInstance(np.ones((0, 2)), np.ones(0), 1.0, 0.5, 1.0)


def test_model_is_immutable():
    model = ModelInstance(np.ones((2, 2)), np.ones(2), 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        model.X[0, 0] = 3.0


def test_bad_site():
    model = ModelInstance(np.ones((2, 3)), np.ones(2), 1.0, 0.5, 1.0)
    with pytest.raises(NotPositiveDefiniteError):
        posterior_moments(model, NaturalTuple.constant(3, 0.0, -1.0))
    with pytest.raises(ValueError):
        posterior_moments(model, NaturalTuple.constant(2, 0.0, 1.0))
    with pytest.raises(ValueError):
        posterior_moments(model, NaturalTuple.constant(3, 0.0, 1.0), method="qr")


def test_natural_tuple_ops():
    a = NaturalTuple([1.0, 2.0], [3.0, 4.0])
    b = NaturalTuple.from_vector(a.as_vector())
    np.testing.assert_array_equal(b.first, a.first)
    np.testing.assert_array_equal((a + a - a).second, a.second)
    np.testing.assert_array_equal(a.scale(2).first, [2.0, 4.0])
    with pytest.raises(InequalityConstraintError):
        a.check(3.5)
    with pytest.raises(ValueError):
        NaturalTuple([1.0], [1.0, 2.0])
