import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from returndensity.densities import (
    SCALE_FLOOR,
    GaussianParams,
    LaplaceParams,
    ModelKind,
    ParamTable,
    SkewedLaplaceParams,
    cdf,
    fisher_information,
    log_pdf,
    make_params,
    pdf,
    project,
    quantile,
    sample,
    score,
)

from conftest import random_params

KINDS = list(ModelKind)

centrals = st.floats(-20, 20)
scales = st.floats(0.05, 10)
skews = st.floats(0.02, 0.98)


def _params(kind, m, b, c):
    return make_params(kind, [m, b, c])


def _support(p, tail=1e-12):
    lo, hi = p.quantile(tail), p.quantile(1 - tail)
    return lo, hi


def quad_expect(p, fn, tail=1e-13):
    """E_p[fn(x)] with scipy's adaptive quadrature, split at the central parameter."""
    lo, hi = _support(p, tail)
    f = lambda x: fn(x) * math.exp(p.log_pdf(x))
    left = integrate.quad(f, lo, p.central, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    right = integrate.quad(f, p.central, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return left + right


# log_pdf ---------------------------------------------------------------------------------


def test_log_pdf_at_centre():
    assert log_pdf(GaussianParams(1.5, 2.0), 1.5) == pytest.approx(-math.log(math.sqrt(2 * math.pi) * 2.0))
    assert log_pdf(LaplaceParams(0.0, 1.0), 0.0) == pytest.approx(math.log(0.5))
    assert log_pdf(SkewedLaplaceParams(0.0, 1.0, 0.3), 0.0) == pytest.approx(math.log(0.21))


@pytest.mark.parametrize("kind", KINDS)
def test_normalisation(kind, rng):
    for _ in range(10):
        p = random_params(kind, rng)
        lo, hi = _support(p, 1e-11)
        total = sum(integrate.quad(lambda x: pdf(p, x), a, b, epsabs=1e-13, limit=200)[0]
                    for a, b in ((lo, p.central), (p.central, hi)))
        assert total == pytest.approx(1.0, abs=1e-6)


def test_skewed_half_equals_wide_laplace():
    x = np.linspace(-8, 8, 101)
    np.testing.assert_allclose(SkewedLaplaceParams(0.3, 1.2, 0.5).log_pdf(x),
                               LaplaceParams(0.3, 2.4).log_pdf(x), rtol=0, atol=1e-14)


# cdf / quantile ------------------------------------------------------------------------------


def test_cdf_at_centre():
    assert cdf(GaussianParams(3, 2), 3) == pytest.approx(0.5)
    assert cdf(LaplaceParams(-1, 2), -1) == pytest.approx(0.5)
    assert cdf(SkewedLaplaceParams(2, 1, 0.3), 2) == pytest.approx(0.3)


def test_cdf_reference_values():
    # numeric integration of the densities, frozen
    assert cdf(LaplaceParams(0, 1), -0.693147) == pytest.approx(0.25, abs=1e-6)
    assert cdf(GaussianParams(0, 1), 1.959964) == pytest.approx(0.975, abs=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_cdf_matches_integrated_density(kind, rng):
    for _ in range(5):
        p = random_params(kind, rng)
        lo = p.quantile(1e-14)
        for x in p.quantile(np.array([0.05, 0.4, 0.8])):
            pts = [v for v in (p.central,) if lo < v < x]
            val = integrate.quad(lambda t: pdf(p, t), lo, x, points=pts or None, epsabs=1e-13, limit=200)[0]
            assert cdf(p, x) == pytest.approx(val, abs=1e-9)


def test_quantile_reference_values():
    assert quantile(GaussianParams(0, 1), 0.975) == pytest.approx(1.959964, abs=1e-5)
    assert quantile(LaplaceParams(4, 3), 0.5) == pytest.approx(4)
    assert quantile(SkewedLaplaceParams(-2, 1.5, 0.3), 0.3) == pytest.approx(-2)


@pytest.mark.parametrize("kind", KINDS)
@given(m=centrals, b=scales, c=skews, q=st.floats(0.001, 0.999))
def test_quantile_cdf_roundtrip(kind, m, b, c, q):
    p = _params(kind, m, b, c)
    assert abs(cdf(p, quantile(p, q)) - q) <= 1e-9


@pytest.mark.parametrize("kind", KINDS)
def test_cdf_monotone_with_limits(kind, rng):
    p = random_params(kind, rng)
    x = np.linspace(p.central - 200, p.central + 200, 4001)
    c = cdf(p, x)
    assert np.all(np.diff(c) >= 0)
    assert c[0] < 1e-12 and c[-1] > 1 - 1e-12


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_quantile_rejects_out_of_range(q):
    with pytest.raises(ValueError):
        quantile(LaplaceParams(0, 1), q)


# score / Fisher --------------------------------------------------------------------------------


def test_score_examples():
    g = GaussianParams(1.0, 2.0)
    assert score(g, 3.0)[0] == pytest.approx(0.5)
    assert score(g, 1.0)[0] == 0.0
    assert score(LaplaceParams(0, 2), 1.0)[0] == pytest.approx(0.5)
    # right limit at the kink
    assert score(LaplaceParams(0, 2), 0.0)[0] == pytest.approx(0.5)
    assert score(SkewedLaplaceParams(0, 2, 0.3), 0.0)[0] == pytest.approx(0.3 / 2)


@pytest.mark.parametrize("kind", KINDS)
def test_score_finite_differences(kind, rng):
    h = 1e-6
    for _ in range(20):
        p = random_params(kind, rng)
        theta = p.as_array()
        x = p.quantile(rng.uniform(0.02, 0.98))
        if abs(x - p.central) < 1e-3:
            continue
        an = score(p, x)
        for i in range(len(theta)):
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            fd = (make_params(kind, up).log_pdf(x) - make_params(kind, dn).log_pdf(x)) / (2 * h)
            assert an[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_fisher_examples():
    np.testing.assert_allclose(fisher_information(GaussianParams(3, 1)), np.diag([1.0, 2.0]))
    np.testing.assert_allclose(fisher_information(LaplaceParams(-2, 1)), np.diag([1.0, 1.0]))


@pytest.mark.parametrize("kind", KINDS)
def test_fisher_matches_quadrature(kind, rng):
    params = [random_params(kind, rng) for _ in range(6)]
    if kind is ModelKind.SKEWED_LAPLACE:
        params.append(SkewedLaplaceParams(0, 1, 0.5))
    for p in params:
        k = kind.n_params
        num = np.array([[quad_expect(p, lambda x: score(p, x)[i] * score(p, x)[j]) for j in range(k)]
                        for i in range(k)])
        an = fisher_information(p)
        np.testing.assert_allclose(an, num, atol=1e-6 * max(1.0, np.abs(num).max()), rtol=0)
        assert np.allclose(an, an.T)
        assert np.all(np.linalg.eigvalsh(an) > 0)


@pytest.mark.parametrize("kind", KINDS)
def test_expected_score_is_zero(kind, rng):
    p = random_params(kind, rng)
    for i in range(kind.n_params):
        assert abs(quad_expect(p, lambda x: score(p, x)[i])) < 1e-8


# sampling ------------------------------------------------------------------------------------------


def test_laplace_sample_ks_distance():
    p = LaplaceParams(0, 1)
    x = np.sort(sample(p, np.random.default_rng(1), 10**6))
    emp = np.arange(1, x.size + 1) / x.size
    assert np.max(np.abs(emp - cdf(p, x))) < 0.005


def test_gaussian_sample_mean():
    p = GaussianParams(2.0, 3.0)
    x = sample(p, np.random.default_rng(2), 10**6)
    assert abs(x.mean() - 2.0) < 5 * 3.0 / 1e3


def test_skewed_sample_left_mass():
    x = sample(SkewedLaplaceParams(0, 1, 0.3), np.random.default_rng(3), 10**6)
    assert abs(np.mean(x < 0) - 0.3) < 0.01


# validation / projection / table ---------------------------------------------------------------------


@pytest.mark.parametrize("bad", [
    lambda: GaussianParams(0, 0), lambda: LaplaceParams(0, -1), lambda: SkewedLaplaceParams(0, 1, 1.0),
    lambda: SkewedLaplaceParams(0, 1, 0.0), lambda: GaussianParams(float("nan"), 1),
])
def test_invalid_params_rejected(bad):
    with pytest.raises(ValueError):
        bad()


def test_projection_floors():
    np.testing.assert_allclose(project("gaussian", [1, -3, 0]), [1, SCALE_FLOOR, 0])
    np.testing.assert_allclose(project("skewed_laplace", [0, 2, 1.4]), [0, 2, 0.99])
    np.testing.assert_allclose(project("skewed_laplace", [0, 2, -0.2]), [0, 2, 0.01])


def test_param_table_roundtrip():
    t = ParamTable.initial("skewed_laplace", 3, 2, q=0.1)
    assert t[1, 1] == SkewedLaplaceParams(0.0, 1.0, 0.1)
    t[2, 0] = SkewedLaplaceParams(1 / 3, 0.7, 0.25)
    back = ParamTable.from_text(t.to_text())
    assert back.kind is ModelKind.SKEWED_LAPLACE
    np.testing.assert_array_equal(back.values, t.values)
    np.testing.assert_allclose(t.quantiles(0.25)[2, 0], 1 / 3)


def test_param_table_rejects_kind_mismatch():
    t = ParamTable.initial("gaussian", 2, 2)
    with pytest.raises((TypeError, ValueError)):
        t[0, 0] = LaplaceParams(0, 1)


def test_param_table_validates():
    v = np.zeros((2, 2, 3))
    with pytest.raises(ValueError):
        ParamTable("laplace", v)
