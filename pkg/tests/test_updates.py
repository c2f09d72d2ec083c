import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from returndensity import updates
from returndensity.densities import (
    SCALE_FLOOR,
    GaussianParams,
    LaplaceParams,
    ModelKind,
    ParamTable,
    SkewedLaplaceParams,
    make_params,
)
from returndensity.oracle import random_context, relative_error
from returndensity.updates import (
    TdContext,
    build_target_offpolicy,
    build_target_onpolicy,
    natural_gradient,
    natural_gradient_numeric,
    ng_curve,
    ng_update,
    ng_update_gaussian,
    ng_update_laplace,
    ng_update_numeric,
    ng_update_skewed_laplace,
    td_delta,
)


def ctx1(current, target, reward=1.0, discount=0.95, lr=0.1):
    return TdContext(reward, discount, lr, current, [(1.0, target)])


def test_td_delta_examples():
    assert td_delta(0, 0, 1, 0.95) == 1
    assert td_delta(20, 20, 1, 0.95) == pytest.approx(0, abs=1e-14)
    assert td_delta(5, -10, 0, 0.95) == pytest.approx(-14.5)


def test_context_validation():
    g = GaussianParams(0, 1)
    with pytest.raises(ValueError):
        TdContext(0, 0.9, 0.1, g, [(0.5, g)])
    with pytest.raises(ValueError):
        TdContext(0, 1.0, 0.1, g, [(1.0, g)])
    with pytest.raises(ValueError):
        TdContext(0, 0.9, 0.0, g, [(1.0, g)])
    with pytest.raises(TypeError):
        TdContext(0, 0.9, 0.1, g, [(1.0, LaplaceParams(0, 1))])


# Gaussian ------------------------------------------------------------------------------------


def test_gaussian_worked_example():
    new = ng_update_gaussian(ctx1(GaussianParams(0, 1), GaussianParams(0, 1)))
    assert new.mu == pytest.approx(0.1 / 0.95, abs=1e-15)
    assert new.sigma == pytest.approx(1.0475, abs=1e-12)
    num = ng_update_numeric(ctx1(GaussianParams(0, 1), GaussianParams(0, 1)))
    assert num.mu == pytest.approx(0.105263, abs=1e-6)


def test_gaussian_fixed_point():
    cur = GaussianParams(2.0, 0.95 * 3.0)
    tgt = GaussianParams(2.0, 3.0)
    ctx = ctx1(cur, tgt, reward=2.0 - 0.95 * 2.0)
    assert ng_update_gaussian(ctx) == cur


def test_gaussian_scale_floor():
    new = ng_update_gaussian(ctx1(GaussianParams(0, 1), GaussianParams(0, 1e-3), reward=0.0, lr=50.0))
    assert new.sigma == SCALE_FLOOR


def test_wrong_kind_rejected():
    with pytest.raises(TypeError):
        ng_update_laplace(ctx1(GaussianParams(0, 1), GaussianParams(0, 1)))


# Laplace ------------------------------------------------------------------------------------------


def test_laplace_zero_delta():
    cur, tgt = LaplaceParams(1.0, 2.0), LaplaceParams(1.0, 3.0)
    gamma, lr = 0.9, 0.1
    ctx = ctx1(cur, tgt, reward=1.0 - gamma * 1.0, discount=gamma, lr=lr)
    new = ng_update_laplace(ctx)
    assert new.m == pytest.approx(1.0, abs=1e-15)
    # quadrature oracle: the scale moves by (alpha/gamma)(gamma b' - b)
    assert new.b == pytest.approx(2.0 + lr / gamma * (gamma * 3.0 - 2.0), abs=1e-14)
    assert ng_update_numeric(ctx).b == pytest.approx(new.b, abs=1e-9)
    still = ng_update_laplace(ctx1(LaplaceParams(1.0, 2.7), tgt, reward=1.0 - gamma, discount=gamma))
    assert still == LaplaceParams(1.0, 2.7)


def test_laplace_large_delta_saturates():
    cur = LaplaceParams(0.0, 1.7)
    ctx = ctx1(cur, LaplaceParams(0.0, 1.0), reward=400.0, lr=0.2, discount=0.8)
    assert ng_update_laplace(ctx).m == pytest.approx(0.2 / 0.8 * 1.7, rel=1e-12)
    assert ng_update_numeric(ctx).m == pytest.approx(0.2 / 0.8 * 1.7, rel=1e-6)


@given(delta=st.floats(-1e6, 1e6), b=st.floats(1e-3, 100), bp=st.floats(1e-3, 100),
       gamma=st.floats(0.01, 0.999), lr=st.floats(1e-4, 1.0))
def test_laplace_bounded(delta, b, bp, gamma, lr):
    cur = LaplaceParams(0.0, b)
    new = ng_update_laplace(ctx1(cur, LaplaceParams(0.0, bp), reward=delta, discount=gamma, lr=lr))
    assert abs(new.m) <= (lr / gamma) * b


# skewed Laplace ---------------------------------------------------------------------------------


def test_skewed_symmetric_zero_delta():
    for b, bp in ((1, 1), (1, 2), (2, 0.5)):
        ctx = ctx1(SkewedLaplaceParams(0, b, 0.5), SkewedLaplaceParams(0, bp, 0.5), reward=0.0, discount=0.9)
        assert ng_update_skewed_laplace(ctx).m == 0.0
        assert abs(ng_update_numeric(ctx).m) < 1e-12


@pytest.mark.parametrize("c, cp", [(0.3, 0.7), (0.8, 0.2), (0.5, 0.5), (0.05, 0.95)])
def test_skewed_continuous_at_zero(c, cp):
    cur, tgt = SkewedLaplaceParams(1, 1.3, c), SkewedLaplaceParams(2, 0.7, cp)
    r0 = cur.m - 0.9 * tgt.m
    lo = natural_gradient(ctx1(cur, tgt, r0 - 1e-10, 0.9))
    hi = natural_gradient(ctx1(cur, tgt, r0 + 1e-10, 0.9))
    assert np.abs(lo - hi).max() < 1e-8


@pytest.mark.parametrize("sign", [-1.0, 1.0])
def test_skewed_both_branches_match_oracle(sign):
    rng = np.random.default_rng(7)
    for _ in range(15):
        cur = SkewedLaplaceParams(rng.uniform(-2, 2), rng.uniform(0.3, 2), rng.uniform(0.1, 0.9))
        tgt = SkewedLaplaceParams(rng.uniform(-2, 2), rng.uniform(0.3, 2), rng.uniform(0.1, 0.9))
        gamma = rng.uniform(0.6, 0.99)
        delta = sign * rng.uniform(0.01, 4)
        ctx = ctx1(cur, tgt, delta - gamma * tgt.m + cur.m, gamma)
        err = relative_error(natural_gradient(ctx), natural_gradient_numeric(ctx), ctx)
        assert err.max() < 1e-5


def test_skewed_projection():
    cur = SkewedLaplaceParams(0, 1, 0.02)
    new = ng_update(ctx1(cur, SkewedLaplaceParams(0, 1, 0.02), reward=-50.0, lr=0.9))
    assert 0.01 <= new.c <= 0.99 and new.b >= SCALE_FLOOR


# oracle equivalence over random contexts -------------------------------------------------------


@pytest.mark.parametrize("kind", list(ModelKind))
def test_closed_forms_match_quadrature(kind):
    rng = np.random.default_rng([11, kind.code])
    for _ in range(30):
        ctx = random_context(kind, rng)
        closed, numeric = ng_update(ctx).as_array(), ng_update_numeric(ctx).as_array()
        # one step in parameter space: compare increments, relative to the parameter scale
        scale = np.array([ctx.current.scale] * kind.n_params)
        assert np.all(np.abs(closed - numeric) <= 1e-6 * np.maximum(scale, 1.0))


@pytest.mark.parametrize("kind", list(ModelKind))
def test_pushforward_equal_to_current_is_stationary(kind):
    rng = np.random.default_rng([3, kind.code])
    for _ in range(5):
        tgt = make_params(kind, [rng.uniform(-3, 3), rng.uniform(0.5, 2), rng.uniform(0.2, 0.8)])
        gamma, r = 0.9, rng.uniform(-2, 2)
        arr = tgt.as_array().copy()
        arr[0], arr[1] = r + gamma * arr[0], gamma * arr[1]
        cur = make_params(kind, arr)
        ctx = ctx1(cur, tgt, r, gamma)
        assert np.abs(natural_gradient_numeric(ctx)).max() < 1e-8
        assert np.abs(natural_gradient(ctx)).max() < 1e-12


@pytest.mark.parametrize("kind", list(ModelKind))
def test_ordinary_gradient_is_expected_score(kind):
    rng = np.random.default_rng([5, kind.code])
    ctx = random_context(kind, rng)
    np.testing.assert_allclose(natural_gradient(ctx, "ordinary"),
                               natural_gradient_numeric(ctx, "ordinary"), rtol=1e-7, atol=1e-9)


def test_batch_matches_scalar_path():
    rng = np.random.default_rng(9)
    for kind in ModelKind:
        cur = np.column_stack([rng.uniform(-2, 2, 50), rng.uniform(0.2, 2, 50), rng.uniform(0.1, 0.9, 50)])
        tgt = np.column_stack([rng.uniform(-2, 2, 50), rng.uniform(0.2, 2, 50), rng.uniform(0.1, 0.9, 50)])
        r = rng.uniform(-3, 3, 50)
        g = np.full(50, 0.9)
        out = updates.ng_batch(kind.code, cur, tgt, r, g)
        for i in (0, 17, 49):
            expect = updates.ng_direction(kind.code, *cur[i], *tgt[i], r[i], g[i])
            np.testing.assert_array_equal(out[i], np.array(expect))


# targets ---------------------------------------------------------------------------------------------


def _table_with_quantiles(values):
    t = ParamTable.initial("gaussian", 2, len(values))
    for a, v in enumerate(values):
        t[1, a] = GaussianParams(v, 1.0)
    return t


def test_offpolicy_target_argmax_and_ties():
    t = _table_with_quantiles([3.0, 5.0])
    (w, p), = build_target_offpolicy(t, 1, q=0.3)
    assert w == 1.0 and p == GaussianParams(5.0, 1.0)
    t = _table_with_quantiles([4.0, 4.0])
    (_, p), = build_target_offpolicy(t, 1, q=0.3)
    assert p is not None and t[1, 0] == p


def test_offpolicy_target_uses_quantile_not_mean():
    t = ParamTable.initial("gaussian", 1, 2)
    t[0, 0] = GaussianParams(10.0, 20.0)   # higher mean, much lower 0.1-quantile
    t[0, 1] = GaussianParams(5.0, 0.1)
    assert build_target_offpolicy(t, 0, q=0.1)[0][1] == t[0, 1]
    assert build_target_offpolicy(t, 0, q=0.5)[0][1] == t[0, 0]


def test_softmax_argmax_matches_quantile_argmax():
    from returndensity.agents import PolicySpec
    rng = np.random.default_rng(1)
    for _ in range(20):
        vals = rng.normal(size=4)
        for beta in (0.1, 1.0, 30.0):
            probs = PolicySpec("softmax", f"constant({beta})").probabilities(vals)
            assert int(np.argmax(probs)) == int(np.argmax(vals))


def test_onpolicy_targets():
    t = ParamTable.initial("laplace", 2, 4)
    for a in range(4):
        t[1, a] = LaplaceParams(float(a), 1.0 + a)
    mix = build_target_onpolicy(t, 1, [0.0, 0.0, 1.0, 0.0])
    cur = LaplaceParams(0.3, 0.8)
    single = ctx1(cur, t[1, 2], reward=0.4)
    mixed = TdContext(0.4, 0.95, 0.1, cur, mix)
    np.testing.assert_array_equal(natural_gradient(mixed), natural_gradient(single))
    with pytest.raises(ValueError):
        build_target_onpolicy(t, 1, [0.5, 0.6, 0.0, 0.0])


def test_onpolicy_identical_components():
    t = ParamTable.initial("gaussian", 2, 4)
    cur = GaussianParams(0.2, 1.1)
    mixed = TdContext(0.4, 0.95, 0.1, cur, build_target_onpolicy(t, 1, [0.25] * 4))
    np.testing.assert_allclose(natural_gradient(mixed), natural_gradient(ctx1(cur, t[1, 0], 0.4)),
                               rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_mixture_update_is_linear(kind):
    rng = np.random.default_rng([2, kind.code])
    for _ in range(10):
        cur = make_params(kind, [rng.uniform(-2, 2), rng.uniform(0.3, 2), rng.uniform(0.1, 0.9)])
        comps = [make_params(kind, [rng.uniform(-2, 2), rng.uniform(0.3, 2), rng.uniform(0.1, 0.9)])
                 for _ in range(4)]
        w = rng.dirichlet(np.ones(4))
        r = rng.uniform(-2, 2)
        mixed = natural_gradient(TdContext(r, 0.9, 0.1, cur, list(zip(w, comps))))
        parts = sum(wk * natural_gradient(ctx1(cur, c, r, 0.9)) for wk, c in zip(w, comps))
        np.testing.assert_allclose(mixed, parts, rtol=0, atol=1e-12)


# moment matching ----------------------------------------------------------------------------------


def test_gaussian_moment_matching():
    comps = [(0.3, GaussianParams(-4.0, 1.0)), (0.7, GaussianParams(6.0, 2.5))]
    r, gamma = 1.5, 0.9
    # moments of the pushforward mixture r + gamma * eta'
    mean = sum(w * (r + gamma * p.mu) for w, p in comps)
    second = sum(w * ((r + gamma * p.mu) ** 2 + (gamma * p.sigma) ** 2) for w, p in comps)
    cur = GaussianParams(0.0, 1.0)
    for _ in range(3000):
        cur = ng_update(TdContext(r, gamma, 0.05, cur, comps))
    assert abs(cur.mu - mean) < 1e-3
    assert abs(cur.mu ** 2 + cur.sigma ** 2 - second) < 1e-3


# curves ------------------------------------------------------------------------------------------------


def _curve(kind, cur, tgt, deltas, gamma=0.95):
    rewards = np.asarray(deltas) - gamma * tgt.central + cur.central
    return ng_curve(kind, cur, tgt, rewards, gamma)


def test_gaussian_curve_is_identity():
    deltas = np.linspace(-5, 5, 41)
    c = _curve("gaussian", GaussianParams(0.3, 1), GaussianParams(-1, 1), deltas)
    assert c.columns == ("delta", "ng_mu", "ng_sigma")
    np.testing.assert_array_equal(c.data[:, 1], c.data[:, 0])


def test_laplace_curve_bounded_and_odd():
    deltas = np.linspace(-20, 20, 81)
    c = _curve("laplace", LaplaceParams(0, 1.3), LaplaceParams(0, 1.3), deltas)
    assert np.all(np.abs(c.data[:, 1]) <= 1.3)
    np.testing.assert_allclose(c.data[:, 1], -c.data[::-1, 1], atol=1e-12)


def test_skewed_curve_stronger_on_positive_side():
    # near delta = 0 both sides are comparable; the asymmetry shows for larger |delta|
    p = SkewedLaplaceParams(0, 1, 0.7)
    deltas = np.array([2.0, 3.0, 4.0, 5.0])
    pos = _curve("skewed_laplace", p, p, deltas).data[:, 1:]
    neg = _curve("skewed_laplace", p, p, -deltas).data[:, 1:]
    assert np.all(np.abs(pos[:, 1:]) > np.abs(neg[:, 1:]))
    assert np.all(np.abs(pos[2:, 0]) > np.abs(neg[2:, 0]))
    assert np.all(np.linalg.norm(pos, axis=1) > np.linalg.norm(neg, axis=1))


def test_curve_csv():
    c = _curve("laplace", LaplaceParams(0, 1), LaplaceParams(0, 1), [-1.0, 0.0, 1.0])
    lines = c.to_csv().splitlines()
    assert lines[0] == "delta,ng_m,ng_b" and len(lines) == 4
