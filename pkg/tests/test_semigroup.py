import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from rsjd import zoo
from rsjd.estimate import MCEstimate
from rsjd.semigroup import (
    DIRECT,
    PIECED_WEIGHTED,
    Mesh,
    ResolventQuery,
    TailError,
    alpha_one,
    default_mesh,
    horizon,
    killed_resolvent_mc,
    killing_identity_check,
    poisson_tail,
    regime_sequences,
    resolvent_mc,
    resolvent_series,
    transition_series_mc,
)

from conftest import within


def _chain_resolvent(c, alpha, g, k):
    """``((alpha - Q)^{-1} g)_k`` for the symmetric two-state chain."""
    Q = np.array([[-c, c], [c, -c]])
    return float(np.linalg.solve(alpha * np.eye(2) - Q, np.asarray(g, dtype=float))[k])


def test_chain_oracle_matches_closed_form():
    c, a = 1.0, 2.0
    assert _chain_resolvent(c, a, [1, 0], 0) == pytest.approx((a + c) / (a * (a + 2 * c)), rel=1e-14)


@given(st.floats(0.1, 10), st.floats(1e-3, 10), st.floats(1e-8, 0.5))
def test_horizon_meets_tolerance(alpha, f_sup, rel):
    t_max, tail = horizon(alpha, f_sup, rel * f_sup / alpha)
    assert tail <= rel * f_sup / alpha * (1 + 1e-9)


def test_horizon_rejects_short_window():
    with pytest.raises(TailError, match="need t_max"):
        horizon(1.0, 1.0, 1e-6, t_max=2.0)
    with pytest.raises(ValueError):
        horizon(0.0, 1.0)


def test_alpha_one():
    spec2 = zoo.constant_coefficient(n0=2, rates=[[0, 1], [1, 0]], H=3.0)
    assert alpha_one(spec2) == 6.0  # 2 (n0 - 1) H
    assert alpha_one(zoo.brownian()) == 0.0
    spec4 = zoo.constant_coefficient(n0=4, rates=np.full((4, 4), 0.1), H=0.5)
    assert alpha_one(spec4) == 3.0


@pytest.mark.parametrize("sim", [DIRECT, PIECED_WEIGHTED])
def test_resolvent_of_regime_indicator(sim):
    c, alpha = 1.0, 2.0
    spec = zoo.constant_rate_two_state(c)
    f = lambda x, k: (k == 0).astype(float)
    q = ResolventQuery(f, alpha, (0.0,), 0, 20_000, 3, spec, h=1e-2)
    est = resolvent_mc(q, sim)
    assert within(est, _chain_resolvent(c, alpha, [1, 0], 0), slack=2e-3)  # trapezoid error across switches


def test_resolvent_rejects_unknown_simulator():
    q = ResolventQuery(lambda x, k: 1.0, 1.0, (0.0,), 0, 10, 1, zoo.brownian())
    with pytest.raises(ValueError):
        resolvent_mc(q, "other")
    with pytest.raises(ValueError):
        ResolventQuery(lambda x, k: 1.0, 0.0, (0.0,), 0, 10, 1, zoo.brownian())


def test_killed_resolvent_of_constant_hazard():
    c, alpha = 1.0, 2.0
    spec = zoo.constant_rate_two_state(c)
    est = killed_resolvent_mc(spec, 0, lambda y: np.ones(y.shape[0]), alpha, [0.0], None, 100, 1, h=1e-3)
    assert est.value == pytest.approx(1 / (alpha + c), abs=est.bias_bound + 1e-6)


def test_killing_identity_constant_hazard():
    c, alpha = 1.0, 2.0
    spec = zoo.constant_rate_two_state(c)
    one = lambda y: np.ones(y.shape[0])
    lhs, rhs = killing_identity_check(spec, 0, one, alpha, [0.0], 20_000, 4, h=1e-2)
    assert within(lhs, c / (alpha + c))
    assert rhs.value == pytest.approx(c / (alpha + c), abs=rhs.bias_bound + 1e-4)


def test_mesh_interpolation_is_exact_for_affine_functions():
    m = Mesh((np.linspace(-1, 1, 5), np.array([0.0, 0.3, 1.0])))
    x = np.array([[0.1, 0.2], [-0.9, 0.95], [2.0, -1.0]])
    idx, w = m.weights(x)
    f = lambda p: 2 * p[:, 0] - p[:, 1] + 0.5
    got = np.sum(w * f(m.nodes)[idx], axis=1)
    xc = np.clip(x, [-1, 0], [1, 1])
    assert np.allclose(got, f(xc))
    assert np.allclose(w.sum(axis=1), 1.0)


def test_default_mesh_rejects_high_dimension():
    from rsjd.model import ModelError

    with pytest.raises(ModelError):
        default_mesh(zoo.brownian(d=3), [0, 0, 0], 1.0)
    assert default_mesh(zoo.brownian(), [0.0], 4.0).size == 41


def test_series_terms_for_constant_rates():
    # f = 1: psi_m = c^m / (alpha + c)^{m+1} in both regimes, and the sum is 1 / alpha
    c, alpha = 1.0, 2.0
    spec = zoo.constant_rate_two_state(c)
    mesh = default_mesh(spec, [0.0], alpha, nodes=5)
    res = resolvent_series(spec, lambda x, k: np.ones(x.shape[0]), alpha, [0.0], 0, 6, 20, 1, h=1e-3, mesh=mesh)
    want = np.array([c**m / (alpha + c) ** (m + 1) for m in range(7)])
    assert np.allclose(res.terms, want, rtol=1e-5)  # trapezoid bias ~ (h alpha)^2 / 12
    assert abs(res.estimate.value - 1 / alpha) <= res.residual_bound + 1e-4
    assert np.all(res.term_se < 1e-10)


def test_series_rejects_small_alpha(bench):
    with pytest.raises(ValueError, match="alpha"):
        resolvent_series(bench, lambda x, k: np.ones(x.shape[0]), 1.0, [0.0], 0, 3, 10, 1)


def test_regime_sequences():
    assert regime_sequences(2, 0, 0, 0) == [(0,)]
    assert regime_sequences(2, 0, 1, 0) == []
    assert regime_sequences(3, 0, 1, 2) == [(0, 2, 1)]
    assert len(regime_sequences(3, 0, 0, 2)) == 2


def test_poisson_tail():
    assert poisson_tail(1.0, 2) == pytest.approx(1 - stats.poisson.cdf(2, 1.0), rel=1e-12)


def test_transition_series_without_switching_is_zero():
    spec = zoo.constant_coefficient(n0=2, rates=np.zeros((2, 2)))
    res = transition_series_mc(spec, [0.0], 0, (-10, 10), 1, 1.0, 2, 500, 1, h=1e-2)
    assert res.estimate.value == 0.0


def test_transition_series_first_order_term():
    c, t = 1.0, 1.0
    spec = zoo.constant_rate_two_state(c)
    res = transition_series_mc(spec, [0.0], 0, (-50, 50), 1, t, 2, 2000, 2, h=1e-2)
    assert res.terms[1].value == pytest.approx(c * t * math.exp(-c * t), rel=1e-10)
    assert res.terms[0].value == 0.0 and res.terms[2].value == 0.0
    with pytest.raises(ValueError):
        transition_series_mc(spec, [0.0], 0, (-1, 1), 1, t, 3, 10, 1)
