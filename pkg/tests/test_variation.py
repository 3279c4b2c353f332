import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigmaflow import MetricPoint, SampleSet, first_variation, gaussian, solve_at, sobolev
from sigmaflow.diagnostics import fd_gradient
from sigmaflow.errors import ConsistencyError
from sigmaflow.regression import RidgeSolution
from sigmaflow.variation import (
    dual_form_gap,
    metric_cotangent,
    pair_tensor,
    pullback_gradient_u,
    riemannian_gradient,
    tangent_norm_sq,
)


def _spd(rng, d, floor=0.3):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + floor * np.eye(d)


def test_two_point_example():
    s = SampleSet(np.array([[-1.0], [1.0]]), [1.0, -1.0])
    m = MetricPoint(np.eye(1))
    k, lam = gaussian(1.0), 0.1
    sol = solve_at(s, m, k, lam)
    dj = first_variation(s, sol, m, k, lam)
    c = 1 / (1.2 - math.exp(-4))
    assert dj[0, 0] == pytest.approx(-0.4 * c * c * math.exp(-4), rel=1e-12)
    assert dj[0, 0] == pytest.approx(-5.2466e-3, rel=1e-4)
    fd = fd_gradient(s, m.sigma, k, lam)
    assert fd[0, 0] == pytest.approx(dj[0, 0], rel=1e-7)


def test_zero_targets_zero_variation(small):
    s = SampleSet(small.x, np.zeros(small.n))
    m = MetricPoint.identity(3)
    sol = solve_at(s, m, gaussian(1.0), 0.1)
    assert np.all(first_variation(s, sol, m, gaussian(1.0), 0.1) == 0)


@pytest.mark.parametrize("k", [gaussian(1.0), sobolev(2.0), sobolev(1.5)], ids=["gauss", "sob2", "sob1.5"])
def test_finite_difference_oracle_d4(k):
    rng = np.random.default_rng(5)
    s = SampleSet(rng.standard_normal((100, 4)), np.sin(rng.standard_normal(100)) + 0.3j)
    sig = _spd(rng, 4)
    m = MetricPoint.from_sigma(sig)
    sol = solve_at(s, m, k, 0.1)
    dj = first_variation(s, sol, m, k, 0.1)
    fd = fd_gradient(s, sig, k, 0.1, h=1e-4)
    iu = np.triu_indices(4)
    rel = np.abs(dj[iu] - fd[iu]) / np.abs(dj[iu])
    assert rel.max() <= 1e-4
    np.testing.assert_array_equal(dj, dj.T)


def test_dual_forms_agree_and_mismatch_detected(small):
    m = MetricPoint.identity(3)
    k, lam = gaussian(0.5), 0.05
    sol = solve_at(small, m, k, lam)
    assert dual_form_gap(small, sol, m, k, lam) <= 1e-12
    broken = RidgeSolution(sol.c * 1.01, sol.r, sol.loss, sol.gram, lam, sol.sqdist)
    with pytest.raises(ConsistencyError):
        first_variation(small, broken, m, k, lam)
    first_variation(small, broken, m, k, lam, check=False)  # opt-out works


def test_pair_tensor_matches_naive(rng):
    x = rng.standard_normal((7, 3))
    a = rng.standard_normal((7, 7))
    a = a + a.T
    naive = sum(a[i, j] * np.outer(x[i] - x[j], x[i] - x[j]) for i in range(7) for j in range(7))
    np.testing.assert_allclose(pair_tensor(x, a), naive, atol=1e-12)


# -- metric and gradients -------------------------------------------------------------------


def test_metric_examples(rng):
    a = rng.standard_normal((3, 3))
    a = a + a.T
    assert metric_cotangent(MetricPoint.identity(3), a, a) == pytest.approx(np.sum(a * a))
    assert metric_cotangent(MetricPoint(np.zeros((3, 3))), a, a) == 0.0
    lams = np.array([0.5, 2.0, 3.0])
    m = MetricPoint(np.diag(np.sqrt(lams)))
    e = np.zeros((3, 3))
    e[0, 2] = e[2, 0] = 1.0
    assert metric_cotangent(m, e, e) == pytest.approx(lams[0] + lams[2])  # 1/2 (l_i + l_j) per nonzero entry
    ed = np.zeros((3, 3))
    ed[1, 1] = 1.0
    assert metric_cotangent(m, ed, ed) == pytest.approx(lams[1])


def test_riemannian_gradient_examples(rng):
    a = rng.standard_normal((3, 3))
    a = a + a.T
    np.testing.assert_allclose(riemannian_gradient(MetricPoint.identity(3), a), a)
    assert np.all(riemannian_gradient(MetricPoint.identity(3), np.zeros((3, 3))) == 0)
    g = riemannian_gradient(MetricPoint(np.diag([np.sqrt(2), 1.0])), np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(g, [[0, 1.5], [1.5, 0]], atol=1e-15)


def test_pullback_examples_and_pushforward(rng):
    a = rng.standard_normal((3, 3))
    a = a + a.T
    np.testing.assert_allclose(pullback_gradient_u(MetricPoint.identity(3), a), -a / 2)
    assert np.all(pullback_gradient_u(MetricPoint.identity(3), np.zeros((3, 3))) == 0)
    for _ in range(5):
        u = rng.standard_normal((3, 3))
        m = MetricPoint(u)
        v = pullback_gradient_u(m, a)
        lhs = u.T @ v + v.T @ u
        np.testing.assert_allclose(lhs, -riemannian_gradient(m, a), atol=1e-12)


def test_eigenbasis_norm_is_dual_to_metric(rng):
    # the gradient B = 1/2(Sigma A + A Sigma) of cotangent A has |B|^2_g = g(A, A)
    for _ in range(5):
        sig = _spd(rng, 4)
        m = MetricPoint.from_sigma(sig)
        a = rng.standard_normal((4, 4))
        a = a + a.T
        b = riemannian_gradient(m, a)
        assert tangent_norm_sq(m, b) == pytest.approx(metric_cotangent(m, a, a), rel=1e-10)
        # and the pairing <A, B'> = g(grad, B') for any tangent B'
        bp = rng.standard_normal((4, 4))
        bp = bp + bp.T
        ev, vec = np.linalg.eigh(sig)
        bt, bpt = vec.T @ b @ vec, vec.T @ bp @ vec
        g_bb = float(np.sum(2.0 / (ev[:, None] + ev[None, :]) * bt * bpt))
        assert g_bb == pytest.approx(float(np.trace(a @ bp)), rel=1e-10)


def test_first_order_loss_change_is_minus_h_times_residual(small):
    # dJ/dt = -Tr(DJ Sigma DJ) along the flow: Richardson check on one Euler step
    k, lam = gaussian(0.5), 0.05
    m = MetricPoint(np.diag([1.0, 0.8, 1.2]))
    sol = solve_at(small, m, k, lam)
    dj = first_variation(small, sol, m, k, lam)
    rate = -float(np.sum((m.u @ dj) ** 2))
    errs = []
    for h in (1e-2, 5e-3):
        u1 = m.u @ (np.eye(3) - 0.5 * h * dj)
        dl = solve_at(small, MetricPoint(u1), k, lam).loss - sol.loss
        errs.append(abs(dl - h * rate))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)  # O(h^2) remainder


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_symmetry_property(seed):
    r = np.random.default_rng(seed)
    s = SampleSet(r.standard_normal((12, 3)), r.standard_normal(12) + 1j * r.standard_normal(12))
    m = MetricPoint(r.standard_normal((3, 3)))
    sol = solve_at(s, m, gaussian(0.8), 0.2)
    dj = first_variation(s, sol, m, gaussian(0.8), 0.2)
    assert np.max(np.abs(dj - dj.T)) <= 1e-13 * max(np.abs(dj).max(), 1e-300)
    assert dj.dtype == float
