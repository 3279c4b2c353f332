import math

import numpy as np
import pytest
from oracles import smoothing_gap_1d, spectral_integral_1d
from scipy.stats import ortho_group

from sigmaflow import FlowConfig, MetricPoint, SampleSet, gaussian, run_flow, solve_at, sobolev
from sigmaflow.diagnostics import (
    c1_extension_probe,
    decay_bound_check,
    eigen_rhs,
    growth_bound_check,
    match_eigenvectors,
    monitor_norm,
    partial_trace_rate,
    regauge_upper_triangular,
    smoothed_point,
    smoothing_gap_bound,
    spectral_integral,
)
from sigmaflow.errors import ConfigError, DomainError, UnsupportedOperationError
from sigmaflow.variation import first_variation


def _five_point(seed=0):
    r = np.random.default_rng(seed)
    return SampleSet(r.standard_normal((5, 1)), r.standard_normal(5))


# -- monitors and gauge ---------------------------------------------------------------------


def test_monitor_norm_examples():
    assert monitor_norm(MetricPoint.identity(3), [1.0, 0, 0]) == pytest.approx(1.0)
    assert monitor_norm(MetricPoint(np.diag([2.0, 1.0])), [1.0, 0.0]) == pytest.approx(4.0)
    assert monitor_norm(MetricPoint(np.zeros((2, 2))), [0.0, 1.0]) == 0.0
    with pytest.raises(DomainError):
        monitor_norm(MetricPoint.identity(2), [1.0, 1.0])


def test_regauge_upper_triangular(rng):
    u = rng.standard_normal((4, 4))
    w = rng.standard_normal(4)
    w /= np.linalg.norm(w)
    r, basis = regauge_upper_triangular(u, w)
    np.testing.assert_allclose(np.tril(r, -1), 0, atol=1e-14)
    assert np.all(np.diag(r) >= 0)
    np.testing.assert_allclose(basis[:, 0], w)
    np.testing.assert_allclose(basis.T @ basis, np.eye(4), atol=1e-14)
    np.testing.assert_allclose(r.T @ r, basis.T @ u.T @ u @ basis, atol=1e-12)
    assert r[0, 0] == pytest.approx(np.linalg.norm(u @ w))


def test_smoothed_point_scales_u11(rng):
    m = MetricPoint(rng.standard_normal((3, 3)))
    w = np.array([0.0, 1.0, 0.0])
    for s in (0.0, 0.3, 0.9):
        ms = smoothed_point(m, w, s)
        assert monitor_norm(ms, w) == pytest.approx((1 - s) * monitor_norm(m, w))
        # the orthogonal complement is untouched
        np.testing.assert_allclose(ms.u[:, [0, 2]], m.u[:, [0, 2]])


# -- spectral integral ----------------------------------------------------------------------


def test_spectral_single_point_closed_form():
    beta, lam = 0.7, 0.1
    s = SampleSet(np.array([[0.3], [0.3]]), [1.0, 1.0])  # two coincident points behave like one
    m = MetricPoint(np.eye(1))
    sol = solve_at(s, m, gaussian(beta), lam)
    csum = sol.c.sum()
    assert spectral_integral(s, sol, m, gaussian(beta), [1.0]) == pytest.approx(abs(csum) ** 2 * beta / (2 * math.pi**2), rel=1e-12)


def test_spectral_zero_targets(small):
    s = SampleSet(small.x, np.zeros(small.n))
    m = MetricPoint.identity(3)
    sol = solve_at(s, m, gaussian(0.5), 0.1)
    assert spectral_integral(s, sol, m, gaussian(0.5), [1.0, 0, 0]) == 0.0


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("u", [1.0, -0.6, 2.5])
def test_spectral_matches_quadrature_1d(seed, u):
    s = _five_point(seed)
    beta, lam = 0.8, 0.05
    m = MetricPoint(np.array([[u]]))
    sol = solve_at(s, m, gaussian(beta), lam)
    got = spectral_integral(s, sol, m, gaussian(beta), [1.0])
    ref = spectral_integral_1d(sol.c, u * s.x[:, 0], beta)
    assert got == pytest.approx(ref, rel=1e-6)


def test_spectral_gauge_invariant(small, rng):
    k = gaussian(0.5)
    u = rng.standard_normal((3, 3))
    w = np.array([1.0, 0.0, 0.0])
    vals = []
    for seed in range(3):
        m = MetricPoint(ortho_group.rvs(3, random_state=seed) @ u)
        sol = solve_at(small, m, k, 0.05)
        vals.append(spectral_integral(small, sol, m, k, w))
    assert max(vals) - min(vals) <= 1e-10 * max(vals)
    assert min(vals) > 0


def test_gaussian_only(small):
    m = MetricPoint.identity(3)
    sol = solve_at(small, m, sobolev(2.0), 0.05)
    with pytest.raises(UnsupportedOperationError):
        spectral_integral(small, sol, m, sobolev(2.0), [1.0, 0, 0])
    with pytest.raises(UnsupportedOperationError):
        smoothing_gap_bound(small, sol, m, sobolev(2.0), [1.0, 0, 0], 0.3)


# -- smoothing gap --------------------------------------------------------------------------


def test_smoothing_gap_zero_at_zero_and_monotone(small):
    k, lam = gaussian(0.5), 0.05
    m = MetricPoint(np.diag([1.0, 0.7, 1.3]))
    sol = solve_at(small, m, k, lam)
    w = np.array([1.0, 0.0, 0.0])
    vals = [smoothing_gap_bound(small, sol, m, k, w, s) for s in np.linspace(0, 0.9, 10)]
    assert vals[0] == 0.0
    assert np.all(np.diff(vals) > 0)
    with pytest.raises(DomainError):
        smoothing_gap_bound(small, sol, m, k, w, 1.0)


@pytest.mark.parametrize("s_param", [0.1, 0.5, 0.9])
def test_smoothing_gap_matches_quadrature_1d(s_param):
    s = _five_point(4)
    beta, lam, u = 0.8, 0.05, 1.4
    m = MetricPoint(np.array([[u]]))
    sol = solve_at(s, m, gaussian(beta), lam)
    got = smoothing_gap_bound(s, sol, m, gaussian(beta), [1.0], s_param)
    ref = smoothing_gap_1d(sol.c, u * s.x[:, 0], beta, lam, u, s_param)
    assert got == pytest.approx(ref, rel=1e-6)


# -- eigenvalue law and partial trace -------------------------------------------------------


def test_partial_trace_full_space_is_trace_rate(small, rng):
    k, lam = gaussian(0.5), 0.05
    m = MetricPoint(rng.standard_normal((3, 3)))
    sol = solve_at(small, m, k, lam)
    dj = first_variation(small, sol, m, k, lam)
    full = partial_trace_rate(m, dj, np.eye(3))
    assert full == pytest.approx(-np.trace(m.sigma @ dj), rel=1e-12)
    # d/dt Tr Sigma along U' = -1/2 U DJ
    udot = -0.5 * m.u @ dj
    assert full == pytest.approx(2 * np.sum(m.u * udot), rel=1e-12)
    # additivity over an orthonormal split
    q = ortho_group.rvs(3, random_state=1)
    assert partial_trace_rate(m, dj, q[:1]) + partial_trace_rate(m, dj, q[1:]) == pytest.approx(full, rel=1e-10)
    with pytest.raises(DomainError):
        partial_trace_rate(m, dj, np.array([[1.0, 1.0, 0.0]]))


def test_eigen_rhs_degenerate_cases(small):
    k, lam = gaussian(0.5), 0.05
    m = MetricPoint(np.diag([0.0, 1.0, 1.5]))
    er = eigen_rhs(small, m, solve_at(small, m, k, lam), lam, k)
    assert er.rates[0] == 0.0
    z = SampleSet(small.x, np.zeros(small.n))
    er0 = eigen_rhs(z, m, solve_at(z, m, k, lam), lam, k)
    assert np.all(er0.rates == 0)
    assert not eigen_rhs(small, MetricPoint.identity(3), solve_at(small, MetricPoint.identity(3), k, lam), lam, k).reliable


def test_eigen_rhs_equals_diagonal_of_lifted_velocity(small):
    # at a point with distinct eigenvalues, d lambda_i/dt = v_i^T Sigma' v_i = -lambda_i (v_i^T DJ v_i)
    k, lam = gaussian(0.5), 0.05
    m = MetricPoint(np.diag([0.5, 1.0, 1.5]))
    sol = solve_at(small, m, k, lam)
    dj = first_variation(small, sol, m, k, lam)
    er = eigen_rhs(small, m, sol, lam, k)
    expect = -er.eigenvalues * np.einsum("ji,jk,ki->i", er.eigenvectors, dj, er.eigenvectors)
    np.testing.assert_allclose(er.rates, expect, rtol=1e-9)


def test_match_eigenvectors_handles_permutation_and_sign(rng):
    q = ortho_group.rvs(4, random_state=3)
    perm = np.array([2, 0, 3, 1])
    signs = np.array([1.0, -1.0, -1.0, 1.0])
    cur = np.empty_like(q)
    cur[:, perm] = q * signs
    p, sg = match_eigenvectors(q, cur)
    np.testing.assert_array_equal(p, perm)
    np.testing.assert_array_equal(sg, signs)


# -- trace-level checks ---------------------------------------------------------------------


def test_decay_check_requires_spectral(small):
    tr = run_flow(small, MetricPoint.identity(3), gaussian(0.5), FlowConfig(lam=0.05, max_steps=3, monitors=np.eye(3)[:1]))
    with pytest.raises(ConfigError):
        decay_bound_check(tr, 0.05)


def test_decay_and_growth_on_short_run(small):
    cfg = FlowConfig(lam=0.05, step=2.0, max_steps=15, monitors=np.eye(3)[:1], record_spectral=True)
    tr = run_flow(small, MetricPoint.identity(3), gaussian(0.5), cfg)
    rep = decay_bound_check(tr, 0.05)
    assert rep.norm_sq.shape == (16, 1) and np.all(rep.spectral >= 0)
    assert np.isnan(rep.measured[0]).all() and np.isnan(rep.measured[-1]).all()
    ratio, ok = growth_bound_check(tr, small, gaussian(0.5), 0.05)
    assert 0 < ratio and ok


def test_c1_probe_constant_path_and_interior(small):
    k, lam = gaussian(0.5), 0.05
    rep = c1_extension_probe(small, k, lam, np.eye(3), np.eye(3))
    assert rep.passed and rep.lipschitz == 0.0
    rep = c1_extension_probe(small, k, lam, np.eye(3), np.diag([1.0, 1.0, 0.0]))
    assert rep.passed and np.all(np.isfinite(rep.losses))
    assert rep.lipschitz_refined <= 1.5 * rep.lipschitz + 1e-12
