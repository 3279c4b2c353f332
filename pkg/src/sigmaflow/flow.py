"""Integrators for the downward Riemannian gradient flow on the PSD cone.

The default scheme integrates the lifted factor flow ``dU/dt = -1/2 U DJ(U^T U)``
with classical RK4.  Every stage right-multiplies ``U``, so its row space and
hence the rank stratum of ``Sigma`` are preserved exactly.  Two comparison
schemes act on ``Sigma`` directly: the Riemannian Euler step
``Sigma - h/2 (Sigma DJ + DJ Sigma)`` and the Euclidean step ``Sigma - h DJ``;
the latter does not stay in the cone.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diagnostics import spectral_integral
from .errors import ConfigError, NumericError, PSDViolationError, StalledFlowError
from .regression import MetricPoint, solve_at
from .variation import first_variation_with_gap

__all__ = [
    "INTEGRATORS",
    "Evaluation",
    "GradientOracle",
    "FlowConfig",
    "FlowRecord",
    "FlowTrace",
    "PSDClampWarning",
    "step_lifted_u",
    "step_sigma_direct",
    "step_sigma_euclidean",
    "stationarity_residual",
    "run_flow",
]

INTEGRATORS = ("rk4_lifted_u", "euler_lifted_u", "euler_sigma_direct", "euler_sigma_euclidean")
LOSS_SLACK = 1e-12
PSD_CLAMP_TOL = 1e-10
PSD_ERROR_TOL = 1e-6


class PSDClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Evaluation:
    dj: np.ndarray
    sol: object

    @property
    def loss(self):
        return self.sol.loss


class GradientOracle:
    """Maps a metric point to its ridge solution and ``DJ``; re-solves every call."""

    def __init__(self, s, k, lam, check=True):
        self.s, self.k, self.lam, self.check = s, k, float(lam), check
        self.calls = 0
        self.max_dual_gap = 0.0

    def __call__(self, m):
        self.calls += 1
        sol = solve_at(self.s, m, self.k, self.lam)
        dj, gap = first_variation_with_gap(self.s, sol, m, self.k, self.lam, check=self.check)
        self.max_dual_gap = max(self.max_dual_gap, gap)
        return Evaluation(dj, sol)


def _dj(provider, m):
    out = provider(m)
    return out.dj if isinstance(out, Evaluation) else np.asarray(out)


def _finite_or_raise(u):
    if not np.all(np.isfinite(u)):
        raise NumericError("non-finite stage value in flow step")
    return u


def step_lifted_u(m, dj_provider, h, scheme="rk4", dj0=None):
    """One Euler or RK4 step of ``dU/dt = -1/2 U DJ``.

    ``dj_provider`` maps a :class:`MetricPoint` to ``DJ`` (or an
    :class:`Evaluation`); ``dj0`` may carry ``DJ`` at ``m`` to save a solve.
    """
    u = m.u

    def vel(uu, dj=None):
        if dj is None:
            dj = _dj(dj_provider, MetricPoint(uu, m.rank))
        with np.errstate(invalid="ignore", over="ignore"):
            return -0.5 * uu @ dj

    k1 = vel(u, dj0)
    if scheme == "euler":
        return MetricPoint(_finite_or_raise(u + h * k1), m.rank)
    if scheme != "rk4":
        raise ConfigError(f"unknown scheme {scheme!r}")
    k2 = vel(_finite_or_raise(u + 0.5 * h * k1))
    k3 = vel(_finite_or_raise(u + 0.5 * h * k2))
    k4 = vel(_finite_or_raise(u + h * k3))
    return MetricPoint(_finite_or_raise(u + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)), m.rank)


def step_sigma_direct(m, dj_provider, h, dj0=None):
    """Euler step ``Sigma <- Sigma - h/2 (Sigma DJ + DJ Sigma)``, refactored by ``eigh``.

    Slightly negative eigenvalues (>= -1e-6) are clamped to zero, with a
    :class:`PSDClampWarning` when below -1e-10; anything lower raises
    :class:`PSDViolationError`.
    """
    dj = dj0 if dj0 is not None else _dj(dj_provider, m)
    sig = m.sigma
    new = sig - 0.5 * h * (sig @ dj + dj @ sig)
    new = 0.5 * (new + new.T)
    _finite_or_raise(new)
    ev, vec = np.linalg.eigh(new)
    lo = float(ev.min())
    if lo < -PSD_ERROR_TOL:
        raise PSDViolationError(f"direct Sigma step left the PSD cone (min eigenvalue {lo:.3g}); reduce h")
    if lo < -PSD_CLAMP_TOL:
        warnings.warn(f"clamped eigenvalue {lo:.3g} to 0", PSDClampWarning, stacklevel=2)
    ev = np.clip(ev, 0.0, None)
    return MetricPoint(np.sqrt(ev)[:, None] * vec.T, m.rank)


def step_sigma_euclidean(m, dj_provider, h, dj0=None):
    """Euclidean comparison step ``Sigma <- Sigma - h DJ``.

    Returns the raw symmetric matrix: it need not be PSD, which is the point.
    """
    dj = dj0 if dj0 is not None else _dj(dj_provider, m)
    new = m.sigma - h * dj
    return _finite_or_raise(0.5 * (new + new.T))


def stationarity_residual(m, dj):
    """``Tr(DJ Sigma DJ) = |U DJ|_F^2``, non-negative by construction."""
    v = m.u @ dj
    return float(np.sum(v * v))


# -- driver ----------------------------------------------------------------------


@dataclass
class FlowConfig:
    lam: float
    integrator: str = "rk4_lifted_u"
    step: float = 0.1
    max_steps: int = 1000
    max_time: float = math.inf
    stationarity_tol: float = 0.0
    backtrack: bool = True
    shrink: float = 0.5
    max_backtracks: int = 30
    monitors: Optional[np.ndarray] = None
    record_spectral: bool = False
    keep_factors: bool = True

    def __post_init__(self):
        if not (self.lam > 0):
            raise ConfigError("flow lambda must be positive")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"flow.integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if not (self.step > 0):
            raise ConfigError("flow.step must be positive")
        if not (0 < self.shrink < 1):
            raise ConfigError("flow.shrink must lie in (0, 1)")
        if self.max_steps < 1:
            raise ConfigError("flow.max_steps must be >= 1")
        if self.stationarity_tol < 0:
            raise ConfigError("flow.stationarity_tol must be >= 0")
        if self.monitors is not None:
            mon = np.atleast_2d(np.asarray(self.monitors, dtype=float))
            if mon.size and np.any(np.abs(np.linalg.norm(mon, axis=1) - 1) > 1e-12):
                raise ConfigError("monitor vectors must be unit length (to 1e-12)")
            self.monitors = mon


@dataclass
class FlowRecord:
    t: float
    loss: float
    sigma_eigenvalues: np.ndarray
    monitor_norms: np.ndarray
    stationarity_residual: float
    step: float
    backtracks: int
    spectral: Optional[np.ndarray] = None
    decay_bound: Optional[np.ndarray] = None

    @property
    def min_eigenvalue(self):
        return float(self.sigma_eigenvalues[0])


@dataclass
class FlowTrace:
    records: list = field(default_factory=list)
    factors: list = field(default_factory=list)
    terminated_by: str = ""
    integrator: str = ""
    lam: float = float("nan")
    clamp_warnings: int = 0
    psd_violation_step: Optional[int] = None
    final_sigma: Optional[np.ndarray] = None

    @property
    def steps(self):
        return len(self.records) - 1

    @property
    def final(self):
        return self.records[-1]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def times(self):
        return self.column("t")

    @property
    def losses(self):
        return self.column("loss")

    def monitor_matrix(self):
        return np.array([r.monitor_norms for r in self.records])

    def spectral_matrix(self):
        return np.array([r.spectral for r in self.records])

    def eigenvalue_matrix(self):
        return np.array([r.sigma_eigenvalues for r in self.records])

    def backtracked_steps(self):
        return int(sum(1 for r in self.records[1:] if r.backtracks > 0))

    def summary(self):
        fin = self.final
        return {
            "final_loss": float(fin.loss),
            "final_eigenvalues": [float(v) for v in fin.sigma_eigenvalues],
            "final_time": float(fin.t),
            "steps": self.steps,
            "terminated_by": self.terminated_by,
            "integrator": self.integrator,
            "backtracked_steps": self.backtracked_steps(),
            "final_stationarity_residual": float(fin.stationarity_residual),
            "psd_violation_step": self.psd_violation_step,
        }


def _record(t, m, ev, cfg, step, backtracks, s, k):
    mon = cfg.monitors
    norms = np.sum((mon @ m.u.T) ** 2, axis=1) if mon is not None and mon.size else np.zeros(0)
    spectral = bound = None
    if cfg.record_spectral and mon is not None and mon.size:
        spectral = np.array([spectral_integral(s, ev.sol, m, k, w) for w in mon])
        bound = -2 * math.pi**2 * cfg.lam * norms * spectral
    return FlowRecord(
        t=float(t),
        loss=float(ev.loss),
        sigma_eigenvalues=m.eigenvalues(),
        monitor_norms=norms,
        stationarity_residual=stationarity_residual(m, ev.dj),
        step=float(step),
        backtracks=int(backtracks),
        spectral=spectral,
        decay_bound=bound,
    )


def _advance(m, oracle, h, cfg, ev):
    """One trial step; returns ``(new_point_or_None, raw_sigma)``."""
    integ = cfg.integrator
    if integ == "rk4_lifted_u":
        return step_lifted_u(m, oracle, h, "rk4", dj0=ev.dj), None
    if integ == "euler_lifted_u":
        return step_lifted_u(m, oracle, h, "euler", dj0=ev.dj), None
    if integ == "euler_sigma_direct":
        return step_sigma_direct(m, oracle, h, dj0=ev.dj), None
    raw = step_sigma_euclidean(m, oracle, h, dj0=ev.dj)
    if np.linalg.eigvalsh(raw).min() < 0:
        return None, raw
    return MetricPoint.from_sigma(raw, m.rank, neg_tol=0.0), raw


def run_flow(s, m0, k, cfg, oracle=None, callback=None):
    """Integrate the configured flow from ``m0`` on whitened samples ``s``.

    A step is accepted when the loss rises by at most ``1e-12``; otherwise the
    step size is multiplied by ``cfg.shrink`` and retried (up to
    ``cfg.max_backtracks`` times) before :class:`StalledFlowError`.  The next
    step starts again from ``cfg.step``.  Termination: stationarity residual
    ``<= cfg.stationarity_tol`` (checked after each step, so a run always
    takes at least one), ``t >= max_time``,
    or ``max_steps``.  The Euclidean comparison flow stops at the first step
    that leaves the PSD cone and records it with ``loss = nan``.
    """
    oracle = oracle or GradientOracle(s, k, cfg.lam)
    if cfg.monitors is None:
        cfg.monitors = np.zeros((0, s.d))
    trace = FlowTrace(integrator=cfg.integrator, lam=cfg.lam)
    m = m0
    ev = oracle(m)
    t = 0.0
    trace.records.append(_record(t, m, ev, cfg, 0.0, 0, s, k))
    if cfg.keep_factors:
        trace.factors.append(m.u)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PSDClampWarning)
        while True:
            h = min(cfg.step, cfg.max_time - t) if math.isfinite(cfg.max_time) else cfg.step
            backtracks = 0
            while True:
                new_m, raw = _advance(m, oracle, h, cfg, ev)
                if new_m is None:
                    # Euclidean flow left the cone: report the violating step and stop
                    evs = np.sort(np.linalg.eigvalsh(raw))
                    trace.records.append(
                        FlowRecord(t + h, float("nan"), evs, np.einsum("ij,jk,ik->i", cfg.monitors, raw, cfg.monitors),
                                   float("nan"), h, backtracks)
                    )
                    trace.psd_violation_step = len(trace.records) - 1
                    trace.final_sigma = raw
                    trace.terminated_by = "psd_violation"
                    trace.clamp_warnings = sum(issubclass(w.category, PSDClampWarning) for w in caught)
                    return trace
                new_ev = oracle(new_m)
                if not cfg.backtrack or new_ev.loss <= ev.loss + LOSS_SLACK:
                    break
                backtracks += 1
                if backtracks > cfg.max_backtracks:
                    raise StalledFlowError(
                        f"no loss-decreasing step after {cfg.max_backtracks} backtracks at t={t:.6g}",
                        diagnostics={
                            "t": t,
                            "loss": ev.loss,
                            "trial_loss": new_ev.loss,
                            "last_h": h,
                            "stationarity_residual": stationarity_residual(m, ev.dj),
                            "sigma": m.sigma.tolist(),
                        },
                    )
                h *= cfg.shrink
            t += h
            m, ev = new_m, new_ev
            trace.records.append(_record(t, m, ev, cfg, h, backtracks, s, k))
            if cfg.keep_factors:
                trace.factors.append(m.u)
            if callback is not None:
                callback(trace, m, ev)
            if trace.final.stationarity_residual <= cfg.stationarity_tol:
                trace.terminated_by = "stationary"
                break
            if t >= cfg.max_time * (1 - 1e-12):
                trace.terminated_by = "max_time"
                break
            if trace.steps >= cfg.max_steps:
                trace.terminated_by = "max_steps"
                break
        trace.clamp_warnings = sum(issubclass(w.category, PSDClampWarning) for w in caught)
    trace.final_sigma = m.sigma
    return trace
