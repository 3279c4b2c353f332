"""Verification quantities for the flow: eigenvalue laws, partial traces,
noise-direction Lyapunov monitors, spectral decay rates and smoothing gaps.

The de-noising quantities need a Fourier picture of the fitted function
``f_U = sum_j c_j K(. - U x_j)``.  With ``f_hat = k_V sum_j c_j e^(-2 pi i <w, U x_j>)``,

    S = int w_1^2 |f_hat|^2 / k_V = -(1/4 pi^2) sum_jl c_j conj(c_l) d_1^2 K(U(x_l - x_j)),

where ``d_1`` differentiates along the image of the monitored direction.  For
the Gaussian kernel this and the smoothed analogue have closed forms, so all
integrals reduce to ``O(n^2)`` pair sums.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, UnsupportedOperationError
from .regression import MetricPoint, loss_at, loss_at_sigma, solve_at
from .variation import first_variation

__all__ = [
    "monitor_norm",
    "regauge_upper_triangular",
    "spectral_integral",
    "smoothing_gap_bound",
    "smoothed_point",
    "eigen_rhs",
    "EigenRates",
    "eigen_track",
    "match_eigenvectors",
    "partial_trace_rate",
    "decay_bound_check",
    "DecayReport",
    "growth_bound_check",
    "c1_extension_probe",
    "fd_gradient",
    "TAU_REL",
    "TAU_ABS",
]

TAU_REL = 0.2
TAU_ABS = 5e-4
SPECTRAL_NEG_TOL = 1e-9


class NegativeSpectralWarning(UserWarning):
    pass


def _require_gaussian(k, what):
    if not k.is_gaussian:
        raise UnsupportedOperationError(f"{what} is implemented for the Gaussian kernel only")


def _unit(w, d=None):
    w = np.asarray(w, dtype=float).reshape(-1)
    if d is not None and w.size != d:
        raise DomainError(f"direction has {w.size} entries, expected {d}")
    if abs(np.linalg.norm(w) - 1) > 1e-10:
        raise DomainError(f"direction must be a unit vector, |w| = {np.linalg.norm(w):.12g}")
    return w


def monitor_norm(m, w):
    """``|w|_Sigma^2 = |U w|^2``."""
    v = m.u @ _unit(w, m.d)
    return float(v @ v)


def regauge_upper_triangular(u, w):
    """Rotate a copy of ``u`` so it is upper triangular for ``R w + w^perp``.

    Returns ``(r, basis)``: ``basis`` is orthogonal with first column ``w``
    and ``r = Q^T u basis`` is upper triangular with non-negative diagonal,
    so ``r[0, 0] = |u w|`` and ``r^T r = basis^T Sigma basis``.
    """
    w = _unit(w, u.shape[1])
    d = w.size
    qb, _ = np.linalg.qr(np.column_stack([w, np.eye(d)]))
    # first column of the QR basis is +-w; flip the whole basis so it is exactly w
    basis = qb[:, :d] * np.sign(qb[:, 0] @ w)
    basis[:, 0] = w
    q, r = np.linalg.qr(np.asarray(u, dtype=float) @ basis)
    sgn = np.where(np.diag(r) < 0, -1.0, 1.0)
    r = sgn[:, None] * r
    return r, basis


def _image_projection(s, m, w):
    """First image coordinate ``(r B^T x_j)_0`` of each sample in the upper-triangular gauge."""
    r, basis = regauge_upper_triangular(m.u, w)
    return (s.x @ basis) @ r[0], float(r[0, 0])


def spectral_integral(s, sol, m, k, w):
    """``S = int w_1^2 |f_hat_U|^2 / k_V d omega`` for monitor direction ``w``.

    Gaussian kernel only.  Values below zero within ``1e-9`` are clamped with
    a warning (the integrand is non-negative).
    """
    _require_gaussian(k, "spectral_integral")
    p, _ = _image_projection(s, m, w)
    b = k.beta
    pd2 = (p[:, None] - p[None, :]) ** 2
    mat = (-2 * b + 4 * b * b * pd2) * sol.gram
    val = -float(np.real(np.vdot(sol.c, mat @ sol.c))) / (4 * math.pi**2)
    if val < 0:
        if val < -SPECTRAL_NEG_TOL:
            warnings.warn(f"spectral integral {val:.3g} below zero", NegativeSpectralWarning, stacklevel=2)
        val = 0.0
    return val


def smoothing_gap_bound(s, sol, m, k, w, s_param, alpha=1.0):
    """``(lam/2) int (1 - exp(-4 pi^2 alpha^2 U11^2 w_1^2 s)) |f_hat|^2 / k_V``.

    In closed form each pair contributes ``K(z) - K_s(z)`` with
    ``K_s(z) = (1+tau)^(-1/2) exp(-beta z_1^2/(1+tau) - beta |z'|^2)`` and
    ``tau = 4 beta alpha^2 U11^2 s``.  ``alpha`` is the noise standard
    deviation along ``w`` (1 in whitened coordinates).
    """
    _require_gaussian(k, "smoothing_gap_bound")
    if not (0 <= s_param < 1):
        raise DomainError("smoothing parameter must lie in [0, 1)")
    if s_param == 0:
        return 0.0
    p, u11 = _image_projection(s, m, w)
    b = k.beta
    tau = 4 * b * alpha**2 * u11**2 * s_param
    pd2 = (p[:, None] - p[None, :]) ** 2
    rest = np.clip(sol.sqdist - pd2, 0.0, None)
    ks = np.exp(-b * rest - b * pd2 / (1 + tau)) / math.sqrt(1 + tau)
    diff = sol.gram - ks
    return 0.5 * sol.lam * float(np.real(np.vdot(sol.c, diff @ sol.c)))


def smoothed_point(m, w, s_param):
    """``U_s``: the ``(w, w)`` entry of the triangular factor scaled by ``sqrt(1 - s)``.

    Equivalent to right-multiplying ``U`` by ``I + (sqrt(1-s) - 1) w w^T``,
    which is how it is computed.
    """
    w = _unit(w, m.d)
    a = math.sqrt(1 - s_param) - 1
    return MetricPoint(m.u @ (np.eye(m.d) + a * np.outer(w, w)), m.rank)


# -- eigenvalue evolution --------------------------------------------------------


@dataclass
class EigenRates:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rates: np.ndarray
    reliable: bool


def eigen_rhs(s, m, sol, lam, k):
    """Predicted ``d lambda_i / dt`` from the eigenvalue evolution law.

    ``(lambda_i / 2 lam) E[r conj(r') P'(|X-X'|_Sigma^2) |(X-X')_i|^2]`` with the
    empirical V-statistic; ``(X-X')_i`` is the component along the i-th
    eigenvector.  ``reliable`` is False when two eigenvalues are within 1e-8.
    """
    ev, vec = np.linalg.eigh(m.sigma)
    n = s.n
    dk = k.profile_d1(sol.sqdist)
    wts = np.real(np.outer(sol.r, np.conj(sol.r))) * dk
    wts = 0.5 * (wts + wts.T)
    rowsum = wts.sum(axis=1)
    proj = s.x @ vec
    rates = np.empty(m.d)
    for i in range(m.d):
        q = proj[:, i]
        pair = 2 * np.dot(q * q, rowsum) - 2 * q @ (wts @ q)
        rates[i] = ev[i] / (2 * lam * n * n) * pair
    reliable = bool(np.all(np.diff(ev) > 1e-8)) if m.d > 1 else True
    return EigenRates(ev, vec, rates, reliable)


def match_eigenvectors(prev, cur):
    """Greedy maximal-|overlap| assignment; returns ``(perm, signs)``.

    ``cur[:, perm[i]] * signs[i]`` is the continuation of ``prev[:, i]``.
    """
    ov = np.abs(prev.T @ cur)
    d = ov.shape[0]
    perm = -np.ones(d, dtype=int)
    taken = np.zeros(d, dtype=bool)
    for flat in np.argsort(-ov, axis=None):
        i, j = divmod(int(flat), d)
        if perm[i] < 0 and not taken[j]:
            perm[i] = j
            taken[j] = True
    signs = np.sign(np.einsum("ij,ij->j", prev, cur[:, perm]))
    signs[signs == 0] = 1.0
    return perm, signs


@dataclass
class EigenTrack:
    times: np.ndarray
    eigenvalues: np.ndarray
    measured: np.ndarray
    reliable: np.ndarray


def eigen_track(trace):
    """Central-difference eigenvalue rates at interior records.

    Eigenvectors are matched between neighbouring records; any interval where
    the matching is not the sorted order (a crossing) is flagged unreliable.
    """
    us = trace.factors
    t = trace.times
    evs, vecs = [], []
    for u in us:
        e, v = np.linalg.eigh(u.T @ u)
        evs.append(e)
        vecs.append(v)
    evs = np.array(evs)
    ok = np.ones(len(us), dtype=bool)
    for i in range(1, len(us)):
        perm, _ = match_eigenvectors(vecs[i - 1], vecs[i])
        if np.any(perm != np.arange(perm.size)):
            ok[i] = ok[i - 1] = False
    meas = np.full_like(evs, np.nan)
    meas[1:-1] = (evs[2:] - evs[:-2]) / (t[2:] - t[:-2])[:, None]
    rel = ok.copy()
    rel[1:-1] &= ok[2:] & ok[:-2]
    rel[[0, -1]] = False
    return EigenTrack(t, evs, meas, rel)


def partial_trace_rate(m, dj, basis):
    """``d/dt Tr_{V1} Sigma = -Tr(P_{V1} Sigma DJ)`` along the flow.

    ``basis`` holds orthonormal vectors of ``V1`` as rows.
    """
    b = np.atleast_2d(np.asarray(basis, dtype=float))
    if b.shape[1] != m.d:
        raise DomainError(f"basis vectors need {m.d} entries")
    if np.max(np.abs(b @ b.T - np.eye(b.shape[0])), initial=0.0) > 1e-10:
        raise DomainError("partial-trace basis is not orthonormal")
    proj = b.T @ b
    return -float(np.trace(proj @ m.sigma @ dj))


# -- de-noising monitors ---------------------------------------------------------


@dataclass
class DecayReport:
    """Per-monitor comparison of measured ``d|w|^2/dt`` with the decay bound."""

    times: np.ndarray
    norm_sq: np.ndarray
    spectral: np.ndarray
    bound_rhs: np.ndarray
    measured: np.ndarray
    tau: np.ndarray
    bound_violation_frac: np.ndarray
    monotone_violation_frac: np.ndarray
    log_slope: np.ndarray
    min_spectral: np.ndarray
    final_over_initial: np.ndarray
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "bound_violation_frac": self.bound_violation_frac.tolist(),
            "monotone_violation_frac": self.monotone_violation_frac.tolist(),
            "log_slope": self.log_slope.tolist(),
            "min_spectral": self.min_spectral.tolist(),
            "final_over_initial": self.final_over_initial.tolist(),
            "rate_floor": (-2 * math.pi**2 * self.details.get("lam", float("nan")) * self.min_spectral).tolist(),
        }


def decay_bound_check(trace, lam, tau_rel=TAU_REL, tau_abs=TAU_ABS):
    """Check ``d/dt |w|^2_Sigma <= -2 pi^2 lam |w|^2_Sigma S + tau`` per record.

    Needs a trace recorded with ``record_spectral=True``.  Derivatives are
    central differences at interior records, where ``tau = tau_rel*|bound| +
    tau_abs``.  Violations are returned as data.
    """
    if trace.records[0].spectral is None:
        raise ConfigError("trace was recorded without spectral integrals (record_spectral=False)")
    t = trace.times
    nrm = trace.monitor_matrix()
    spec = trace.spectral_matrix()
    bound = -2 * math.pi**2 * lam * nrm * spec
    meas = np.full_like(nrm, np.nan)
    meas[1:-1] = (nrm[2:] - nrm[:-2]) / (t[2:] - t[:-2])[:, None]
    tau = tau_rel * np.abs(bound) + tau_abs
    inner = slice(1, -1)
    viol = meas[inner] > bound[inner] + tau[inner]
    mono = meas[inner] > tau[inner]
    cnt = max(viol.shape[0], 1)
    slopes = np.array([np.polyfit(t, np.log(np.maximum(nrm[:, j], 1e-300)), 1)[0] for j in range(nrm.shape[1])])
    return DecayReport(
        times=t,
        norm_sq=nrm,
        spectral=spec,
        bound_rhs=bound,
        measured=meas,
        tau=tau,
        bound_violation_frac=viol.sum(axis=0) / cnt,
        monotone_violation_frac=mono.sum(axis=0) / cnt,
        log_slope=slopes,
        min_spectral=spec.min(axis=0),
        final_over_initial=nrm[-1] / nrm[0],
        details={"lam": lam, "tau_rel": tau_rel, "tau_abs": tau_abs},
    )


def growth_bound_check(trace, s, k, lam, slack=0.05):
    """Largest ratio of ``|Delta log Sigma(w, w)| / h`` to its a-priori bound.

    For every accepted step and every eigenvector ``w`` of ``Sigma`` at the
    start of the step (eigenvalue above 1e-10 of the largest), the bound is
    ``4 sup|P'| / lam * mean|y|^2 * sqrt(mean <x, w>^4)``.  Returns
    ``(max_ratio, passed)`` with ``passed = max_ratio <= 1 + slack``.
    """
    ey2 = s.mean_sq_y()
    c = 4 * k.sup_abs_d1() / lam * ey2
    worst = 0.0
    for i in range(1, len(trace.factors)):
        ua, ub = trace.factors[i - 1], trace.factors[i]
        h = trace.records[i].step
        ev, vec = np.linalg.eigh(ua.T @ ua)
        keep = ev > 1e-10 * max(ev.max(), 1e-300)
        for w in vec[:, keep].T:
            na = float(np.sum((ua @ w) ** 2))
            nb = float(np.sum((ub @ w) ** 2))
            if na <= 0 or nb <= 0:
                continue
            meas = abs(math.log(nb) - math.log(na)) / h
            bnd = c * math.sqrt(np.mean((s.x @ w) ** 4))
            worst = max(worst, meas / bnd)
    return worst, worst <= 1 + slack


# -- C^1 extension and gradient oracles ------------------------------------------


def fd_gradient(s, sigma, k, lam, h=1e-4):
    """Central finite differences of the loss over the independent entries of ``Sigma``.

    The ridge system is re-solved at every perturbed matrix.  Off-diagonal
    entries move symmetrically, so their derivative is ``2 DJ_ab``.
    """
    sigma = np.asarray(sigma, dtype=float)
    d = sigma.shape[0]
    out = np.zeros((d, d))
    for a in range(d):
        for b in range(a, d):
            e = np.zeros((d, d))
            e[a, b] = e[b, a] = 1.0
            g = (loss_at_sigma(s, sigma + h * e, k, lam) - loss_at_sigma(s, sigma - h * e, k, lam)) / (2 * h)
            out[a, b] = out[b, a] = g if a == b else 0.5 * g
    return out


@dataclass
class C1ProbeReport:
    taus: np.ndarray
    losses: np.ndarray
    dj_norms: np.ndarray
    lipschitz: float
    lipschitz_refined: float
    deltas: np.ndarray
    expansion_ratios: np.ndarray
    halving_factors: np.ndarray
    passed: bool

    def as_dict(self):
        return {
            "lipschitz": self.lipschitz,
            "lipschitz_refined": self.lipschitz_refined,
            "expansion_ratios": self.expansion_ratios.tolist(),
            "halving_factors": self.halving_factors.tolist(),
            "passed": self.passed,
        }


def _path_lipschitz(s, k, lam, sig_a, sig_b, npts):
    taus = np.linspace(0.0, 1.0, npts)
    sigs = [(1 - t) * sig_a + t * sig_b for t in taus]
    losses, djs = [], []
    for sg in sigs:
        m = MetricPoint.from_sigma(sg)
        sol = solve_at(s, m, k, lam)
        losses.append(sol.loss)
        djs.append(first_variation(s, sol, m, k, lam))
    lip = max(
        np.linalg.norm(djs[i + 1] - djs[i]) / np.linalg.norm(sigs[i + 1] - sigs[i]) for i in range(npts - 1)
    ) if np.linalg.norm(sig_b - sig_a) > 0 else 0.0
    return taus, np.array(losses), djs, float(lip)


def c1_extension_probe(s, k, lam, sigma_start, sigma_boundary, npts=11, delta0=0.01, halvings=5, band=0.2):
    """Probe the ``C^1`` extension of the loss along a path into the boundary.

    Samples ``J`` and ``DJ`` along the straight path from ``sigma_start`` to
    ``sigma_boundary``, estimates the Lipschitz constant of ``DJ`` on the path
    (and again on a grid twice as fine), and at the boundary end checks the
    first-order expansion ``J(S + dD) = J(S) + d <DJ(S), D> + o(d)`` with
    ``D = sigma_start - sigma_boundary``: the ratio ``err / |d D|`` must halve
    (within ``band``) each time ``d`` is halved.
    """
    sig_a = np.asarray(sigma_start, dtype=float)
    sig_b = np.asarray(sigma_boundary, dtype=float)
    taus, losses, djs, lip = _path_lipschitz(s, k, lam, sig_a, sig_b, npts)
    _, _, _, lip2 = _path_lipschitz(s, k, lam, sig_a, sig_b, 2 * npts - 1)
    direction = sig_a - sig_b
    dn = np.linalg.norm(direction)
    j_b = losses[-1]
    lin = float(np.sum(djs[-1] * direction))
    deltas = delta0 / 2.0 ** np.arange(halvings + 1)
    ratios = []
    for dl in deltas:
        if dn == 0:
            ratios.append(0.0)
            continue
        j = loss_at(s, MetricPoint.from_sigma(sig_b + dl * direction), k, lam)
        ratios.append(abs(j - j_b - dl * lin) / (dl * dn))
    ratios = np.array(ratios)
    with np.errstate(divide="ignore", invalid="ignore"):
        halving = ratios[:-1] / ratios[1:]
    if dn == 0:
        passed = True
    else:
        passed = bool(np.all(np.abs(halving - 2.0) <= 2.0 * band))
    return C1ProbeReport(
        taus, losses, np.array([np.linalg.norm(d) for d in djs]), lip, lip2, deltas, ratios, halving, passed
    )
