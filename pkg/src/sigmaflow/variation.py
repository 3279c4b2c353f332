"""First variation of the loss in ``Sigma`` and the Riemannian gradient.

Tensors are plain symmetric ``(d, d)`` arrays in whitened coordinates.  A
cotangent tensor ``A`` (the differential ``DJ``) pairs with a tangent
tensor ``B`` (a velocity ``dSigma/dt``) through ``<A, B> = Tr(A B)``.
"""
from __future__ import annotations

import numpy as np

from .errors import ConsistencyError
from .regression import squared_distances

__all__ = [
    "pair_tensor",
    "first_variation",
    "first_variation_with_gap",
    "dual_form_gap",
    "metric_cotangent",
    "tangent_norm_sq",
    "riemannian_gradient",
    "pullback_gradient_u",
]

DUAL_FORM_RTOL = 1e-9
# relative floor (x 1e-9) for the cancellation scale: 1e-9 * 1e-4 ~ 1e5 ulp
CANCELLATION_EPS = 1e-4


def pair_tensor(x, weights, with_magnitude=False):
    """``sum_ij A_ij (x_i - x_j)(x_i - x_j)^T`` for a symmetric weight matrix ``A``.

    Expanded as ``2 X^T diag(A 1) X - 2 X^T A X``, which is ``O(n^2 d)``.  With
    ``with_magnitude`` also returns the norm of the two expanded pieces, which
    bounds the cancellation error of the difference.
    """
    rowsum = weights.sum(axis=1)
    a = 2.0 * (x.T * rowsum) @ x
    b = 2.0 * x.T @ (weights @ x)
    t = a - b
    t = 0.5 * (t + t.T)
    if with_magnitude:
        return t, float(np.linalg.norm(a) + np.linalg.norm(b))
    return t


def _pair_weights(v, dk):
    # Re(v_i conj(v_j)) P'_ij; the imaginary part is antisymmetric in (i, j) and drops out
    w = np.real(np.outer(v, np.conj(v))) * dk
    return 0.5 * (w + w.T)


def _both_forms(s, sol, m, k, lam):
    sq = sol.sqdist if sol.sqdist is not None else squared_distances(s.x, m.u)
    dk = k.profile_d1(sq)
    n = s.n
    t_coef, mag_coef = pair_tensor(s.x, _pair_weights(sol.c, dk), with_magnitude=True)
    t_res, mag_res = pair_tensor(s.x, _pair_weights(sol.r, dk), with_magnitude=True)
    cf, rf = 0.5 * lam, 0.5 / (lam * n * n)
    return -cf * t_coef, -rf * t_res, max(cf * mag_coef, rf * mag_res)


def dual_form_gap(s, sol, m, k, lam):
    """Relative disagreement of the residual and coefficient forms (0 if both vanish)."""
    return first_variation_with_gap(s, sol, m, k, lam, check=False)[1]


def first_variation_with_gap(s, sol, m, k, lam, check=True):
    """Empirical ``DJ(Sigma)`` plus the relative gap between its two forms.

    Residual form ``-(1/(2 lam n^2)) sum r_i conj(r_j) P'_ij dx dx^T`` and
    coefficient form ``-(lam/2) sum c_i conj(c_j) P'_ij dx dx^T`` are both
    computed as V-statistics over ordered pairs (diagonal pairs contribute
    nothing); with ``check`` they must agree to ``1e-9`` relative, which
    exercises ``r = n lam c``.  The coefficient form is returned.
    """
    d_coef, d_res, magnitude = _both_forms(s, sol, m, k, lam)
    # when DJ is tiny next to the expanded pieces it is computed from, the
    # achievable agreement is set by their cancellation, not by |DJ|
    scale = max(np.linalg.norm(d_coef), np.linalg.norm(d_res), CANCELLATION_EPS * magnitude)
    gap = np.linalg.norm(d_res - d_coef)
    rel = 0.0 if scale == 0 else float(gap / scale)
    if check and gap > DUAL_FORM_RTOL * scale:
        raise ConsistencyError(
            f"residual and coefficient forms of DJ differ: {gap:.3g} vs scale {scale:.3g}"
        )
    return d_coef, rel


def first_variation(s, sol, m, k, lam, check=True):
    """Empirical ``DJ(Sigma)``; see :func:`first_variation_with_gap`."""
    return first_variation_with_gap(s, sol, m, k, lam, check)[0]


def metric_cotangent(m, a, b):
    """``g(A, B) = 1/2 Tr(A Sigma B) + 1/2 Tr(B Sigma A)``."""
    sig = m.sigma
    return 0.5 * float(np.trace(a @ sig @ b) + np.trace(b @ sig @ a))


def tangent_norm_sq(m, b):
    """Squared length of a tangent vector, ``sum 2/(l_i + l_j) |B_ij|^2`` in the eigenbasis.

    Only meaningful on positive definite ``Sigma``; the metric blows up
    transversally to the boundary strata.
    """
    ev, vec = np.linalg.eigh(m.sigma)
    bt = vec.T @ b @ vec
    return float(np.sum(2.0 / (ev[:, None] + ev[None, :]) * bt * bt))


def riemannian_gradient(m, dj):
    """``1/2 (Sigma DJ + DJ Sigma)``."""
    sig = m.sigma
    g = 0.5 * (sig @ dj + dj @ sig)
    return 0.5 * (g + g.T)


def pullback_gradient_u(m, dj):
    """Velocity ``-1/2 U DJ`` of the lifted flow on factors."""
    return -0.5 * m.u @ dj
