"""Kernel ridge regression at a fixed metric ``Sigma = U^T U``.

Everything works in whitened coordinates, so the reference inner product on
the sample space is the Euclidean one.  With the empirical measure standing in
for expectations the problem is

    min_c  (1/2n) |y - G c|^2 + (lambda/2) c^* G c,   G_ij = P(|U(x_i - x_j)|^2),

whose normal equations are ``(G + n lambda I) c = y``; the residual is then
``r = y - G c = n lambda c``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigError, NumericError

__all__ = [
    "MetricPoint",
    "RidgeSolution",
    "squared_distances",
    "gram_matrix",
    "solve_ridge",
    "solve_at",
    "loss_at",
    "loss_at_sigma",
]


@dataclass(frozen=True)
class MetricPoint:
    """A point of the PSD cone stored as a factor: ``Sigma = u.T @ u``.

    ``rank`` is the declared stratum.  The factor representation is never
    rebuilt from a possibly indefinite ``Sigma``; use :meth:`from_sigma` only
    on matrices that are PSD up to round-off.
    """

    u: np.ndarray
    rank: Optional[int] = None

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 2:
            raise ConfigError(f"factor must be a matrix, got shape {u.shape}")
        if not np.all(np.isfinite(u)):
            raise NumericError("factor has non-finite entries")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        if self.rank is None:
            object.__setattr__(self, "rank", int(np.linalg.matrix_rank(u)) if u.size else 0)

    @property
    def d(self):
        return self.u.shape[1]

    @property
    def sigma(self):
        s = self.u.T @ self.u
        return 0.5 * (s + s.T)

    def eigenvalues(self):
        """Eigenvalues of ``Sigma`` ascending, computed as squared singular values of ``u``."""
        sv = np.linalg.svd(self.u, compute_uv=False)
        ev = np.zeros(self.d)
        ev[: sv.size] = sv**2
        return np.sort(ev)

    @classmethod
    def identity(cls, d, scale=1.0):
        return cls(np.sqrt(scale) * np.eye(d), d)

    @classmethod
    def from_sigma(cls, sigma, rank=None, neg_tol=1e-10):
        """Factor a symmetric PSD matrix as ``diag(sqrt(ev)) V^T``.

        Eigenvalues in ``[-neg_tol, 0)`` are treated as round-off and zeroed;
        anything more negative is an error.
        """
        sigma = np.asarray(sigma, dtype=float)
        sigma = 0.5 * (sigma + sigma.T)
        ev, vec = np.linalg.eigh(sigma)
        scale = max(1.0, float(np.abs(ev).max(initial=0.0)))
        if ev.min(initial=0.0) < -neg_tol * scale:
            raise NumericError(f"matrix is not PSD: min eigenvalue {ev.min():.3g}")
        ev = np.clip(ev, 0.0, None)
        return cls(np.sqrt(ev)[:, None] * vec.T, rank)


@dataclass(frozen=True)
class RidgeSolution:
    """Representer coefficients, residuals and loss at one metric point."""

    c: np.ndarray
    r: np.ndarray
    loss: float
    gram: np.ndarray
    lam: float
    sqdist: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.c.shape[0]

    def rkhs_norm_sq(self):
        return float(np.real(np.vdot(self.c, self.gram @ self.c)))


def squared_distances(x, u):
    """``|U(x_i - x_j)|^2`` for all pairs, exact zeros on the diagonal."""
    z = np.asarray(x, dtype=float) @ np.asarray(u, dtype=float).T
    if z.shape[1] == 0:
        return np.zeros((z.shape[0], z.shape[0]))
    return squareform(pdist(z, "sqeuclidean"))


def gram_matrix(s, m, k, sqdist=None):
    """``G_ij = P(|U(x_i - x_j)|^2)`` for whitened samples ``s``."""
    if sqdist is None:
        sqdist = squared_distances(s.x, m.u)
    g = k.profile_value(sqdist)
    np.fill_diagonal(g, 1.0)
    return g


def _check_lambda(lam):
    if not (np.isfinite(lam) and lam > 0):
        raise ConfigError(f"ridge.lambda must be positive, got {lam}")


def solve_ridge(g, y, lam, sqdist=None):
    """Solve ``(G + n lambda I) c = y`` by Cholesky and evaluate the loss."""
    _check_lambda(lam)
    g = np.asarray(g, dtype=float)
    y = np.asarray(y).astype(complex)
    n = y.shape[0]
    if g.shape != (n, n):
        raise ConfigError(f"gram shape {g.shape} does not match {n} targets")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite gram matrix or targets")
    a = g + n * lam * np.eye(n)
    try:
        fac = linalg.cho_factor(a, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericError(f"ridge system is not positive definite: {exc}") from None
    rhs = np.column_stack([y.real, y.imag])
    sol = linalg.cho_solve(fac, rhs, check_finite=False)
    c = sol[:, 0] + 1j * sol[:, 1]
    gc = g @ c
    r = y - gc
    loss = 0.5 / n * float(np.real(np.vdot(r, r))) + 0.5 * lam * float(np.real(np.vdot(c, gc)))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    return RidgeSolution(c, r, loss, g, float(lam), sqdist)


def solve_at(s, m, k, lam):
    d2 = squared_distances(s.x, m.u)
    return solve_ridge(gram_matrix(s, m, k, d2), s.y, lam, sqdist=d2)


def loss_at(s, m, k, lam):
    return solve_at(s, m, k, lam).loss


def loss_at_sigma(s, sigma, k, lam):
    """Loss at a PSD matrix given directly (used by finite-difference oracles)."""
    return loss_at(s, MetricPoint.from_sigma(sigma), k, lam)
