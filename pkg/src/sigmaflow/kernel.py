"""Rotationally invariant kernel profiles.

A kernel ``K(x) = P(|x|^2)`` is described by its radial profile ``P`` on
``[0, inf)``.  Two families are provided:

* Gaussian, ``P(r) = exp(-beta r)``.
* Sobolev (Matern), ``P(r) = Gamma(gamma)^-1 int_0^inf y^(gamma-1) e^-y e^(-r/4y) dy``.

Both satisfy ``P(0) = 1``.  The Sobolev integral is evaluated through its
closed Bessel form ``P(r) = 2^(1-gamma)/Gamma(gamma) z^gamma K_gamma(z)`` with
``z = sqrt(r)``; derivatives follow from ``d/dz[z^nu K_nu(z)] = -z^nu K_(nu-1)(z)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError, UnsupportedOperationError

__all__ = ["RadialKernel", "gaussian", "sobolev"]

FAMILIES = ("gaussian", "sobolev")


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise DomainError("kernel profile argument must be finite")
    if np.any(r < 0):
        raise DomainError(f"kernel profile argument must be >= 0, got min {r.min():g}")
    return r


def _zk(nu, z):
    """``z^nu K_nu(z)``; at ``z = 0`` the limit ``2^(nu-1) Gamma(nu)`` (needs nu > 0)."""
    out = np.empty_like(z)
    pos = z > 0
    # K_{-nu} = K_nu, so negative orders are fine away from the origin
    with np.errstate(invalid="ignore", over="ignore"):
        out[pos] = z[pos] ** nu * special.kv(nu, z[pos])
    # at tiny z, K_nu overflows while z^nu underflows; there the small-z
    # asymptote 2^(|nu|-1) Gamma(|nu|) z^(nu - |nu|) is exact to double precision
    bad = pos & ~np.isfinite(out)
    if np.any(bad):
        a = abs(nu)
        with np.errstate(over="ignore"):
            out[bad] = 2.0 ** (a - 1) * special.gamma(a) * z[bad] ** (nu - a) if a > 0 else np.inf
    out[~pos] = 2.0 ** (nu - 1) * special.gamma(nu) if nu > 0 else np.inf
    return out


def _scalar_or_array(template, value):
    return float(np.ravel(value)[0]) if np.ndim(template) == 0 else value


@dataclass(frozen=True)
class RadialKernel:
    """Radial profile plus its Fourier-side weight.

    Parameters
    ----------
    family : {"gaussian", "sobolev"}
    beta : float
        Gaussian inverse width (``> 0``).  Ignored for Sobolev.
    gamma : float
        Sobolev smoothness, must exceed 1 so the profile derivative is bounded.
    dim : int
        Ambient dimension; only enters :meth:`fourier_weight`.
    """

    family: str = "gaussian"
    beta: float = 1.0
    gamma: float = 2.0
    dim: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"kernel.family must be one of {FAMILIES}, got {self.family!r}")
        if self.family == "gaussian" and not (self.beta > 0 and math.isfinite(self.beta)):
            raise ConfigError(f"kernel.beta must be positive, got {self.beta}")
        if self.family == "sobolev" and not (self.gamma > 1 and math.isfinite(self.gamma)):
            raise ConfigError(f"kernel.gamma must exceed 1 (bounded derivative), got {self.gamma}")
        if int(self.dim) < 1:
            raise ConfigError(f"kernel dim must be positive, got {self.dim}")

    @property
    def is_gaussian(self):
        return self.family == "gaussian"

    # -- radial profile ---------------------------------------------------

    def profile_value(self, r):
        r0 = _check_r(r)
        r = np.atleast_1d(r0)
        if self.is_gaussian:
            out = np.exp(-self.beta * r)
        else:
            g = self.gamma
            out = 2.0 ** (1 - g) / special.gamma(g) * _zk(g, np.sqrt(r))
        return _scalar_or_array(r0, out)

    def profile_d1(self, r):
        r0 = _check_r(r)
        r = np.atleast_1d(r0)
        if self.is_gaussian:
            out = -self.beta * np.exp(-self.beta * r)
        else:
            g = self.gamma
            out = -(2.0 ** -g) / special.gamma(g) * _zk(g - 1, np.sqrt(r))
        return _scalar_or_array(r0, out)

    def profile_d2(self, r):
        """Second derivative of the profile.

        For Sobolev kernels with ``gamma <= 2`` this blows up at ``r = 0``;
        evaluation there raises :class:`DomainError`.
        """
        r0 = _check_r(r)
        r = np.atleast_1d(r0)
        if self.is_gaussian:
            out = self.beta**2 * np.exp(-self.beta * r)
        else:
            g = self.gamma
            if g <= 2 and np.any(r == 0):
                raise DomainError(
                    f"Sobolev profile'' is unbounded at r=0 for gamma={g} <= 2"
                )
            out = 2.0 ** (-g - 1) / special.gamma(g) * _zk(g - 2, np.sqrt(r))
        return _scalar_or_array(r0, out)

    def sup_abs_d1(self):
        """``sup_r |P'(r)|``, attained at ``r = 0`` for both families."""
        if self.is_gaussian:
            return float(self.beta)
        g = self.gamma
        return float(special.gamma(g - 1) / (4 * special.gamma(g)))

    # -- Fourier side -----------------------------------------------------

    def fourier_weight(self, omega_sq):
        """Spectral density ``k_V`` as a function of ``|omega|^2``; integrates to 1."""
        w0 = np.asarray(omega_sq, dtype=float)
        if np.any(w0 < 0) or not np.all(np.isfinite(w0)):
            raise DomainError("omega_sq must be finite and >= 0")
        d = int(self.dim)
        if self.is_gaussian:
            b = self.beta
            out = (math.pi / b) ** (d / 2) * np.exp(-math.pi**2 / b * w0)
        else:
            g = self.gamma
            const = (4 * math.pi) ** (d / 2) * math.exp(special.gammaln(g + d / 2) - special.gammaln(g))
            out = const * (1 + 4 * math.pi**2 * w0) ** (-g - d / 2)
        return _scalar_or_array(w0, out)

    def second_partial_along(self, z, direction):
        """``d^2 K / d direction^2`` at the rows of ``z`` (Gaussian only)."""
        if not self.is_gaussian:
            raise UnsupportedOperationError(
                "closed-form directional second partials exist only for the Gaussian kernel"
            )
        direction = np.asarray(direction, dtype=float)
        nrm = np.linalg.norm(direction)
        if abs(nrm - 1) > 1e-12:
            raise DomainError(f"direction must be a unit vector, |dir| = {nrm}")
        z = np.asarray(z, dtype=float)
        b = self.beta
        proj = z @ direction
        sq = np.sum(z * z, axis=-1)
        return (-2 * b + 4 * b**2 * proj**2) * np.exp(-b * sq)


def gaussian(beta=1.0, dim=1):
    return RadialKernel("gaussian", beta=beta, dim=dim)


def sobolev(gamma=2.0, dim=1):
    return RadialKernel("sobolev", gamma=gamma, dim=dim)
