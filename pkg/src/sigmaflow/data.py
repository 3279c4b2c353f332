"""Samples, moment estimation, whitening and synthetic noise-plus-signal data."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateCovarianceError

__all__ = [
    "SampleSet",
    "Moments",
    "NoiseSignalSpec",
    "estimate_moments",
    "whiten",
    "gen_noise_signal",
    "noise_monitors",
    "save_csv",
    "load_csv",
    "CovarianceFloorWarning",
]

COV_FLOOR_REL = 1e-10


class CovarianceFloorWarning(UserWarning):
    """Raised (as a warning) when covariance eigenvalues are clamped."""


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SampleSet:
    """``n`` samples of ``(X, Y)``: real rows ``x`` (n, d) and complex ``y`` (n,)."""

    x: np.ndarray
    y: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y).astype(complex).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ConfigError(f"x has shape {x.shape} but y has {y.shape[0]} entries")
        if x.shape[0] < 2:
            raise ConfigError("need at least two samples")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ConfigError("samples must be finite")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def mean_sq_y(self):
        return float(np.mean(np.abs(self.y) ** 2))


@dataclass(frozen=True)
class Moments:
    mean: np.ndarray
    cov: np.ndarray
    whitener: np.ndarray
    unwhitener: np.ndarray
    clamped: int = 0
    notes: tuple = field(default_factory=tuple)


def estimate_moments(s, strict=False):
    """Empirical mean, covariance (1/n normalisation) and symmetric ``cov^(-1/2)``.

    Eigenvalues below ``1e-10 * trace / d`` are clamped to that floor with a
    :class:`CovarianceFloorWarning`; with ``strict=True`` they raise
    :class:`DegenerateCovarianceError` naming the offending directions.
    """
    x = s.x
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / s.n
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    floor = COV_FLOOR_REL * max(np.trace(cov), np.finfo(float).tiny) / s.d
    low = evals < floor
    notes = ()
    if np.any(low):
        null = evecs[:, low].T
        if strict:
            raise DegenerateCovarianceError(
                f"covariance has {low.sum()} eigenvalue(s) below {floor:.3g}; "
                f"null directions: {np.round(null, 6).tolist()}",
                null_directions=null,
            )
        msg = f"clamped {low.sum()} covariance eigenvalue(s) to {floor:.3g}"
        warnings.warn(msg, CovarianceFloorWarning, stacklevel=2)
        notes = (msg,)
        evals = np.where(low, floor, evals)
    whitener = (evecs / np.sqrt(evals)) @ evecs.T
    unwhitener = (evecs * np.sqrt(evals)) @ evecs.T
    return Moments(
        _frozen(mean), _frozen(cov), _frozen(whitener), _frozen(unwhitener), int(low.sum()), notes
    )


def whiten(s, m):
    """Rows ``x_i -> W (x_i - mean)``; ``y`` is left untouched."""
    return SampleSet((s.x - m.mean) @ m.whitener.T, s.y, s.seed)


# -- synthetic data ------------------------------------------------------------

SIGNAL_FNS = ("linear", "sine", "product", "step")
SIGNAL_DISTS = ("gaussian", "bimodal")

_SIGNAL_PARAM_KEYS = {
    "linear": {"a"},
    "sine": {"amp", "freq"},
    "product": {"scale"},
    "step": {"height", "threshold"},
}


@dataclass(frozen=True)
class NoiseSignalSpec:
    """Generator for ``X = (X_noise, X_signal)``, ``Y = f(X_signal) + eps``.

    The first ``d_noise`` coordinates are ``N(0, noise_cov)`` and independent
    of everything else.  Signal coordinates are i.i.d. per coordinate, either
    standard Gaussian or the mixture ``0.5 N(-sep, 1) + 0.5 N(sep, 1)``
    (``signal_dist="bimodal"``).

    ``signal_fn`` options, reading signal coordinates ``s_0, s_1, ...``:

    * ``linear``: ``sum_k a_k s_k``; a scalar ``a`` multiplies ``s_0`` only.
    * ``sine``: ``amp * sin(freq * s_0)``.
    * ``product``: ``scale * prod_k s_k``.
    * ``step``: ``height * [s_0 > threshold]``.
    """

    n: int
    d_noise: int
    d_signal: int
    signal_fn: str = "sine"
    signal_params: dict = field(default_factory=dict)
    noise_cov: Optional[np.ndarray] = None
    label_noise_sd: float = 0.0
    signal_dist: str = "gaussian"
    signal_sep: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.d_noise < 0 or self.d_signal < 0 or self.d_noise + self.d_signal < 1:
            raise ConfigError("need d_noise, d_signal >= 0 and d_noise + d_signal >= 1")
        if self.n < 2:
            raise ConfigError("data.n must be at least 2")
        if self.signal_fn not in SIGNAL_FNS:
            raise ConfigError(f"data.signal_fn must be one of {SIGNAL_FNS}, got {self.signal_fn!r}")
        if self.signal_dist not in SIGNAL_DISTS:
            raise ConfigError(f"data.signal_dist must be one of {SIGNAL_DISTS}, got {self.signal_dist!r}")
        extra = set(self.signal_params) - _SIGNAL_PARAM_KEYS[self.signal_fn]
        if extra:
            raise ConfigError(f"unknown parameter(s) {sorted(extra)} for signal_fn={self.signal_fn}")
        if self.d_signal == 0 and self.signal_fn != "linear":
            raise ConfigError(f"signal_fn={self.signal_fn} needs d_signal >= 1")
        if self.label_noise_sd < 0:
            raise ConfigError("data.label_noise_sd must be >= 0")
        if self.noise_cov is not None:
            c = np.asarray(self.noise_cov, dtype=float)
            if c.shape != (self.d_noise, self.d_noise):
                raise ConfigError(f"noise_cov must be {self.d_noise}x{self.d_noise}")
            if not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() <= 0:
                raise ConfigError("noise_cov must be symmetric positive definite")

    @property
    def d(self):
        return self.d_noise + self.d_signal


def _signal(spec, xs):
    p = spec.signal_params
    fn = spec.signal_fn
    if fn == "linear":
        a = np.atleast_1d(np.asarray(p.get("a", 1.0), dtype=float))
        if a.size == 1:
            return a[0] * xs[:, 0] if spec.d_signal else np.zeros(len(xs))
        if a.size != spec.d_signal:
            raise ConfigError(f"linear coefficient vector needs {spec.d_signal} entries")
        return xs @ a
    if fn == "sine":
        return p.get("amp", 1.0) * np.sin(p.get("freq", 1.0) * xs[:, 0])
    if fn == "product":
        return p.get("scale", 1.0) * np.prod(xs, axis=1)
    return p.get("height", 1.0) * (xs[:, 0] > p.get("threshold", 0.0)).astype(float)


def gen_noise_signal(spec):
    """Draw a :class:`SampleSet`; bit-identical for equal specs."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    if spec.noise_cov is None:
        xn = rng.standard_normal((n, spec.d_noise))
    else:
        chol = np.linalg.cholesky(np.asarray(spec.noise_cov, dtype=float))
        xn = rng.standard_normal((n, spec.d_noise)) @ chol.T
    xs = rng.standard_normal((n, spec.d_signal))
    if spec.signal_dist == "bimodal":
        signs = rng.integers(0, 2, size=(n, spec.d_signal)) * 2 - 1
        xs = xs + spec.signal_sep * signs
    y = _signal(spec, xs)
    if spec.label_noise_sd > 0:
        y = y + spec.label_noise_sd * rng.standard_normal(n)
    return SampleSet(np.hstack([xn, xs]), y, spec.seed)


def noise_monitors(moments, d_noise):
    """Orthonormal basis (rows) of the noise subspace in whitened coordinates.

    The raw noise axes ``e_k`` are carried to whitened coordinates by the
    whitener; the span is what the de-noising statement is about, so the
    images are orthonormalised (QR) rather than just normalised.
    """
    if d_noise == 0:
        return np.zeros((0, moments.whitener.shape[0]))
    imgs = moments.whitener[:, :d_noise]
    q, r = np.linalg.qr(imgs)
    q = q * np.sign(np.diag(r))
    return q.T


# -- CSV -------------------------------------------------------------------------


def save_csv(s, path):
    """Write ``x0,...,x{d-1},y_re,y_im`` with round-trip float formatting."""
    path = Path(path)
    header = [f"x{i}" for i in range(s.d)] + ["y_re", "y_im"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for xi, yi in zip(s.x, s.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi.real)), repr(float(yi.imag))])
    return path


def load_csv(path, seed=None):
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty dataset file")
    header = rows[0]
    ncol = len(header)
    d = ncol - 2
    expected = [f"x{i}" for i in range(d)] + ["y_re", "y_im"]
    if d < 1 or header != expected:
        raise ConfigError(f"{path}: header must be {','.join(expected) if d >= 1 else 'x0,...,y_re,y_im'}")
    body = rows[1:]
    for lineno, row in enumerate(body, start=2):
        if len(row) != ncol:
            raise ConfigError(f"{path}:{lineno}: expected {ncol} columns, found {len(row)}")
    try:
        arr = np.array(body, dtype=float).reshape(len(body), ncol)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from None
    return SampleSet(arr[:, :d], arr[:, d] + 1j * arr[:, d + 1], seed)
