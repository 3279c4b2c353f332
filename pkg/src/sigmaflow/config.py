"""Run configuration: a sectioned YAML file validated against a strict schema.

Every section is a flat mapping; unknown keys, wrong types and out-of-range
values raise :class:`ConfigError` naming the offending key before any
computation starts.  The shipped fixtures (``sigmaflow.fixtures``) are complete examples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .data import SIGNAL_DISTS, SIGNAL_FNS, NoiseSignalSpec
from .errors import ConfigError
from .flow import INTEGRATORS
from .kernel import RadialKernel

__all__ = ["RunConfig", "load_config", "parse_config", "CHECK_NAMES"]

CHECK_NAMES = (
    "gradient",
    "dual_form",
    "monotone",
    "rank",
    "trivial_bound",
    "stationarity",
    "decay",
    "smoothing_gap",
    "growth",
    "eigen_law",
    "partial_trace",
    "c1_extension",
)

# section -> {key: (types, default)}; a default of REQUIRED must be supplied
REQUIRED = object()
_NUM = (int, float)

_SCHEMA = {
    "data": {
        "path": (str, None),
        "n": (int, None),
        "d_noise": (int, None),
        "d_signal": (int, None),
        "signal_fn": (str, "sine"),
        "signal_params": (dict, None),
        "noise_cov": (list, None),
        "label_noise_sd": (_NUM, 0.0),
        "signal_dist": (str, "gaussian"),
        "signal_sep": (_NUM, 1.5),
        "whiten": (bool, True),
    },
    "kernel": {
        "family": (str, "gaussian"),
        "beta": (_NUM, 1.0),
        "gamma": (_NUM, 2.0),
    },
    "ridge": {
        "lambda": (_NUM, REQUIRED),
    },
    "flow": {
        "integrator": (str, "rk4_lifted_u"),
        "step": (_NUM, 0.1),
        "max_steps": (int, 1000),
        "max_time": (_NUM, None),
        "stationarity_tol": (_NUM, 0.0),
        "backtrack": (bool, True),
        "shrink": (_NUM, 0.5),
        "max_backtracks": (int, 30),
        "init": (str, "identity"),
        "init_scale": (_NUM, 1.0),
        "init_rank": (int, None),
        "init_sigma": (list, None),
    },
    "diagnostics": {
        "monitors": ((str, list), "none"),
        "record_spectral": (bool, False),
        "checks": (list, None),
        "strict": (bool, False),
        "fd_step": (_NUM, 1e-4),
        "fd_rtol": (_NUM, 1e-4),
        "tau_rel": (_NUM, 0.2),
        "tau_abs": (_NUM, 5e-4),
        "violation_frac": (_NUM, 0.05),
        "slope_slack": (_NUM, 0.25),
        "decay_target_ratio": (_NUM, None),
        "smoothing_s": (list, [0.1, 0.3, 0.5]),
        "smoothing_points": (int, 10),
        "growth_slack": (_NUM, 0.05),
        "eigen_h": (_NUM, 1e-3),
        "eigen_rtol": (_NUM, 1e-2),
    },
    "compare": {
        "riemannian_integrator": (str, "rk4_lifted_u"),
    },
    "output": {
        "dir": (str, "out"),
    },
}
_TOP = {"seed": (int, 0)}


def _typename(t):
    if isinstance(t, tuple):
        return " or ".join(x.__name__ for x in t)
    return t.__name__


def _check_type(key, value, types):
    # bool is an int subclass; never accept it where a number is expected
    if isinstance(value, bool) and types is not bool and not (isinstance(types, tuple) and bool in types):
        raise ConfigError(f"{key}: expected {_typename(types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{key}: expected {_typename(types)}, got {type(value).__name__}")


def _section(raw, name):
    schema = _SCHEMA[name]
    given = raw.get(name) or {}
    if not isinstance(given, dict):
        raise ConfigError(f"{name}: section must be a mapping")
    for key in given:
        if key not in schema:
            raise ConfigError(f"unknown key '{name}.{key}' (allowed: {', '.join(sorted(schema))})")
    out = {}
    for key, (types, default) in schema.items():
        if key in given and given[key] is not None:
            _check_type(f"{name}.{key}", given[key], types)
            out[key] = given[key]
        elif default is REQUIRED:
            raise ConfigError(f"missing required key '{name}.{key}'")
        else:
            out[key] = default
    return out


@dataclass
class RunConfig:
    seed: int
    data: dict
    kernel: dict
    ridge: dict
    flow: dict
    diagnostics: dict
    compare: dict
    output: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def lam(self):
        return float(self.ridge["lambda"])

    @property
    def out_dir(self):
        p = Path(self.output["dir"])
        return p if p.is_absolute() else self.base_dir / p

    def data_path(self) -> Optional[Path]:
        p = self.data["path"]
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def generator_spec(self):
        dd = self.data
        return NoiseSignalSpec(
            n=dd["n"],
            d_noise=dd["d_noise"],
            d_signal=dd["d_signal"],
            signal_fn=dd["signal_fn"],
            signal_params=dict(dd["signal_params"] or {}),
            noise_cov=None if dd["noise_cov"] is None else np.asarray(dd["noise_cov"], dtype=float),
            label_noise_sd=float(dd["label_noise_sd"]),
            signal_dist=dd["signal_dist"],
            signal_sep=float(dd["signal_sep"]),
            seed=self.seed,
        )

    def kernel_for(self, dim):
        kk = self.kernel
        return RadialKernel(kk["family"], float(kk["beta"]), float(kk["gamma"]), dim)

    def checks(self):
        c = self.diagnostics["checks"]
        return tuple(CHECK_NAMES) if c is None else tuple(c)

    def as_dict(self):
        return {
            "seed": self.seed,
            "data": self.data,
            "kernel": self.kernel,
            "ridge": self.ridge,
            "flow": self.flow,
            "diagnostics": self.diagnostics,
            "compare": self.compare,
            "output": self.output,
        }


def _validate(cfg):
    dd = cfg.data
    if dd["path"] is None:
        for key in ("n", "d_noise", "d_signal"):
            if dd[key] is None:
                raise ConfigError(f"data.{key} is required when data.path is not given")
        if dd["signal_fn"] not in SIGNAL_FNS:
            raise ConfigError(f"data.signal_fn must be one of {SIGNAL_FNS}, got {dd['signal_fn']!r}")
        if dd["signal_dist"] not in SIGNAL_DISTS:
            raise ConfigError(f"data.signal_dist must be one of {SIGNAL_DISTS}, got {dd['signal_dist']!r}")
        cfg.generator_spec()  # runs the generator's own validation
    else:
        for key in ("n", "d_signal", "signal_params", "noise_cov"):
            if dd[key] is not None:
                raise ConfigError(f"data.{key} cannot be combined with data.path")
    if cfg.kernel["family"] not in ("gaussian", "sobolev"):
        raise ConfigError(f"kernel.family must be gaussian or sobolev, got {cfg.kernel['family']!r}")
    cfg.kernel_for(1)  # kernel parameter validation
    lam = cfg.ridge["lambda"]
    if not (math.isfinite(lam) and lam > 0):
        raise ConfigError(f"ridge.lambda must be positive, got {lam}")
    fl = cfg.flow
    if fl["integrator"] not in INTEGRATORS:
        raise ConfigError(f"flow.integrator must be one of {INTEGRATORS}, got {fl['integrator']!r}")
    if not fl["step"] > 0:
        raise ConfigError("flow.step must be positive")
    if fl["max_steps"] < 1:
        raise ConfigError("flow.max_steps must be >= 1")
    if fl["max_time"] is not None and not fl["max_time"] > 0:
        raise ConfigError("flow.max_time must be positive")
    if not 0 < fl["shrink"] < 1:
        raise ConfigError("flow.shrink must lie in (0, 1)")
    if fl["stationarity_tol"] < 0:
        raise ConfigError("flow.stationarity_tol must be >= 0")
    if fl["init"] not in ("identity", "random", "sigma"):
        raise ConfigError(f"flow.init must be identity, random or sigma, got {fl['init']!r}")
    if fl["init"] == "sigma" and fl["init_sigma"] is None:
        raise ConfigError("flow.init_sigma is required when flow.init is 'sigma'")
    if fl["init_sigma"] is not None and fl["init"] != "sigma":
        raise ConfigError("flow.init_sigma requires flow.init: sigma")
    if not fl["init_scale"] > 0:
        raise ConfigError("flow.init_scale must be positive")
    if fl["init_rank"] is not None and fl["init_rank"] < 0:
        raise ConfigError("flow.init_rank must be >= 0")
    dg = cfg.diagnostics
    mon = dg["monitors"]
    if isinstance(mon, str) and mon not in ("none", "noise"):
        raise ConfigError(f"diagnostics.monitors must be 'none', 'noise' or a list of vectors, got {mon!r}")
    if mon == "noise" and dd["d_noise"] is None:
        raise ConfigError("diagnostics.monitors: 'noise' needs data.d_noise")
    for name in cfg.checks():
        if name not in CHECK_NAMES:
            raise ConfigError(f"diagnostics.checks: unknown check {name!r} (allowed: {', '.join(CHECK_NAMES)})")
    for s in dg["smoothing_s"]:
        if isinstance(s, bool) or not isinstance(s, _NUM) or not 0 < s < 1:
            raise ConfigError("diagnostics.smoothing_s entries must lie in (0, 1)")
    if cfg.compare["riemannian_integrator"] not in INTEGRATORS[:3]:
        raise ConfigError(
            f"compare.riemannian_integrator must be one of {INTEGRATORS[:3]}, got {cfg.compare['riemannian_integrator']!r}"
        )


def parse_config(raw, base_dir=None, seed=None):
    """Validate a parsed mapping; ``seed`` overrides the file's top-level seed."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of sections")
    for key in raw:
        if key not in _SCHEMA and key not in _TOP:
            raise ConfigError(f"unknown key '{key}' (allowed sections: {', '.join(sorted([*_SCHEMA, *_TOP]))})")
    file_seed = raw.get("seed", 0)
    _check_type("seed", file_seed, int)
    cfg = RunConfig(
        seed=int(seed if seed is not None else file_seed),
        **{name: _section(raw, name) for name in _SCHEMA},
        base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
    )
    _validate(cfg)
    return cfg


def load_config(path, seed=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(raw, base_dir=path.parent, seed=seed)
