"""Turn a :class:`RunConfig` into a concrete problem, run flows, write traces."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import estimate_moments, gen_noise_signal, load_csv, noise_monitors, whiten
from .errors import ConfigError
from .flow import FlowConfig, GradientOracle, run_flow
from .regression import MetricPoint

__all__ = [
    "Problem",
    "load_dataset",
    "prepare",
    "flow_config",
    "run_configured_flow",
    "run_compare",
    "write_trace_csv",
    "trace_schema",
    "write_json",
    "json_summary",
]


@dataclass
class Problem:
    """Everything a flow run needs, in whitened coordinates."""

    raw: object
    moments: object
    samples: object
    kernel: object
    lam: float
    m0: MetricPoint
    monitors: np.ndarray


def load_dataset(cfg):
    path = cfg.data_path()
    if path is None:
        return gen_noise_signal(cfg.generator_spec())
    if not path.exists():
        raise ConfigError(f"data.path: no such file {path}")
    return load_csv(path, seed=cfg.seed)


def _initial_point(cfg, d):
    fl = cfg.flow
    scale = float(fl["init_scale"])
    rank = fl["init_rank"]
    if rank is not None and rank > d:
        raise ConfigError(f"flow.init_rank={rank} exceeds the dimension {d}")
    if fl["init"] == "identity":
        u = math.sqrt(scale) * np.eye(d)
        if rank is not None:
            u[rank:] = 0.0
        return MetricPoint(u, d if rank is None else rank)
    if fl["init"] == "random":
        # separate stream from the data generator, still a function of the seed
        rng = np.random.default_rng([cfg.seed, 1])
        r = d if rank is None else rank
        u = rng.standard_normal((d, r)) @ rng.standard_normal((r, d)) / math.sqrt(max(r, 1) * d)
        return MetricPoint(math.sqrt(scale) * u, r)
    sig = np.asarray(fl["init_sigma"], dtype=float)
    if sig.shape != (d, d):
        raise ConfigError(f"flow.init_sigma must be {d}x{d}, got shape {sig.shape}")
    if not np.allclose(sig, sig.T, atol=1e-12):
        raise ConfigError("flow.init_sigma must be symmetric")
    if np.linalg.eigvalsh(sig).min() < -1e-12:
        raise ConfigError("flow.init_sigma must be positive semidefinite")
    m = MetricPoint.from_sigma(sig, rank)
    return MetricPoint(scale**0.5 * m.u, m.rank)


def _monitors(cfg, moments, d):
    mon = cfg.diagnostics["monitors"]
    if mon == "none":
        return np.zeros((0, d))
    if mon == "noise":
        dn = cfg.data["d_noise"]
        if dn > d:
            raise ConfigError(f"data.d_noise={dn} exceeds the dimension {d}")
        if cfg.data["whiten"]:
            return noise_monitors(moments, dn)
        return np.eye(d)[:dn]
    try:
        arr = np.atleast_2d(np.asarray(mon, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError("diagnostics.monitors: vectors must be numeric lists") from None
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ConfigError(f"diagnostics.monitors: each vector needs {d} entries")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0):
        raise ConfigError("diagnostics.monitors: zero vector")
    return arr / norms[:, None]


def prepare(cfg):
    raw = load_dataset(cfg)
    moments = estimate_moments(raw)
    s = whiten(raw, moments) if cfg.data["whiten"] else raw
    k = cfg.kernel_for(s.d)
    return Problem(raw, moments, s, k, cfg.lam, _initial_point(cfg, s.d), _monitors(cfg, moments, s.d))


def flow_config(cfg, problem, integrator=None, record_spectral=None, keep_factors=True):
    fl = cfg.flow
    rec = cfg.diagnostics["record_spectral"] if record_spectral is None else record_spectral
    if rec and cfg.kernel["family"] != "gaussian":
        raise ConfigError("diagnostics.record_spectral needs kernel.family: gaussian")
    return FlowConfig(
        lam=cfg.lam,
        integrator=integrator or fl["integrator"],
        step=float(fl["step"]),
        max_steps=int(fl["max_steps"]),
        max_time=math.inf if fl["max_time"] is None else float(fl["max_time"]),
        stationarity_tol=float(fl["stationarity_tol"]),
        backtrack=bool(fl["backtrack"]),
        shrink=float(fl["shrink"]),
        max_backtracks=int(fl["max_backtracks"]),
        monitors=problem.monitors,
        record_spectral=bool(rec and problem.monitors.shape[0] > 0),
        keep_factors=keep_factors,
    )


def run_configured_flow(cfg, problem, **kw):
    """Run the configured flow; returns ``(trace, oracle)``."""
    fc = flow_config(cfg, problem, **kw)
    oracle = GradientOracle(problem.samples, problem.kernel, problem.lam)
    return run_flow(problem.samples, problem.m0, problem.kernel, fc, oracle=oracle), oracle


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def run_compare(cfg, problem):
    """Riemannian and Euclidean flows from the same start, same step control."""
    riem, _ = run_configured_flow(cfg, problem, integrator=cfg.compare["riemannian_integrator"], keep_factors=False)
    eucl, _ = run_configured_flow(cfg, problem, integrator="euler_sigma_euclidean", keep_factors=False)

    def side(tr):
        return {
            "summary": json_summary(tr),
            "t": [float(v) for v in tr.times],
            "loss": [_finite(v) for v in tr.losses],
            "min_eigenvalue": [float(r.min_eigenvalue) for r in tr.records],
        }

    # loss curves on the common time grid (both use the same step unless one backtracked)
    common = min(len(riem.records), len(eucl.records))
    gaps = [
        abs(riem.records[i].loss - eucl.records[i].loss)
        for i in range(common)
        if riem.records[i].t == eucl.records[i].t and math.isfinite(eucl.records[i].loss)
    ]
    eu_min = min(r.min_eigenvalue for r in eucl.records)
    ri_min = min(r.min_eigenvalue for r in riem.records)
    report = {
        "riemannian": side(riem),
        "euclidean": side(eucl),
        "euclidean_psd_violation_step": eucl.psd_violation_step,
        "euclidean_min_eigenvalue": float(eu_min),
        "riemannian_min_eigenvalue": float(ri_min),
        "euclidean_left_cone": bool(eu_min < 0),
        "riemannian_stayed_psd": bool(ri_min >= 0),
        "max_loss_gap_common_times": float(max(gaps)) if gaps else None,
    }
    return report, riem, eucl


def json_summary(trace):
    out = trace.summary()
    out["final_loss"] = _finite(out["final_loss"])
    out["final_stationarity_residual"] = _finite(out["final_stationarity_residual"])
    return out


# -- trace files -------------------------------------------------------------------


def _columns(trace):
    d = trace.records[0].sigma_eigenvalues.size
    nm = trace.records[0].monitor_norms.size
    cols = ["step", "t", "h", "backtracks", "loss", "stationarity_residual"]
    cols += [f"eig_{i}" for i in range(d)]
    cols += [f"monitor_{j}_norm_sq" for j in range(nm)]
    if trace.records[0].spectral is not None:
        cols += [f"monitor_{j}_spectral" for j in range(nm)]
        cols += [f"monitor_{j}_decay_bound" for j in range(nm)]
    return cols


def trace_schema(trace):
    desc = {
        "step": "accepted step index (0 = initial point)",
        "t": "flow time",
        "h": "step size actually taken (after backtracking)",
        "backtracks": "number of step-size reductions before acceptance",
        "loss": "J(Sigma; lambda) at the recorded point (nan for a point outside the PSD cone)",
        "stationarity_residual": "Tr(DJ Sigma DJ)",
    }
    cols = _columns(trace)
    out = {}
    for c in cols:
        if c in desc:
            out[c] = desc[c]
        elif c.startswith("eig_"):
            out[c] = f"eigenvalue {c[4:]} of Sigma, ascending, whitened coordinates"
        elif c.endswith("_norm_sq"):
            out[c] = f"|w|^2_Sigma for monitor {c.split('_')[1]}"
        elif c.endswith("_spectral"):
            out[c] = f"spectral integral S for monitor {c.split('_')[1]}"
        else:
            out[c] = f"decay-rate bound -2 pi^2 lambda |w|^2_Sigma S for monitor {c.split('_')[1]}"
    return {"columns": cols, "description": out, "integrator": trace.integrator, "lambda": trace.lam}


def _fmt(v):
    v = float(v)
    return repr(v) if math.isfinite(v) else "nan"


def write_trace_csv(trace, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_columns(trace))
        for i, r in enumerate(trace.records):
            row = [str(i), _fmt(r.t), _fmt(r.step), str(r.backtracks), _fmt(r.loss), _fmt(r.stationarity_residual)]
            row += [_fmt(v) for v in r.sigma_eigenvalues]
            row += [_fmt(v) for v in r.monitor_norms]
            if r.spectral is not None:
                row += [_fmt(v) for v in r.spectral] + [_fmt(v) for v in r.decay_bound]
            elif trace.records[0].spectral is not None:
                row += ["nan"] * (2 * r.monitor_norms.size)
            w.writerow(row)
    return path


def write_json(obj, path):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path
