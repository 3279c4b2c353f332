"""Command-line entry point: ``sigmaflow {gen,flow,check,compare}``.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure or stalled flow,
4 invariant failure.  ``SIGMAFLOW_THREADS`` caps the BLAS/LAPACK thread pool.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, fixtures
from .checks import run_checks
from .config import load_config
from .data import estimate_moments, gen_noise_signal, save_csv
from .errors import (
    ConfigError,
    ConsistencyError,
    DegenerateCovarianceError,
    DomainError,
    NumericError,
    StalledFlowError,
    UnsupportedOperationError,
)
from .runner import json_summary, prepare, run_compare, run_configured_flow, trace_schema, write_json, write_trace_csv

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERIC", "EXIT_INVARIANT"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("sigmaflow")


def _parser():
    # argparse exits with 2 on usage errors, which is also the config-error code
    p = argparse.ArgumentParser(prog="sigmaflow", description="Riemannian gradient flow for kernel metric learning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate the configured synthetic dataset as CSV",
        "flow": "run the configured flow; write trace CSV and summary JSON",
        "check": "run the flow and the verification suite; write a JSON report",
        "compare": "run Riemannian and Euclidean flows from the same start",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", required=True, help="YAML config path, or fixture:NAME for a shipped fixture")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--quiet", action="store_true", help="only print errors")
    return p


def _threads():
    raw = os.environ.get("SIGMAFLOW_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SIGMAFLOW_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"SIGMAFLOW_THREADS must be a positive integer, got {raw!r}")
    return n


def _load(args):
    if args.config.startswith("fixture:"):
        cfg = fixtures.load(args.config[len("fixture:"):], seed=args.seed)
    else:
        cfg = load_config(args.config, seed=args.seed)
    if args.out:
        cfg.output["dir"] = str(Path(args.out).resolve())
    return cfg


def _out_dir(cfg):
    out = cfg.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def cmd_gen(cfg):
    if cfg.data_path() is not None:
        raise ConfigError("gen needs a generator data section, not data.path")
    s = gen_noise_signal(cfg.generator_spec())
    out = _out_dir(cfg)
    path = save_csv(s, out / "dataset.csv")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mo = estimate_moments(s)
    log.info("wrote %s: n=%d d=%d", path, s.n, s.d)
    log.info("mean      %s", np.array2string(mo.mean, precision=4))
    log.info("cov diag  %s", np.array2string(np.diag(mo.cov), precision=4))
    log.info("mean|y|^2 %.6g", s.mean_sq_y())
    return EXIT_OK


def cmd_flow(cfg):
    p = prepare(cfg)
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    trace, _ = run_configured_flow(cfg, p, keep_factors=False)
    write_trace_csv(trace, out / "trace.csv")
    write_json(trace_schema(trace), out / "trace_schema.json")
    summary = json_summary(trace)
    summary["rank"] = p.m0.rank
    summary["d"] = p.samples.d
    summary["n"] = p.samples.n
    write_json(summary, out / "summary.json")
    log.info(
        "%s: %d steps, t=%.4g, final loss %.6g, terminated by %s (%.1fs)",
        trace.integrator, trace.steps, trace.final.t, trace.final.loss, trace.terminated_by,
        time.perf_counter() - t0,
    )
    return EXIT_OK


def cmd_check(cfg):
    p = prepare(cfg)
    out = _out_dir(cfg)
    trace, oracle = run_configured_flow(cfg, p)
    write_trace_csv(trace, out / "check_trace.csv")
    report = run_checks(p, trace, oracle, cfg)
    write_json(report, out / "report.json")
    for c in report["checks"]:
        status = "skip" if c["skipped"] else ("PASS" if c["passed"] else "FAIL")
        log.info("%-14s %-4s %s%s", c["name"], status, "hard" if c["hard"] else "soft",
                 f"  ({c['message']})" if c["message"] else "")
    if not report["passed"]:
        log.error("invariant failure: %s", ", ".join(report["hard_failures"]))
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_compare(cfg):
    p = prepare(cfg)
    out = _out_dir(cfg)
    report, riem, eucl = run_compare(cfg, p)
    write_trace_csv(riem, out / "trace_riemannian.csv")
    write_trace_csv(eucl, out / "trace_euclidean.csv")
    write_json(report, out / "compare.json")
    log.info("riemannian min eigenvalue %.3g; euclidean min eigenvalue %.3g%s",
             report["riemannian_min_eigenvalue"], report["euclidean_min_eigenvalue"],
             f" (left the PSD cone at step {report['euclidean_psd_violation_step']})"
             if report["euclidean_psd_violation_step"] is not None else "")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "flow": cmd_flow, "check": cmd_check, "compare": cmd_compare}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr, force=True
    )
    try:
        threads = _threads()
        cfg = _load(args)
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](cfg)
    except StalledFlowError as exc:
        log.error("stalled flow: %s", exc)
        try:
            write_json(_jsonable(exc.diagnostics), _out_dir(cfg) / "stalled.json")
        except Exception:  # the dump is best effort; the exit code carries the failure
            pass
        return EXIT_NUMERIC
    except (ConfigError, DomainError, DegenerateCovarianceError, UnsupportedOperationError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except ConsistencyError as exc:
        log.error("invariant failure: %s", exc)
        return EXIT_INVARIANT
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numeric error: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_CONFIG


def _jsonable(d):
    out = {}
    for k, v in (d or {}).items():
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        out[k] = v
    return out


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
