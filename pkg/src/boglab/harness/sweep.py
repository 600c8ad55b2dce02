"""Parameter sweeps over N and beta, and power-law fits of the results."""

from __future__ import annotations

import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, from_dict
from .pipeline import _write_rows, run_pipeline

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("N", "beta", "time", "norm_error", "norm_error_sq", "excitation_number",
                   "depletion", "trace_distance", "leakage", "status")


def fit_powerlaw(points) -> tuple[float, float, float]:
    """Least-squares line through (log N, log value); returns (slope, intercept, residual norm)."""
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    if any(n <= 0 or v <= 0 for n, v in pts):
        raise ValueError("power-law fit needs positive abscissae and values")
    x = np.log([n for n, _ in pts])
    y = np.log([v for _, v in pts])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    residual = float(np.linalg.norm(y - A @ np.array([slope, intercept])))
    return float(slope), float(intercept), residual


def _member(payload):
    cfg_dict, N, beta, out_dir = payload
    cfg = from_dict(cfg_dict)
    try:
        rec = run_pipeline(cfg, N, beta)
        rec.write(out_dir)
        f = rec.final()
        return {"N": N, "beta": beta, "time": f["time"], "norm_error": f["norm_error"],
                "norm_error_sq": f["norm_error"] ** 2, "excitation_number": f["excitation_number"],
                "depletion": f["depletion"], "trace_distance": f["trace_distance"],
                "leakage": rec.diagnostics["fock_leakage"], "status": "ok"}
    except Exception as err:  # a failing member must not take down the sweep
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "error.txt").write_text(traceback.format_exc())
        nan = float("nan")
        return {"N": N, "beta": beta, "time": cfg.time.t_final, "norm_error": nan,
                "norm_error_sq": nan, "excitation_number": nan, "depletion": nan,
                "trace_distance": nan, "leakage": nan, "status": f"failed: {err}"}


def sweep(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every (N, beta) member, write per-member outputs and a summary."""
    out = Path(out_dir or cfg.output)
    members = [(cfg.echo(), N, beta, str(out / f"N{N}_beta{beta:g}"))
               for beta in cfg.betas for N in cfg.N_list]
    if cfg.workers > 1 and len(members) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_member, members))
    else:
        rows = [_member(m) for m in members]

    fits = {}
    for beta in cfg.betas:
        pts = [(r["N"], r["norm_error_sq"]) for r in rows
               if r["beta"] == beta and r["status"] == "ok" and r["norm_error_sq"] > 0]
        if len(pts) >= 2:
            slope, intercept, residual = fit_powerlaw(pts)
            fits[f"{beta:g}"] = {"slope": slope, "intercept": intercept, "residual": residual,
                                 "reference_slope": (2 * beta - 1) / 2}
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "summary.csv", SUMMARY_COLUMNS, rows)
    summary = {"config_hash": cfg.config_hash(), "config": cfg.echo(), "rows": rows, "fits": fits}
    (out / "sweep.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
