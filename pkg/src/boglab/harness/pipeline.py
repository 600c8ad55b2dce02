"""Single-run orchestration: condensate, pair flow, Fock flow, exact dynamics, comparison."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import embedding, fock, hartree, pairdyn
from ..lattice import GridFunction, scaled_potential
from .config import ExperimentConfig

log = logging.getLogger(__name__)

PAIR_COLUMNS = ("number", "kinetic", "hs_alpha", "defect_X", "defect_Y", "condensate_leak")
RUN_COLUMNS = (("config_hash", "N", "beta") + embedding.FIELDS + PAIR_COLUMNS
               + ("number_bound_shape", "fock_number", "fock_condensate_leak", "projection_loss"))


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    N: int
    beta: float
    rows: list = field(default_factory=list)
    pair_rows: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def reports(self) -> list[embedding.ApproximationReport]:
        return [embedding.ApproximationReport(**{k: r[k] for k in embedding.FIELDS}) for r in self.rows]

    def final(self) -> dict:
        return self.rows[-1]

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "run.csv", RUN_COLUMNS, self.rows)
        with open(out / "norm_error.dat", "w") as fh:
            for r in self.rows:
                fh.write(f"{r['time']:.10g} {r['norm_error']!r}\n")
        summary = {
            "config_hash": self.config_hash,
            "N": self.N,
            "beta": self.beta,
            "config": self.config,
            "final": self.final(),
            "diagnostics": self.diagnostics,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out / "timing.json").write_text(json.dumps(self.timing, indent=2, sort_keys=True) + "\n")
        return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


@dataclass
class Setup:
    cfg: ExperimentConfig
    N: int
    beta: float
    grid: object
    profile: object
    wN: GridFunction
    u0: GridFunction


def setup(cfg: ExperimentConfig, N: int | None = None, beta: float | None = None) -> Setup:
    N = cfg.N_list[0] if N is None else N
    beta = cfg.betas[0] if beta is None else beta
    grid = cfg.grid_spec()
    profile = cfg.interaction.profile(N, beta)
    wN = scaled_potential(profile, grid, renormalize=cfg.interaction.renormalize)
    u0 = cfg.condensate.build(grid)
    return Setup(cfg, N, beta, grid, profile, wN, u0)


def run_hartree(s: Setup) -> hartree.HartreeTrajectory:
    """Condensate trajectory stored at dt/2 so RK4 stage times are available."""
    t = s.cfg.time
    return hartree.evolve_hartree(s.u0, s.wN, t.t_final, t.dt / 2, profile=s.profile)


def initial_pair(s: Setup) -> pairdyn.PairState:
    if s.cfg.excitations.kind == "vacuum":
        return pairdyn.PairState.vacuum(s.grid.points)
    return pairdyn.squeezed_pair(s.cfg.excitations.squeezing(s.grid, s.u0))


def initial_excitations(s: Setup, n_max: int) -> fock.FockVector:
    basis = fock.build_basis(s.grid.points, n_max=n_max, max_dim=s.cfg.truncation.max_dim)
    if s.cfg.excitations.kind == "vacuum":
        return fock.vacuum(basis)
    return fock.squeezed_vacuum(basis, s.cfg.excitations.squeezing(s.grid, s.u0))


def sample_times(cfg: ExperimentConfig) -> np.ndarray:
    n = int(round(cfg.time.t_final / cfg.time.dt))
    steps = list(range(0, n + 1, cfg.time.stride))
    if steps[-1] != n:
        steps.append(n)
    return np.array(steps) * cfg.time.dt


def run_pair(s: Setup, traj=None) -> pairdyn.PairTrajectory:
    traj = traj or run_hartree(s)
    return pairdyn.evolve_pair(initial_pair(s), traj, s.cfg.time.dt, s.cfg.time.t_final,
                               record_stride=s.cfg.time.stride)


def run_fock(s: Setup, traj=None, n_max: int | None = None) -> fock.FockTrajectory:
    traj = traj or run_hartree(s)
    n_max = s.cfg.truncation.n_max if n_max is None else n_max
    return fock.evolve_fock(initial_excitations(s, n_max), traj, s.cfg.time.dt, s.cfg.time.t_final,
                            record_stride=s.cfg.time.stride,
                            leakage_abort=s.cfg.tolerances.leakage)


def run_exact(s: Setup, psi0: fock.FockVector | None = None) -> tuple[fock.NBodyHamiltonian, fock.ExactTrajectory]:
    cfg = s.cfg
    H = fock.build_hn_exact(s.N, s.profile, s.grid, max_dim=cfg.truncation.max_dim, wN=s.wN)
    if psi0 is None:
        phi0 = initial_excitations(s, min(cfg.truncation.n_max, s.N))
        psi0 = embedding.embed(s.u0, phi0, s.N, max_dim=cfg.truncation.max_dim)
        psi0 = fock.FockVector(psi0.basis, psi0.coeffs / psi0.norm())
    ex = fock.evolve_exact(psi0, H, cfg.time.t_final, cfg.time.exact_dt, sample_times(cfg),
                           cfg.time.krylov_dim, cfg.tolerances.lanczos)
    return H, ex


def run_pipeline(cfg: ExperimentConfig, N: int | None = None, beta: float | None = None) -> RunRecord:
    """Hartree, pair flow, Fock flow and exact dynamics from the same initial data, then compare."""
    clock = {}
    t0 = time.perf_counter()
    s = setup(cfg, N, beta)
    n_max = min(cfg.truncation.n_max, s.N)
    record = RunRecord(cfg.echo(), cfg.config_hash(), s.N, s.beta)

    traj = run_hartree(s)
    clock["hartree"] = time.perf_counter() - t0
    pair = run_pair(s, traj)
    clock["pair"] = time.perf_counter() - t0 - sum(clock.values())
    ftraj = run_fock(s, traj, n_max)
    clock["fock"] = time.perf_counter() - t0 - sum(clock.values())

    phi0 = ftraj.states[0]
    psi0 = embedding.embed(s.u0, phi0, s.N, max_dim=cfg.truncation.max_dim)
    psi0 = fock.FockVector(psi0.basis, psi0.coeffs / psi0.norm())
    H, ex = run_exact(s, psi0)
    clock["exact"] = time.perf_counter() - t0 - sum(clock.values())

    lap = None
    n0 = pair.rows[0]["number"]
    for i, t in enumerate(ex.times):
        u = traj.u_at(t)
        psi = ex.states[i]
        phi = ftraj.states[i]
        approx = embedding.embed(u, phi, s.N, max_dim=cfg.truncation.max_dim)
        g1 = fock.one_body_reduced(psi)
        metrics = embedding.condensation_metrics(g1, u, s.N, lap)
        excited = embedding.decompose(psi, u)
        prow = pair.rows[i]
        row = {
            "config_hash": record.config_hash,
            "N": s.N,
            "beta": s.beta,
            "time": float(t),
            "norm_error": float(np.linalg.norm(psi.coeffs - approx.coeffs)),
            "excitation_number": embedding.excitation_number(excited),
            **metrics,
            **{c: prow[c] for c in PAIR_COLUMNS},
            "number_bound_shape": pairdyn.log_growth_shape(n0, t),
            "fock_number": fock.number_moments(phi)[0],
            "fock_condensate_leak": approx.meta["condensate_leak"],
            "projection_loss": approx.meta["projection_loss"],
        }
        if abs(pair.times[i] - t) > 1e-12 or abs(ftraj.times[i] - t) > 1e-12:
            raise RuntimeError("sample grids of the sub-series disagree")
        record.rows.append(row)
    record.pair_rows = pair.rows
    clock["compare"] = time.perf_counter() - t0 - sum(clock.values())
    clock["total"] = time.perf_counter() - t0

    record.diagnostics = {
        "fock_leakage": ftraj.leakage,
        "fock_norm_drift": ftraj.norm_drift,
        "exact_norm_drift": ex.norm_drift,
        "exact_energy_drift": ex.energy_drift,
        "hartree_norm_drift": float(np.max(np.abs(traj.norms() - 1))),
        "pair_max_structure_defect": pair.meta["max_structure_defect"],
        "krylov_retries": ex.meta["krylov_retries"],
        "n_max": n_max,
        "potential_warning": s.wN.meta.get("warning"),
    }
    worst_leak = max(r["fock_condensate_leak"] for r in record.rows)
    record.diagnostics["max_condensate_leak"] = worst_leak
    record.diagnostics["condensate_leak_ok"] = worst_leak <= cfg.tolerances.condensate_leak
    if worst_leak > cfg.tolerances.condensate_leak:
        log.warning("excitations leaked %.2e into the condensate direction (tolerance %g)",
                    worst_leak, cfg.tolerances.condensate_leak)
    record.timing = clock
    log.info("N=%d beta=%g final norm error %.3e (%.1fs)", s.N, s.beta,
             record.rows[-1]["norm_error"], clock["total"])
    return record


def write_hartree(traj: hartree.HartreeTrajectory, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj.write_csv(out / "hartree.csv")
    return out / "hartree.csv"


def write_fock(ftraj: fock.FockTrajectory, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t, phi in zip(ftraj.times, ftraj.states):
        n1, n2 = fock.number_moments(phi)
        defect, ratio = fock.wick_defect(phi, max_quadruples=4096)
        rows.append({"time": float(t), "norm": phi.norm(), "number": n1, "number_sq": n2,
                     "wick_defect": defect, "moment_ratio": ratio})
    _write_rows(out / "fock.csv", ("time", "norm", "number", "number_sq", "wick_defect", "moment_ratio"), rows)
    fock.dump_vector(ftraj.states[-1], out / "phi_final.fkv")
    (out / "fock_diagnostics.json").write_text(json.dumps(
        {"leakage": ftraj.leakage, "norm_drift": ftraj.norm_drift}, indent=2, sort_keys=True) + "\n")
    return out / "fock.csv"


def write_exact(H: fock.NBodyHamiltonian, ex: fock.ExactTrajectory, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t, psi in zip(ex.times, ex.states):
        g1 = fock.one_body_reduced(psi)
        occ = np.linalg.eigvalsh(g1)[::-1]
        rows.append({"time": float(t), "norm": psi.norm(), "energy": H.expectation(psi.coeffs),
                     "largest_occupation": float(occ[0]), "trace": float(np.trace(g1).real)})
    _write_rows(out / "exact.csv", ("time", "norm", "energy", "largest_occupation", "trace"), rows)
    fock.dump_vector(ex.states[-1], out / "psi_final.fkv")
    return out / "exact.csv"

