"""Excitation map between N-body states and condensate-stripped Fock vectors.

An N-body state is written uniquely as sum_n a*(u)^(N-n) / sqrt((N-n)!) phi_n
with every phi_n orthogonal to u in each variable. ``embed`` builds the sum,
``decompose`` recovers the phi_n as

    phi_n = Gamma(Q) a(u)^(N-n) Psi / sqrt((N-n)!),

where Gamma(Q) = sum_k (-1)^k / k! a*(u)^k a(u)^k projects each sector onto
the excited space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .fock import FockBasis, FockVector, build_basis, creator_of
from .lattice import GridFunction, laplacian_matrix

log = logging.getLogger(__name__)

LEAK_TOL = 1e-6


class _CondensateLadder:
    """Sparse a*(u) and a(u) between particle-number sectors, built on demand."""

    def __init__(self, M: int, v: np.ndarray):
        self.M, self.v = M, v
        self._up = {}

    def up(self, n: int):
        if n not in self._up:
            self._up[n] = creator_of(self.M, n, self.v)
        return self._up[n]

    def create(self, n: int, x: np.ndarray, times: int = 1) -> np.ndarray:
        for m in range(n, n + times):
            x = self.up(m) @ x
        return x

    def annihilate(self, n: int, x: np.ndarray, times: int = 1) -> np.ndarray:
        for m in range(n, n - times, -1):
            x = self.up(m - 1).conj().T @ x
        return x

    def project_excited(self, n: int, x: np.ndarray) -> np.ndarray:
        """Gamma(Q) x for x in sector n."""
        out = x.copy()
        down = x
        for k in range(1, n + 1):
            down = self.annihilate(n - k + 1, down)
            out = out + ((-1) ** k / math.factorial(k)) * self.create(n - k, down, k)
        return out


def condensate_leak(u: GridFunction, phi: FockVector) -> float:
    """|a(u) Phi|, zero exactly when every component is orthogonal to u."""
    lad = _CondensateLadder(phi.basis.modes, u.modes())
    total = 0.0
    for n in phi.basis.sectors:
        if n == 0:
            continue
        y = lad.annihilate(n, phi.sector(n))
        total += float(np.vdot(y, y).real)
    return math.sqrt(total)


def embed(u: GridFunction, phi: FockVector, N: int, orthogonalize: bool = True,
          max_dim: int | None = None) -> FockVector:
    """sum_n a*(u)^(N-n) / sqrt((N-n)!) phi_n on the N-particle sector.

    Components are first projected onto the excited space when
    ``orthogonalize`` is set; the removed weight and the measured leak are
    stored in the result's ``meta``.
    """
    basis = phi.basis
    if basis.kind != "max_total":
        raise ValueError("excitation vectors live on a max_total basis")
    if basis.cap > N:
        raise ValueError(f"n_max={basis.cap} exceeds N={N}")
    M = basis.modes
    target = build_basis(M, n_total=N, **({} if max_dim is None else {"max_dim": max_dim}))
    lad = _CondensateLadder(M, u.modes())
    out = np.zeros(target.dim, dtype=complex)
    leak = condensate_leak(u, phi)
    removed = 0.0
    for n in basis.sectors:
        x = phi.sector(n)
        if not np.any(x):
            continue
        if orthogonalize and n > 0:
            y = lad.project_excited(n, x)
            removed += float(np.vdot(x, x).real - np.vdot(y, y).real)
            x = y
        out += lad.create(n, x, N - n) / math.sqrt(math.factorial(N - n))
    meta = {"condensate_leak": leak, "projection_loss": removed}
    if leak > LEAK_TOL:
        meta["warning"] = f"excitation vector overlaps the condensate (leak {leak:.2e})"
        log.warning(meta["warning"])
    return FockVector(target, out, meta)


def decompose(psi: FockVector, u: GridFunction, n_max: int | None = None) -> FockVector:
    """Excitation vector (phi_0, ..., phi_n_max) of an N-particle state."""
    basis = psi.basis
    if basis.kind != "fixed_total":
        raise ValueError("expected an N-particle state")
    N, M = basis.cap, basis.modes
    n_max = N if n_max is None else min(n_max, N)
    lad = _CondensateLadder(M, u.modes())
    out_basis: FockBasis = build_basis(M, n_max=n_max, max_dim=max(10**7, basis.dim))
    out = np.zeros(out_basis.dim, dtype=complex)
    z = psi.coeffs
    for n in range(N, -1, -1):
        if n <= n_max:
            phi_n = lad.project_excited(n, z) / math.sqrt(math.factorial(N - n))
            out[out_basis.sector_slice(n)] = phi_n
        if n > 0:
            z = lad.annihilate(n, z)
    tail = max(0.0, psi.norm() ** 2 - np.linalg.norm(out) ** 2)
    return FockVector(out_basis, out, {"tail_mass": float(tail)})


def excitation_number(phi: FockVector) -> float:
    w = phi.sector_weights()
    return float(np.dot(w, phi.basis.sectors))


def approximation_error(psi_exact: FockVector, u: GridFunction, phi: FockVector, N: int) -> float:
    approx = embed(u, phi, N)
    if approx.basis.dim != psi_exact.basis.dim:
        raise ValueError("exact state and embedded approximation have different bases")
    return float(np.linalg.norm(psi_exact.coeffs - approx.coeffs))


@dataclass
class ApproximationReport:
    time: float
    norm_error: float
    depletion: float
    kinetic_excitation: float
    trace_distance: float
    weighted_trace_distance: float
    excitation_number: float

    def row(self) -> dict:
        return asdict(self)


FIELDS = tuple(ApproximationReport.__dataclass_fields__)


def _sqrt_one_minus_lap(u: GridFunction, lap=None) -> np.ndarray:
    if lap is None:
        lap = laplacian_matrix(u.grid)
    evals, evecs = np.linalg.eigh(np.eye(u.grid.points) + lap)
    return (evecs * np.sqrt(np.clip(evals, 0, None))) @ evecs.conj().T


def condensation_metrics(gamma1: np.ndarray, u: GridFunction, N: int, lap=None,
                         trace_tol: float = 1e-6) -> dict:
    """Depletion, trace distances to |u><u| and the kinetic energy outside the condensate."""
    g = np.asarray(gamma1, dtype=complex)
    tr = np.trace(g).real
    if abs(tr - N) > trace_tol * max(1, N):
        raise ValueError(f"trace of the density matrix is {tr}, expected {N}")
    v = u.modes()
    P = np.outer(v, v.conj())
    Q = np.eye(len(v)) - P
    S = _sqrt_one_minus_lap(u, lap)
    diff = g / N - P
    diff = 0.5 * (diff + diff.conj().T)
    excited = Q @ g @ Q
    return {
        "depletion": float(1 - np.vdot(v, g @ v).real / N),
        "trace_distance": float(np.sum(np.abs(np.linalg.eigvalsh(diff)))),
        "weighted_trace_distance": float(np.sum(np.linalg.svd(S @ diff @ S, compute_uv=False))),
        "kinetic_excitation": float(np.trace(S @ excited @ S).real),
    }


def decomposition_bound(gamma1: np.ndarray, u: GridFunction, N: int, lap=None) -> float:
    """Three-term triangle-inequality bound on the weighted trace distance."""
    g = np.asarray(gamma1, dtype=complex)
    if lap is None:
        lap = laplacian_matrix(u.grid)
    v = u.modes()
    P = np.outer(v, v.conj())
    Q = np.eye(len(v)) - P
    S = _sqrt_one_minus_lap(u, lap)
    h1 = np.vdot(v, (np.eye(len(v)) + lap) @ v).real
    kinetic = np.trace(S @ Q @ g @ Q @ S).real / N
    number = np.trace(Q @ g @ Q).real / N * h1
    cross = 2 / N * np.sum(np.linalg.svd(S @ Q @ g @ P @ S, compute_uv=False))
    return float(kinetic + number + cross)
