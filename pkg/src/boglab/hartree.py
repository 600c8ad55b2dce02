"""Condensate evolution: i du/dt = (-Lap + w_N * |u|^2 - mu_N) u."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import (
    GridFunction,
    GridSpec,
    InteractionProfile,
    OneBodyOperator,
    laplacian_matrix,
    periodic_convolve,
    scaled_potential,
)

NORM_TOL = 1e-8
NORM_ABORT = 1e-6


class HartreeError(RuntimeError):
    pass


def _require_normalized(u: GridFunction, tol: float = NORM_TOL):
    n = u.norm()
    if abs(n - 1) > tol:
        raise ValueError(f"condensate must be normalized, got norm {n:.12f}")


def mean_field(u: GridFunction, wN: GridFunction) -> np.ndarray:
    """The potential w_N * |u|^2 on the grid (real)."""
    dens = GridFunction(u.grid, np.abs(u.values) ** 2)
    return periodic_convolve(u.grid, wN, dens).values.real


def mu_phase(u: GridFunction, wN: GridFunction) -> float:
    if u.grid != wN.grid:
        raise ValueError("grid mismatch between condensate and potential")
    _require_normalized(u)
    V = mean_field(u, wN)
    return float(0.5 * u.grid.dx * np.sum(np.abs(u.values) ** 2 * V))


def hartree_generator(u: GridFunction, wN: GridFunction) -> OneBodyOperator:
    mu = mu_phase(u, wN)
    V = mean_field(u, wN)
    H = laplacian_matrix(u.grid) + np.diag(V - mu)
    return OneBodyOperator(u.grid, H, "hermitian")


def hartree_energy(u: GridFunction, wN: GridFunction) -> float:
    """<u, -Lap u> + 1/2 iint |u|^2 w_N |u|^2 (conserved by the flow)."""
    _require_normalized(u)
    k2 = u.grid.wavenumbers ** 2
    uk = np.fft.fft(u.values)
    # Parseval: dx * sum |u|^2 = (dx / M) * sum |uk|^2
    kinetic = u.grid.dx / u.grid.points * np.sum(k2 * np.abs(uk) ** 2)
    return float(kinetic + mu_phase(u, wN))


@dataclass(eq=False)
class HartreeTrajectory:
    grid: GridSpec
    times: np.ndarray
    states: np.ndarray  # (n_samples, M) grid values
    mu_values: np.ndarray
    wN: GridFunction
    dt: float
    stride: int = 1
    profile: object = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> GridFunction:
        return GridFunction(self.grid, self.states[i])

    def index_at(self, t: float) -> int:
        """Index of the stored sample at ``t``, else the nearest one before it."""
        step = self.dt * self.stride
        i = int(math.floor(t / step + 1e-9))
        return min(max(i, 0), len(self.times) - 1)

    def u_at(self, t: float) -> GridFunction:
        return self.state(self.index_at(t))

    def norms(self) -> np.ndarray:
        return np.sqrt(self.grid.dx * np.sum(np.abs(self.states) ** 2, axis=1))

    def energies(self) -> np.ndarray:
        return np.array([hartree_energy(self.state(i), self.wN) for i in range(len(self))])

    def write_csv(self, path):
        norms, energies = self.norms(), self.energies()
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["time", "norm", "energy", "mu", "max_abs_u"])
            for i, t in enumerate(self.times):
                out.writerow([f"{t:.10g}", repr(float(norms[i])), repr(float(energies[i])),
                              repr(float(self.mu_values[i])),
                              repr(float(np.abs(self.states[i]).max()))])


def n_steps_for(t_final: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if t_final < 0:
        raise ValueError(f"final time must be nonnegative, got {t_final}")
    n = int(round(t_final / dt))
    if abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} is not a multiple of dt={dt}")
    return n


def evolve_hartree(u0: GridFunction, wN: GridFunction, t_final: float, dt: float,
                   stride: int = 1, gauge: bool = True, profile=None) -> HartreeTrajectory:
    """Strang split-step propagation.

    Half kinetic step in Fourier space, exact phase step with the frozen density
    (|u| is invariant under it, so the step is exact), half kinetic step.
    ``gauge=False`` drops the mu_N phase; used to check gauge equivalence.
    """
    if isinstance(wN, InteractionProfile):
        profile, wN = wN, scaled_potential(wN, u0.grid)
    _require_normalized(u0)
    if u0.grid != wN.grid:
        raise ValueError("grid mismatch between condensate and potential")
    n = n_steps_for(t_final, dt)
    grid = u0.grid
    half_kin = np.exp(-0.5j * dt * grid.wavenumbers ** 2)

    u = u0.values.copy()
    times, states, mus = [0.0], [u.copy()], [mu_phase(u0, wN)]
    w_hat = np.fft.fft(wN.values)
    dx = grid.dx
    for step in range(1, n + 1):
        u = np.fft.ifft(half_kin * np.fft.fft(u))
        dens = np.abs(u) ** 2
        V = (dx * np.fft.ifft(w_hat * np.fft.fft(dens))).real
        phase = V - 0.5 * dx * np.sum(dens * V) if gauge else V
        u = np.exp(-1j * dt * phase) * u
        u = np.fft.ifft(half_kin * np.fft.fft(u))

        drift = abs(math.sqrt(dx * np.sum(np.abs(u) ** 2)) - 1)
        if drift > NORM_ABORT:
            raise HartreeError(f"norm drift {drift:.2e} at step {step} (t={step * dt:.6g})")
        if step % stride == 0:
            times.append(step * dt)
            states.append(u.copy())
            dens = np.abs(u) ** 2
            V = (dx * np.fft.ifft(w_hat * np.fft.fft(dens))).real
            mus.append(0.5 * dx * np.sum(dens * V))
    return HartreeTrajectory(grid, np.array(times), np.array(states), np.array(mus),
                             wN, dt, stride, profile)
