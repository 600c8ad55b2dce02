"""One-dimensional periodic grid, one-body operators and interaction profiles.

Kernels ``f(x, y)`` are stored as matrices ``F[j, k] = dx * f(x_j, x_k)`` so that
matrix products approximate operator composition. The associated orthonormal
modes are the indicator functions ``e_j / sqrt(dx)``; a grid function ``u`` has
mode coefficients ``sqrt(dx) * u_j``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

HERMITIAN_TOL = 1e-12
PROJECTOR_TOL = 1e-10
PSD_TOL = 1e-10

ROLES = ("hermitian", "psd", "projector", "generic")


class ResolutionWarning(UserWarning):
    """The scaled interaction is supported on too few grid points."""


@dataclass(frozen=True)
class GridSpec:
    length: float
    points: int

    def __post_init__(self):
        if not (self.length > 0 and math.isfinite(self.length)):
            raise ValueError(f"grid length must be positive, got {self.length}")
        if int(self.points) != self.points or self.points < 2:
            raise ValueError(f"grid needs at least 2 points, got {self.points}")

    @property
    def dx(self) -> float:
        return self.length / self.points

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.points) * self.dx

    @property
    def wavenumbers(self) -> np.ndarray:
        """Discrete wavenumbers in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.points, d=self.dx)

    def minimal_image(self) -> np.ndarray:
        """Signed distance of each node from the origin on the torus."""
        x = self.nodes
        return x - self.length * np.round(x / self.length)


def build_grid(L: float, M: int) -> GridSpec:
    return GridSpec(float(L), int(M))


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: GridSpec
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != (self.grid.points,):
            raise ValueError(
                f"expected {self.grid.points} values, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def norm(self) -> float:
        return float(np.sqrt(self.grid.dx * np.sum(np.abs(self.values) ** 2)))

    def modes(self) -> np.ndarray:
        """Coefficients in the orthonormal indicator-mode basis."""
        return np.sqrt(self.grid.dx) * self.values

    @classmethod
    def from_modes(cls, grid: GridSpec, coeffs: np.ndarray) -> "GridFunction":
        return cls(grid, np.asarray(coeffs) / np.sqrt(grid.dx))

    def normalized(self) -> "GridFunction":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero function")
        return GridFunction(self.grid, self.values / n, dict(self.meta))


def plane_wave(grid: GridSpec, k: int) -> GridFunction:
    """Normalized plane wave exp(2*pi*i*k*x/L)/sqrt(L)."""
    x = grid.nodes
    return GridFunction(grid, np.exp(2j * np.pi * k * x / grid.length) / np.sqrt(grid.length))


def gaussian_packet(grid: GridSpec, center: float, width: float, momentum: int = 0) -> GridFunction:
    """Normalized periodic gaussian centred at ``center`` with an optional momentum kick."""
    d = grid.nodes - center
    d = d - grid.length * np.round(d / grid.length)
    vals = np.exp(-(d**2) / (2 * width**2)) * np.exp(2j * np.pi * momentum * grid.nodes / grid.length)
    return GridFunction(grid, vals).normalized()


@dataclass(frozen=True, eq=False)
class OneBodyOperator:
    grid: GridSpec
    matrix: np.ndarray
    role: str = "generic"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        M = self.grid.points
        if m.shape != (M, M):
            raise ValueError(f"expected a {M}x{M} matrix, got {m.shape}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("hermitian", "psd", "projector"):
            defect = np.max(np.abs(m - m.conj().T))
            if defect > HERMITIAN_TOL:
                raise ValueError(f"{self.role} operator is not Hermitian (defect {defect:.2e})")
        if self.role == "projector":
            defect = np.linalg.norm(m @ m - m)
            if defect > PROJECTOR_TOL:
                raise ValueError(f"operator is not idempotent (defect {defect:.2e})")
        if self.role == "psd":
            lo = np.linalg.eigvalsh(m).min()
            if lo < -PSD_TOL:
                raise ValueError(f"operator has negative eigenvalue {lo:.2e}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def apply(self, f: GridFunction) -> GridFunction:
        _check_same_grid(self.grid, f.grid)
        return GridFunction(self.grid, self.matrix @ f.values)


def _check_same_grid(a: GridSpec, b: GridSpec):
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def _as_matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, OneBodyOperator) else np.asarray(op)


def laplacian_matrix(grid: GridSpec) -> np.ndarray:
    """Dense pseudo-spectral matrix of -d^2/dx^2 with periodic boundary."""
    k2 = grid.wavenumbers**2
    eye = np.eye(grid.points)
    D = np.fft.ifft(k2[:, None] * np.fft.fft(eye, axis=0), axis=0)
    # the spectrum is real and even in k, so the matrix is real symmetric
    D = D.real
    return 0.5 * (D + D.T)


def laplacian_operator(grid: GridSpec) -> OneBodyOperator:
    return OneBodyOperator(grid, laplacian_matrix(grid), "hermitian")


def translation_matrix(grid: GridSpec, shift: int = 1) -> np.ndarray:
    return np.roll(np.eye(grid.points), shift, axis=0)


def periodic_convolve(grid: GridSpec, f: GridFunction, g: GridFunction) -> GridFunction:
    """h_j = dx * sum_k f[(j-k) mod M] g[k], evaluated with the FFT."""
    _check_same_grid(grid, f.grid)
    _check_same_grid(grid, g.grid)
    h = grid.dx * np.fft.ifft(np.fft.fft(f.values) * np.fft.fft(g.values))
    return GridFunction(grid, h)


def orthogonal_projector(u: GridFunction, tol: float = 1e-8) -> OneBodyOperator:
    """Q = 1 - |u><u| in the orthonormal-mode convention."""
    n = u.norm()
    if abs(n - 1) > tol:
        raise ValueError(f"condensate must be normalized, got norm {n:.12f}")
    v = u.modes()
    Q = np.eye(u.grid.points) - np.outer(v, v.conj())
    return OneBodyOperator(u.grid, 0.5 * (Q + Q.conj().T), "projector")


def trace_norm(op) -> float:
    m = _as_matrix(op)
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite entries")
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def hs_norm(op) -> float:
    m = _as_matrix(op)
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite entries")
    return float(np.sqrt(np.sum(np.abs(m) ** 2)))


# --- interaction profiles -------------------------------------------------

def _gaussian(x, sigma=0.5, strength=1.0):
    return strength * np.exp(-(x**2) / (2 * sigma**2))


def _box(x, width=0.5, height=1.0):
    return np.where(np.abs(x) <= width / 2, height, 0.0)


def _cosine_bump(x, width=1.0, height=1.0):
    inside = np.abs(x) < width / 2
    return np.where(inside, height * 0.5 * (1 + np.cos(2 * np.pi * x / width)), 0.0)


def _flat(x, value=1.0):
    return np.full_like(np.asarray(x, dtype=float), value)


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


PROFILE_KINDS: dict[str, Callable] = {
    "gaussian": _gaussian,
    "box": _box,
    "cosine": _cosine_bump,
    "flat": _flat,
    "zero": _zero,
}


@dataclass(frozen=True)
class InteractionProfile:
    """Base interaction ``w`` with the mean-field scaling ``N^a w(N^b x)``.

    ``amp_exponent`` and ``width_exponent`` default to ``beta``, which is the
    mass-preserving one-dimensional choice.
    """

    kind: str = "gaussian"
    params: tuple = ()
    beta: float = 0.0
    N: int = 2
    amp_exponent: float | None = None
    width_exponent: float | None = None
    table: tuple | None = None  # (x, w) samples for kind="tabulated"

    def __post_init__(self):
        if self.kind != "tabulated" and self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "tabulated":
            if self.table is None:
                raise ValueError("tabulated profile needs a table")
            x, w = (np.asarray(a, dtype=float) for a in self.table)
            if np.any(np.diff(x) <= 0):
                raise ValueError("tabulated x must be strictly increasing")
            if np.any(w < 0):
                raise ValueError("interaction must be nonnegative")
        if not 0 <= self.beta < 0.5:
            raise ValueError(f"beta must lie in [0, 1/2), got {self.beta}")
        if self.N < 1:
            raise ValueError("N must be positive")

    @classmethod
    def make(cls, kind: str, beta: float = 0.0, N: int = 2, **params) -> "InteractionProfile":
        return cls(kind, tuple(sorted(params.items())), beta, N)

    @property
    def a(self) -> float:
        return self.beta if self.amp_exponent is None else self.amp_exponent

    @property
    def b(self) -> float:
        return self.beta if self.width_exponent is None else self.width_exponent

    def base(self, x) -> np.ndarray:
        """Unscaled profile w(x); even in x by construction."""
        x = np.abs(np.asarray(x, dtype=float))
        if self.kind == "tabulated":
            tx, tw = (np.asarray(a, dtype=float) for a in self.table)
            return np.interp(x, tx, tw, left=tw[0], right=0.0)
        return PROFILE_KINDS[self.kind](x, **dict(self.params))

    def scaled(self, x) -> np.ndarray:
        N = float(self.N)
        return N**self.a * self.base(N**self.b * np.asarray(x, dtype=float))

    def with_N(self, N: int) -> "InteractionProfile":
        return InteractionProfile(self.kind, self.params, self.beta, N,
                                  self.amp_exponent, self.width_exponent, self.table)

    def integral(self) -> float:
        """Continuum integral of the unscaled profile, by adaptive quadrature."""
        from scipy.integrate import quad

        if self.kind == "flat":
            raise ValueError("flat profile has no finite integral")
        if self.kind == "zero":
            return 0.0
        val, _ = quad(lambda s: float(self.base(s)), 0, np.inf, limit=200)
        return 2 * val


def scaled_potential(profile: InteractionProfile, grid: GridSpec,
                     renormalize: bool = False, min_points: int = 4) -> GridFunction:
    """Sample w_N on the torus with minimal-image wrapping.

    The returned function's ``meta`` records the number of nodes in the
    effective support and any resolution warning.
    """
    x = grid.minimal_image()
    w = profile.scaled(x)
    if np.any(w < 0):
        raise RuntimeError("scaled interaction has negative samples")
    meta: dict = {}
    peak = w.max() if w.size else 0.0
    if peak > 0:
        support = int(np.count_nonzero(w > 1e-2 * peak))
        meta["support_points"] = support
        if support < min_points:
            msg = (f"scaled interaction covers {support} grid point(s) "
                   f"(< {min_points}); increase M or lower beta")
            meta["warning"] = msg
            warnings.warn(msg, ResolutionWarning, stacklevel=2)
    if renormalize and peak > 0:
        target = grid.dx * np.sum(profile.base(x))
        w = w * (target / (grid.dx * np.sum(w)))
        meta["renormalized"] = True
    return GridFunction(grid, w.astype(complex), meta)


def circulant(w: GridFunction) -> np.ndarray:
    """Matrix W[j, k] = w[(j - k) mod M] of a real even profile."""
    M = w.grid.points
    idx = (np.arange(M)[:, None] - np.arange(M)[None, :]) % M
    return w.values.real[idx]
