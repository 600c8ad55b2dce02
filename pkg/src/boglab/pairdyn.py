"""Bogoliubov one-body ingredients and the flow of the pair (gamma, alpha).

gamma[x, y] = <a*_y a_x> and alpha[x, y] = <a_x a_y>, both in orthonormal
indicator modes. The equations of motion are

    i dgamma/dt = h gamma - gamma h + K2 conj(alpha) - alpha conj(K2)
    i dalpha/dt = h alpha + alpha h^T + K2 + K2 gamma^T + gamma K2

which follow from the Heisenberg equations for the quadratic Hamiltonian
dGamma(h) + 1/2 sum (K2_jk a*_j a*_k + h.c.).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .hartree import HartreeTrajectory, _require_normalized, mean_field, mu_phase
from .lattice import GridFunction, circulant, laplacian_matrix, orthogonal_projector

STRUCTURE_ABORT = 1e-6
PSD_ABORT = 1e-8

# "derived": K2 conj(alpha) - alpha conj(K2), the form that follows from the
# ladder algebra; "literal": K2 alpha - alpha^dagger K2^dagger. Kept switchable
# so the Fock-space oracle can arbitrate.
CONVENTIONS = ("derived", "literal")


class PairDynamicsError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PairState:
    gamma: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=complex)
        a = np.asarray(self.alpha, dtype=complex)
        if g.ndim != 2 or g.shape != a.shape or g.shape[0] != g.shape[1]:
            raise ValueError(f"gamma {g.shape} and alpha {a.shape} must be equal square matrices")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "alpha", a)

    @property
    def modes(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def vacuum(cls, M: int) -> "PairState":
        z = np.zeros((M, M), dtype=complex)
        return cls(z, z.copy())

    def structure_defects(self) -> tuple[float, float]:
        """(max |gamma - gamma^dagger|, max |alpha - alpha^T|)."""
        g, a = self.gamma, self.alpha
        return float(np.max(np.abs(g - g.conj().T))), float(np.max(np.abs(a - a.T)))

    def min_eigenvalue(self) -> float:
        g = 0.5 * (self.gamma + self.gamma.conj().T)
        return float(np.linalg.eigvalsh(g).min())

    def check(self, tol: float = 1e-10, psd_tol: float = PSD_ABORT):
        dg, da = self.structure_defects()
        if dg > tol or da > tol:
            raise ValueError(f"pair state not Hermitian/symmetric ({dg:.2e}, {da:.2e})")
        lo = self.min_eigenvalue()
        if lo < -psd_tol:
            raise ValueError(f"gamma has negative eigenvalue {lo:.2e}")

    def symmetrized(self) -> "PairState":
        g, a = self.gamma, self.alpha
        return PairState(0.5 * (g + g.conj().T), 0.5 * (a + a.T))

    def __add__(self, other: "PairState") -> "PairState":
        return PairState(self.gamma + other.gamma, self.alpha + other.alpha)

    def __mul__(self, c) -> "PairState":
        return PairState(c * self.gamma, c * self.alpha)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class BogoliubovIngredients:
    h: np.ndarray
    K2: np.ndarray
    Q: np.ndarray
    mu: float


def build_ingredients(u: GridFunction, wN: GridFunction, lap: np.ndarray | None = None
                      ) -> BogoliubovIngredients:
    """h = -Lap + w_N*|u|^2 - mu + Q K1 Q and K2 = Q K2~ Q^T.

    K2~[j, k] = dx u_j w_N(x_j - x_k) u_k and K1[j, k] = dx u_j w_N(x_j - x_k) conj(u_k).
    """
    if u.grid != wN.grid:
        raise ValueError("grid mismatch between condensate and potential")
    _require_normalized(u)
    grid = u.grid
    if lap is None:
        lap = laplacian_matrix(grid)
    W = circulant(wN)
    uv = u.values
    mu = mu_phase(u, wN)
    V = mean_field(u, wN)
    Q = orthogonal_projector(u).matrix
    K1 = grid.dx * uv[:, None] * W * uv.conj()[None, :]
    K2t = grid.dx * uv[:, None] * W * uv[None, :]
    h = lap + np.diag(V - mu) + Q @ K1 @ Q
    h = 0.5 * (h + h.conj().T)
    K2 = Q @ K2t @ Q.T
    K2 = 0.5 * (K2 + K2.T)
    return BogoliubovIngredients(h, K2, Q, mu)


def pair_rhs(state: PairState, ing: BogoliubovIngredients, convention: str = "derived") -> PairState:
    """Time derivative (dgamma/dt, dalpha/dt) of the pair."""
    g, a = state.gamma, state.alpha
    h, K = ing.h, ing.K2
    if g.shape != h.shape:
        raise ValueError(f"state has {g.shape[0]} modes, ingredients {h.shape[0]}")
    if convention == "derived":
        pairing = K @ a.conj() - a @ K.conj()
    elif convention == "literal":
        pairing = K @ a - a.conj().T @ K.conj().T
    else:
        raise ValueError(f"unknown convention {convention!r}")
    i_dg = h @ g - g @ h + pairing
    i_da = h @ a + a @ h.T + K + K @ g.T + g @ K
    return PairState(-1j * i_dg, -1j * i_da)


def quasifree_defect(state: PairState) -> tuple[float, float]:
    """HS norms of X = gamma + gamma^2 - alpha alpha^dagger and Y = gamma alpha - alpha gamma^T."""
    g, a = state.gamma, state.alpha
    X = g + g @ g - a @ a.conj().T
    Y = g @ a - a @ g.T
    return float(np.linalg.norm(X)), float(np.linalg.norm(Y))


def pair_observables(state: PairState, u: GridFunction, lap: np.ndarray | None = None) -> dict:
    if lap is None:
        lap = laplacian_matrix(u.grid)
    g, a = state.gamma, state.alpha
    v = u.modes()
    one_minus_lap = np.eye(len(v)) + lap
    return {
        "number": float(np.trace(g).real),
        "kinetic": float(np.trace(one_minus_lap @ g).real),
        "hs_alpha": float(np.linalg.norm(a)),
        "condensate_leak": float(np.linalg.norm(g @ v) + np.linalg.norm(a @ v.conj())),
    }


def squeezed_pair(S: np.ndarray) -> PairState:
    """Pair of the squeezed vacuum exp(1/2 sum S_jk a*_j a*_k - h.c.)|0>.

    For symmetric S, expm([[0, S], [conj S, 0]]) = [[C, Sh], [., .]] gives
    gamma = Sh Sh^dagger and alpha = C Sh^T; for real S these reduce to
    sinh(S)^2 and sinh(S) cosh(S).
    """
    S = np.asarray(S, dtype=complex)
    if np.max(np.abs(S - S.T)) > 1e-12:
        raise ValueError("squeezing matrix must be symmetric")
    M = S.shape[0]
    G = np.block([[np.zeros((M, M)), S], [S.conj(), np.zeros((M, M))]])
    E = expm(G)
    C, Sh = E[:M, :M], E[:M, M:]
    return PairState(Sh @ Sh.conj().T, C @ Sh.T).symmetrized()


@dataclass(eq=False)
class PairTrajectory:
    times: np.ndarray
    states: list
    defects: list = field(default_factory=list)  # (t, herm_defect, sym_defect) before correction
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def write_csv(self, path):
        cols = ["time", "number", "kinetic", "hs_alpha", "defect_X", "defect_Y", "condensate_leak"]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(cols)
            for row in self.rows:
                out.writerow([f"{row['time']:.10g}"] + [repr(float(row[c])) for c in cols[1:]])


def _stage_ingredients(traj: HartreeTrajectory, t: float, lap) -> BogoliubovIngredients:
    return build_ingredients(traj.u_at(t), traj.wN, lap)


def evolve_pair(init: PairState, hartree_traj: HartreeTrajectory, dt: float,
                t_final: float | None = None, record_stride: int = 1,
                convention: str = "derived") -> PairTrajectory:
    """Classical RK4 with ingredients rebuilt at every stage time.

    Stage times t + dt/2 are looked up in the Hartree trajectory, so a
    trajectory stored at spacing dt/2 keeps the scheme fourth order. After each
    step gamma is re-Hermitized and alpha re-symmetrized; the defects removed
    are logged.
    """
    init.check(tol=1e-10)
    traj = hartree_traj
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_final is None:
        t_final = float(traj.times[-1])
    n = int(round(t_final / dt))
    if abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} is not a multiple of dt={dt}")
    if t_final > traj.times[-1] + 1e-12:
        raise ValueError("pair evolution extends beyond the Hartree trajectory")
    ratio = dt / (traj.dt * traj.stride)
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError("dt must be a multiple of the Hartree sample spacing")
    lap = laplacian_matrix(traj.grid)

    def rhs(s, ing):
        return pair_rhs(s, ing, convention)

    state = init
    out = PairTrajectory(np.array([]), [])
    times, states = [], []

    def record(k, t, s):
        if k % record_stride and k != n:
            return
        u = traj.u_at(t)
        X, Y = quasifree_defect(s)
        row = {"time": t, **pair_observables(s, u, lap), "defect_X": X, "defect_Y": Y}
        times.append(t)
        states.append(s)
        out.rows.append(row)

    record(0, 0.0, state)
    ing_next = _stage_ingredients(traj, 0.0, lap)
    for k in range(1, n + 1):
        t = (k - 1) * dt
        ing0 = ing_next
        ing_half = _stage_ingredients(traj, t + 0.5 * dt, lap)
        ing_next = _stage_ingredients(traj, t + dt, lap)
        k1 = rhs(state, ing0)
        k2 = rhs(state + (0.5 * dt) * k1, ing_half)
        k3 = rhs(state + (0.5 * dt) * k2, ing_half)
        k4 = rhs(state + dt * k3, ing_next)
        state = state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        dg, da = state.structure_defects()
        out.defects.append((k * dt, dg, da))
        if max(dg, da) > STRUCTURE_ABORT:
            raise PairDynamicsError(
                f"structure defect {max(dg, da):.2e} at t={k * dt:.6g}; integrator failure")
        state = state.symmetrized()
        lo = state.min_eigenvalue()
        if lo < -PSD_ABORT:
            raise PairDynamicsError(f"gamma lost positivity ({lo:.2e}) at t={k * dt:.6g}")
        record(k, k * dt, state)
    out.times = np.array(times)
    out.states = states
    out.meta["max_structure_defect"] = max((max(d[1], d[2]) for d in out.defects), default=0.0)
    return out


def duhamel_reference(init: PairState, ing: BogoliubovIngredients, tau: float) -> PairState:
    """Exact flow of the pair over time ``tau`` with frozen ingredients.

    The pair equations are affine in (gamma, alpha); they are vectorized into a
    real-linear system on (gamma, conj(gamma), alpha, conj(alpha)) plus a
    constant source and solved by an augmented matrix exponential.
    """
    M = init.modes
    h, K = ing.h, ing.K2
    I = np.eye(M)
    n = M * M

    # row-major vec: vec(A X B) = kron(A, B^T) vec(X)
    def left(A):
        return np.kron(A, I)

    def right(B):
        return np.kron(I, B.T)

    # unknowns z = [vec g, vec conj(g), vec a, vec conj(a)]
    L = np.zeros((4 * n, 4 * n), dtype=complex)
    src = np.zeros(4 * n, dtype=complex)
    # dg = -i (h g - g h + K conj(a) - a conj(K))
    L[:n, :n] = -1j * (left(h) - right(h))
    L[:n, 3 * n:] = -1j * left(K)
    L[:n, 2 * n:3 * n] = 1j * right(K.conj())
    # da = -i (h a + a h^T + K + K g^T + g K); g^T = conj(g) for Hermitian g
    L[2 * n:3 * n, 2 * n:3 * n] = -1j * (left(h) + right(h.T))
    L[2 * n:3 * n, n:2 * n] = -1j * left(K)
    L[2 * n:3 * n, :n] = -1j * right(K)
    src[2 * n:3 * n] = -1j * K.ravel()
    # conjugate blocks
    L[n:2 * n, n:2 * n] = L[:n, :n].conj()
    L[n:2 * n, 2 * n:3 * n] = L[:n, 3 * n:].conj()
    L[n:2 * n, 3 * n:] = L[:n, 2 * n:3 * n].conj()
    L[3 * n:, 3 * n:] = L[2 * n:3 * n, 2 * n:3 * n].conj()
    L[3 * n:, :n] = L[2 * n:3 * n, n:2 * n].conj()
    L[3 * n:, n:2 * n] = L[2 * n:3 * n, :n].conj()
    src[3 * n:] = src[2 * n:3 * n].conj()

    A = np.zeros((4 * n + 1, 4 * n + 1), dtype=complex)
    A[:4 * n, :4 * n] = L
    A[:4 * n, 4 * n] = src
    z0 = np.concatenate([init.gamma.ravel(), init.gamma.conj().ravel(),
                         init.alpha.ravel(), init.alpha.conj().ravel(), [1.0]])
    z = expm(tau * A) @ z0
    return PairState(z[:n].reshape(M, M), z[2 * n:3 * n].reshape(M, M))


def log_growth_shape(number0: float, t: float) -> float:
    """Shape number0^2 + log(2 + t)^2 of the excitation-number growth bound (constant unknown)."""
    return number0**2 + math.log(2 + t) ** 2
