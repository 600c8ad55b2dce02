"""Truncated bosonic Fock spaces in the occupation-number basis.

States are grouped by total particle number ("sectors"). Within a sector the
occupation tuples are listed in descending lexicographic order, e.g. for two
modes and two particles: (2, 0), (1, 1), (0, 2). A ``max_total`` basis is the
concatenation of sectors 0..n_max.

All ladder operators are built from one primitive per sector: the stacked
creation matrix ``R[n]`` whose j-th block maps sector n to sector n + 1 with
the factor sqrt(n_j + 1).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from .hartree import HartreeTrajectory
from .lattice import GridSpec, InteractionProfile, circulant, laplacian_matrix, scaled_potential
from .pairdyn import PairState, build_ingredients

DEFAULT_MAX_DIM = 200_000
LEAKAGE_ABORT = 1e-3


class BasisTooLarge(ValueError):
    def __init__(self, dim: int, cap: int):
        super().__init__(f"basis dimension {dim} exceeds the memory cap {cap}")
        self.dim = dim


class FockError(RuntimeError):
    pass


def sector_dim(M: int, n: int) -> int:
    return math.comb(M + n - 1, n) if n >= 0 else 0


def _compositions(M: int, n: int):
    """Occupation tuples of n bosons in M modes, descending lexicographic."""
    if M == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(M - 1, n - first):
            yield (first,) + rest


@lru_cache(maxsize=64)
def _sector(M: int, n: int) -> tuple[np.ndarray, dict]:
    states = np.array(list(_compositions(M, n)), dtype=np.int64).reshape(-1, M)
    index = {tuple(s): i for i, s in enumerate(states.tolist())}
    return states, index


@dataclass(frozen=True, eq=False)
class FockBasis:
    modes: int
    kind: str  # "max_total" or "fixed_total"
    cap: int
    states: np.ndarray
    offsets: tuple  # sector n occupies [offsets[i], offsets[i + 1]) for n = sectors[i]
    sectors: tuple

    @property
    def dim(self) -> int:
        return len(self.states)

    def index(self, occ) -> int:
        occ = tuple(int(n) for n in occ)
        n = sum(occ)
        if n not in self.sectors or len(occ) != self.modes:
            raise KeyError(occ)
        i = self.sectors.index(n)
        return self.offsets[i] + _sector(self.modes, n)[1][occ]

    def occupation(self, i: int) -> tuple:
        return tuple(int(v) for v in self.states[i])

    def sector_slice(self, n: int) -> slice:
        i = self.sectors.index(n)
        return slice(self.offsets[i], self.offsets[i + 1])

    def totals(self) -> np.ndarray:
        return self.states.sum(axis=1)


def build_basis(M: int, n_max: int | None = None, n_total: int | None = None,
                max_dim: int = DEFAULT_MAX_DIM) -> FockBasis:
    if M < 1:
        raise ValueError("need at least one mode")
    if (n_max is None) == (n_total is None):
        raise ValueError("give exactly one of n_max or n_total")
    if n_max is not None:
        if n_max < 0:
            raise ValueError("n_max must be nonnegative")
        sectors = tuple(range(n_max + 1))
        kind, cap = "max_total", n_max
    else:
        if n_total < 0:
            raise ValueError("n_total must be nonnegative")
        sectors = (n_total,)
        kind, cap = "fixed_total", n_total
    dims = [sector_dim(M, n) for n in sectors]
    total = sum(dims)
    if total > max_dim:
        raise BasisTooLarge(total, max_dim)
    states = np.concatenate([_sector(M, n)[0] for n in sectors])
    offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(dims)]))
    return FockBasis(M, kind, cap, states, offsets, sectors)


@lru_cache(maxsize=64)
def raising(M: int, n: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Creation operators from sector n to sector n + 1.

    Returns ``(R_v, R_h)``: the blocks a*_j stacked vertically, shape
    (M * d(n+1), d(n)), and side by side, shape (d(n+1), M * d(n)).
    """
    src, _ = _sector(M, n)
    _, dst_index = _sector(M, n + 1)
    d0, d1 = len(src), sector_dim(M, n + 1)
    rows, cols, vals = [], [], []
    for j in range(M):
        tgt = src.copy()
        tgt[:, j] += 1
        idx = np.fromiter((dst_index[t] for t in map(tuple, tgt.tolist())), dtype=np.int64, count=d0)
        rows.append(j * d1 + idx)
        cols.append(np.arange(d0))
        vals.append(np.sqrt(src[:, j] + 1.0))
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    R_v = sp.csr_matrix((vals, (rows, cols)), shape=(M * d1, d0))
    blk = rows // d1
    R_h = sp.csr_matrix((vals, (rows - blk * d1, blk * d0 + cols)), shape=(d1, M * d0))
    return R_v, R_h


# --- sector-level ladder helpers ------------------------------------------

def create_each(M: int, n: int, x: np.ndarray) -> np.ndarray:
    """[a*_j x]_j for x in sector n, shape (M, d(n+1))."""
    return (raising(M, n)[0] @ x).reshape(M, -1)


def annihilate_each(M: int, n: int, x: np.ndarray) -> np.ndarray:
    """[a_j x]_j for x in sector n, shape (M, d(n-1))."""
    if n == 0:
        return np.zeros((M, 0), dtype=complex)
    return (raising(M, n - 1)[1].T @ x).reshape(M, -1)


def create_sum(M: int, n: int, Y: np.ndarray) -> np.ndarray:
    """sum_j a*_j Y[j] for Y[j] in sector n."""
    return raising(M, n)[1] @ np.ascontiguousarray(Y).ravel()


def annihilate_sum(M: int, n: int, Y: np.ndarray) -> np.ndarray:
    """sum_j a_j Y[j] for Y[j] in sector n (result in sector n - 1)."""
    return raising(M, n - 1)[0].T @ np.ascontiguousarray(Y).ravel()


def dgamma_sector(M: int, n: int, A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """dGamma(A) x = sum_jk A_jk a*_j a_k x on sector n."""
    if n == 0:
        return np.zeros_like(x)
    return create_sum(M, n - 1, A @ annihilate_each(M, n, x))


def creator_of(M: int, n: int, v: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix of a*(v) = sum_j v_j a*_j from sector n to n + 1."""
    R_v, R_h = raising(M, n)
    d0 = sector_dim(M, n)
    weights = sp.kron(sp.csr_matrix(np.asarray(v, dtype=complex).reshape(-1, 1)),
                      sp.identity(d0, format="csr"), format="csr")
    return (R_h @ weights).tocsr()


# --- vectors --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FockVector:
    basis: FockBasis
    coeffs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.basis.dim,):
            raise ValueError(f"expected {self.basis.dim} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def sector(self, n: int) -> np.ndarray:
        return self.coeffs[self.basis.sector_slice(n)]

    def inner(self, other: "FockVector") -> complex:
        if other.basis is not self.basis and other.basis.dim != self.basis.dim:
            raise ValueError("vectors live on different bases")
        return complex(np.vdot(self.coeffs, other.coeffs))

    def sector_weights(self) -> np.ndarray:
        return np.array([np.sum(np.abs(self.sector(n)) ** 2) for n in self.basis.sectors])


def vacuum(basis: FockBasis) -> FockVector:
    if 0 not in basis.sectors:
        raise ValueError("basis has no vacuum sector")
    c = np.zeros(basis.dim, dtype=complex)
    c[basis.index((0,) * basis.modes)] = 1.0
    return FockVector(basis, c)


def number_state(basis: FockBasis, occ) -> FockVector:
    c = np.zeros(basis.dim, dtype=complex)
    c[basis.index(occ)] = 1.0
    return FockVector(basis, c)


def product_state(basis: FockBasis, v: np.ndarray) -> FockVector:
    """(a*(v))^N / sqrt(N!) |0> on a fixed-N basis, v in orthonormal modes."""
    if basis.kind != "fixed_total":
        raise ValueError("product states live on a fixed-N basis")
    N, M = basis.cap, basis.modes
    x = np.ones(1, dtype=complex)
    for n in range(N):
        x = creator_of(M, n, v) @ x
    return FockVector(basis, x / math.sqrt(math.factorial(N)))


# --- quadratic Hamiltonian on a truncated space ----------------------------

def _pair_create(M, n, K, x):
    """1/2 sum K_jk a*_j a*_k x for x in sector n (result in sector n + 2)."""
    return 0.5 * create_sum(M, n + 1, K @ create_each(M, n, x))


def _pair_annihilate(M, n, K, x):
    """1/2 sum conj(K_jk) a_j a_k x for x in sector n (result in sector n - 2)."""
    return 0.5 * annihilate_sum(M, n - 1, K.conj() @ annihilate_each(M, n, x))


def _pair_create_norm2(M, n, K, x) -> float:
    """|1/2 sum K_jk a*_j a*_k x|^2 via [B, B^*] = |K|^2/2 + dGamma(K conj K), B = 1/2 sum conj(K) a a."""
    lowered = _pair_annihilate(M, n, K, x) if n >= 2 else np.zeros(0)
    comm = 0.5 * np.sum(np.abs(K) ** 2) * np.vdot(x, x) + np.vdot(x, dgamma_sector(M, n, K @ K.conj(), x))
    return float((np.vdot(lowered, lowered) + comm).real)


def apply_quadratic(h: np.ndarray, K2: np.ndarray, phi: FockVector) -> tuple[FockVector, float]:
    """Apply dGamma(h) + 1/2 sum (K2_jk a*_j a*_k + h.c.) on a max_total basis.

    Returns the image and the squared norm of the components pushed above the
    cap, which are dropped.
    """
    basis = phi.basis
    M = basis.modes
    if basis.kind != "max_total":
        raise ValueError("the quadratic Hamiltonian acts on a max_total basis")
    if h.shape != (M, M) or K2.shape != (M, M):
        raise ValueError(f"operators must be {M}x{M}")
    n_max = basis.cap
    out = np.zeros(basis.dim, dtype=complex)
    pairing = np.any(K2 != 0)
    leak = 0.0
    for n in basis.sectors:
        x = phi.sector(n)
        sl = basis.sector_slice(n)
        out[sl] += dgamma_sector(M, n, h, x)
        if not pairing:
            continue
        if n + 2 <= n_max:
            out[basis.sector_slice(n + 2)] += _pair_create(M, n, K2, x)
        elif np.any(x):
            leak += _pair_create_norm2(M, n, K2, x)
        if n >= 2:
            out[basis.sector_slice(n - 2)] += _pair_annihilate(M, n, K2, x)
    return FockVector(basis, out), leak


def quadratic_matrix(h: np.ndarray, K2: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Dense matrix of the truncated quadratic Hamiltonian (small bases only)."""
    cols = []
    for i in range(basis.dim):
        e = np.zeros(basis.dim, dtype=complex)
        e[i] = 1
        cols.append(apply_quadratic(h, K2, FockVector(basis, e))[0].coeffs)
    return np.array(cols).T


def squeezed_vacuum(basis: FockBasis, S: np.ndarray) -> FockVector:
    """exp(1/2 sum S_jk a*_j a*_k - h.c.)|0>, truncated and renormalized."""
    from scipy.sparse.linalg import LinearOperator, expm_multiply

    zero = np.zeros_like(S, dtype=complex)

    def gen(x):
        # anti-Hermitian generator -i * H with H = 1/2 sum (iS a*a* + h.c.)
        y, _ = apply_quadratic(zero, 1j * np.asarray(S, dtype=complex), FockVector(basis, np.ravel(x)))
        return (-1j * y.coeffs).reshape(np.shape(x))

    # the generator is anti-Hermitian, so its adjoint is -gen
    op = LinearOperator((basis.dim, basis.dim), matvec=gen, rmatvec=lambda x: -gen(x),
                        dtype=complex)
    psi = np.ravel(expm_multiply(op, vacuum(basis).coeffs, traceA=0.0))
    phi = FockVector(basis, psi / np.linalg.norm(psi))
    # the truncated generator is still unitary, so report the weight near the cap instead
    top = float(phi.sector_weights()[-2:].sum())
    return FockVector(basis, phi.coeffs, {"top_sector_weight": top})


# --- two-point functions and Wick checks -----------------------------------

def covariance_of(phi: FockVector) -> PairState:
    """gamma[j, k] = <a*_k a_j> and alpha[j, k] = <a_j a_k>."""
    basis = phi.basis
    M = basis.modes
    gamma = np.zeros((M, M), dtype=complex)
    alpha = np.zeros((M, M), dtype=complex)
    for n in basis.sectors:
        x = phi.sector(n)
        if n == 0 or not np.any(x):
            continue
        A = annihilate_each(M, n, x)
        gamma += A @ A.conj().T
        if n - 2 in basis.sectors:
            C = create_each(M, n - 2, phi.sector(n - 2))
            alpha += C.conj() @ A.T
    return PairState(gamma, alpha).symmetrized()


def four_point(phi: FockVector) -> np.ndarray:
    """G[i, j, k, l] = <a*_i a*_j a_k a_l>."""
    basis = phi.basis
    M = basis.modes
    G = np.zeros((M, M, M, M), dtype=complex)
    for n in basis.sectors:
        if n < 2:
            continue
        x = phi.sector(n)
        if not np.any(x):
            continue
        A = annihilate_each(M, n, x)
        # T[k, l] = a_k a_l x, in sector n - 2
        T = np.stack([annihilate_each(M, n - 1, A[l]) for l in range(M)], axis=1)
        T = T.reshape(M * M, -1)
        # <a_j a_i x, a_k a_l x> indexed [(j, i), (k, l)]
        inner = (T.conj() @ T.T).reshape(M, M, M, M)
        G += inner.transpose(1, 0, 2, 3)
    return G


def wick_four_point(state: PairState) -> np.ndarray:
    """Wick factorization of <a*_i a*_j a_k a_l> for a quasi-free state."""
    g, a = state.gamma, state.alpha
    # <a*_i a*_j> <a_k a_l> + <a*_i a_k><a*_j a_l> + <a*_i a_l><a*_j a_k>
    return (np.einsum("ij,kl->ijkl", a.conj(), a)
            + np.einsum("ki,lj->ijkl", g, g)
            + np.einsum("li,kj->ijkl", g, g))


def number_moments(phi: FockVector) -> tuple[float, float]:
    """(<N>, <N^2>) computed directly from the sector weights."""
    w = phi.sector_weights()
    n = np.array(phi.basis.sectors, dtype=float)
    norm = w.sum()
    return float((w * n).sum() / norm), float((w * n**2).sum() / norm)


def wick_defect(phi: FockVector, max_quadruples: int | None = None, seed: int = 0
                ) -> tuple[float, float]:
    """Largest deviation of four-point functions from their Wick factorization.

    Also returns the moment ratio <(1+N)^2> / <1+N>^2. All quadruples are used
    unless ``max_quadruples`` asks for a random sample.
    """
    state = covariance_of(phi)
    diff = np.abs(four_point(phi) - wick_four_point(state)).ravel()
    if max_quadruples is not None and max_quadruples < diff.size:
        rng = np.random.default_rng(seed)
        diff = diff[rng.choice(diff.size, size=max_quadruples, replace=False)]
    n1, n2 = number_moments(phi)
    ratio = (1 + 2 * n1 + n2) / (1 + n1) ** 2
    return float(diff.max()), float(ratio)


def _perfect_matchings(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, partner in enumerate(rest):
        for m in _perfect_matchings(rest[:i] + rest[i + 1:]):
            yield [(first, partner)] + m


def wick_expectation(ops, state: PairState) -> complex:
    """Expectation of a product of ladder operators in a centred quasi-free state.

    ``ops`` is a sequence of ``(dagger, mode)`` pairs read left to right. The
    result is the sum over all pairings of products of ordered contractions.
    """
    g, a = state.gamma, state.alpha

    def contraction(p, q):
        (dp, i), (dq, j) = p, q
        if dp and dq:
            return np.conj(a[i, j])
        if not dp and not dq:
            return a[i, j]
        if dp and not dq:
            return g[j, i]  # <a*_i a_j>
        return g[i, j] + (1.0 if i == j else 0.0)  # <a_i a*_j>

    ops = list(ops)
    if len(ops) % 2:
        return 0j
    total = 0j
    for m in _perfect_matchings(list(range(len(ops)))):
        term = 1 + 0j
        for p, q in m:
            term *= contraction(ops[p], ops[q])
        total += term
    return total


def number_squared_wick(state: PairState) -> float:
    """<N^2> of a quasi-free state by brute-force pairing over sum_ij <a*_i a_i a*_j a_j>."""
    M = state.modes
    total = 0j
    for i in range(M):
        for j in range(M):
            total += wick_expectation([(True, i), (False, i), (True, j), (False, j)], state)
    return float(total.real)


def number_squared_closed_form(state: PairState) -> float:
    """(Tr g)^2 + Tr g + Tr g^2 + |alpha|_HS^2 for a quasi-free state."""
    g, a = state.gamma, state.alpha
    tr = np.trace(g).real
    return float(tr**2 + tr + np.trace(g @ g).real + np.sum(np.abs(a) ** 2))


# --- time evolution under the Bogoliubov Hamiltonian ------------------------

@dataclass(eq=False)
class FockTrajectory:
    times: np.ndarray
    states: list
    leakage: float = 0.0
    norm_drift: float = 0.0
    meta: dict = field(default_factory=dict)


def evolve_fock(phi0: FockVector, hartree_traj: HartreeTrajectory, dt: float,
                t_final: float | None = None, record_stride: int = 1,
                leakage_abort: float = LEAKAGE_ABORT) -> FockTrajectory:
    """RK4 for i dPhi/dt = H(t) Phi with the quadratic Hamiltonian rebuilt per stage.

    Leakage is accumulated as (sum_steps dt * |dropped part of H Phi|)^2, a
    bound on the norm that the truncation can have removed.
    """
    if abs(phi0.norm() - 1) > 1e-8:
        raise ValueError("initial excitation vector must be normalized")
    traj = hartree_traj
    if t_final is None:
        t_final = float(traj.times[-1])
    n = int(round(t_final / dt))
    if dt <= 0 or abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} is not a positive multiple of dt={dt}")
    lap = laplacian_matrix(traj.grid)
    basis = phi0.basis

    def ing(t):
        i = build_ingredients(traj.u_at(t), traj.wN, lap)
        return i.h, i.K2

    def rhs(x, hk):
        y, leak = apply_quadratic(hk[0], hk[1], FockVector(basis, x))
        return -1j * y.coeffs, leak

    x = phi0.coeffs.copy()
    times, states = [0.0], [phi0]
    leak_amp = 0.0
    nxt = ing(0.0)
    for k in range(1, n + 1):
        t = (k - 1) * dt
        cur, mid, nxt = nxt, ing(t + 0.5 * dt), ing(t + dt)
        k1, leak = rhs(x, cur)
        k2, _ = rhs(x + 0.5 * dt * k1, mid)
        k3, _ = rhs(x + 0.5 * dt * k2, mid)
        k4, _ = rhs(x + dt * k3, nxt)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        leak_amp += dt * math.sqrt(leak)
        if leak_amp**2 > leakage_abort:
            raise FockError(
                f"truncation leakage {leak_amp**2:.2e} exceeds {leakage_abort:g} at t={k * dt:.6g}; "
                "raise n_max or shorten the run")
        if k % record_stride == 0 or k == n:
            times.append(k * dt)
            states.append(FockVector(basis, x.copy()))
    drift = abs(np.linalg.norm(x) - 1)
    return FockTrajectory(np.array(times), states, leak_amp**2, float(drift))


# --- exact N-body dynamics -------------------------------------------------

class NBodyHamiltonian:
    """dGamma(-Lap) + 1/(2(N-1)) sum_jk w_N(x_j - x_k) a*_j a*_k a_k a_j on the N-sector."""

    def __init__(self, basis: FockBasis, kinetic: np.ndarray, W: np.ndarray, N: int):
        if basis.kind != "fixed_total":
            raise ValueError("the N-body Hamiltonian acts on a fixed-N basis")
        self.basis, self.kinetic, self.W, self.N = basis, kinetic, W, N
        occ = basis.states.astype(float)
        coupling = 1.0 / (2 * (N - 1)) if N > 1 else 0.0
        # a*_j a*_k a_k a_j = n_j n_k - delta_jk n_j
        self.diagonal = coupling * (np.einsum("sj,jk,sk->s", occ, W, occ) - occ @ np.diag(W))

    @property
    def dim(self) -> int:
        return self.basis.dim

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return dgamma_sector(self.basis.modes, self.N, self.kinetic, x) + self.diagonal * x

    def to_dense(self) -> np.ndarray:
        return np.array([self.matvec(e) for e in np.eye(self.dim, dtype=complex)]).T

    def expectation(self, x: np.ndarray) -> float:
        return float(np.vdot(x, self.matvec(x)).real / np.vdot(x, x).real)


def build_hn_exact(N: int, profile: InteractionProfile | None, grid: GridSpec,
                   max_dim: int = DEFAULT_MAX_DIM, wN=None) -> NBodyHamiltonian:
    basis = build_basis(grid.points, n_total=N, max_dim=max_dim)
    if wN is None:
        wN = scaled_potential(profile, grid)
    return NBodyHamiltonian(basis, laplacian_matrix(grid), circulant(wN), N)


def lanczos_expm_step(matvec, v: np.ndarray, tau: float, krylov_dim: int = 20,
                      tol: float = 1e-12) -> tuple[np.ndarray, float, bool]:
    """exp(-i tau H) v for Hermitian H by a Lanczos projection.

    Returns the propagated vector, an a-posteriori error estimate and whether
    the Krylov space became invariant (happy breakdown, result exact).
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy(), 0.0, True
    n = len(v)
    m = min(krylov_dim, n)
    V = np.zeros((m + 1, n), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v / beta0
    k_used = m
    breakdown = False
    for k in range(m):
        w = matvec(V[k])
        alpha[k] = np.vdot(V[k], w).real
        w = w - alpha[k] * V[k] - (beta[k - 1] * V[k - 1] if k > 0 else 0)
        # full reorthogonalization keeps the basis orthonormal at this size
        w -= V[:k + 1].T @ (V[:k + 1].conj() @ w)
        beta[k] = np.linalg.norm(w)
        if beta[k] < 1e-13 * max(1.0, abs(alpha[k])):
            k_used, breakdown = k + 1, True
            break
        V[k + 1] = w / beta[k]
    T = np.diag(alpha[:k_used]) + np.diag(beta[:k_used - 1], 1) + np.diag(beta[:k_used - 1], -1)
    if breakdown:
        c = expm(-1j * tau * T)[:, 0]
        return beta0 * (V[:k_used].T @ c), 0.0, True
    # augmented matrix yields the residual coefficient for the error estimate
    Ta = np.zeros((k_used + 1, k_used + 1), dtype=complex)
    Ta[:k_used, :k_used] = -1j * tau * T
    Ta[k_used, k_used - 1] = -1j * tau * beta[k_used - 1]
    c = expm(Ta)[:, 0]
    err = beta0 * abs(c[k_used])
    return beta0 * (V[:k_used].T @ c[:k_used]), float(err), False


@dataclass(eq=False)
class ExactTrajectory:
    times: np.ndarray
    states: list
    norm_drift: float
    energy_drift: float
    meta: dict = field(default_factory=dict)


def evolve_exact(psi0: FockVector, H: NBodyHamiltonian, t_final: float, dt: float = 1e-2,
                 sample_times=None, krylov_dim: int = 20, tol: float = 1e-12) -> ExactTrajectory:
    """Krylov propagation of the autonomous N-body dynamics.

    A step whose error estimate exceeds ``tol`` is retried with half the
    step; the number of such retries is reported in ``meta``.
    """
    if abs(psi0.norm() - 1) > 1e-8:
        raise ValueError("initial N-body state must be normalized")
    if psi0.basis.dim != H.dim:
        raise ValueError("state and Hamiltonian live on different bases")
    if sample_times is None:
        n = max(1, int(round(t_final / dt)))
        sample_times = np.linspace(0.0, t_final, n + 1)
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(sample_times) < 0) or sample_times[0] < 0:
        raise ValueError("sample times must be nonnegative and increasing")
    x = psi0.coeffs.copy()
    E0 = H.expectation(x)
    t = 0.0
    times, states = [], []
    retries = 0
    for ts in sample_times:
        while ts - t > 1e-14:
            tau = min(dt, ts - t)
            while True:
                y, err, _ = lanczos_expm_step(H.matvec, x, tau, krylov_dim)
                if err <= tol or tau < 1e-8:
                    break
                tau *= 0.5
                retries += 1
            x, t = y, t + tau
        times.append(float(ts))
        states.append(FockVector(psi0.basis, x.copy()))
    norm_drift = abs(np.linalg.norm(x) - 1)
    E1 = H.expectation(x)
    energy_drift = abs(E1 - E0) / max(abs(E0), 1e-300)
    return ExactTrajectory(np.array(times), states, float(norm_drift), float(energy_drift),
                           {"krylov_retries": retries, "energy0": E0})


def one_body_reduced(psi: FockVector) -> np.ndarray:
    """gamma1[j, k] = <a*_k a_j> on the N-sector (trace N)."""
    basis = psi.basis
    if basis.kind != "fixed_total":
        raise ValueError("expected an N-sector state")
    A = annihilate_each(basis.modes, basis.cap, psi.coeffs)
    g = A @ A.conj().T
    return 0.5 * (g + g.conj().T)


# --- binary snapshots ------------------------------------------------------

_HEADER = struct.Struct("<4sqqqq")
_MAGIC = b"FKV1"
_KINDS = {"max_total": 0, "fixed_total": 1}


def dump_vector(phi: FockVector, path) -> None:
    """Header (magic, M, cap kind, cap value, count) then little-endian complex64 pairs."""
    b = phi.basis
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, b.modes, _KINDS[b.kind], b.cap, b.dim))
        fh.write(phi.coeffs.astype("<c8").tobytes())


def load_vector(path, max_dim: int = DEFAULT_MAX_DIM) -> FockVector:
    with open(path, "rb") as fh:
        magic, M, kind, cap, count = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a Fock vector snapshot")
        data = np.frombuffer(fh.read(), dtype="<c8")
    if data.size != count:
        raise ValueError(f"{path}: expected {count} coefficients, found {data.size}")
    if kind == 0:
        basis = build_basis(M, n_max=cap, max_dim=max_dim)
    else:
        basis = build_basis(M, n_total=cap, max_dim=max_dim)
    if basis.dim != count:
        raise ValueError(f"{path}: count {count} does not match basis dimension {basis.dim}")
    return FockVector(basis, data.astype(complex))

