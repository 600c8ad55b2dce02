import csv
import math

import numpy as np
import pytest

from boglab import fock
from boglab.hartree import evolve_hartree, hartree_generator
from boglab.lattice import (
    GridFunction,
    InteractionProfile,
    build_grid,
    gaussian_packet,
    laplacian_matrix,
    plane_wave,
    scaled_potential,
)
from boglab.pairdyn import (
    PairDynamicsError,
    PairState,
    build_ingredients,
    duhamel_reference,
    evolve_pair,
    pair_observables,
    pair_rhs,
    quasifree_defect,
    squeezed_pair,
)

L = 2 * math.pi


def setup(M=8, strength=1.0, sigma=1.5, momentum=1):
    g = build_grid(L, M)
    u = gaussian_packet(g, math.pi, 0.9, momentum)
    w = scaled_potential(InteractionProfile.make("gaussian", sigma=sigma, strength=strength), g)
    return g, u, w


def random_pair(M, rng, scale=0.1):
    A = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    B = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    return PairState(scale * A @ A.conj().T, scale * (B + B.T))


def rk4_frozen(state, ing, tau, steps):
    dt = tau / steps
    for _ in range(steps):
        k1 = pair_rhs(state, ing)
        k2 = pair_rhs(state + (0.5 * dt) * k1, ing)
        k3 = pair_rhs(state + (0.5 * dt) * k2, ing)
        k4 = pair_rhs(state + dt * k3, ing)
        state = state + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return state


# --- ingredients -----------------------------------------------------------

def test_ingredients_without_interaction():
    g, u, _ = setup()
    ing = build_ingredients(u, GridFunction(g, np.zeros(g.points)))
    assert np.allclose(ing.h, laplacian_matrix(g), atol=1e-13)
    assert np.all(ing.K2 == 0)
    assert ing.mu == 0


def test_flat_interaction_has_no_pairing_outside_condensate():
    g = build_grid(L, 8)
    u = GridFunction(g, np.full(8, 1 / math.sqrt(L)))
    w = scaled_potential(InteractionProfile.make("flat", value=2.0), g)
    ing = build_ingredients(u, w)
    # before projection the pairing kernel is the constant rank-one matrix
    K2t = g.dx * np.outer(u.values, u.values) * 2.0
    assert np.linalg.matrix_rank(K2t) == 1
    assert np.allclose(K2t, K2t[0, 0])
    assert np.max(np.abs(ing.K2)) < 1e-13


def test_ingredient_invariants():
    g, u, w = setup()
    ing = build_ingredients(u, w)
    assert np.max(np.abs(ing.h - ing.h.conj().T)) <= 1e-12
    assert np.max(np.abs(ing.K2 - ing.K2.T)) <= 1e-12
    assert np.max(np.abs(ing.Q @ ing.K2 @ ing.Q.T - ing.K2)) <= 1e-10
    assert np.max(np.abs(ing.Q @ ing.Q - ing.Q)) <= 1e-10
    assert np.linalg.norm(ing.K2) > 1e-3


def test_ingredients_reject_bad_input():
    g, u, w = setup()
    with pytest.raises(ValueError):
        build_ingredients(GridFunction(g, 2 * u.values), w)
    other = build_grid(L, 6)
    with pytest.raises(ValueError):
        build_ingredients(gaussian_packet(other, 1.0, 1.0), w)


# --- right-hand side -------------------------------------------------------

def test_rhs_from_vacuum():
    g, u, w = setup()
    ing = build_ingredients(u, w)
    d = pair_rhs(PairState.vacuum(g.points), ing)
    assert np.all(d.gamma == 0)
    assert np.allclose(d.alpha, -1j * ing.K2, atol=1e-15)


def test_rhs_commuting_case():
    g, u, _ = setup()
    ing = build_ingredients(u, GridFunction(g, np.zeros(g.points)))
    v = plane_wave(g, 2).modes()
    rng = np.random.default_rng(0)
    B = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    a = B + B.T
    d = pair_rhs(PairState(np.outer(v, v.conj()), a), ing)
    assert np.max(np.abs(d.gamma)) < 1e-12
    assert np.allclose(d.alpha, -1j * (ing.h @ a + a @ ing.h.T), atol=1e-12)


def test_rhs_preserves_structure():
    g, u, w = setup()
    ing = build_ingredients(u, w)
    rng = np.random.default_rng(5)
    for _ in range(5):
        d = pair_rhs(random_pair(g.points, rng), ing)
        assert np.max(np.abs(d.gamma - d.gamma.conj().T)) <= 1e-12
        assert np.max(np.abs(d.alpha - d.alpha.T)) <= 1e-12


def test_rhs_rejects_bad_input():
    g, u, w = setup()
    ing = build_ingredients(u, w)
    with pytest.raises(ValueError):
        pair_rhs(PairState.vacuum(4), ing)
    with pytest.raises(ValueError):
        pair_rhs(PairState.vacuum(8), ing, convention="other")


# --- frozen-ingredient references -----------------------------------------

def test_short_step_against_duhamel_reference():
    g, u, w = setup()
    ing = build_ingredients(u, w)
    tau = 1e-3
    ref = duhamel_reference(PairState.vacuum(g.points), ing, tau)
    num = rk4_frozen(PairState.vacuum(g.points), ing, tau, 1)
    assert np.max(np.abs(num.gamma - ref.gamma)) <= 1e-8
    assert np.max(np.abs(num.alpha - ref.alpha)) <= 1e-8
    # first-order Duhamel term
    assert np.max(np.abs(ref.alpha + 1j * tau * ing.K2)) <= 10 * tau**2 * np.linalg.norm(ing.K2) * (
        1 + np.linalg.norm(ing.h, 2))


def test_duhamel_reference_matches_fine_rk4():
    g, u, w = setup(M=6)
    ing = build_ingredients(u, w)
    rng = np.random.default_rng(2)
    init = random_pair(6, rng, scale=0.01)
    ref = duhamel_reference(init, ing, 0.2)
    num = rk4_frozen(init, ing, 0.2, 400)
    assert np.max(np.abs(num.gamma - ref.gamma)) < 1e-9
    assert np.max(np.abs(num.alpha - ref.alpha)) < 1e-9


def test_duhamel_reference_matches_fock_oracle():
    # frozen h, K2: compare pair flow with the covariance of exp(-i tau H) on Fock space
    g, u, w = setup(M=4, strength=0.5)
    ing = build_ingredients(u, w)
    basis = fock.build_basis(4, n_max=10)
    H = fock.quadratic_matrix(ing.h, ing.K2, basis)
    from scipy.linalg import expm

    tau = 0.3
    phi = expm(-1j * tau * H) @ fock.vacuum(basis).coeffs
    cov = fock.covariance_of(fock.FockVector(basis, phi))
    ref = duhamel_reference(PairState.vacuum(4), ing, tau)
    assert np.max(np.abs(cov.gamma - ref.gamma)) < 1e-8
    assert np.max(np.abs(cov.alpha - ref.alpha)) < 1e-8


# --- defects and observables ----------------------------------------------

def test_quasifree_defect_examples():
    assert quasifree_defect(PairState.vacuum(5)) == (0.0, 0.0)
    v = np.zeros(5)
    v[2] = 1
    X, Y = quasifree_defect(PairState(np.outer(v, v), np.zeros((5, 5))))
    assert X == pytest.approx(2.0) and Y == 0.0


def test_squeezed_pair_is_quasifree_and_matches_fock():
    g, u, _ = setup(M=4)
    S = np.zeros((4, 4), dtype=complex)
    e1, e2 = plane_wave(g, 1).modes(), plane_wave(g, -1).modes()
    S += 0.15 * (np.outer(e1, e2) + np.outer(e2, e1))
    Q = np.eye(4) - np.outer(u.modes(), u.modes().conj())
    S = Q @ S @ Q.T
    S = 0.5 * (S + S.T)
    pair = squeezed_pair(S)
    X, Y = quasifree_defect(pair)
    assert X < 1e-12 and Y < 1e-12

    phi = fock.squeezed_vacuum(fock.build_basis(4, n_max=10), S)
    cov = fock.covariance_of(phi)
    assert max(quasifree_defect(cov)) <= 1e-6
    assert np.max(np.abs(cov.gamma - pair.gamma)) < 1e-7
    assert np.max(np.abs(cov.alpha - pair.alpha)) < 1e-7


def test_squeezed_pair_real_case_closed_form():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(5, 5))
    S = 0.1 * (A + A.T)
    pair = squeezed_pair(S)
    evals, V = np.linalg.eigh(S)
    sh = V @ np.diag(np.sinh(evals)) @ V.T
    ch = V @ np.diag(np.cosh(evals)) @ V.T
    assert np.allclose(pair.gamma, sh @ sh, atol=1e-13)
    assert np.allclose(pair.alpha, sh @ ch, atol=1e-13)
    with pytest.raises(ValueError):
        squeezed_pair(A)


def test_observables():
    g, u, _ = setup()
    obs = pair_observables(PairState.vacuum(8), u)
    assert obs == {"number": 0.0, "kinetic": 0.0, "hs_alpha": 0.0, "condensate_leak": 0.0}

    g = build_grid(L, 8)
    u0 = plane_wave(g, 0)
    v = plane_wave(g, 3).modes()
    obs = pair_observables(PairState(np.outer(v, v.conj()), np.zeros((8, 8))), u0)
    assert obs["number"] == pytest.approx(1.0)
    assert obs["kinetic"] == pytest.approx(10.0)
    assert obs["condensate_leak"] < 1e-12

    S = np.zeros((8, 8))
    S[2, 5] = S[5, 2] = 0.3
    S[1, 1] = 0.2
    pair = squeezed_pair(S)
    g2 = pair.gamma
    assert abs(np.linalg.norm(pair.alpha) ** 2 - np.trace(g2 + g2 @ g2).real) <= 1e-8


def test_state_validation():
    with pytest.raises(ValueError):
        PairState(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        PairState(np.array([[0, 1], [0, 0]]), np.zeros((2, 2))).check()
    with pytest.raises(ValueError):
        PairState(-np.eye(2), np.zeros((2, 2))).check()


# --- time evolution --------------------------------------------------------

def run(M=16, strength=1.0, t=1.0, dt=1e-3, init=None, wzero=False, stride=10, **kw):
    g = build_grid(L, M)
    u0 = gaussian_packet(g, math.pi, 0.8, 1)
    if wzero:
        w = GridFunction(g, np.zeros(M))
    else:
        w = scaled_potential(InteractionProfile.make("gaussian", sigma=0.7, strength=strength), g)
    traj = evolve_hartree(u0, w, t, dt / 2)
    init = PairState.vacuum(M) if init is None else init
    return g, traj, evolve_pair(init, traj, dt, record_stride=stride, **kw)


def test_stationary_without_interaction():
    g = build_grid(L, 16)
    v = plane_wave(g, 2).modes()
    gamma0 = 0.3 * np.outer(v, v.conj())
    _, _, pt = run(init=PairState(gamma0, np.zeros((16, 16))), wzero=True, t=0.5)
    for s in pt.states:
        assert np.max(np.abs(s.gamma - gamma0)) <= 1e-10


def test_number_conserved_without_pairing():
    g = build_grid(L, 16)
    e1, e2 = plane_wave(g, 1).modes(), plane_wave(g, -1).modes()
    init = squeezed_pair(0.2 * (np.outer(e1, e2) + np.outer(e2, e1)))
    _, _, pt = run(init=init, wzero=True, t=0.5)
    n = [r["number"] for r in pt.rows]
    assert np.max(np.abs(np.array(n) - n[0])) <= 1e-10


def test_structure_and_excited_space_preserved():
    g, traj, pt = run()
    # re-Hermitization removes only rounding noise: RK4 maps Hermitian data to Hermitian data
    assert pt.meta["max_structure_defect"] <= 1e-12
    assert max(r["defect_X"] + r["defect_Y"] for r in pt.rows) <= 1e-6
    assert max(r["condensate_leak"] for r in pt.rows) <= 1e-6
    assert pt.rows[-1]["number"] > 1e-3
    assert all(s.min_eigenvalue() >= -1e-8 for s in pt.states)


def test_generator_annihilates_condensate_direction():
    # h(t) u(t) = i du/dt, with the time derivative from central differences
    g, traj, _ = run(t=0.02, stride=1)
    dt = traj.dt
    i = len(traj) // 2
    u = traj.state(i)
    dudt = (traj.states[i + 1] - traj.states[i - 1]) / (2 * dt)
    ing = build_ingredients(u, traj.wN)
    lhs = ing.h @ u.modes()
    rhs = 1j * np.sqrt(g.dx) * dudt
    assert np.max(np.abs(lhs - rhs)) <= 1e-4
    assert np.allclose(lhs, hartree_generator(u, traj.wN).matrix @ u.modes(), atol=1e-12)


def test_quasifree_defect_is_fourth_order():
    def defect(dt):
        _, _, pt = run(M=12, t=0.5, dt=dt, stride=1)
        return max(r["defect_X"] + r["defect_Y"] for r in pt.rows)

    ratio = defect(2e-3) / defect(1e-3)
    assert 16 * 0.7 <= ratio <= 16 * 1.3


def test_literal_convention_breaks_positivity():
    with pytest.raises(PairDynamicsError):
        run(M=8, t=0.05, convention="literal")


def test_trajectory_csv(tmp_path):
    _, _, pt = run(M=8, t=0.1, stride=25)
    assert np.allclose(pt.times, [0, 0.025, 0.05, 0.075, 0.1])
    pt.write_csv(tmp_path / "pair.csv")
    rows = list(csv.DictReader(open(tmp_path / "pair.csv")))
    assert list(rows[0]) == ["time", "number", "kinetic", "hs_alpha", "defect_X", "defect_Y",
                             "condensate_leak"]
    assert len(rows) == 5


def test_evolve_pair_validates_step():
    g, traj, _ = run(M=8, t=0.01)
    with pytest.raises(ValueError):
        evolve_pair(PairState.vacuum(8), traj, 0.0)
    with pytest.raises(ValueError):
        evolve_pair(PairState.vacuum(8), traj, 1e-3, t_final=1.0)
    with pytest.raises(ValueError):
        evolve_pair(PairState.vacuum(8), traj, 7e-4, t_final=0.0035)
