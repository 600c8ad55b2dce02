import math

import numpy as np
import pytest

from boglab.embedding import (
    FIELDS,
    ApproximationReport,
    approximation_error,
    condensate_leak,
    condensation_metrics,
    decompose,
    decomposition_bound,
    embed,
    excitation_number,
)
from boglab.fock import (
    FockVector,
    build_basis,
    creator_of,
    one_body_reduced,
    product_state,
    squeezed_vacuum,
    vacuum,
)
from boglab.lattice import build_grid, gaussian_packet, plane_wave

L = 2 * math.pi


def condensate(M=5):
    g = build_grid(L, M)
    return g, gaussian_packet(g, 2.0, 0.8, 1)


def orthogonal_mode(u, rng):
    w = u.modes()
    v = rng.normal(size=len(w)) + 1j * rng.normal(size=len(w))
    v = v - w * np.vdot(w, v)
    return v / np.linalg.norm(v)


def random_state(basis, rng):
    c = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return FockVector(basis, c / np.linalg.norm(c))


def squeezed_excitations(u, n_max, scale=0.1, seed=0):
    rng = np.random.default_rng(seed)
    M = u.grid.points
    A = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    Q = np.eye(M) - np.outer(u.modes(), u.modes().conj())
    S = Q @ (scale * (A + A.T)) @ Q.T
    return squeezed_vacuum(build_basis(M, n_max=n_max), 0.5 * (S + S.T))


def test_embed_vacuum_is_product_state():
    g, u = condensate()
    psi = embed(u, vacuum(build_basis(5, n_max=2)), 4)
    ref = product_state(build_basis(5, n_total=4), u.modes())
    assert np.allclose(psi.coeffs, ref.coeffs, atol=1e-13)
    assert psi.norm() == pytest.approx(1.0, abs=1e-13)


def test_embed_single_excitation_norm():
    g, u = condensate()
    rng = np.random.default_rng(1)
    b = build_basis(5, n_max=2)
    x = np.zeros(b.dim, dtype=complex)
    x[b.sector_slice(1)] = 0.6 * orthogonal_mode(u, rng)
    psi = embed(u, FockVector(b, x), 3)
    assert psi.norm() == pytest.approx(0.6, abs=1e-12)
    assert psi.meta["projection_loss"] < 1e-24


def test_embed_quasifree_norm_identity():
    g, u = condensate(4)
    phi = squeezed_excitations(u, 4)
    psi = embed(u, phi, 6)
    assert abs(psi.norm() ** 2 - np.sum(phi.sector_weights())) <= 1e-8
    assert psi.meta["condensate_leak"] < 1e-10


def test_embed_validation_and_leak_warning():
    g, u = condensate()
    with pytest.raises(ValueError):
        embed(u, vacuum(build_basis(5, n_max=4)), 3)
    b = build_basis(5, n_max=1)
    x = np.zeros(b.dim, dtype=complex)
    x[b.sector_slice(1)] = u.modes()  # fully inside the condensate
    psi = embed(u, FockVector(b, x), 3)
    assert "warning" in psi.meta
    assert psi.meta["projection_loss"] == pytest.approx(1.0)
    assert psi.norm() < 1e-12
    assert condensate_leak(u, FockVector(b, x)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        embed(u, FockVector(build_basis(5, n_total=2), np.ones(15)), 3)


def test_decompose_examples():
    g, u = condensate()
    N = 4
    phi = decompose(product_state(build_basis(5, n_total=N), u.modes()), u)
    assert np.allclose(phi.coeffs, vacuum(phi.basis).coeffs, atol=1e-12)

    rng = np.random.default_rng(2)
    v = orthogonal_mode(u, rng)
    # a*(v) a*(u)^(N-1) |0> / sqrt((N-1)!)
    x = np.ones(1, dtype=complex)
    for n in range(N - 1):
        x = creator_of(5, n, u.modes()) @ x
    x = creator_of(5, N - 1, v) @ x / math.sqrt(math.factorial(N - 1))
    phi = decompose(FockVector(build_basis(5, n_total=N), x), u)
    expected = np.zeros(phi.basis.dim, dtype=complex)
    expected[phi.basis.sector_slice(1)] = v
    assert np.allclose(phi.coeffs, expected, atol=1e-12)


def test_decompose_is_unitary_on_random_states():
    g, u = condensate(6)
    b = build_basis(6, n_total=4)
    rng = np.random.default_rng(3)
    for _ in range(10):
        psi = random_state(b, rng)
        phi = decompose(psi, u)
        assert abs(phi.norm() - 1) <= 1e-10
        assert phi.meta["tail_mass"] <= 1e-10
        back = embed(u, phi, 4)
        assert np.linalg.norm(back.coeffs - psi.coeffs) <= 1e-8
        assert back.meta["projection_loss"] <= 1e-12


def test_decompose_requires_fixed_sector():
    g, u = condensate()
    with pytest.raises(ValueError):
        decompose(vacuum(build_basis(5, n_max=2)), u)


def test_truncated_decomposition_reports_tail():
    g, u = condensate(4)
    psi = random_state(build_basis(4, n_total=3), np.random.default_rng(4))
    full = decompose(psi, u)
    short = decompose(psi, u, n_max=1)
    kept = full.sector_weights()[:2].sum()
    assert short.meta["tail_mass"] == pytest.approx(1 - kept, abs=1e-12)


def test_sector_orthogonality():
    g, u = condensate()
    rng = np.random.default_rng(5)
    b = build_basis(5, n_max=3)
    parts = []
    for n in (1, 2, 3):
        x = np.zeros(b.dim, dtype=complex)
        x[b.sector_slice(n)] = rng.normal(size=b.sector_slice(n).stop - b.sector_slice(n).start)
        phi = FockVector(b, x)
        # embed projects the raw component onto the excited space
        parts.append(embed(u, phi, 4))
    for i in range(3):
        for j in range(i + 1, 3):
            assert abs(np.vdot(parts[i].coeffs, parts[j].coeffs)) <= 1e-10


def test_approximation_error_examples():
    g, u = condensate()
    phi = squeezed_excitations(u, 3, seed=6)
    psi = embed(u, phi, 4)
    assert approximation_error(psi, u, phi, 4) == pytest.approx(0.0, abs=1e-14)
    b = build_basis(5, n_total=4)
    rng = np.random.default_rng(7)
    r = random_state(b, rng).coeffs
    r -= psi.coeffs * np.vdot(psi.coeffs, r) / np.vdot(psi.coeffs, psi.coeffs)
    other = FockVector(b, r / np.linalg.norm(r) * psi.norm())
    assert approximation_error(other, u, phi, 4) == pytest.approx(math.sqrt(2) * psi.norm(), rel=1e-10)


def test_norm_error_polarization_identity():
    g, u = condensate()
    rng = np.random.default_rng(8)
    b = build_basis(5, n_total=3)
    a = random_state(b, rng).coeffs
    phi = squeezed_excitations(u, 3, seed=8)
    c = embed(u, phi, 3).coeffs
    lhs = approximation_error(FockVector(b, a), u, phi, 3) ** 2
    rhs = np.linalg.norm(a) ** 2 + np.linalg.norm(c) ** 2 - 2 * np.vdot(a, c).real
    assert abs(lhs - rhs) <= 1e-12


def test_excitation_number():
    g, u = condensate()
    b = build_basis(5, n_max=3)
    x = np.zeros(b.dim, dtype=complex)
    x[0] = math.sqrt(0.5)
    x[b.sector_slice(2).start] = math.sqrt(0.5)
    assert excitation_number(FockVector(b, x)) == pytest.approx(1.0)


def test_metrics_for_pure_condensate():
    g, u = condensate()
    N = 4
    psi = embed(u, vacuum(build_basis(5, n_max=2)), N)
    m = condensation_metrics(one_body_reduced(psi), u, N)
    assert all(abs(v) <= 1e-10 for v in m.values())


def test_metrics_single_excited_plane_wave():
    g = build_grid(L, 8)
    u, v = plane_wave(g, 0), plane_wave(g, 2)
    N = 5
    g1 = (N - 1) * np.outer(u.modes(), u.modes().conj()) + np.outer(v.modes(), v.modes().conj())
    m = condensation_metrics(g1, u, N)
    assert m["depletion"] == pytest.approx(1 / N)
    assert m["kinetic_excitation"] == pytest.approx(1 + 4)
    assert m["trace_distance"] == pytest.approx(2 / N)


def test_metrics_triangle_bound_on_random_density_matrices():
    g, u = condensate(6)
    rng = np.random.default_rng(9)
    for _ in range(5):
        psi = random_state(build_basis(6, n_total=3), rng)
        g1 = one_body_reduced(psi)
        m = condensation_metrics(g1, u, 3)
        assert m["weighted_trace_distance"] <= decomposition_bound(g1, u, 3) + 1e-12
        assert 0 <= m["depletion"] <= 1


def test_metrics_trace_check():
    g, u = condensate()
    with pytest.raises(ValueError):
        condensation_metrics(np.eye(5), u, 3)


def test_report_fields():
    assert FIELDS == ("time", "norm_error", "depletion", "kinetic_excitation", "trace_distance",
                      "weighted_trace_distance", "excitation_number")
    r = ApproximationReport(0.1, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0)
    assert list(r.row()) == list(FIELDS)
