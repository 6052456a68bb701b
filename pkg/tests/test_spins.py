import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from mbsed.couplings import CouplingTables
from mbsed.spins import (
    HamiltonianError,
    SpinOperatorSet,
    build_collective_hamiltonian,
    build_full_hamiltonian,
    collective_parameters,
    dicke_embedding,
    dicke_m,
    heisenberg_sum,
    mz_blocks,
    project,
    sector_multiplicity,
    spin_sector_basis,
)

TWO_PI = 2 * math.pi


def random_tables(n, seed=0, scale=1.0, rabi_spread=0.3):
    rng = np.random.default_rng(seed)

    def sym():
        a = rng.normal(size=(n, n)) * scale
        a = a + a.T
        np.fill_diagonal(a, 0.0)
        return a

    G_S, G_P = sym(), sym()
    rabi = 2.0 * (1 + rabi_spread * rng.uniform(-1, 1, n))
    return CouplingTables.from_geometry(G_S, G_P, rabi, (0.7, 0.2, 1.1, 0.9))


def operator_hamiltonian(t, delta):
    """Reference build from sparse Kronecker operators."""
    ops = SpinOperatorSet.build(t.n_atoms)
    n = t.n_atoms
    H = -TWO_PI * delta * ops.total("z") - TWO_PI * sum(t.rabi[i] * ops.sx[i] for i in range(n))
    H = H - sum(t.longitudinal_fields[i] * ops.sz[i] for i in range(n))
    for i in range(n):
        for j in range(n):
            if i != j:
                H = H - t.J[i, j] * (ops.sx[i] @ ops.sx[j] + ops.sy[i] @ ops.sy[j]) \
                    - (t.X[i, j] + t.J[i, j]) * ops.sz[i] @ ops.sz[j]
    return np.asarray(H.todense())


def test_single_atom_matrix():
    t = CouplingTables.uniform(1, rabi=3.0)
    H = build_full_hamiltonian(t, 0.4).matrix
    expected = 0.5 * np.array([[TWO_PI * 0.4, -TWO_PI * 3.0], [-TWO_PI * 3.0, -TWO_PI * 0.4]])
    # (down, up) order: S^z = diag(-1/2, +1/2)
    np.testing.assert_allclose(H, expected, atol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_matches_operator_build(n):
    t = random_tables(n, seed=n)
    np.testing.assert_allclose(build_full_hamiltonian(t, 0.37).matrix, operator_hamiltonian(t, 0.37).real,
                               atol=1e-12)


def test_free_spins_spectrum():
    n, delta, om = 3, 0.8, 1.5
    H = build_full_hamiltonian(CouplingTables.uniform(n, rabi=om), delta).matrix
    w = math.pi * math.hypot(delta, om)
    expected = sorted(w * (n - 2 * k) for k in range(n + 1) for _ in range(math.comb(n, k)))
    np.testing.assert_allclose(np.linalg.eigvalsh(H), expected, atol=1e-12)


def test_two_spin_heisenberg_spectrum():
    J = 0.37
    H = build_full_hamiltonian(CouplingTables.uniform(2, rabi=0.0, J=J), include_drive=False).matrix
    # the ordered-pair sum counts the pair twice: H = -2 J S1.S2
    single_pair = np.array([-J / 4] * 3 + [3 * J / 4])
    np.testing.assert_allclose(np.linalg.eigvalsh(H), np.sort(2 * single_pair), atol=1e-14)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_hermitian(n):
    H = build_full_hamiltonian(random_tables(n, n), 0.1).matrix
    assert np.array_equal(H, H.T)


@pytest.mark.parametrize("n", [3, 4, 6])
def test_heisenberg_identity(n):
    ops = SpinOperatorSet.build(n)
    S2 = ops.total_spin_squared().toarray()
    np.testing.assert_allclose(heisenberg_sum(n), S2 - 0.75 * n * np.eye(2**n), atol=1e-12)


def test_block_sizes_and_leak():
    t = random_tables(3, 1)
    blocks = mz_blocks(build_full_hamiltonian(t, include_drive=False), 3)
    assert [b.matrix.shape[0] for b in blocks] == [1, 3, 3, 1]
    with pytest.raises(HamiltonianError):
        mz_blocks(build_full_hamiltonian(t, include_drive=True), 3)


@pytest.mark.parametrize("n", [4, 6])
def test_block_spectrum_union(n):
    H = build_full_hamiltonian(random_tables(n, 7), 0.2, include_drive=False)
    union = np.sort(np.concatenate([np.linalg.eigvalsh(b.matrix) for b in mz_blocks(H, n)]))
    np.testing.assert_allclose(union, np.linalg.eigvalsh(H.matrix), atol=1e-10)


def test_sector_dimensions():
    assert spin_sector_basis(12, 1).dim == 13 + 11 * 11
    assert spin_sector_basis(2, 0).dim == 3
    for n in (3, 4, 5, 6):
        assert spin_sector_basis(n, n // 2).dim == 2**n
    assert sector_multiplicity(12, 5) == 11


@given(st.integers(2, 8), st.data())
@settings(max_examples=20, deadline=None)
def test_sector_basis_orthonormal_eigenbasis(n, data):
    m = data.draw(st.integers(0, n // 2))
    basis = spin_sector_basis(n, m)
    B = basis.matrix()
    np.testing.assert_allclose(B.T @ B, np.eye(basis.dim), atol=1e-10)
    S2 = heisenberg_sum(n) + 0.75 * n * np.eye(2**n)
    s = basis.spins
    np.testing.assert_allclose(S2 @ B, B * (s * (s + 1)), atol=1e-9)
    assert np.all(s >= n / 2 - m - 1e-9)


def test_full_projection_is_similarity():
    n = 4
    H = build_full_hamiltonian(random_tables(n, 3), 0.1)
    Hp = project(H, spin_sector_basis(n, n // 2))
    np.testing.assert_allclose(np.linalg.eigvalsh(Hp.matrix), np.linalg.eigvalsh(H.matrix), atol=1e-10)


def test_homogeneous_dynamics_stays_in_top_sector():
    n = 5
    t = CouplingTables.uniform(n, rabi=1.3, J=0.4, C=0.2, X=0.9)
    H = build_full_hamiltonian(t, 0.3).matrix
    top = spin_sector_basis(n, 0)
    psi0 = np.zeros(2**n)
    psi0[0] = 1.0
    psi = sla.expm(-1j * H * 0.7) @ psi0
    assert 1.0 - top.weight(psi) < 1e-12


def test_collective_averages():
    t = random_tables(4, 2)
    p = collective_parameters(t)
    assert p.rabi == pytest.approx(t.rabi.mean())
    assert p.X == pytest.approx(t.X.sum() / 12)
    assert p.C == pytest.approx(t.C.sum() / 12)
    with pytest.raises(HamiltonianError):
        collective_parameters(CouplingTables.uniform(1))


def test_collective_trivial_spectra():
    n = 4
    t = CouplingTables.uniform(n, rabi=0.0)
    H = build_collective_hamiltonian(t, 0.7, include_drive=False).matrix
    np.testing.assert_allclose(np.linalg.eigvalsh(H), np.sort(-TWO_PI * 0.7 * dicke_m(n)), atol=1e-14)
    t = CouplingTables.uniform(n, rabi=0.0, X=0.6)
    H = build_collective_hamiltonian(t, 0.0, include_drive=False).matrix
    np.testing.assert_allclose(np.linalg.eigvalsh(H), np.sort(-0.6 * dicke_m(n) ** 2), atol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_collective_equals_full_restricted_to_dicke(n):
    t = CouplingTables.uniform(n, rabi=1.1, J=0.3, C=0.25, X=0.8)
    E = dicke_embedding(n)
    Hf = build_full_hamiltonian(t, 0.4).matrix
    Hc = build_collective_hamiltonian(t, 0.4).matrix
    # the Dicke ladder is invariant; on it sum S_i.S_j = S(S+1) - 3N/4 and
    # sum S^z_i S^z_j = M^2 - N/4, leaving a constant offset
    shift = -t.J[0, 1] * (n / 2 * (n / 2 + 1) - 0.75 * n) + t.X[0, 1] * n / 4
    np.testing.assert_allclose(E.T @ Hf @ E, Hc + shift * np.eye(n + 1), atol=1e-12)
    psi_c = np.zeros(n + 1)
    psi_c[0] = 1.0
    full = sla.expm(-1j * Hf * 0.9) @ (E @ psi_c)
    coll = E @ (sla.expm(-1j * Hc * 0.9) @ psi_c)
    fidelity = abs(np.vdot(coll, full)) ** 2
    assert fidelity > 1 - 1e-10
