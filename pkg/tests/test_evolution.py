import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from mbsed.couplings import CouplingTables
from mbsed.evolution import (
    DarkEvolver,
    EigenSystem,
    EvolutionError,
    RabiPropagator,
    apply_local,
    collective_rabi,
    collective_ramsey,
    dark_time_sweep,
    evolve,
    excitation_fraction,
    ground_state,
    pulse_unitaries,
    rabi_spectrum_state,
    ramsey_pulse,
    ramsey_sequence,
)
from mbsed.spins import build_full_hamiltonian, collective_parameters, magnetization, spin_sector_basis
from test_spins import random_tables

TWO_PI = 2 * math.pi


def random_state(n, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return psi / np.linalg.norm(psi)


def test_evolve_identity_and_group_property():
    H = build_full_hamiltonian(random_tables(4, 5), 0.2)
    eig = EigenSystem.of(H)
    psi = random_state(4, 1)
    np.testing.assert_array_equal(evolve(eig, psi, 0.0), psi.astype(complex))
    two_step = evolve(eig, evolve(eig, psi, 0.13), 0.29)
    np.testing.assert_allclose(two_step, evolve(eig, psi, 0.42), atol=1e-10)
    np.testing.assert_allclose(evolve(eig, psi, 0.42), sla.expm(-1j * H.matrix * 0.42) @ psi, atol=1e-10)


@given(st.floats(0.1, 20.0), st.floats(0.0, 2.0))
@settings(max_examples=30)
def test_single_spin_rabi_flopping(rabi, t):
    t = t / rabi
    H = build_full_hamiltonian(CouplingTables.uniform(1, rabi=rabi), 0.0)
    psi = evolve(EigenSystem.of(H), ground_state(1), t)
    assert excitation_fraction(psi, 1) == pytest.approx(math.sin(math.pi * rabi * t) ** 2, abs=1e-12)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_norm_conservation(n):
    t = random_tables(n, n)
    psi = random_state(n, 2)
    out = DarkEvolver(t).evolve(psi, 0.8, [0.0, 0.3, -1.1])
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-10)
    eig = EigenSystem.of(build_full_hamiltonian(t, 0.4))
    assert abs(np.linalg.norm(evolve(eig, psi, 3.0)) - 1.0) < 1e-10


def test_half_pi_pulse_equal_superposition():
    rabi = np.array([1.0, 2.5, 4.0])
    psi = ground_state(3)[None]
    # each atom gets its own quarter period 1/(4 Omega_i)
    for i, om in enumerate(rabi):
        U = np.stack([np.eye(2, dtype=complex)] * 3)
        U[i] = pulse_unitaries(om, 0.0, 1.0 / (4.0 * om))
        psi = apply_local(psi, U)
    assert excitation_fraction(psi[0], 3) == pytest.approx(0.5, abs=1e-14)


def test_zero_rabi_pulse_keeps_populations():
    psi = random_state(3, 4)[None]
    out = ramsey_pulse(psi, np.zeros(3), 0.7, 0.3)
    np.testing.assert_allclose(np.abs(out) ** 2, np.abs(psi) ** 2, atol=1e-14)


@pytest.mark.parametrize("n", [1, 3, 6])
def test_pulse_product_rule(n):
    rng = np.random.default_rng(n)
    rabi = rng.uniform(0.5, 3.0, n)
    delta, dur = 0.6, 0.37
    t = CouplingTables.uniform(n, rabi=0.0)
    t = CouplingTables(t.J, t.C, t.X, t.G_S, t.G_P, rabi)
    H = build_full_hamiltonian(t, delta).matrix
    psi = random_state(n, 9)
    ref = sla.expm(-1j * H * dur) @ psi
    np.testing.assert_allclose(ramsey_pulse(psi, rabi, delta, dur)[0], ref, atol=1e-10)


def test_per_batch_detunings():
    rabi = np.array([1.0, 2.0])
    deltas = np.array([-0.5, 0.0, 0.9])
    psi = np.repeat(ground_state(2)[None], 3, axis=0)
    out = ramsey_pulse(psi, rabi, deltas, 0.2)
    for k, d in enumerate(deltas):
        np.testing.assert_allclose(out[k], ramsey_pulse(ground_state(2), rabi, d, 0.2)[0], atol=1e-15)


@pytest.mark.parametrize("n", [3, 5])
def test_dark_sweep_matches_rediagonalization(n):
    t = random_tables(n, 11)
    psi = random_state(n, 3)
    deltas = np.array([-0.7, 0.0, 0.45])
    out = dark_time_sweep(t, 0.9, psi, deltas)
    for k, d in enumerate(deltas):
        H = build_full_hamiltonian(t, d, include_drive=False).matrix
        np.testing.assert_allclose(out[k], sla.expm(-1j * H * 0.9) @ psi, atol=1e-10)


def test_dark_time_conserves_magnetization():
    n = 5
    t = random_tables(n, 8)
    psi = random_state(n, 6)
    M = magnetization(n)
    before = np.abs(psi) ** 2 @ M
    out = DarkEvolver(t).evolve(np.repeat(psi[None], 4, axis=0), 1.7, [-2.0, -0.1, 0.3, 5.0])
    np.testing.assert_allclose(np.abs(out) ** 2 @ M, before, atol=1e-10)


def test_dark_evolver_has_one_block_per_magnetization():
    ev = DarkEvolver(random_tables(3, 0))
    assert [vecs.shape[0] for _, _, _, vecs in ev.blocks] == [1, 3, 3, 1]


def test_free_ramsey_fringe_shape():
    n, tau = 3, 0.5
    t = CouplingTables.uniform(n, rabi=2.0)
    t_half = 1.0 / (4.0 * 2.0)
    deltas = np.linspace(-3, 3, 61)
    pe, first = ramsey_sequence(t, deltas, t_half, t_half, tau, pulse_detuning=False)
    assert first == pytest.approx(0.5)
    np.testing.assert_allclose(pe, 0.5 + 0.5 * np.cos(TWO_PI * deltas * tau), atol=1e-12)
    pe2, _ = ramsey_sequence(t, deltas, t_half, t_half, 2 * tau, pulse_detuning=False)
    np.testing.assert_allclose(pe2, 0.5 + 0.5 * np.cos(TWO_PI * deltas * 2 * tau), atol=1e-12)


def test_ramsey_sequence_batches_first_pulses():
    t = random_tables(4, 2, scale=0.2)
    d = np.linspace(-1, 1, 7)
    t1s = np.array([0.05, 0.1, 0.2])
    pe, firsts = ramsey_sequence(t, d, t1s, 0.12, 0.4)
    for k, t1 in enumerate(t1s):
        single, first = ramsey_sequence(t, d, t1, 0.12, 0.4)
        np.testing.assert_allclose(pe[k], single, atol=1e-13)
        assert firsts[k] == pytest.approx(first)


def test_ramsey_sequence_against_dense_propagators():
    n = 4
    t = random_tables(n, 21, scale=0.5)
    d, t1, t2, tau = 0.3, 0.11, 0.07, 0.6
    Hp = build_full_hamiltonian(CouplingTables(0 * t.J, 0 * t.C, 0 * t.X, t.G_S, t.G_P, t.rabi), d).matrix
    Hd = build_full_hamiltonian(t, d, include_drive=False).matrix
    psi = sla.expm(-1j * Hp * t2) @ sla.expm(-1j * Hd * tau) @ sla.expm(-1j * Hp * t1) @ ground_state(n)
    pe, _ = ramsey_sequence(t, [d], t1, t2, tau)
    assert pe[0] == pytest.approx(excitation_fraction(psi, n), abs=1e-10)


def test_rabi_free_line_peaks_at_zero():
    n, om = 3, 2.0
    prop = RabiPropagator(CouplingTables.uniform(n, rabi=om))
    d = np.linspace(-2, 2, 41)
    pe = prop.spectrum(d, [1.0 / (2 * om)])[0]
    assert d[np.argmax(pe)] == 0.0
    assert pe.max() == pytest.approx(1.0, abs=1e-12)
    # isolated-atom Rabi line
    w2 = om**2 + d**2
    np.testing.assert_allclose(pe, om**2 / w2 * np.sin(math.pi * np.sqrt(w2) / (2 * om)) ** 2, atol=1e-12)


def test_rabi_spectrum_batched_equals_loop():
    t = random_tables(4, 3, scale=0.3)
    prop = RabiPropagator(t)
    d = np.linspace(-1, 1, 9)
    times = [0.05, 0.2]
    batched = prop.spectrum(d, times)
    looped = np.stack([prop.excitation(x, times) for x in d], axis=1)
    np.testing.assert_allclose(batched, looped, atol=1e-12)


def test_rabi_truncated_vs_full():
    n = 6
    rng = np.random.default_rng(4)
    t = random_tables(n, 4, scale=0.05, rabi_spread=0.1)
    t_pi = 1.0 / (2 * t.rabi.mean())
    full = RabiPropagator(t).excitation(0.1, [t_pi])[0]
    trunc = RabiPropagator(t, spin_sector_basis(n, 2)).excitation(0.1, [t_pi])[0]
    assert abs(full - trunc) < 1e-3


def test_rabi_truncated_state_in_projected_basis():
    n = 4
    t = random_tables(n, 5, scale=0.05)
    basis = spin_sector_basis(n, 1)
    state = rabi_spectrum_state(t, 0.1, 0.2, basis)
    full = rabi_spectrum_state(t, 0.1, 0.2)
    assert state.shape == (basis.dim,)
    assert np.linalg.norm(state) == pytest.approx(1.0, abs=1e-10)
    assert full.shape == (2**n,)


def test_rabi_converges_to_free_line_for_strong_drive():
    n = 3
    rng = np.random.default_rng(0)
    base = random_tables(n, 6, scale=0.05, rabi_spread=0.0)
    errors = []
    for om in (1.0, 10.0, 100.0):
        t = CouplingTables(base.J, base.C, base.X, base.G_S, base.G_P, np.full(n, om))
        free = CouplingTables.uniform(n, rabi=om)
        d = np.linspace(-2 * om, 2 * om, 41)
        t_pi = 1.0 / (2 * om)
        diff = RabiPropagator(t).spectrum(d, [t_pi]) - RabiPropagator(free).spectrum(d, [t_pi])
        errors.append(np.abs(diff).max())
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-3


def test_truncation_must_contain_initial_state():
    # a basis without the fully symmetric sector cannot hold |down...down>
    t = random_tables(4, 1)
    basis = spin_sector_basis(4, 1)
    empty = type(basis)(4, 1, tuple(type(b)(b.m, b.indices, b.vectors[:, b.spins < 1.5], b.spins[b.spins < 1.5])
                                     for b in basis.blocks))
    with pytest.raises(EvolutionError):
        RabiPropagator(t, empty)


def test_collective_ramsey_matches_full_for_homogeneous():
    n = 4
    t = CouplingTables.uniform(n, rabi=2.0, J=0.0, C=0.3, X=1.2)
    d = np.linspace(-1.5, 1.5, 13)
    pe_full, _ = ramsey_sequence(t, d, 0.07, 0.125, 0.4)
    pe_col, _ = collective_ramsey(collective_parameters(t), d, 0.07, 0.125, 0.4)
    np.testing.assert_allclose(pe_col, pe_full, atol=1e-10)


def test_collective_rabi_matches_full_for_homogeneous():
    n = 3
    t = CouplingTables.uniform(n, rabi=2.0, J=0.2, C=0.3, X=1.2)
    d = np.linspace(-1.5, 1.5, 13)
    full = RabiPropagator(t).spectrum(d, [0.1, 0.25])
    col = collective_rabi(collective_parameters(t), d, [0.1, 0.25])
    np.testing.assert_allclose(col, full, atol=1e-10)
