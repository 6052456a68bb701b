"""Exact time evolution: eigen-decomposition propagation, local pulses, dark time, Rabi drive."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .couplings import CouplingTables
from .spins import (
    TWO_PI,
    CollectiveParameters,
    HamiltonianMatrix,
    SpinSectorBasis,
    block_hamiltonian,
    build_full_hamiltonian,
    collective_hamiltonian,
    dicke_m,
    magnetization,
    mz_indices,
)


class EvolutionError(ValueError):
    pass


@dataclass(frozen=True)
class EigenSystem:
    values: np.ndarray  # rad/s
    vectors: np.ndarray

    @classmethod
    def of(cls, H) -> "EigenSystem":
        matrix = H.matrix if isinstance(H, HamiltonianMatrix) else np.asarray(H)
        values, vectors = np.linalg.eigh(matrix)
        return cls(values, vectors)


def evolve(eig: EigenSystem, psi: np.ndarray, t: float) -> np.ndarray:
    """psi(t) = V exp(-i Lambda t) V^T psi; ``psi`` may carry leading batch axes."""
    if t == 0:
        return np.array(psi, dtype=complex)
    coeff = psi @ eig.vectors
    return (coeff * np.exp(-1j * eig.values * t)) @ eig.vectors.T


def ground_state(n_atoms: int) -> np.ndarray:
    psi = np.zeros(2**n_atoms, dtype=complex)
    psi[0] = 1.0
    return psi


def excitation_fraction(psi: np.ndarray, n_atoms: int) -> np.ndarray:
    """<sum_i S_i^z>/N + 1/2 for full-basis state(s)."""
    return (np.abs(psi) ** 2) @ magnetization(n_atoms) / n_atoms + 0.5


def pulse_unitaries(rabi_hz, detuning_hz, duration) -> np.ndarray:
    """2x2 propagators of -2 pi delta S^z - 2 pi Omega S^x, order (down, up).

    Broadcasts over all three arguments; result shape ``(..., 2, 2)``.
    """
    rabi = np.asarray(rabi_hz, dtype=float)
    delta = np.asarray(detuning_hz, dtype=float)
    duration = np.asarray(duration, dtype=float)
    rabi, delta, duration = np.broadcast_arrays(rabi, delta, duration)
    w = np.hypot(rabi, delta)
    angle = math.pi * w * duration
    cos = np.cos(angle)
    # sin(angle)/w with the w -> 0 limit pi*duration
    sinc = np.where(w > 0, np.sin(angle) / np.where(w > 0, w, 1.0), math.pi * duration)
    U = np.empty(rabi.shape + (2, 2), dtype=complex)
    # exp(i pi t (delta sigma_z + Omega sigma_x)), sigma_z = diag(-1, +1) in (down, up)
    U[..., 0, 0] = cos - 1j * sinc * delta
    U[..., 1, 1] = cos + 1j * sinc * delta
    U[..., 0, 1] = 1j * sinc * rabi
    U[..., 1, 0] = 1j * sinc * rabi
    return U


def apply_local(psi: np.ndarray, unitaries: np.ndarray) -> np.ndarray:
    """Apply one 2x2 unitary per atom.

    ``psi`` has shape ``(B, 2**N)``; ``unitaries`` has shape ``(N, 2, 2)`` or
    ``(N, B, 2, 2)`` for per-batch (e.g. per-detuning) propagators.
    """
    psi = np.asarray(psi, dtype=complex)
    batch, dim = psi.shape
    n = unitaries.shape[0]
    out = psi
    for i in range(n):
        U = unitaries[i]
        view = out.reshape(batch, dim >> (i + 1), 2, 1 << i)
        # (2, 2) or (B, 1, 2, 2) against (B, K, 2, L)
        out = (U if U.ndim == 2 else U[:, None]) @ view
        out = out.reshape(batch, dim)
    return out


def ramsey_pulse(psi: np.ndarray, rabi_hz: np.ndarray, detuning_hz, duration: float) -> np.ndarray:
    """Interaction-free pulse as N independent single-atom rotations.

    ``detuning_hz`` is a scalar or a length-B array matching ``psi``'s batch.
    """
    psi = np.atleast_2d(psi)
    delta = np.asarray(detuning_hz, dtype=float)
    if delta.ndim == 0:
        U = pulse_unitaries(rabi_hz, delta, duration)
    else:
        U = pulse_unitaries(np.asarray(rabi_hz)[:, None], delta[None, :], duration)
    return apply_local(psi, U)


class DarkEvolver:
    """Drive-free evolution with the detuning folded in as a per-block phase.

    The zero-detuning Hamiltonian is diagonalized once per magnetization
    block; a detuning only adds ``-2 pi delta M`` to every energy of the
    block. With a sector basis the dynamics is projected onto the retained
    total-spin sectors (population outside them is dropped).
    """

    def __init__(self, tables: CouplingTables, sectors: SpinSectorBasis | None = None):
        self.n_atoms = tables.n_atoms
        self.blocks = []
        sector_of = {blk.m: blk for blk in sectors.blocks} if sectors is not None else None
        for m, idx in mz_indices(self.n_atoms):
            H = block_hamiltonian(tables, idx)
            if sector_of is None:
                vals, vecs = np.linalg.eigh(H)
            else:
                B = sector_of[m].vectors
                if B.shape[1] == 0:
                    continue
                Hp = B.T @ H @ B
                vals, W = np.linalg.eigh(0.5 * (Hp + Hp.T))
                vecs = B @ W
            self.blocks.append((m, idx, vals, vecs))

    def evolve(self, psi: np.ndarray, tau: float, detuning_hz) -> np.ndarray:
        """Evolve full-basis state(s) ``(B, 2**N)`` for ``tau`` at the given detuning(s).

        A single state is shared by every detuning.
        """
        psi = np.atleast_2d(np.asarray(psi, dtype=complex))
        delta = np.atleast_1d(np.asarray(detuning_hz, dtype=float))
        if psi.shape[0] == 1 and delta.size > 1:
            psi = np.repeat(psi, delta.size, axis=0)
        delta = np.broadcast_to(delta, (psi.shape[0],))
        out = np.zeros_like(psi)
        for m, idx, vals, vecs in self.blocks:
            coeff = psi[:, idx] @ vecs
            phase = np.exp(-1j * vals * tau)[None, :] * np.exp(1j * TWO_PI * delta * m * tau)[:, None]
            out[:, idx] = (coeff * phase) @ vecs.T
        return out

    def energy(self, psi: np.ndarray, detuning_hz: float = 0.0) -> np.ndarray:
        psi = np.atleast_2d(psi)
        total = 0.0
        for m, idx, vals, vecs in self.blocks:
            coeff = psi[:, idx] @ vecs
            total = total + np.abs(coeff) ** 2 @ (vals - TWO_PI * detuning_hz * m)
        return total


def dark_time_sweep(tables: CouplingTables, tau: float, psi_after_pulse: np.ndarray, detunings,
                    sectors: SpinSectorBasis | None = None) -> np.ndarray:
    """States at the end of the dark time, one row per detuning.

    ``psi_after_pulse`` is a single state (shared by every detuning) or one
    state per detuning.
    """
    detunings = np.asarray(detunings, dtype=float)
    psi = np.atleast_2d(psi_after_pulse)
    if psi.shape[0] == 1:
        psi = np.repeat(psi, detunings.size, axis=0)
    return DarkEvolver(tables, sectors).evolve(psi, tau, detunings)


def ramsey_sequence(tables: CouplingTables, detunings, t1, t2: float, tau: float,
                    evolver: DarkEvolver | None = None, pulse_detuning: bool = True):
    """Excitation fraction after pulse(t1) -> dark(tau) -> pulse(t2) for every detuning.

    ``t1`` may be a scalar or a sequence of first-pulse lengths, evaluated in
    one batch. Returns ``(pe_final, pe_after_first_pulse)`` with shapes
    ``(n_delta,)`` and scalar, or ``(n_t1, n_delta)`` and ``(n_t1,)``; the
    first-pulse excitation is taken at zero detuning.
    """
    n = tables.n_atoms
    detunings = np.asarray(detunings, dtype=float)
    t1_arr = np.atleast_1d(np.asarray(t1, dtype=float))
    k, nd = t1_arr.size, detunings.size
    evolver = evolver or DarkEvolver(tables)
    rabi = np.asarray(tables.rabi, dtype=float)[:, None]
    delta = np.tile(detunings, k)
    pulse_delta = delta if pulse_detuning else np.zeros_like(delta)
    durations = np.repeat(t1_arr, nd)
    psi0 = np.zeros((k * nd, 2**n), dtype=complex)
    psi0[:, 0] = 1.0
    psi1 = apply_local(psi0, pulse_unitaries(rabi, pulse_delta[None, :], durations[None, :]))
    psi2 = evolver.evolve(psi1, tau, delta)
    if pulse_detuning:
        U2 = pulse_unitaries(rabi, pulse_delta[None, :], t2)
    else:
        U2 = pulse_unitaries(rabi[:, 0], 0.0, t2)
    pe = excitation_fraction(apply_local(psi2, U2), n).reshape(k, nd)
    pe_first = np.mean(np.sin(math.pi * rabi * t1_arr[None, :]) ** 2, axis=0)
    if np.ndim(t1) == 0:
        return pe[0], float(pe_first[0])
    return pe, pe_first


class RabiPropagator:
    """Full driven Hamiltonian, diagonalized per detuning, evolving |down...down>."""

    def __init__(self, tables: CouplingTables, sectors: SpinSectorBasis | None = None):
        self.n_atoms = n = tables.n_atoms
        H0 = build_full_hamiltonian(tables, 0.0, include_drive=True).matrix
        M = magnetization(n)
        psi0 = ground_state(n).real
        if sectors is None:
            self.H0, self.Mz, self.psi0 = H0, np.diag(M), psi0
            self.mz_diag = M
        else:
            B = sectors.matrix()
            self.psi0 = B.T @ psi0
            if abs(np.linalg.norm(self.psi0) - 1.0) > 1e-10:
                raise EvolutionError("truncation basis does not contain the initial state")
            H0p = B.T @ H0 @ B
            self.H0 = 0.5 * (H0p + H0p.T)
            self.Mz = B.T @ (M[:, None] * B)
            self.mz_diag = None

    def excitation(self, detuning_hz: float, times) -> np.ndarray:
        H = self.H0 - TWO_PI * detuning_hz * self.Mz
        vals, vecs = np.linalg.eigh(H)
        coeff = vecs.T @ self.psi0
        times = np.atleast_1d(np.asarray(times, dtype=float))
        states = (np.exp(-1j * np.outer(times, vals)) * coeff[None, :]) @ vecs.T
        if self.mz_diag is not None:
            mz = np.abs(states) ** 2 @ self.mz_diag
        else:
            mz = np.einsum("ti,ij,tj->t", states.conj(), self.Mz, states).real
        return mz / self.n_atoms + 0.5

    def spectrum(self, detunings, times) -> np.ndarray:
        """Excitation fraction, shape ``(len(times), len(detunings))``."""
        detunings = np.asarray(detunings, dtype=float)
        if self.mz_diag is None or self.H0.shape[0] > 256:
            return np.stack([self.excitation(d, times) for d in detunings], axis=1)
        H = self.H0[None] - TWO_PI * detunings[:, None, None] * self.Mz[None]
        vals, vecs = np.linalg.eigh(H)
        psi = np.broadcast_to(self.psi0.astype(complex), (detunings.size, self.psi0.size))
        states = _propagate(vals, vecs, psi, np.atleast_1d(np.asarray(times, dtype=float)))
        return np.abs(states) ** 2 @ self.mz_diag / self.n_atoms + 0.5


def rabi_spectrum_state(tables: CouplingTables, t: float, detuning_hz: float,
                        sectors: SpinSectorBasis | None = None) -> np.ndarray:
    """State after a Rabi pulse of length ``t`` at one detuning (in the chosen basis)."""
    prop = RabiPropagator(tables, sectors)
    H = prop.H0 - TWO_PI * detuning_hz * prop.Mz
    return evolve(EigenSystem.of(H), prop.psi0.astype(complex), t)


# --- Dicke-space (collective) evolution -------------------------------------------------

def _dicke_ground(n_atoms: int) -> np.ndarray:
    psi = np.zeros(n_atoms + 1, dtype=complex)
    psi[0] = 1.0
    return psi


def _stacked_hamiltonians(params: CollectiveParameters, detunings) -> np.ndarray:
    """Driven collective Hamiltonians for every detuning, shape ``(n_delta, N+1, N+1)``."""
    n = params.n_atoms
    H0 = collective_hamiltonian(params, 0.0, include_drive=True).matrix
    M = dicke_m(n)
    return H0[None] - TWO_PI * np.asarray(detunings, dtype=float)[:, None, None] * np.diag(M)[None]


def _propagate(vals, vecs, psi, times):
    """Batched V exp(-i Lambda t) V^T psi; ``vals`` (B, d), ``psi`` (B, d), ``times`` (T,) -> (T, B, d)."""
    coeff = np.einsum("bji,bj->bi", vecs, psi)
    phases = np.exp(-1j * np.asarray(times)[:, None, None] * vals[None])
    return np.einsum("bij,tbj->tbi", vecs, phases * coeff[None])


def collective_ramsey(params: CollectiveParameters, detunings, t1, t2: float, tau: float,
                      pulse_detuning: bool = True):
    """Collective-model Ramsey excitation fraction for every detuning.

    ``t1`` may be a scalar or a sequence; shapes follow :func:`ramsey_sequence`.
    """
    n = params.n_atoms
    detunings = np.asarray(detunings, dtype=float)
    t1_arr = np.atleast_1d(np.asarray(t1, dtype=float))
    M = dicke_m(n)
    drive_only = CollectiveParameters(params.rabi, 0.0, 0.0, n)
    pulse_delta = detunings if pulse_detuning else np.zeros_like(detunings)
    vals, vecs = np.linalg.eigh(_stacked_hamiltonians(drive_only, pulse_delta))
    psi0 = np.broadcast_to(_dicke_ground(n), (detunings.size, n + 1))
    psi1 = _propagate(vals, vecs, psi0, t1_arr)  # (k, n_delta, N+1)
    dark = -params.X * M**2 - (n - 1) * params.C * M
    psi2 = psi1 * np.exp(-1j * tau * (dark[None, :] - TWO_PI * detunings[:, None] * M[None, :]))[None]
    psi3 = np.stack([_propagate(vals, vecs, row, [t2])[0] for row in psi2])
    pe = np.abs(psi3) ** 2 @ M / n + 0.5
    pe_first = np.sin(math.pi * params.rabi * t1_arr) ** 2
    if np.ndim(t1) == 0:
        return pe[0], float(pe_first[0])
    return pe, pe_first


def collective_rabi(params: CollectiveParameters, detunings, times) -> np.ndarray:
    """Collective Rabi excitation fraction, shape ``(len(times), len(detunings))``."""
    n = params.n_atoms
    detunings = np.asarray(detunings, dtype=float)
    vals, vecs = np.linalg.eigh(_stacked_hamiltonians(params, detunings))
    psi0 = np.broadcast_to(_dicke_ground(n), (detunings.size, n + 1))
    states = _propagate(vals, vecs, psi0, np.atleast_1d(np.asarray(times, dtype=float)))
    return np.abs(states) ** 2 @ dicke_m(n) / n + 0.5
