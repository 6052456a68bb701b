"""Thermal sampling of motional modes with a trap-depth cutoff and Pauli rejection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AtomConfig, Config, PhysicalConstants, TrapConfig
from .couplings import rabi_frequency

MAX_ATTEMPTS = 1000


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class MotionalState:
    n_x: int
    n_y: int
    n_z: int

    def energy(self, trap: TrapConfig, constants: PhysicalConstants) -> float:
        """Single-atom oscillator energy in joules."""
        return constants.hbar * (
            trap.omega_z * (self.n_z + 0.5) + trap.omega_r * (self.n_x + self.n_y + 1)
        )


@dataclass(frozen=True)
class PartitionTable:
    """Normalized Boltzmann weights over the admissible (n_z, n_r) cells."""

    n_z: np.ndarray
    n_r: np.ndarray
    prob: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cdf", np.cumsum(self.prob))

    @property
    def n_states(self) -> int:
        """Number of distinct (n_x, n_y, n_z) states with non-zero weight."""
        return int(np.sum((self.n_r + 1)[self.prob > 0]))

    def probability(self, n_z: int, n_r: int) -> float:
        hit = np.flatnonzero((self.n_z == n_z) & (self.n_r == n_r))
        return float(self.prob[hit[0]]) if hit.size else 0.0

    def marginal_nz(self) -> np.ndarray:
        return np.bincount(self.n_z, weights=self.prob)


def partition_table(trap: TrapConfig, atoms: AtomConfig, constants: PhysicalConstants) -> PartitionTable:
    hbar, k_B = constants.hbar, constants.k_B
    depth = trap.depth_energy(constants)
    e_z = hbar * trap.omega_z * (np.arange(trap.n_z_bands + 1) + 0.5)
    e_r = hbar * trap.omega_r * (np.arange(trap.n_r_bands + 1) + 1.0)
    nz, nr = np.meshgrid(np.arange(e_z.size), np.arange(e_r.size), indexing="ij")
    keep = (e_z[nz] + e_r[nr]) < depth
    nz, nr = nz[keep], nr[keep]
    if nz.size == 0:
        raise SamplerError("trap too shallow: no admissible motional state below the depth")
    log_w = (
        np.log(nr + 1.0)
        - e_z[nz] / (k_B * atoms.T_z)
        - e_r[nr] / (k_B * atoms.T_r)
    )
    w = np.exp(log_w - log_w.max())
    return PartitionTable(n_z=nz, n_r=nr, prob=w / w.sum())


def sample_rng(master_seed: int, sample_index: int) -> np.random.Generator:
    """Independent PCG64 stream for one Monte-Carlo sample."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, sample_index])))


def draw_states(table: PartitionTable, size: int, rng: np.random.Generator) -> np.ndarray:
    """Independent single-atom draws, returned as an ``(size, 3)`` array of (n_x, n_y, n_z)."""
    cell = np.searchsorted(table.cdf, rng.random(size) * table.cdf[-1], side="right")
    cell = np.minimum(cell, table.prob.size - 1)
    n_r = table.n_r[cell]
    n_x = rng.integers(0, n_r + 1)
    return np.stack([n_x, n_r - n_x, table.n_z[cell]], axis=-1)


@dataclass(frozen=True)
class SampleEnsemble:
    modes: np.ndarray  # (N, 3) int
    sample_index: int
    master_seed: int
    rejections: int = 0

    @property
    def states(self) -> list[MotionalState]:
        return [MotionalState(*map(int, m)) for m in self.modes]

    @property
    def n_atoms(self) -> int:
        return len(self.modes)


def _has_duplicates(modes: np.ndarray) -> bool:
    return np.unique(modes, axis=0).shape[0] < modes.shape[0]


def draw_ensemble(table: PartitionTable, n_atoms: int, master_seed: int, sample_index: int) -> SampleEnsemble:
    """Draw N pairwise-distinct modes; colliding ensembles are discarded as a whole."""
    if n_atoms < 2:
        raise SamplerError("need at least 2 atoms")
    if table.n_states < n_atoms:
        raise SamplerError(f"only {table.n_states} admissible states for {n_atoms} fermions")
    rng = sample_rng(master_seed, sample_index)
    rejections = 0
    for attempt in range(1, MAX_ATTEMPTS + 1):
        modes = draw_states(table, n_atoms, rng)
        if not _has_duplicates(modes):
            return SampleEnsemble(modes=modes, sample_index=sample_index,
                                  master_seed=master_seed, rejections=rejections)
        rejections += 1
    raise SamplerError(
        f"Pauli rejection rate {rejections / MAX_ATTEMPTS:.0%} over {MAX_ATTEMPTS} attempts; "
        "configuration is pathologically degenerate"
    )


def ensemble_for(cfg: Config, sample_index: int, table: PartitionTable | None = None) -> SampleEnsemble:
    table = table or partition_table(cfg.trap, cfg.atoms, cfg.constants)
    return draw_ensemble(table, cfg.atoms.n_atoms, cfg.mc.master_seed, sample_index)


def rejection_rate(table: PartitionTable, n_atoms: int, n_trials: int, rng: np.random.Generator) -> float:
    """Fraction of raw N-atom draws that put two atoms in the same mode."""
    modes = draw_states(table, n_trials * n_atoms, rng).reshape(n_trials, n_atoms, 3)
    # encode each mode as one integer and look for repeats within a row
    span = int(modes.max()) + 1
    code = (modes[..., 0] * span + modes[..., 1]) * span + modes[..., 2]
    code.sort(axis=1)
    collide = np.any(code[:, 1:] == code[:, :-1], axis=1)
    return float(collide.mean())


def rabi_inhomogeneity_map(cfg: Config, bare_rabi_hz: float, T_z_uK, T_r_uK,
                           n_draws: int = 20000, seed: int | None = None):
    """Thermal mean and spread of the Rabi frequency on a (T_z, T_r) grid.

    Returns rows ``(T_z_uK, T_r_uK, mean_rabi_Hz, std_rabi_Hz, ratio)``.
    """
    seed = cfg.mc.master_seed if seed is None else seed
    rows = []
    for i, tz in enumerate(np.atleast_1d(T_z_uK)):
        for j, tr in enumerate(np.atleast_1d(T_r_uK)):
            atoms = cfg.atoms.__class__(**{**cfg.atoms.__dict__, "T_z_uK": float(tz), "T_r_uK": float(tr)})
            table = partition_table(cfg.trap, atoms, cfg.constants)
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i, j])))
            modes = draw_states(table, n_draws, rng)
            rabi = rabi_frequency(modes, bare_rabi_hz, cfg.trap, cfg.constants)
            mean = float(np.mean(rabi))
            std = float(np.std(rabi))
            rows.append((float(tz), float(tr), mean, std, std / mean))
    return rows
