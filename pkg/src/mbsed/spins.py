"""Many-body spin Hamiltonians in the 2**N product basis and in Dicke space.

Basis convention: state index ``b`` has bit ``i`` set when atom ``i`` is in
the excited (spin-up) clock state. All Hamiltonians are returned as H/hbar in
rad/s, with detunings and Rabi frequencies given in Hz.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .config import N_MAX_FULL, N_MAX_TRUNCATED
from .couplings import CouplingTables

TWO_PI = 2.0 * math.pi
SECTOR_TOL = 1e-8
CACHE_ENV_VAR = "MBSED_CACHE_DIR"


class HamiltonianError(ValueError):
    pass


@lru_cache(maxsize=32)
def spin_z(n_atoms: int) -> np.ndarray:
    """(2**N, N) array of S_i^z eigenvalues (+-1/2) for every basis state."""
    b = np.arange(2**n_atoms)[:, None]
    bits = (b >> np.arange(n_atoms)[None, :]) & 1
    out = bits - 0.5
    out.flags.writeable = False
    return out


@lru_cache(maxsize=32)
def magnetization(n_atoms: int) -> np.ndarray:
    out = spin_z(n_atoms).sum(axis=1)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=32)
def mz_indices(n_atoms: int) -> tuple[tuple[float, np.ndarray], ...]:
    """Basis indices grouped by total magnetization, ordered M = -N/2 ... N/2."""
    M = magnetization(n_atoms)
    groups = []
    for k in range(n_atoms + 1):
        m = k - n_atoms / 2
        groups.append((m, np.flatnonzero(M == m)))
    return tuple(groups)


@dataclass(frozen=True)
class SpinOperatorSet:
    """Sparse single-site and collective spin operators built from Kronecker products."""

    n_atoms: int
    sx: list = field(repr=False)
    sy: list = field(repr=False)
    sz: list = field(repr=False)

    @classmethod
    def build(cls, n_atoms: int) -> "SpinOperatorSet":
        # local 2x2 operators in the (down, up) order that matches bit value 0/1
        sxl = sp.csr_matrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        syl = sp.csr_matrix(np.array([[0.0, 0.5j], [-0.5j, 0.0]]))
        szl = sp.csr_matrix(np.array([[-0.5, 0.0], [0.0, 0.5]]))
        eye = sp.identity(2, format="csr")

        def site(op, i):
            # atom i is bit i, i.e. the (N-1-i)-th Kronecker factor from the left
            out = sp.identity(1, format="csr")
            for k in reversed(range(n_atoms)):
                out = sp.kron(out, op if k == i else eye, format="csr")
            return out

        return cls(
            n_atoms=n_atoms,
            sx=[site(sxl, i) for i in range(n_atoms)],
            sy=[site(syl, i) for i in range(n_atoms)],
            sz=[site(szl, i) for i in range(n_atoms)],
        )

    @property
    def dim(self) -> int:
        return 2**self.n_atoms

    def total(self, axis: str):
        return sum(getattr(self, "s" + axis))

    def total_spin_squared(self):
        return sum((self.total(a) @ self.total(a)) for a in "xyz").real


@dataclass(frozen=True)
class HamiltonianMatrix:
    matrix: np.ndarray
    basis: str = "full"  # "full" | "mz-block" | "projected" | "dicke"
    has_drive: bool = True
    detuning_hz: float | None = 0.0  # None when the detuning is kept symbolic

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _pair_terms(tables: CouplingTables):
    return tables.X + tables.J, tables.J


def _diagonal(tables: CouplingTables, detuning_hz: float, z: np.ndarray) -> np.ndarray:
    zz, _ = _pair_terms(tables)
    fields = TWO_PI * detuning_hz + tables.longitudinal_fields
    return -(z @ fields) - np.einsum("bi,ij,bj->b", z, zz, z)


def build_full_hamiltonian(tables: CouplingTables, detuning_hz: float = 0.0, include_drive: bool = True) -> HamiltonianMatrix:
    """Dense H/hbar in the full product basis."""
    n = tables.n_atoms
    if n > N_MAX_FULL:
        raise HamiltonianError(f"full space limited to N <= {N_MAX_FULL}")
    dim = 2**n
    z = spin_z(n)
    H = np.diag(_diagonal(tables, detuning_hz, z))
    b = np.arange(dim)
    bits = z > 0
    for i in range(n):
        for j in range(i + 1, n):
            if tables.J[i, j] == 0.0:
                continue
            src = b[bits[:, i] & ~bits[:, j]]
            dst = src ^ ((1 << i) | (1 << j))
            H[src, dst] = -tables.J[i, j]
            H[dst, src] = -tables.J[i, j]
    if include_drive:
        for i in range(n):
            src = b[~bits[:, i]]
            dst = src | (1 << i)
            H[src, dst] = -math.pi * tables.rabi[i]
            H[dst, src] = -math.pi * tables.rabi[i]
    return HamiltonianMatrix(H, basis="full", has_drive=include_drive, detuning_hz=detuning_hz)


def block_hamiltonian(tables: CouplingTables, indices: np.ndarray, detuning_hz: float = 0.0) -> np.ndarray:
    """Drive-free H/hbar restricted to a magnetization block given by its basis indices."""
    n = tables.n_atoms
    z = spin_z(n)[indices]
    H = np.diag(_diagonal(tables, detuning_hz, z))
    position = {int(b): k for k, b in enumerate(indices)}
    bits = z > 0
    for i in range(n):
        for j in range(i + 1, n):
            if tables.J[i, j] == 0.0:
                continue
            rows = np.flatnonzero(bits[:, i] & ~bits[:, j])
            if rows.size == 0:
                continue
            partners = indices[rows] ^ ((1 << i) | (1 << j))
            cols = np.fromiter((position[int(p)] for p in partners), dtype=int, count=partners.size)
            H[rows, cols] = -tables.J[i, j]
            H[cols, rows] = -tables.J[i, j]
    return H


@dataclass(frozen=True)
class MzBlock:
    m: float
    matrix: np.ndarray
    indices: np.ndarray


def mz_blocks(H: HamiltonianMatrix, n_atoms: int, tol: float = 1e-14) -> list[MzBlock]:
    """Split a drive-free full-basis Hamiltonian into magnetization blocks."""
    if H.has_drive:
        raise HamiltonianError("drive term mixes magnetization blocks")
    if H.basis != "full":
        raise HamiltonianError("mz_blocks expects a full-basis Hamiltonian")
    blocks = []
    covered = np.zeros_like(H.matrix, dtype=bool)
    for m, idx in mz_indices(n_atoms):
        blocks.append(MzBlock(m, H.matrix[np.ix_(idx, idx)].copy(), idx))
        covered[np.ix_(idx, idx)] = True
    leak = np.abs(H.matrix[~covered]).max(initial=0.0)
    if leak > tol:
        raise HamiltonianError(f"off-block element {leak:.3e} exceeds {tol}")
    return blocks


def heisenberg_sum(n_atoms: int, indices: np.ndarray | None = None) -> np.ndarray:
    """sum_{i != j} S_i . S_j (ordered pairs), restricted to ``indices`` if given."""
    ones = CouplingTables.uniform(n_atoms, rabi=0.0, J=-1.0)
    if indices is None:
        return build_full_hamiltonian(ones, include_drive=False).matrix
    return block_hamiltonian(ones, indices)


def sector_multiplicity(n_atoms: int, spin: float) -> int:
    k = int(round(n_atoms / 2 - spin))
    return math.comb(n_atoms, k) - (math.comb(n_atoms, k - 1) if k >= 1 else 0)


@dataclass(frozen=True)
class SectorBlock:
    m: float
    indices: np.ndarray
    vectors: np.ndarray  # (len(indices), k) orthonormal columns
    spins: np.ndarray  # total spin S of each column


@dataclass(frozen=True)
class SpinSectorBasis:
    n_atoms: int
    truncation: int
    blocks: tuple[SectorBlock, ...]

    @property
    def spins(self) -> np.ndarray:
        return np.concatenate([b.spins for b in self.blocks])

    @property
    def magnetizations(self) -> np.ndarray:
        return np.concatenate([np.full(b.spins.size, b.m) for b in self.blocks])

    @property
    def dim(self) -> int:
        return sum(b.spins.size for b in self.blocks)

    def sector_labels(self) -> dict[float, int]:
        """Total spin -> multiplicity among retained sectors."""
        out = {}
        for s in np.unique(self.spins)[::-1]:
            out[float(s)] = sector_multiplicity(self.n_atoms, s)
        return out

    def matrix(self) -> np.ndarray:
        """Dense (2**N, dim) matrix whose columns are the basis vectors."""
        B = np.zeros((2**self.n_atoms, self.dim))
        col = 0
        for blk in self.blocks:
            k = blk.spins.size
            B[blk.indices, col:col + k] = blk.vectors
            col += k
        return B

    def weight(self, state: np.ndarray) -> np.ndarray:
        """Population of full-basis state(s) ``(..., 2**N)`` inside the retained sectors."""
        total = 0.0
        for blk in self.blocks:
            if blk.spins.size:
                amp = state[..., blk.indices] @ blk.vectors
                total = total + np.sum(np.abs(amp) ** 2, axis=-1)
        return total


def _sector_blocks_all(n_atoms: int):
    """Eigen-decompose S^2 inside every magnetization block (all sectors)."""
    out = []
    for m, idx in mz_indices(n_atoms):
        s2 = heisenberg_sum(n_atoms, idx) + 0.75 * n_atoms * np.eye(idx.size)
        vals, vecs = np.linalg.eigh(s2)
        spins = 0.5 * (np.sqrt(1.0 + 4.0 * vals) - 1.0)
        rounded = np.round(2 * spins) / 2
        if np.max(np.abs(rounded * (rounded + 1) - vals), initial=0.0) > SECTOR_TOL:
            raise HamiltonianError("S^2 eigenvalues not of the form S(S+1)")
        out.append((m, idx, vecs, rounded))
    return out


@lru_cache(maxsize=8)
def _sector_cache(n_atoms: int):
    cache_dir = os.environ.get(CACHE_ENV_VAR)
    path = Path(cache_dir) / f"sector_basis_N{n_atoms}.npz" if cache_dir else None
    if path is not None and path.exists():
        data = np.load(path)
        return [
            (float(data[f"m{k}"]), data[f"idx{k}"], data[f"vec{k}"], data[f"spin{k}"])
            for k in range(n_atoms + 1)
        ]
    blocks = _sector_blocks_all(n_atoms)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {}
        for k, (m, idx, vecs, spins) in enumerate(blocks):
            payload.update({f"m{k}": m, f"idx{k}": idx, f"vec{k}": vecs, f"spin{k}": spins})
        np.savez(path, **payload)
    return blocks


def spin_sector_basis(n_atoms: int, truncation: int) -> SpinSectorBasis:
    """Orthonormal basis of the total-spin sectors S = N/2, ..., N/2 - truncation."""
    if not 0 <= truncation <= n_atoms // 2:
        raise HamiltonianError(f"truncation must be in [0, {n_atoms // 2}]")
    if n_atoms > N_MAX_TRUNCATED:
        raise HamiltonianError(f"sector basis limited to N <= {N_MAX_TRUNCATED}")
    s_min = n_atoms / 2 - truncation
    blocks = []
    for m, idx, vecs, spins in _sector_cache(n_atoms):
        keep = spins >= s_min - 1e-9
        blocks.append(SectorBlock(m, idx, vecs[:, keep], spins[keep]))
    return SpinSectorBasis(n_atoms, truncation, tuple(blocks))


def project(H: HamiltonianMatrix, basis: SpinSectorBasis) -> HamiltonianMatrix:
    B = basis.matrix()
    Hp = B.T @ H.matrix @ B
    Hp = 0.5 * (Hp + Hp.T)
    return HamiltonianMatrix(Hp, basis="projected", has_drive=H.has_drive, detuning_hz=H.detuning_hz)


@dataclass(frozen=True)
class CollectiveParameters:
    rabi: float  # mean Rabi frequency, Hz
    X: float  # rad/s
    C: float  # rad/s
    n_atoms: int


def collective_parameters(tables: CouplingTables) -> CollectiveParameters:
    n = tables.n_atoms
    if n < 2:
        raise HamiltonianError("collective averages need N >= 2")
    pairs = n * (n - 1)
    return CollectiveParameters(
        rabi=float(np.mean(tables.rabi)),
        X=float(tables.X.sum() - np.trace(tables.X)) / pairs,
        C=float(tables.C.sum() - np.trace(tables.C)) / pairs,
        n_atoms=n,
    )


def dicke_m(n_atoms: int) -> np.ndarray:
    """Magnetizations of the Dicke ladder in index order, M = -N/2 ... N/2."""
    return np.arange(n_atoms + 1) - n_atoms / 2


def collective_hamiltonian(params: CollectiveParameters, detuning_hz: float = 0.0, include_drive: bool = True) -> HamiltonianMatrix:
    """H_col/hbar on the S = N/2 ladder, basis |N/2, M> with M ascending."""
    n = params.n_atoms
    M = dicke_m(n)
    S = n / 2
    H = np.diag(-TWO_PI * detuning_hz * M - params.X * M**2 - (n - 1) * params.C * M)
    if include_drive:
        up = 0.5 * np.sqrt(S * (S + 1) - M[:-1] * (M[:-1] + 1))
        off = -TWO_PI * params.rabi * up
        H += np.diag(off, 1) + np.diag(off, -1)
    return HamiltonianMatrix(H, basis="dicke", has_drive=include_drive, detuning_hz=detuning_hz)


def build_collective_hamiltonian(tables: CouplingTables, detuning_hz: float = 0.0, include_drive: bool = True) -> HamiltonianMatrix:
    return collective_hamiltonian(collective_parameters(tables), detuning_hz, include_drive)


def dicke_embedding(n_atoms: int) -> np.ndarray:
    """(2**N, N+1) isometry mapping Dicke states |N/2, M> into the product basis."""
    M = magnetization(n_atoms)
    E = np.zeros((2**n_atoms, n_atoms + 1))
    for k in range(n_atoms + 1):
        idx = np.flatnonzero(M == k - n_atoms / 2)
        E[idx, k] = 1.0 / math.sqrt(idx.size)
    return E
