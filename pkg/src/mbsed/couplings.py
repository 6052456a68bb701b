"""Mode-dependent spin couplings and Rabi frequencies for one sampled ensemble."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_laguerre

from .config import Config, PhysicalConstants, TrapConfig
from .overlaps import PairOverlaps


def lamb_dicke(trap: TrapConfig, constants: PhysicalConstants) -> tuple[float, float, float]:
    """Lamb-Dicke parameters (eta_x, eta_y, eta_z); the misalignment tilts the probe along x."""
    k = constants.wavenumber
    hbar_over_2m = constants.hbar / (2.0 * constants.atom_mass)
    eta_z = k * math.cos(trap.misalignment) * math.sqrt(hbar_over_2m / trap.omega_z)
    eta_x = k * math.sin(trap.misalignment) * math.sqrt(hbar_over_2m / trap.omega_r)
    return eta_x, 0.0, eta_z


def rabi_frequency(modes, bare_rabi_hz: float, trap: TrapConfig, constants: PhysicalConstants):
    """Carrier Rabi frequency (Hz) of atoms in motional modes ``(n_x, n_y, n_z)``.

    ``modes`` is a single triple or an ``(..., 3)`` integer array. Each axis
    contributes ``exp(-eta**2/2) L_n(eta**2)``.
    """
    modes = np.asarray(modes)
    factor = np.ones(modes.shape[:-1])
    for axis, eta in enumerate(lamb_dicke(trap, constants)):
        if eta == 0.0:
            continue
        eta2 = eta * eta
        factor = factor * math.exp(-0.5 * eta2) * eval_laguerre(modes[..., axis], eta2)
    out = bare_rabi_hz * factor
    return float(out) if out.ndim == 0 else out


class ModeOverlaps:
    """Per-axis slice overlaps for a trap; shared across samples of one run."""

    def __init__(self, trap: TrapConfig):
        self.radial = PairOverlaps(trap.n_r_bands)
        self.axial = PairOverlaps(trap.n_z_bands)

    def axis_values(self, a, b):
        """Return ((s_x, p_x), (s_y, p_y), (s_z, p_z)) for modes a and b."""
        return (
            self.radial(int(a[0]), int(b[0])),
            self.radial(int(a[1]), int(b[1])),
            self.axial(int(a[2]), int(b[2])),
        )


_overlap_cache: dict[tuple[int, int], ModeOverlaps] = {}


def mode_overlaps(trap: TrapConfig) -> ModeOverlaps:
    key = (trap.n_r_bands, trap.n_z_bands)
    if key not in _overlap_cache:
        _overlap_cache[key] = ModeOverlaps(trap)
    return _overlap_cache[key]


def prefactors(trap: TrapConfig, constants: PhysicalConstants) -> tuple[float, float, float]:
    """(s-wave, radial p-wave, axial p-wave) prefactors in rad/s per m or per m**3."""
    R_r = trap.inverse_length_r(constants)
    R_z = trap.inverse_length_z(constants)
    hbar_m = constants.hbar / constants.atom_mass
    return (
        4.0 * math.pi * hbar_m * R_r**2 * R_z,
        6.0 * math.pi * hbar_m * R_r**4 * R_z,
        6.0 * math.pi * hbar_m * R_r**2 * R_z**3,
    )


def mode_products(a, b, overlaps: ModeOverlaps) -> tuple[float, float, float]:
    """Products (S, P^R, P^Z) of 1D overlaps for a pair of modes."""
    (sx, px), (sy, py), (sz, pz) = overlaps.axis_values(a, b)
    return sx * sy * sz, (px * sy + sx * py) * sz, sx * sy * pz


def pair_couplings(a, b, trap: TrapConfig, constants: PhysicalConstants, overlaps: ModeOverlaps | None = None):
    """s-wave and p-wave interaction strengths (G_S in rad/s/m, G_P in rad/s/m**3)."""
    overlaps = overlaps or mode_overlaps(trap)
    S, PR, PZ = mode_products(a, b, overlaps)
    cs, cr, cz = prefactors(trap, constants)
    return cs * S, cr * PR + cz * PZ


@dataclass(frozen=True)
class CouplingTables:
    """Pair couplings (rad/s) and Rabi frequencies (Hz) for one ensemble."""

    J: np.ndarray
    C: np.ndarray
    X: np.ndarray
    G_S: np.ndarray
    G_P: np.ndarray
    rabi: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.rabi.size

    @property
    def longitudinal_fields(self) -> np.ndarray:
        """h_i = sum_j C_ij, the effective field of the C-term on atom i."""
        return self.C.sum(axis=1)

    @classmethod
    def from_geometry(cls, G_S, G_P, rabi, scattering) -> "CouplingTables":
        """Combine geometric tables with SI scattering parameters (a_eg-, b_gg, b_ee, b_eg in m)."""
        a_eg, b_gg, b_ee, b_eg = scattering
        G_S = np.asarray(G_S, dtype=float)
        G_P = np.asarray(G_P, dtype=float)
        J = a_eg * G_S + b_eg**3 * G_P
        C = (b_ee**3 - b_gg**3) * G_P
        X = (b_ee**3 - 2.0 * b_eg**3 + b_gg**3) * G_P
        return cls(J=J, C=C, X=X, G_S=G_S, G_P=G_P, rabi=np.asarray(rabi, dtype=float))

    @classmethod
    def uniform(cls, n_atoms: int, rabi=1.0, J=0.0, C=0.0, X=0.0) -> "CouplingTables":
        """Homogeneous tables, mostly for tests and collective cross-checks."""
        off = 1.0 - np.eye(n_atoms)
        zeros = np.zeros((n_atoms, n_atoms))
        return cls(J=J * off, C=C * off, X=X * off, G_S=zeros, G_P=zeros,
                   rabi=np.full(n_atoms, float(rabi)))


def scattering_si(cfg: Config) -> tuple[float, float, float, float]:
    a_B = cfg.constants.bohr_radius
    at = cfg.atoms
    return at.a_eg_minus * a_B, at.b_gg * a_B, at.b_ee * a_B, at.b_eg * a_B


def geometry_tables(modes, trap: TrapConfig, constants: PhysicalConstants):
    """G_S and G_P tables (zero diagonal) for an ``(N, 3)`` array of distinct modes."""
    modes = np.asarray(modes)
    n = len(modes)
    overlaps = mode_overlaps(trap)
    cs, cr, cz = prefactors(trap, constants)
    G_S = np.zeros((n, n))
    G_P = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            S, PR, PZ = mode_products(modes[i], modes[j], overlaps)
            G_S[i, j] = G_S[j, i] = cs * S
            G_P[i, j] = G_P[j, i] = cr * PR + cz * PZ
    return G_S, G_P


def build_coupling_tables(modes, cfg: Config, bare_rabi_hz: float | None = None) -> CouplingTables:
    """Coupling tables for an ensemble given as an ``(N, 3)`` mode array (or SampleEnsemble)."""
    modes = getattr(modes, "modes", modes)
    G_S, G_P = geometry_tables(modes, cfg.trap, cfg.constants)
    omega0 = cfg.protocol.bare_rabi_hz if bare_rabi_hz is None else bare_rabi_hz
    rabi = rabi_frequency(np.asarray(modes), omega0, cfg.trap, cfg.constants)
    return CouplingTables.from_geometry(G_S, G_P, np.atleast_1d(rabi), scattering_si(cfg))


def dump_rows(modes, cfg: Config):
    """Rows for the couplings debug dump: one per unordered pair."""
    modes = np.asarray(modes)
    tables = build_coupling_tables(modes, cfg)
    rows = []
    n = len(modes)
    for i in range(n):
        for j in range(i + 1, n):
            row = {
                "i": i,
                "j": j,
                "mode_i": "%d/%d/%d" % tuple(modes[i]),
                "mode_j": "%d/%d/%d" % tuple(modes[j]),
                "G_S_rad_s_per_m": tables.G_S[i, j],
                "G_P_rad_s_per_m3": tables.G_P[i, j],
            }
            for name in ("J", "C", "X"):
                value = getattr(tables, name)[i, j]
                row[f"{name}_rad_s"] = value
                row[f"{name}_hz"] = value / (2.0 * math.pi)
            rows.append(row)
    return rows, tables
