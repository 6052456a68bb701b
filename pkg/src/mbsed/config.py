"""Constants, unit conventions and the run configuration.

Configuration files are flat ``section.key = value`` text. Frequencies in the
file are in Hz, temperatures in microkelvin, scattering lengths in Bohr radii
and the trap depth in units of the longitudinal quantum hbar*omega_z. SI
values are derived on access through properties, never stored twice.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.constants as sc

# full-space exact diagonalization ceiling (2**14 dense)
N_MAX_FULL = 14
# hard ceiling when a spin truncation with m <= 2 is requested
N_MAX_TRUNCATED = 16

SEED_ENV_VAR = "MBSED_SEED"

PROTOCOLS = ("ramsey", "rabi", "collective-ramsey", "collective-rabi", "analytic-ramsey")


class ConfigError(ValueError):
    """Raised for malformed or physically invalid configurations."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = sc.hbar
    k_B: float = sc.k
    atom_mass: float = 1.4431e-25  # 87Sr, kg
    bohr_radius: float = sc.physical_constants["Bohr radius"][0]
    clock_wavelength: float = 698.4e-9  # m

    @property
    def wavenumber(self) -> float:
        """Probe wavenumber k = 2 pi / lambda in 1/m."""
        return 2.0 * math.pi / self.clock_wavelength

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"constants.{f.name} must be finite and > 0, got {v!r}")


@dataclass(frozen=True)
class TrapConfig:
    nu_z: float  # Hz
    nu_r: float  # Hz
    depth: float  # in units of hbar*omega_z
    misalignment: float = 0.0  # rad

    @property
    def omega_z(self) -> float:
        return 2.0 * math.pi * self.nu_z

    @property
    def omega_r(self) -> float:
        return 2.0 * math.pi * self.nu_r

    @property
    def n_z_bands(self) -> int:
        return math.floor(self.depth)

    @property
    def n_r_bands(self) -> int:
        return math.floor(self.depth * self.nu_z / self.nu_r)

    def depth_energy(self, constants: PhysicalConstants) -> float:
        """Trap depth U_r in joules."""
        return self.depth * constants.hbar * self.omega_z

    def inverse_length_z(self, constants: PhysicalConstants) -> float:
        """R_z = sqrt(m omega_z / hbar) in 1/m."""
        return math.sqrt(constants.atom_mass * self.omega_z / constants.hbar)

    def inverse_length_r(self, constants: PhysicalConstants) -> float:
        return math.sqrt(constants.atom_mass * self.omega_r / constants.hbar)

    def validate(self) -> None:
        if not (self.nu_r > 0 and self.nu_z > self.nu_r):
            raise ConfigError(f"trap frequencies need nu_z > nu_r > 0 (got nu_z={self.nu_z}, nu_r={self.nu_r})")
        if not self.depth > 1:
            raise ConfigError(f"trap depth must exceed hbar*omega_z (got {self.depth})")
        if self.n_z_bands < 1 or self.n_r_bands < 1:
            raise ConfigError("trap depth admits no bound band")
        if not math.isfinite(self.misalignment):
            raise ConfigError("misalignment must be finite")


@dataclass(frozen=True)
class AtomConfig:
    n_atoms: int
    T_z_uK: float
    T_r_uK: float
    a_eg_minus: float  # Bohr radii
    b_gg: float
    b_ee: float
    b_eg: float

    @property
    def T_z(self) -> float:
        return self.T_z_uK * 1e-6

    @property
    def T_r(self) -> float:
        return self.T_r_uK * 1e-6

    def validate(self, spin_truncation: int | None) -> None:
        if self.n_atoms < 2:
            raise ConfigError(f"n_atoms >= 2 required (got {self.n_atoms})")
        if spin_truncation is None and self.n_atoms > N_MAX_FULL:
            raise ConfigError(
                f"n_atoms <= {N_MAX_FULL} in the full spin space (got {self.n_atoms}); "
                "use protocol.spin_truncation <= 2 for larger N"
            )
        if spin_truncation is not None:
            limit = N_MAX_TRUNCATED if spin_truncation <= 2 else N_MAX_FULL
            if self.n_atoms > limit:
                raise ConfigError(f"n_atoms <= {limit} with spin_truncation={spin_truncation}")
        if not (self.T_z_uK > 0 and self.T_r_uK > 0):
            raise ConfigError("temperatures must be > 0")
        for name in ("a_eg_minus", "b_gg", "b_ee", "b_eg"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"atoms.{name} must be finite")


@dataclass(frozen=True)
class ProtocolConfig:
    kind: str = "ramsey"
    bare_rabi_hz: float = 500.0
    # pulse lengths are fractions of each sample's pi-pulse time 1/(2*mean_rabi)
    t1_fractions: tuple[float, ...] = (0.5,)
    # when non-empty, t1 is solved per target first-pulse excitation instead
    pe_targets: tuple[float, ...] = ()
    dark_time_s: float = 0.12
    pulse_fractions: tuple[float, ...] = (1.0,)
    pulse_time_s: float | None = None
    detuning_min_hz: float = -1.0
    detuning_max_hz: float = 1.0
    detuning_points: int = 101
    spin_truncation: int | None = None
    pulse_detuning: bool = True

    @property
    def detunings(self) -> np.ndarray:
        return np.linspace(self.detuning_min_hz, self.detuning_max_hz, self.detuning_points)

    def validate(self, n_atoms: int) -> None:
        if self.kind not in PROTOCOLS:
            raise ConfigError(f"protocol.kind must be one of {', '.join(PROTOCOLS)} (got {self.kind!r})")
        if not self.bare_rabi_hz > 0:
            raise ConfigError("bare_rabi_hz must be > 0")
        if self.detuning_points < 3 or not self.detuning_max_hz > self.detuning_min_hz:
            raise ConfigError("detuning grid must be strictly increasing with at least 3 points")
        if not self.dark_time_s >= 0:
            raise ConfigError("dark_time_s must be >= 0")
        if not self.t1_fractions or any(not (0 < f <= 2) for f in self.t1_fractions):
            raise ConfigError("t1_fractions must be non-empty and within (0, 2]")
        if any(not (0 < p < 1) for p in self.pe_targets):
            raise ConfigError("pe_targets must lie strictly within (0, 1)")
        if not self.pulse_fractions or any(not (0 < f <= 1) for f in self.pulse_fractions):
            raise ConfigError("pulse_fractions must be non-empty and within (0, 1]")
        if self.pulse_time_s is not None and not self.pulse_time_s > 0:
            raise ConfigError("pulse_time_s must be > 0")
        m = self.spin_truncation
        if m is not None and not (0 <= m <= n_atoms // 2):
            raise ConfigError(f"spin_truncation must satisfy 0 <= m <= N//2 = {n_atoms // 2} (got {m})")


@dataclass(frozen=True)
class MonteCarloConfig:
    max_samples: int = 500
    min_samples: int = 50
    target_stderr_hz: float = 1e-3
    master_seed: int = 20240101
    batch_size: int = 50
    bootstrap_resamples: int = 200

    def validate(self) -> None:
        if self.min_samples < 1 or self.max_samples < self.min_samples:
            raise ConfigError("need 1 <= min_samples <= max_samples")
        if not self.target_stderr_hz > 0:
            raise ConfigError("target_stderr_hz must be > 0")
        if self.batch_size < 1 or self.bootstrap_resamples < 2:
            raise ConfigError("batch_size >= 1 and bootstrap_resamples >= 2 required")


@dataclass(frozen=True)
class Config:
    trap: TrapConfig
    atoms: AtomConfig
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    mc: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    def validate(self) -> "Config":
        self.constants.validate()
        self.trap.validate()
        self.atoms.validate(self.protocol.spin_truncation)
        self.protocol.validate(self.atoms.n_atoms)
        self.mc.validate()
        return self

    def replace(self, **sections) -> "Config":
        """Return a validated copy; keyword values are dicts of field overrides per section."""
        parts = {}
        for name, overrides in sections.items():
            parts[name] = dataclasses.replace(getattr(self, name), **overrides)
        return dataclasses.replace(self, **parts).validate()

    # derived quantities
    @property
    def R_z(self) -> float:
        return self.trap.inverse_length_z(self.constants)

    @property
    def R_r(self) -> float:
        return self.trap.inverse_length_r(self.constants)

    @property
    def wavenumber(self) -> float:
        return self.constants.wavenumber

    def hbar_omega_z_over_kB_uK(self) -> float:
        return self.constants.hbar * self.trap.omega_z / self.constants.k_B * 1e6


# (file key, section, field, kind) ; kind drives parsing and formatting
_SCHEMA = [
    ("constants.hbar_Js", "constants", "hbar", "float"),
    ("constants.k_B_JK", "constants", "k_B", "float"),
    ("constants.atom_mass_kg", "constants", "atom_mass", "float"),
    ("constants.bohr_radius_m", "constants", "bohr_radius", "float"),
    ("constants.clock_wavelength_m", "constants", "clock_wavelength", "float"),
    ("trap.nu_z_hz", "trap", "nu_z", "float"),
    ("trap.nu_r_hz", "trap", "nu_r", "float"),
    ("trap.depth_hbar_omega_z", "trap", "depth", "float"),
    ("trap.misalignment_rad", "trap", "misalignment", "float"),
    ("atoms.n_atoms", "atoms", "n_atoms", "int"),
    ("atoms.T_z_uK", "atoms", "T_z_uK", "float"),
    ("atoms.T_r_uK", "atoms", "T_r_uK", "float"),
    ("atoms.a_eg_minus_bohr", "atoms", "a_eg_minus", "float"),
    ("atoms.b_gg_bohr", "atoms", "b_gg", "float"),
    ("atoms.b_ee_bohr", "atoms", "b_ee", "float"),
    ("atoms.b_eg_bohr", "atoms", "b_eg", "float"),
    ("protocol.kind", "protocol", "kind", "str"),
    ("protocol.bare_rabi_hz", "protocol", "bare_rabi_hz", "float"),
    ("protocol.t1_fractions", "protocol", "t1_fractions", "floats"),
    ("protocol.pe_targets", "protocol", "pe_targets", "floats"),
    ("protocol.dark_time_s", "protocol", "dark_time_s", "float"),
    ("protocol.pulse_fractions", "protocol", "pulse_fractions", "floats"),
    ("protocol.pulse_time_s", "protocol", "pulse_time_s", "optfloat"),
    ("protocol.detuning_min_hz", "protocol", "detuning_min_hz", "float"),
    ("protocol.detuning_max_hz", "protocol", "detuning_max_hz", "float"),
    ("protocol.detuning_points", "protocol", "detuning_points", "int"),
    ("protocol.spin_truncation", "protocol", "spin_truncation", "truncation"),
    ("protocol.pulse_detuning", "protocol", "pulse_detuning", "bool"),
    ("mc.max_samples", "mc", "max_samples", "int"),
    ("mc.min_samples", "mc", "min_samples", "int"),
    ("mc.target_stderr_hz", "mc", "target_stderr_hz", "float"),
    ("mc.master_seed", "mc", "master_seed", "int"),
    ("mc.batch_size", "mc", "batch_size", "int"),
    ("mc.bootstrap_resamples", "mc", "bootstrap_resamples", "int"),
]
_KEYS = {row[0]: row for row in _SCHEMA}
_REQUIRED = {
    "trap.nu_z_hz", "trap.nu_r_hz", "trap.depth_hbar_omega_z",
    "atoms.n_atoms", "atoms.T_z_uK", "atoms.T_r_uK",
    "atoms.a_eg_minus_bohr", "atoms.b_gg_bohr", "atoms.b_ee_bohr", "atoms.b_eg_bohr",
}
_SECTIONS = {
    "constants": PhysicalConstants,
    "trap": TrapConfig,
    "atoms": AtomConfig,
    "protocol": ProtocolConfig,
    "mc": MonteCarloConfig,
}


def _parse_value(kind: str, raw: str):
    if kind == "float":
        return float(raw)
    if kind == "int":
        value = float(raw)
        if value != int(value):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(value)
    if kind == "str":
        return raw.strip().lower()
    if kind == "floats":
        if raw.strip().lower() in ("", "none"):
            return ()
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if kind == "optfloat":
        return None if raw.strip().lower() in ("", "none") else float(raw)
    if kind == "truncation":
        return None if raw.strip().lower() in ("full", "none") else int(raw)
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    raise AssertionError(kind)


def _format_value(kind: str, value) -> str:
    if kind in ("float", "optfloat"):
        return "none" if value is None else repr(float(value))
    if kind == "int":
        return str(int(value))
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value) if value else "none"
    if kind == "truncation":
        return "full" if value is None else str(value)
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


def parse_config(text: str, *, env: dict | None = None) -> Config:
    """Parse configuration text; ``env`` (default ``os.environ``) may override the seed."""
    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        _, section, fname, kind = _KEYS[key]
        try:
            values[section][fname] = _parse_value(kind, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from None
    missing = sorted(_REQUIRED - set(seen))
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    env = os.environ if env is None else env
    if env.get(SEED_ENV_VAR):
        try:
            values["mc"]["master_seed"] = int(env[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from None

    sections = {name: cls(**values[name]) for name, cls in _SECTIONS.items()}
    return Config(**sections).validate()


def load_config(path: str | os.PathLike, *, env: dict | None = None) -> Config:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return parse_config(text, env=env)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_config(cfg: Config) -> str:
    lines = []
    current = None
    for key, section, fname, kind in _SCHEMA:
        if section != current:
            if current is not None:
                lines.append("")
            current = section
        lines.append(f"{key} = {_format_value(kind, getattr(getattr(cfg, section), fname))}")
    return "\n".join(lines) + "\n"
