"""Least-squares fit of the p-wave lengths b_ee and b_eg to measured Ramsey shifts.

The simulated shift is a Monte-Carlo average, so every objective evaluation
reuses one fixed set of sampled ensembles (common random numbers): the
geometric coupling tables and Rabi frequencies are computed once, and only
the scattering parameters change between evaluations. This makes the
objective a deterministic function of (b_ee, b_eg).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .config import Config
from .couplings import CouplingTables, geometry_tables, rabi_frequency, scattering_si
from .evolution import DarkEvolver, ramsey_sequence
from .sampler import draw_ensemble, partition_table
from .spectroscopy import ShiftExtractionError, average_spectra, peak_location, pi_time, t1_fractions_for_excitation
from .spins import spin_sector_basis

DEFAULT_BOUNDS = ((50.0, 300.0), (50.0, 300.0))
MIN_ROWS = 4


class CalibrationError(ValueError):
    pass


def rescale_shift(shift_hz, n_sim: int, n_exp: int):
    """Shift at ``n_exp`` atoms from one simulated at ``n_sim`` (linear in N - 1)."""
    if n_sim < 2 or n_exp < 2:
        raise CalibrationError("atom numbers must be >= 2")
    return shift_hz * (n_exp - 1) / (n_sim - 1)


@dataclass(frozen=True)
class ShiftDataset:
    pe: np.ndarray
    shift_hz: np.ndarray
    sigma_hz: np.ndarray | None
    n_exp: int
    n_sim: int

    def __post_init__(self):
        pe = np.asarray(self.pe, dtype=float)
        shift = np.asarray(self.shift_hz, dtype=float)
        object.__setattr__(self, "pe", pe)
        object.__setattr__(self, "shift_hz", shift)
        if self.sigma_hz is not None:
            sigma = np.asarray(self.sigma_hz, dtype=float)
            if sigma.shape != pe.shape or np.any(sigma <= 0):
                raise CalibrationError("sigma_hz must be positive, one per row")
            object.__setattr__(self, "sigma_hz", sigma)
        if pe.ndim != 1 or pe.size < MIN_ROWS or shift.shape != pe.shape:
            raise CalibrationError(f"need at least {MIN_ROWS} rows of (pe, shift_hz)")
        if np.any((pe <= 0) | (pe >= 1)):
            raise CalibrationError("excitation fractions must lie strictly within (0, 1)")
        if self.n_sim < 2 or self.n_exp < self.n_sim:
            raise CalibrationError("need 2 <= n_sim <= n_exp")

    @property
    def weights(self) -> np.ndarray:
        if self.sigma_hz is None:
            return np.ones_like(self.pe)
        return 1.0 / self.sigma_hz**2

    @classmethod
    def from_csv(cls, path, n_exp: int, n_sim: int) -> "ShiftDataset":
        """Read ``pe, shift_hz[, sigma_hz]`` columns (header required)."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or not {"pe", "shift_hz"} <= set(rows[0]):
            raise CalibrationError(f"{path}: expected columns pe, shift_hz[, sigma_hz]")
        pe = [float(r["pe"]) for r in rows]
        shift = [float(r["shift_hz"]) for r in rows]
        sigma = [float(r["sigma_hz"]) for r in rows] if "sigma_hz" in rows[0] else None
        return cls(np.array(pe), np.array(shift), None if sigma is None else np.array(sigma), n_exp, n_sim)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pe", "shift_hz"] + (["sigma_hz"] if self.sigma_hz is not None else []))
            for k in range(self.pe.size):
                row = [repr(float(self.pe[k])), repr(float(self.shift_hz[k]))]
                if self.sigma_hz is not None:
                    row.append(repr(float(self.sigma_hz[k])))
                w.writerow(row)


@dataclass(frozen=True)
class FitResult:
    b_ee: float
    b_eg: float
    rss: float
    n_iter: int
    converged: bool
    residuals: np.ndarray
    degenerate: bool = False
    n_evaluations: int = 0


@dataclass(frozen=True)
class GeometrySample:
    G_S: np.ndarray
    G_P: np.ndarray
    rabi: np.ndarray


@dataclass
class ShiftModel:
    """Simulated Ramsey shift versus first-pulse excitation on a frozen sample set."""

    cfg: Config
    pe_targets: np.ndarray
    samples: list = field(default_factory=list)
    t1_fractions: np.ndarray | None = None

    @classmethod
    def build(cls, cfg: Config, pe_targets, n_samples: int | None = None) -> "ShiftModel":
        n_samples = n_samples or cfg.mc.max_samples
        cfg = cfg.replace(protocol={"kind": "ramsey"})
        table = partition_table(cfg.trap, cfg.atoms, cfg.constants)
        samples = []
        for idx in range(n_samples):
            modes = draw_ensemble(table, cfg.atoms.n_atoms, cfg.mc.master_seed, idx).modes
            G_S, G_P = geometry_tables(modes, cfg.trap, cfg.constants)
            rabi = np.atleast_1d(rabi_frequency(modes, cfg.protocol.bare_rabi_hz, cfg.trap, cfg.constants))
            samples.append(GeometrySample(G_S, G_P, rabi))
        pe_targets = np.asarray(pe_targets, dtype=float)
        fractions = t1_fractions_for_excitation(cfg, pe_targets, table=table, n_samples=n_samples)
        return cls(cfg, pe_targets, samples, fractions)

    def scattering(self, b_ee: float, b_eg: float):
        a_B = self.cfg.constants.bohr_radius
        a_eg, b_gg, _, _ = scattering_si(self.cfg)
        return a_eg, b_gg, b_ee * a_B, b_eg * a_B

    def spectra(self, b_ee: float, b_eg: float) -> np.ndarray:
        """Per-sample spectra, shape ``(n_samples, n_targets, n_delta)``."""
        p = self.cfg.protocol
        d = p.detunings
        m = p.spin_truncation
        sectors = spin_sector_basis(self.cfg.atoms.n_atoms, m) if m is not None else None
        scat = self.scattering(b_ee, b_eg)
        out = []
        for s in self.samples:
            tables = CouplingTables.from_geometry(s.G_S, s.G_P, s.rabi, scat)
            t_pi = pi_time(float(np.mean(s.rabi)))
            evolver = DarkEvolver(tables, sectors)
            pe, _ = ramsey_sequence(tables, d, self.t1_fractions * t_pi, 0.5 * t_pi, p.dark_time_s,
                                    evolver=evolver, pulse_detuning=p.pulse_detuning)
            out.append(pe)
        return np.array(out)

    def shifts(self, b_ee: float, b_eg: float) -> np.ndarray:
        """Simulated shifts (Hz, at the simulated atom number) for every target."""
        mean, _ = average_spectra(self.spectra(b_ee, b_eg))
        d = self.cfg.protocol.detunings
        return np.array([peak_location(d, row)[0] for row in mean])


class Calibrator:
    """Weighted least squares over (b_ee, b_eg) with a bounded simplex search."""

    def __init__(self, data: ShiftDataset, model: ShiftModel, bounds=DEFAULT_BOUNDS):
        if data.n_sim != model.cfg.atoms.n_atoms:
            raise CalibrationError("dataset n_sim does not match the simulated atom number")
        if not np.allclose(data.pe, model.pe_targets):
            raise CalibrationError("model targets differ from the dataset excitation fractions")
        self.data = data
        self.model = model
        self.bounds = tuple(tuple(map(float, b)) for b in bounds)
        self.n_evaluations = 0
        self._memo: dict[tuple[float, float], float] = {}

    def predicted(self, params) -> np.ndarray:
        b_ee, b_eg = map(float, params)
        return rescale_shift(self.model.shifts(b_ee, b_eg), self.data.n_sim, self.data.n_exp)

    def residuals(self, params) -> np.ndarray:
        return self.predicted(params) - self.data.shift_hz

    def objective(self, params) -> float:
        key = tuple(float(x) for x in params)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        self.n_evaluations += 1
        try:
            r = self.residuals(key)
            value = math.fsum(self.data.weights * r * r)
        except ShiftExtractionError:
            value = math.inf
        self._memo[key] = value
        return value

    def _initial_simplex(self, x0, scale: float) -> np.ndarray:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        simplex = [np.asarray(x0, dtype=float)]
        for k in range(2):
            v = simplex[0].copy()
            step = scale * (hi[k] - lo[k])
            v[k] += step if v[k] + step <= hi[k] else -step
            simplex.append(v)
        return np.array(simplex)

    def fit(self, initial=(150.0, 190.0), max_iter: int = 200, restarts: int = 2,
            xatol: float = 1e-2, fatol: float = 1e-6) -> FitResult:
        x0 = np.clip(np.asarray(initial, dtype=float), [b[0] for b in self.bounds], [b[1] for b in self.bounds])
        simplex = self._initial_simplex(x0, 0.05)
        values = [self.objective(v) for v in simplex]
        spread = max(values) - min(values)
        if math.isfinite(spread) and spread <= 1e-12 * (1.0 + abs(min(values))):
            r = self.residuals(x0)
            return FitResult(float(x0[0]), float(x0[1]), float(values[0]), 0, False, r,
                             degenerate=True, n_evaluations=self.n_evaluations)
        best = None
        n_iter = 0
        converged = False
        for attempt in range(restarts + 1):
            res = minimize(
                self.objective, simplex[0], method="Nelder-Mead", bounds=self.bounds,
                options={"initial_simplex": simplex, "maxiter": max_iter, "xatol": xatol, "fatol": fatol},
            )
            n_iter += int(res.nit)
            improved = best is None or res.fun < best.fun
            if improved:
                best = res
            converged = bool(res.success)
            if attempt and not improved:
                break
            # restart from the best point with a smaller fresh simplex
            simplex = self._initial_simplex(best.x, 0.01 / (attempt + 1))
        r = self.residuals(best.x)
        rss = math.fsum(self.data.weights * r * r)
        return FitResult(float(best.x[0]), float(best.x[1]), rss, n_iter, converged, r,
                         n_evaluations=self.n_evaluations)


def fit_scattering_lengths(data: ShiftDataset, cfg: Config, initial=(150.0, 190.0),
                           bounds=DEFAULT_BOUNDS, n_samples: int | None = None, **kw) -> FitResult:
    """Fit (b_ee, b_eg) in Bohr radii; truncation defaults to two spin sectors."""
    if cfg.protocol.spin_truncation is None and cfg.atoms.n_atoms > 2:
        cfg = cfg.replace(protocol={"spin_truncation": 1})
    cfg = cfg.replace(atoms={"n_atoms": data.n_sim})
    model = ShiftModel.build(cfg, data.pe, n_samples)
    return Calibrator(data, model, bounds).fit(initial, **kw)


def synthetic_dataset(cfg: Config, pe_targets, b_ee: float, b_eg: float, noise: float = 0.01,
                      seed: int = 0, n_samples: int | None = None, n_exp: int | None = None) -> ShiftDataset:
    """Shifts generated by the simulator itself with Gaussian noise.

    The noise standard deviation is ``noise`` times the RMS shift, the same
    for every row.
    """
    model = ShiftModel.build(cfg, pe_targets, n_samples)
    shifts = model.shifts(b_ee, b_eg)
    n_sim = cfg.atoms.n_atoms
    n_exp = n_exp or n_sim
    shifts = rescale_shift(shifts, n_sim, n_exp)
    sigma = noise * math.sqrt(float(np.mean(shifts**2)))
    rng = np.random.Generator(np.random.PCG64(seed))
    noisy = shifts + sigma * rng.standard_normal(shifts.size) if sigma > 0 else shifts
    return ShiftDataset(np.asarray(pe_targets, dtype=float), noisy,
                        np.full(shifts.size, sigma) if sigma > 0 else None, n_exp, n_sim)


def write_fit(result: FitResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["b_ee_bohr", "b_eg_bohr", "rss", "n_iter", "converged", "degenerate"])
        w.writerow([repr(result.b_ee), repr(result.b_eg), repr(result.rss), result.n_iter,
                    int(result.converged), int(result.degenerate)])


def summary(result: FitResult) -> str:
    state = "degenerate objective" if result.degenerate else ("converged" if result.converged else "NOT converged")
    return (f"b_ee = {result.b_ee:.3f} a_B, b_eg = {result.b_eg:.3f} a_B\n"
            f"rss = {result.rss:.6g} over {result.residuals.size} points, "
            f"{result.n_iter} iterations, {result.n_evaluations} evaluations ({state})")
