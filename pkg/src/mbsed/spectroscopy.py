"""Monte-Carlo orchestration of Ramsey and Rabi spectroscopy and density-shift extraction.

Every sample draws an ensemble, builds its couplings and produces one
excitation spectrum per pulse setting. Spectra are averaged over samples
first and the shift is the refined peak of the average; its error bar is a
nonparametric bootstrap over samples.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .config import Config
from .couplings import CouplingTables, build_coupling_tables
from .evolution import DarkEvolver, RabiPropagator, collective_rabi, collective_ramsey, ramsey_sequence
from .sampler import PartitionTable, draw_ensemble, partition_table
from .spins import CollectiveParameters, collective_parameters, spin_sector_basis

# adaptive stopping needs enough samples for a meaningful bootstrap
MIN_ADAPTIVE_SAMPLES = 30
# default t1 scan range (fractions of the pi-pulse time); a full pi pulse has no fringe contrast
T1_SCAN_RANGE = (0.1, 0.9)


class ShiftExtractionError(ValueError):
    pass


class GridResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Spectrum:
    detunings: np.ndarray  # Hz
    pe: np.ndarray
    stderr: np.ndarray
    n_samples: int

    def __post_init__(self):
        if self.pe.shape != self.detunings.shape or self.stderr.shape != self.detunings.shape:
            raise ValueError("spectrum arrays must share the detuning grid shape")


@dataclass(frozen=True)
class ShiftResult:
    shift_hz: float
    stderr_hz: float
    pe_op: float
    n_samples: int
    protocol: str
    time_s: float = math.nan  # t1 (Ramsey) or pulse time t (Rabi); per-sample mean
    tau_s: float = math.nan
    converged: bool = True
    n_atoms: int = 0
    T_z_uK: float = math.nan
    T_r_uK: float = math.nan


def _parabola_vertex(x, y):
    """Vertex (x, y) of the parabola through three points."""
    (x0, x1, x2), (y0, y1, y2) = x, y
    d01, d12 = (y1 - y0) / (x1 - x0), (y2 - y1) / (x2 - x1)
    a = (d12 - d01) / (x2 - x0)
    if a >= 0:
        # flat or convex triple: fall back to the grid point
        return x1, y1
    # Newton form y0 + d01 (x - x0) + a (x - x0)(x - x1)
    xv = 0.5 * (x0 + x1) - d01 / (2 * a)
    yv = y0 + d01 * (xv - x0) + a * (xv - x0) * (xv - x1)
    return xv, yv


def peak_location(detunings, pe) -> tuple[float, float]:
    """Refined (detuning, P_e) of the maximum of a sampled line."""
    pe = np.asarray(pe, dtype=float)
    k = int(np.argmax(pe))
    if k == 0 or k == pe.size - 1:
        raise ShiftExtractionError("spectrum maximum on the grid boundary; widen the detuning window")
    sl = slice(k - 1, k + 2)
    xv, yv = _parabola_vertex(np.asarray(detunings, dtype=float)[sl], pe[sl])
    return float(xv), float(yv)


def extract_shift(spec: Spectrum, protocol: str = "", warn_resolution: bool = True) -> ShiftResult:
    """Peak detuning of an averaged spectrum.

    The standard error propagates each of the three fitted points separately
    by refitting with that point moved by one standard error.
    """
    shift, pe_peak = peak_location(spec.detunings, spec.pe)
    k = int(np.argmax(spec.pe))
    var = 0.0
    for j in (k - 1, k, k + 1):
        if spec.stderr[j] == 0:
            continue
        bumped = spec.pe.copy()
        bumped[j] += spec.stderr[j]
        moved, _ = _parabola_vertex(spec.detunings[k - 1:k + 2], bumped[k - 1:k + 2])
        var += (moved - shift) ** 2
    stderr = math.sqrt(var)
    step = float(np.max(np.diff(spec.detunings)))
    # only a shift resolved above its error (and above round-off) can be under-resolved
    resolved = abs(shift) > max(2 * stderr, 1e-9 * step)
    if warn_resolution and resolved and step > abs(shift) / 10:
        warnings.warn(
            f"detuning step {step:.3g} Hz exceeds a tenth of the shift {shift:.3g} Hz",
            GridResolutionWarning, stacklevel=2,
        )
    return ShiftResult(shift_hz=shift, stderr_hz=stderr, pe_op=pe_peak,
                       n_samples=spec.n_samples, protocol=protocol)


def analytic_ramsey_shift(rabi_hz: float, X: float, C: float, n_atoms: int, t1: float, tau: float) -> float:
    """Collective Ramsey shift in Hz from the exact phase ``l``.

    ``l*tau = arg(cos(X tau) + i cos(theta) sin(X tau))`` with
    ``theta = 2 pi rabi t1``; the argument picks the branch continuously
    connected to ``X tau = 0``.
    """
    cos_t = math.cos(2.0 * math.pi * rabi_hz * t1)
    if tau == 0:
        ell = X * cos_t
    else:
        ell = math.atan2(cos_t * math.sin(X * tau), math.cos(X * tau)) / tau
    return (n_atoms - 1) * (ell - C) / (2.0 * math.pi)


def analytic_ramsey_fringe(params: CollectiveParameters, detunings, t1: float, t2: float, tau: float) -> np.ndarray:
    """Collective Ramsey P_e(delta) for pulses without detuning."""
    n = params.n_atoms
    theta = 2.0 * math.pi * params.rabi * t1
    theta2 = 2.0 * math.pi * params.rabi * t2
    xt = params.X * tau
    ell_tau = math.atan2(math.cos(theta) * math.sin(xt), math.cos(xt))
    contrast = math.hypot(math.cos(xt), math.cos(theta) * math.sin(xt)) ** (n - 1)
    phi = 2.0 * math.pi * np.asarray(detunings, dtype=float) * tau + (n - 1) * (params.C * tau - ell_tau)
    return (0.5 - 0.5 * math.cos(theta) * math.cos(theta2)
            + 0.5 * math.sin(theta) * math.sin(theta2) * contrast * np.cos(phi))


# --- per-sample kernels -------------------------------------------------------------------

@dataclass(frozen=True)
class SampleOutput:
    spectra: np.ndarray  # (n_settings, n_delta)
    pe_first: np.ndarray  # (n_settings,) first-pulse P_e (Ramsey); nan for Rabi
    times: np.ndarray  # (n_settings,) t1 or t in seconds


def pi_time(mean_rabi_hz: float) -> float:
    return 1.0 / (2.0 * mean_rabi_hz)


class Experiment:
    """Shared state of one Monte-Carlo run: config, partition table, pulse settings."""

    def __init__(self, cfg: Config, t1_fractions=None):
        self.cfg = cfg
        self.table: PartitionTable = partition_table(cfg.trap, cfg.atoms, cfg.constants)
        self.detunings = cfg.protocol.detunings
        p = cfg.protocol
        m = p.spin_truncation
        self.sectors = spin_sector_basis(cfg.atoms.n_atoms, m) if m is not None else None
        if t1_fractions is not None:
            self.t1_fractions = np.asarray(t1_fractions, dtype=float)
        elif p.pe_targets and self.kind in ("ramsey", "collective-ramsey", "analytic-ramsey"):
            self.t1_fractions = t1_fractions_for_excitation(cfg, p.pe_targets, table=self.table)
        else:
            self.t1_fractions = np.asarray(p.t1_fractions, dtype=float)

    @property
    def kind(self) -> str:
        return self.cfg.protocol.kind

    @property
    def is_ramsey(self) -> bool:
        return self.kind in ("ramsey", "collective-ramsey", "analytic-ramsey")

    @property
    def n_settings(self) -> int:
        return self.t1_fractions.size if self.is_ramsey else len(self.cfg.protocol.pulse_fractions)

    def tables(self, sample_index: int) -> CouplingTables:
        ens = draw_ensemble(self.table, self.cfg.atoms.n_atoms, self.cfg.mc.master_seed, sample_index)
        return build_coupling_tables(ens.modes, self.cfg)

    def rabi_times(self, t_pi: float) -> np.ndarray:
        p = self.cfg.protocol
        if p.pulse_time_s is not None:
            return np.full(len(p.pulse_fractions), p.pulse_time_s)
        return np.asarray(p.pulse_fractions, dtype=float) * t_pi

    def run_sample(self, sample_index: int) -> SampleOutput:
        tables = self.tables(sample_index)
        return self.kernel(tables)

    def kernel(self, tables: CouplingTables) -> SampleOutput:
        p = self.cfg.protocol
        d = self.detunings
        kind = self.kind
        if kind == "ramsey":
            t_pi = pi_time(float(np.mean(tables.rabi)))
            evolver = DarkEvolver(tables, self.sectors)
            times = self.t1_fractions * t_pi
            pe, firsts = ramsey_sequence(tables, d, times, 0.5 * t_pi, p.dark_time_s,
                                         evolver=evolver, pulse_detuning=p.pulse_detuning)
            return SampleOutput(pe, firsts, times)
        if kind == "rabi":
            t_pi = pi_time(float(np.mean(tables.rabi)))
            times = self.rabi_times(t_pi)
            spectra = RabiPropagator(tables, self.sectors).spectrum(d, times)
            return SampleOutput(spectra, np.full(times.size, np.nan), times)
        params = collective_parameters(tables)
        t_pi = pi_time(params.rabi)
        if kind == "collective-rabi":
            times = self.rabi_times(t_pi)
            return SampleOutput(collective_rabi(params, d, times), np.full(times.size, np.nan), times)
        times = self.t1_fractions * t_pi
        if kind == "collective-ramsey":
            pe, firsts = collective_ramsey(params, d, times, 0.5 * t_pi, p.dark_time_s,
                                           pulse_detuning=p.pulse_detuning)
        else:
            pe = np.array([analytic_ramsey_fringe(params, d, t1, 0.5 * t_pi, p.dark_time_s) for t1 in times])
            firsts = np.sin(math.pi * params.rabi * times) ** 2
        return SampleOutput(pe, firsts, times)


def first_pulse_excitation(ratios: np.ndarray, fraction: float) -> float:
    """Mean of sin^2(pi f r / 2) over per-atom ratios r = Omega_i / mean(Omega)."""
    return float(np.mean(np.sin(0.5 * math.pi * fraction * ratios) ** 2))


def t1_fractions_for_excitation(cfg: Config, targets, table: PartitionTable | None = None,
                                n_samples: int | None = None) -> np.ndarray:
    """t1 fractions whose sample-averaged first-pulse excitation hits each target.

    Uses the same ensembles (seeds 0..n_samples-1) that a run will draw.
    Collective protocols rotate every atom by the mean Rabi frequency, so the
    answer there is closed form.
    """
    targets = np.asarray(targets, dtype=float)
    if cfg.protocol.kind != "ramsey":
        return 2.0 / math.pi * np.arcsin(np.sqrt(targets))
    from .couplings import rabi_frequency

    table = table or partition_table(cfg.trap, cfg.atoms, cfg.constants)
    n_samples = n_samples or cfg.mc.max_samples
    ratios = []
    for idx in range(n_samples):
        modes = draw_ensemble(table, cfg.atoms.n_atoms, cfg.mc.master_seed, idx).modes
        rabi = np.atleast_1d(rabi_frequency(modes, cfg.protocol.bare_rabi_hz, cfg.trap, cfg.constants))
        ratios.append(rabi / rabi.mean())
    ratios = np.concatenate(ratios)
    grid = np.linspace(0.0, 2.0, 401)
    values = np.array([first_pulse_excitation(ratios, f) for f in grid])
    top = int(np.argmax(values))
    out = []
    for target in targets:
        if target > values[top]:
            raise ValueError(f"excitation {target} unreachable (max {values[top]:.4f})")
        hi = int(np.argmax(values >= target))
        out.append(brentq(lambda f: first_pulse_excitation(ratios, f) - target,
                          grid[max(hi - 1, 0)], grid[hi], xtol=1e-14))
    return np.array(out)


# --- averaging, bootstrap and convergence ------------------------------------------------

def average_spectra(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Order-independent mean and standard error over axis 0 of ``(n, ...)`` data."""
    n = stack.shape[0]
    flat = stack.reshape(n, -1)
    mean = np.array([math.fsum(col) for col in flat.T]) / n
    if n > 1:
        var = np.array([math.fsum(c) for c in ((flat - mean) ** 2).T]) / (n - 1)
    else:
        var = np.zeros_like(mean)
    shape = stack.shape[1:]
    return mean.reshape(shape), np.sqrt(var / n).reshape(shape)


def bootstrap_shift_stderr(detunings, stack: np.ndarray, n_resamples: int, rng: np.random.Generator) -> float:
    """Bootstrap standard error of the averaged-spectrum peak; ``stack`` is ``(n, n_delta)``."""
    n = stack.shape[0]
    if n < 2:
        return math.inf
    counts = np.stack([np.bincount(rng.integers(0, n, n), minlength=n) for _ in range(n_resamples)])
    means = counts @ stack / n
    peaks = []
    for row in means:
        try:
            peaks.append(peak_location(detunings, row)[0])
        except ShiftExtractionError:
            peaks.append(math.nan)
    peaks = np.array(peaks)
    if np.isnan(peaks).mean() > 0.05:
        return math.inf
    return float(np.nanstd(peaks, ddof=1))


@dataclass
class ConvergenceController:
    """Feeds batches of per-sample spectra and decides when to stop.

    With ``min_samples < max_samples`` the run stops as soon as every
    setting's bootstrap shift error is below the target; otherwise exactly
    ``max_samples`` samples are used.
    """

    detunings: np.ndarray
    min_samples: int
    max_samples: int
    target_stderr: float
    n_resamples: int = 200
    seed: int = 0
    spectra: list = field(default_factory=list)
    stderr: np.ndarray | None = None

    def __post_init__(self):
        if self.min_samples < self.max_samples and self.min_samples < MIN_ADAPTIVE_SAMPLES:
            raise ValueError(f"adaptive stopping needs min_samples >= {MIN_ADAPTIVE_SAMPLES}")

    @property
    def n(self) -> int:
        return len(self.spectra)

    def add(self, spectra) -> None:
        self.spectra.extend(np.asarray(s, dtype=float) for s in spectra)

    def bootstrap(self) -> np.ndarray:
        stack = np.stack(self.spectra)  # (n, K, n_delta)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, self.n, 0xB007])))
        return np.array([
            bootstrap_shift_stderr(self.detunings, stack[:, k], self.n_resamples, rng)
            for k in range(stack.shape[1])
        ])

    def should_stop(self) -> bool:
        if self.n < self.min_samples:
            return False
        self.stderr = self.bootstrap()
        return self.n >= self.max_samples or bool(np.all(self.stderr < self.target_stderr))

    @property
    def converged(self) -> bool:
        return self.stderr is not None and bool(np.all(self.stderr < self.target_stderr))

    def next_batch(self, batch_size: int) -> range:
        stop = min(self.max_samples, max(self.n + batch_size, self.min_samples) if self.n < self.min_samples
                   else self.n + batch_size)
        return range(self.n, stop)


@dataclass(frozen=True)
class RunResult:
    spectra: list  # Spectrum per setting
    shifts: list  # ShiftResult per setting
    outputs: list = field(repr=False)  # SampleOutput per sample

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.shifts)

    @property
    def unresolved(self) -> list:
        """Indices of settings whose averaged spectrum peaked on the grid boundary."""
        return [k for k, s in enumerate(self.shifts) if math.isnan(s.shift_hz)]


def run_protocol(cfg: Config, threads: int = 1, t1_fractions=None,
                 progress: Callable[[int, int], None] | None = None) -> RunResult:
    """Run the configured protocol to convergence (or ``max_samples``)."""
    exp = Experiment(cfg, t1_fractions)
    mc = cfg.mc
    ctl = ConvergenceController(exp.detunings, mc.min_samples, mc.max_samples, mc.target_stderr_hz,
                                mc.bootstrap_resamples, mc.master_seed)
    outputs: list[SampleOutput] = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while True:
            batch = ctl.next_batch(mc.batch_size)
            if pool is None:
                results = [exp.run_sample(i) for i in batch]
            else:
                results = list(pool.map(exp.run_sample, batch))
            outputs.extend(results)
            ctl.add(r.spectra for r in results)
            if progress is not None:
                progress(ctl.n, mc.max_samples)
            if ctl.should_stop():
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return summarize(exp, outputs, ctl.stderr, ctl.converged)


def summarize(exp: Experiment, outputs: list[SampleOutput], boot_stderr, converged: bool) -> RunResult:
    cfg = exp.cfg
    stack = np.stack([o.spectra for o in outputs])
    mean, err = average_spectra(stack)
    firsts, _ = average_spectra(np.stack([o.pe_first for o in outputs]))
    times, _ = average_spectra(np.stack([o.times for o in outputs]))
    spectra, shifts = [], []
    for k in range(stack.shape[1]):
        spec = Spectrum(exp.detunings, mean[k], err[k], len(outputs))
        try:
            base = extract_shift(spec, cfg.protocol.kind, warn_resolution=False)
            ok = converged
        except ShiftExtractionError:
            # one unresolved setting must not sink a whole scan; it is reported as nan
            base = ShiftResult(math.nan, math.nan, math.nan, len(outputs), cfg.protocol.kind)
            ok = False
        pe_op = float(firsts[k]) if exp.is_ramsey else base.pe_op
        stderr = float(boot_stderr[k]) if boot_stderr is not None else base.stderr_hz
        shifts.append(ShiftResult(
            shift_hz=base.shift_hz,
            stderr_hz=stderr if math.isfinite(base.shift_hz) else math.nan,
            pe_op=pe_op,
            n_samples=len(outputs),
            protocol=cfg.protocol.kind,
            time_s=float(times[k]),
            tau_s=cfg.protocol.dark_time_s if exp.is_ramsey else math.nan,
            converged=ok,
            n_atoms=cfg.atoms.n_atoms,
            T_z_uK=cfg.atoms.T_z_uK,
            T_r_uK=cfg.atoms.T_r_uK,
        ))
        spectra.append(spec)
    return RunResult(spectra, shifts, outputs)


def run_ramsey(cfg: Config, **kw) -> RunResult:
    if cfg.protocol.kind != "ramsey":
        cfg = cfg.replace(protocol={"kind": "ramsey"})
    return run_protocol(cfg, **kw)


def run_rabi(cfg: Config, **kw) -> RunResult:
    if cfg.protocol.kind != "rabi":
        cfg = cfg.replace(protocol={"kind": "rabi"})
    return run_protocol(cfg, **kw)


def run_collective(cfg: Config, **kw) -> RunResult:
    kind = cfg.protocol.kind
    if kind not in ("collective-ramsey", "collective-rabi"):
        kind = "collective-rabi" if kind == "rabi" else "collective-ramsey"
        cfg = cfg.replace(protocol={"kind": kind})
    return run_protocol(cfg, **kw)


def t1_scan(n_points: int) -> tuple[float, ...]:
    lo, hi = T1_SCAN_RANGE
    return tuple(float(x) for x in np.linspace(lo, hi, n_points))
