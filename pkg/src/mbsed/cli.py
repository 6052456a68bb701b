"""Command-line front end.

Exit codes: 0 success, 1 invalid input or usage, 2 a result did not reach
the requested precision, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import math
import os
import subprocess
import sys
import traceback
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, svg
from .calibration import CalibrationError, ShiftDataset, fit_scattering_lengths, summary, write_fit
from .config import SEED_ENV_VAR, Config, ConfigError, dump_config, load_config
from .couplings import dump_rows
from .sampler import (
    SamplerError,
    draw_ensemble,
    partition_table,
    rabi_inhomogeneity_map,
    rejection_rate,
    sample_rng,
)
from .spectroscopy import ShiftExtractionError, run_protocol, t1_scan

EXIT_OK, EXIT_INVALID, EXIT_UNCONVERGED, EXIT_INTERNAL = 0, 1, 2, 3
SHIFT_COLUMNS = ["protocol", "N", "T_z_uK", "T_r_uK", "{time}", "tau_s", "shift_hz",
                 "shift_stderr_hz", "pe_op", "n_samples", "converged"]
BUNDLED = ("nstc", "nstc_rabi", "calibration")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value)) if math.isfinite(value) else ("nan" if math.isnan(value) else str(float(value)))
    return str(value)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("mbsed") / "configs" / f"{name}.cfg"))


def resolve_config(spec: str | None, default: str = "nstc") -> Config:
    spec = spec or default
    path = Path(spec)
    if not path.exists() and spec in BUNDLED:
        path = bundled_config_path(spec)
    if not path.exists():
        raise ConfigError(f"config {spec!r} not found (bundled: {', '.join(BUNDLED)})")
    return load_config(path)


def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__} ({out.stdout.strip()})"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out: Path, cfg: Config | None, argv, started, outputs, extra=None) -> Path:
    lines = [
        f"version = {_version()}",
        f"command = mbsed {' '.join(argv)}",
        f"started = {started.isoformat(timespec='seconds')}",
        f"finished = {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}",
        f"outputs = {', '.join(p.name for p in outputs)}",
    ]
    if cfg is not None:
        lines.append(f"master_seed = {cfg.mc.master_seed}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    if cfg is not None:
        lines.append("")
        lines.append("# configuration snapshot")
        lines.extend(dump_config(cfg).splitlines())
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _progress(enabled: bool):
    if not enabled:
        return None

    def report(n, total):
        print(f"\rsamples {n}/{total}", end="", file=sys.stderr, flush=True)
    return report


def _apply_common(cfg: Config, args) -> Config:
    mc = {}
    if getattr(args, "seed", None) is not None:
        mc["master_seed"] = args.seed
    if getattr(args, "samples", None) is not None:
        mc["min_samples"] = mc["max_samples"] = args.samples
    return cfg.replace(mc=mc) if mc else cfg


def _shift_rows(shifts, series: str | None = None):
    for s in shifts:
        row = [s.protocol, s.n_atoms, s.T_z_uK, s.T_r_uK, s.time_s, s.tau_s, s.shift_hz,
               s.stderr_hz, s.pe_op, s.n_samples, bool(s.converged)]
        yield ([series] if series is not None else []) + row


def _shift_header(protocol: str, series: bool = False):
    time_col = "t_s" if protocol in ("rabi", "collective-rabi") else "t1_s"
    cols = [c.format(time=time_col) for c in SHIFT_COLUMNS]
    return (["series"] if series else []) + cols


def write_run(out: Path, result, cfg: Config, make_svg: bool) -> list[Path]:
    paths = []
    spectra = result.spectra
    for k, spec in enumerate(spectra):
        name = "spectrum.csv" if len(spectra) == 1 else f"spectrum_{k:03d}.csv"
        rows = zip(spec.detunings, spec.pe, spec.stderr)
        paths.append(write_csv(out / name, ["delta_hz", "pe_mean", "pe_stderr"], rows))
        if make_svg:
            svg_path = out / name.replace(".csv", ".svg")
            svg.line_plot(svg_path, {"P_e": (spec.detunings, spec.pe)}, "detuning (Hz)", "excitation fraction",
                          errors={"P_e": spec.stderr})
            paths.append(svg_path)
    paths.append(write_csv(out / "shift.csv", _shift_header(cfg.protocol.kind), _shift_rows(result.shifts)))
    if make_svg and len(result.shifts) > 1:
        pe = [s.pe_op for s in result.shifts]
        sh = [s.shift_hz for s in result.shifts]
        path = out / "shift.svg"
        svg.line_plot(path, {cfg.protocol.kind: (pe, sh)}, "excitation fraction", "density shift (Hz)",
                      errors={cfg.protocol.kind: [s.stderr_hz for s in result.shifts]})
        paths.append(path)
    return paths


# --- subcommands ------------------------------------------------------------------------------

def cmd_sample_stats(args, cfg: Config, out: Path):
    table = partition_table(cfg.trap, cfg.atoms, cfg.constants)
    rng = sample_rng(cfg.mc.master_seed, 0)
    rate = rejection_rate(table, cfg.atoms.n_atoms, args.trials, rng)
    marginal = table.marginal_nz()
    rows = [(nz, p) for nz, p in enumerate(marginal)]
    paths = [write_csv(out / "nz_marginal.csv", ["n_z", "probability"], rows)]
    (tz, tr, mean, std, ratio), = rabi_inhomogeneity_map(cfg, cfg.protocol.bare_rabi_hz, cfg.atoms.T_z_uK,
                                                         cfg.atoms.T_r_uK, n_draws=args.trials)
    stats = [
        ("admissible_cells", table.prob.size),
        ("admissible_states", table.n_states),
        ("n_z_bands", cfg.trap.n_z_bands),
        ("n_r_bands", cfg.trap.n_r_bands),
        ("pauli_rejection_rate", rate),
        ("mean_rabi_hz", mean),
        ("std_rabi_hz", std),
        ("rabi_variation", ratio),
        ("hbar_omega_z_over_kB_uK", cfg.hbar_omega_z_over_kB_uK()),
    ]
    paths.append(write_csv(out / "sample_stats.csv", ["quantity", "value"], stats))
    for k, v in stats:
        print(f"{k:26s} {_fmt(v)}")
    return paths, True


def cmd_couplings_dump(args, cfg: Config, out: Path):
    table = partition_table(cfg.trap, cfg.atoms, cfg.constants)
    ens = draw_ensemble(table, cfg.atoms.n_atoms, cfg.mc.master_seed, args.sample_index)
    rows, tables = dump_rows(ens.modes, cfg)
    header = list(rows[0].keys())
    paths = [write_csv(out / "couplings.csv", header, ([r[h] for h in header] for r in rows))]
    atoms = [(i, *map(int, m), tables.rabi[i]) for i, m in enumerate(ens.modes)]
    paths.append(write_csv(out / "atoms.csv", ["i", "n_x", "n_y", "n_z", "rabi_hz"], atoms))
    return paths, True


def _run_and_write(args, cfg: Config, out: Path, t1_fractions=None):
    result = run_protocol(cfg, threads=args.threads, t1_fractions=t1_fractions, progress=_progress(args.progress))
    if args.progress:
        print(file=sys.stderr)
    paths = write_run(out, result, cfg, args.svg)
    if result.unresolved:
        print(f"warning: settings {result.unresolved} peak on the grid boundary; widen the detuning window",
              file=sys.stderr)
    for s in result.shifts:
        print(f"P_e = {s.pe_op:.4f}  shift = {s.shift_hz:+.5f} +- {s.stderr_hz:.5f} Hz"
              f"  ({s.n_samples} samples{'' if s.converged else ', not converged'})")
    return paths, result.converged


def _ramsey_settings(args, cfg: Config):
    proto = {}
    if getattr(args, "t1_scan", None):
        proto["t1_fractions"] = t1_scan(args.t1_scan)
        proto["pe_targets"] = ()
    if getattr(args, "pe_targets", None):
        proto["pe_targets"] = tuple(args.pe_targets)
    if getattr(args, "tau", None) is not None:
        proto["dark_time_s"] = args.tau
    return proto


def cmd_ramsey(args, cfg: Config, out: Path):
    proto = {"kind": "ramsey", **_ramsey_settings(args, cfg)}
    if args.truncation is not None:
        proto["spin_truncation"] = None if args.truncation == "full" else int(args.truncation)
    cfg = cfg.replace(protocol=proto)
    return _run_and_write(args, cfg, out), cfg


def cmd_rabi(args, cfg: Config, out: Path):
    proto = {"kind": "rabi"}
    if args.pulse_fractions:
        proto["pulse_fractions"] = tuple(args.pulse_fractions)
    if args.bare_rabi is not None:
        proto["bare_rabi_hz"] = args.bare_rabi
    if args.truncation is not None:
        proto["spin_truncation"] = None if args.truncation == "full" else int(args.truncation)
    cfg = cfg.replace(protocol=proto)
    return _run_and_write(args, cfg, out), cfg


def cmd_collective(args, cfg: Config, out: Path):
    if args.protocol == "rabi":
        proto = {"kind": "collective-rabi"}
        if args.pulse_fractions:
            proto["pulse_fractions"] = tuple(args.pulse_fractions)
    else:
        proto = {"kind": "collective-ramsey", **_ramsey_settings(args, cfg)}
    cfg = cfg.replace(protocol=proto)
    return _run_and_write(args, cfg, out), cfg


def cmd_analytic(args, cfg: Config, out: Path):
    cfg = cfg.replace(protocol={"kind": "analytic-ramsey", **_ramsey_settings(args, cfg)})
    return _run_and_write(args, cfg, out), cfg


def cmd_fit(args, cfg: Config, out: Path):
    n_sim = args.n_sim or cfg.atoms.n_atoms
    data = ShiftDataset.from_csv(args.data, n_exp=args.n_exp or n_sim, n_sim=n_sim)
    bounds = ((args.bounds[0], args.bounds[1]), (args.bounds[2], args.bounds[3]))
    result = fit_scattering_lengths(data, cfg, initial=tuple(args.initial), bounds=bounds,
                                    max_iter=args.max_iter)
    paths = [out / "fit.csv"]
    write_fit(result, paths[0])
    pred = data.shift_hz + result.residuals
    paths.append(write_csv(out / "fit_points.csv", ["pe", "shift_hz", "fit_shift_hz", "residual_hz"],
                           zip(data.pe, data.shift_hz, pred, result.residuals)))
    if args.svg:
        path = out / "fit.svg"
        svg.line_plot(path, {"data": (data.pe, data.shift_hz), "fit": (data.pe, pred)},
                      "excitation fraction", "density shift (Hz)")
        paths.append(path)
    print(summary(result))
    return (paths, result.converged and not result.degenerate), cfg


# --- reproduction recipes

FIGURES = {
    "fig1": "Rabi-frequency variation over T_z, T_r in [1, 5] uK; grows with T_r and exceeds 0.3 from T_r of about 3 uK.",
    "fig4": "Ramsey shift vs excitation for dark times 20-120 ms; curves move apart at short tau and settle by 120 ms.",
    "fig5": "Ramsey shift, many-body vs collective at 1, 3, 5 uK; agreement at 1 uK, clear deviation at 5 uK.",
    "fig6": "Many-body Ramsey shift at 1-5 uK; the zero-shift excitation decreases as temperature increases.",
    "fig7": "Ramsey shift for N = 3..6 at 3 uK; shift/(N-1) curves collapse.",
    "fig9": "Rabi shift for bare Rabi frequencies 0.2-10 Hz; curves converge above about 1 Hz.",
    "fig10": "Rabi shift vs excitation at 1, 3, 5 uK.",
    "fig11": "Rabi shift/(N-1) for N = 3..6; curves overlap only at high excitation.",
}


def _figure_series(name: str, cfg: Config):
    pe_targets = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    ramsey = {"kind": "ramsey", "pe_targets": pe_targets}
    rabi = {"kind": "rabi", "bare_rabi_hz": 5.0, "pulse_fractions": (0.3, 0.5, 0.7, 0.9, 1.0),
            "detuning_min_hz": -1.5, "detuning_max_hz": 1.5, "detuning_points": 151}
    if name == "fig4":
        return [(f"tau={tau}s", cfg.replace(protocol={**ramsey, "dark_time_s": tau})) for tau in (0.02, 0.04, 0.08, 0.12)]
    if name == "fig5":
        out = []
        for T in (1.0, 3.0, 5.0):
            atoms = {"T_z_uK": T, "T_r_uK": T}
            out.append((f"mbsed T={T}uK", cfg.replace(atoms=atoms, protocol=ramsey)))
            out.append((f"collective T={T}uK", cfg.replace(atoms=atoms, protocol={**ramsey, "kind": "collective-ramsey"})))
        return out
    if name == "fig6":
        return [(f"T={T}uK", cfg.replace(atoms={"T_z_uK": T, "T_r_uK": T},
                                         protocol={**ramsey, "pe_targets": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.65)}))
                for T in (1.0, 2.0, 3.0, 4.0, 5.0)]
    if name == "fig7":
        return [(f"N={n}", cfg.replace(atoms={"n_atoms": n}, protocol=ramsey)) for n in (3, 4, 5, 6)]
    if name == "fig9":
        return [(f"Omega0={om}Hz", cfg.replace(protocol={**rabi, "bare_rabi_hz": om})) for om in (0.2, 0.6, 2.0, 5.0, 10.0)]
    if name == "fig10":
        return [(f"T={T}uK", cfg.replace(atoms={"T_z_uK": T, "T_r_uK": T}, protocol=rabi)) for T in (1.0, 3.0, 5.0)]
    if name == "fig11":
        return [(f"N={n}", cfg.replace(atoms={"n_atoms": n}, protocol=rabi)) for n in (3, 4, 5, 6)]
    raise UsageError(f"unknown figure {name!r}; choose from {', '.join(FIGURES)}")


def cmd_reproduce(args, cfg: Config, out: Path):
    name = args.figure
    if name not in FIGURES:
        raise UsageError(f"unknown figure {name!r}; choose from {', '.join(FIGURES)}")
    print(f"{name}: expected outcome: {FIGURES[name]}")
    if name == "fig1":
        grid = np.linspace(1.0, 5.0, 5)
        rows = rabi_inhomogeneity_map(cfg, cfg.protocol.bare_rabi_hz, grid, grid, n_draws=args.draws)
        path = write_csv(out / "fig1.csv", ["T_z_uK", "T_r_uK", "mean_rabi_hz", "std_rabi_hz", "rabi_variation"], rows)
        paths = [path]
        if args.svg:
            z = np.array([r[4] for r in rows]).reshape(grid.size, grid.size).T  # rows T_r, cols T_z
            svg.heatmap(out / "fig1.svg", grid, grid, z, "T_z (uK)", "T_r (uK)", "rabi variation")
            paths.append(out / "fig1.svg")
        return (paths, True), cfg
    if args.samples is None:
        cfg = cfg.replace(mc={"min_samples": 100, "max_samples": 100})
    series = _figure_series(name, cfg)
    rows, plot, errs = [], {}, {}
    converged = True
    for label, scfg in series:
        result = run_protocol(scfg, threads=args.threads, progress=_progress(args.progress))
        if args.progress:
            print(file=sys.stderr)
        converged &= result.converged
        rows.extend(_shift_rows(result.shifts, label))
        scale = (scfg.atoms.n_atoms - 1) if name in ("fig7", "fig11") else 1
        plot[label] = ([s.pe_op for s in result.shifts], [s.shift_hz / scale for s in result.shifts])
        errs[label] = [s.stderr_hz / scale for s in result.shifts]
        for s in result.shifts:
            print(f"{label:22s} P_e = {s.pe_op:.4f}  shift = {s.shift_hz:+.5f} +- {s.stderr_hz:.5f} Hz")
    header = _shift_header(series[0][1].protocol.kind, series=True)
    if name == "fig5":
        header[5] = "t1_s"
    paths = [write_csv(out / f"{name}.csv", header, rows)]
    if args.svg:
        ylabel = "shift / (N-1) (Hz)" if name in ("fig7", "fig11") else "density shift (Hz)"
        svg.line_plot(out / f"{name}.svg", plot, "excitation fraction", ylabel, name, errors=errs)
        paths.append(out / f"{name}.svg")
    return (paths, converged), cfg


# --- argument parsing ---------------------------------------------------------------------------

def _floats(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"config file or bundled name ({', '.join(BUNDLED)})")
    common.add_argument("--seed", type=int, help=f"master seed (overrides config and ${SEED_ENV_VAR})")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("--samples", type=int, help="fixed Monte-Carlo sample count")
    common.add_argument("--svg", action="store_true", help="also write SVG plots")
    common.add_argument("--progress", action="store_true", help="print a progress line on stderr")

    p = _Parser(prog="mbsed", description="Density-shift simulator for optical lattice clocks.")
    p.add_argument("--version", action="version", version=f"mbsed {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample-stats", parents=[common], help="thermal sampling diagnostics")
    s.add_argument("--trials", type=int, default=100000)

    s = sub.add_parser("couplings-dump", parents=[common], help="coupling tables of one sampled ensemble")
    s.add_argument("--sample-index", type=int, default=0)

    def ramsey_flags(q):
        g = q.add_mutually_exclusive_group()
        g.add_argument("--t1-scan", type=int, metavar="K", help="K first-pulse fractions in [0.1, 0.9]")
        g.add_argument("--pe-targets", type=_floats, help="comma-separated first-pulse excitation targets")
        q.add_argument("--tau", type=float, help="dark time in seconds")

    s = sub.add_parser("ramsey", parents=[common], help="many-body Ramsey spectroscopy")
    ramsey_flags(s)
    s.add_argument("--truncation", help="'full' or number of dropped spin sectors m")

    s = sub.add_parser("rabi", parents=[common], help="many-body Rabi spectroscopy")
    s.add_argument("--pulse-fractions", type=_floats, help="pulse lengths as fractions of the pi time")
    s.add_argument("--bare-rabi", type=float, help="bare Rabi frequency in Hz")
    s.add_argument("--truncation", help="'full' or number of dropped spin sectors m")

    s = sub.add_parser("collective", parents=[common], help="collective (Dicke-space) model")
    s.add_argument("--protocol", choices=("ramsey", "rabi"), default="ramsey")
    ramsey_flags(s)
    s.add_argument("--pulse-fractions", type=_floats)

    s = sub.add_parser("analytic", parents=[common], help="closed-form collective Ramsey fringes")
    ramsey_flags(s)

    s = sub.add_parser("fit", parents=[common], help="fit b_ee and b_eg to measured shifts")
    s.add_argument("--data", required=True, help="CSV with columns pe, shift_hz[, sigma_hz]")
    s.add_argument("--n-exp", type=int, help="atom number of the experiment (default: simulated N)")
    s.add_argument("--n-sim", type=int, help="simulated atom number (default: config)")
    s.add_argument("--initial", type=_floats, default=[150.0, 190.0], help="b_ee,b_eg start in Bohr radii")
    s.add_argument("--bounds", type=_floats, default=[50.0, 300.0, 50.0, 300.0],
                   help="b_ee_lo,b_ee_hi,b_eg_lo,b_eg_hi")
    s.add_argument("--max-iter", type=int, default=200)

    s = sub.add_parser("reproduce", parents=[common], help="bundled figure recipes")
    s.add_argument("figure", help=", ".join(FIGURES))
    s.add_argument("--draws", type=int, default=20000, help="thermal draws per grid point (fig1)")
    return p


COMMANDS = {
    "sample-stats": cmd_sample_stats,
    "couplings-dump": cmd_couplings_dump,
    "ramsey": cmd_ramsey,
    "rabi": cmd_rabi,
    "collective": cmd_collective,
    "analytic": cmd_analytic,
    "fit": cmd_fit,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        default = "calibration" if args.command == "fit" else (
            "nstc_rabi" if args.command == "rabi" else "nstc")
        cfg = _apply_common(resolve_config(args.config, default), args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = COMMANDS[args.command]
        outcome = handler(args, cfg, out)
        if isinstance(outcome[1], Config):
            (paths, ok), cfg = outcome
        else:
            paths, ok = outcome
        write_manifest(out, cfg, argv, started, paths)
        return EXIT_OK if ok else EXIT_UNCONVERGED
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, ConfigError, CalibrationError, SamplerError, ShiftExtractionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
