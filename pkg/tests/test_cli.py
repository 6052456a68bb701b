import csv

import numpy as np
import pytest

from mbsed import cli
from mbsed.config import load_config


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_unknown_flag_is_usage_error(capsys):
    assert run("ramsey", "--bogus") == 1
    assert "usage:" in capsys.readouterr().err


def test_unknown_subcommand_and_missing_config(tmp_path, capsys):
    assert run("simulate") == 1
    assert run("ramsey", "--config", tmp_path / "nope.cfg", "--out", tmp_path) == 1
    assert "not found" in capsys.readouterr().err


def test_invalid_config_value(tmp_path):
    bad = tmp_path / "bad.cfg"
    text = cli.bundled_config_path("nstc").read_text().replace("atoms.n_atoms = 5", "atoms.n_atoms = 0")
    bad.write_text(text)
    assert run("ramsey", "--config", bad, "--out", tmp_path / "o") == 1


def test_internal_error_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli.COMMANDS, "ramsey", boom)
    assert run("ramsey", "--out", tmp_path) == 3


def test_t1_scan_writes_one_row_per_t1(tmp_path):
    out = tmp_path / "fig6"
    code = run("ramsey", "--config", "nstc", "--t1-scan", 20, "--samples", 50, "--out", out)
    assert code == 2  # 50 samples cannot reach the 1 mHz target
    table = rows(out / "shift.csv")
    assert len(table) == 20
    assert list(table[0]) == ["protocol", "N", "T_z_uK", "T_r_uK", "t1_s", "tau_s", "shift_hz",
                              "shift_stderr_hz", "pe_op", "n_samples", "converged"]
    assert {r["converged"] for r in table} == {"0"}
    assert len(list(out.glob("spectrum_*.csv"))) == 20
    spec = rows(out / "spectrum_000.csv")
    assert list(spec[0]) == ["delta_hz", "pe_mean", "pe_stderr"] and len(spec) == 101
    manifest = (out / "manifest.txt").read_text()
    assert "master_seed = 20240101" in manifest and "protocol.kind = ramsey" in manifest
    # the snapshot in the manifest reloads to the configuration that ran
    snapshot = manifest.split("# configuration snapshot\n", 1)[1]
    (tmp_path / "snap.cfg").write_text(snapshot)
    assert load_config(tmp_path / "snap.cfg", env={}).protocol.t1_fractions[0] == pytest.approx(0.1)


def test_unresolved_setting_is_reported_not_fatal(tmp_path, capsys):
    # at t1 = 0.9 pi-times six samples leave almost no fringe contrast
    code = run("ramsey", "--t1-scan", 20, "--samples", 6, "--out", tmp_path)
    assert code == 2
    table = rows(tmp_path / "shift.csv")
    assert table[-1]["shift_hz"] == "nan" and table[-1]["converged"] == "0"
    assert float(table[0]["shift_hz"]) > 0
    assert "widen the detuning window" in capsys.readouterr().err


def test_converged_run_exits_zero(tmp_path):
    cfgtext = cli.bundled_config_path("nstc").read_text().replace(
        "mc.target_stderr_hz = 0.001", "mc.target_stderr_hz = 1")
    path = tmp_path / "loose.cfg"
    path.write_text(cfgtext)
    assert run("analytic", "--config", path, "--samples", 5, "--out", tmp_path / "o") == 0
    assert len(rows(tmp_path / "o" / "shift.csv")) == 1
    assert (tmp_path / "o" / "spectrum.csv").exists()


def test_reproduce_fig1_grid(tmp_path):
    assert run("reproduce", "fig1", "--draws", 500, "--svg", "--out", tmp_path) == 0
    table = rows(tmp_path / "fig1.csv")
    assert len(table) == 25
    tz = sorted({float(r["T_z_uK"]) for r in table})
    tr = sorted({float(r["T_r_uK"]) for r in table})
    assert tz == tr == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert (tmp_path / "fig1.svg").read_text().startswith("<svg")


def test_same_seed_byte_identical(tmp_path):
    for name in ("a", "b"):
        run("rabi", "--samples", 4, "--pulse-fractions", "0.5,1.0", "--seed", 11, "--out", tmp_path / name)
    for f in ("shift.csv", "spectrum_000.csv", "spectrum_001.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    run("rabi", "--samples", 4, "--pulse-fractions", "0.5,1.0", "--seed", 12, "--out", tmp_path / "c")
    assert (tmp_path / "a" / "shift.csv").read_bytes() != (tmp_path / "c" / "shift.csv").read_bytes()


def test_seed_environment_override(tmp_path, monkeypatch):
    monkeypatch.setenv("MBSED_SEED", "77")
    run("collective", "--samples", 3, "--out", tmp_path)
    assert "master_seed = 77" in (tmp_path / "manifest.txt").read_text()


def test_sample_stats_and_couplings_dump(tmp_path):
    assert run("sample-stats", "--trials", 2000, "--out", tmp_path / "s") == 0
    stats = {r["quantity"]: float(r["value"]) for r in rows(tmp_path / "s" / "sample_stats.csv")}
    assert stats["n_z_bands"] == 5 and stats["n_r_bands"] == 1320
    marginal = rows(tmp_path / "s" / "nz_marginal.csv")
    assert sum(float(r["probability"]) for r in marginal) == pytest.approx(1.0)
    assert run("couplings-dump", "--out", tmp_path / "c") == 0
    pairs = rows(tmp_path / "c" / "couplings.csv")
    assert len(pairs) == 10
    for r in pairs:
        assert float(r["J_hz"]) == pytest.approx(float(r["J_rad_s"]) / (2 * np.pi))
    assert len(rows(tmp_path / "c" / "atoms.csv")) == 5


def test_collective_rabi_and_svg(tmp_path):
    code = run("collective", "--protocol", "rabi", "--config", "nstc_rabi", "--pulse-fractions", "0.5,1",
               "--samples", 3, "--svg", "--out", tmp_path)
    assert code == 2
    table = rows(tmp_path / "shift.csv")
    assert "t_s" in table[0] and table[0]["protocol"] == "collective-rabi"
    assert (tmp_path / "shift.svg").exists() and (tmp_path / "spectrum_001.svg").exists()


def test_fit_subcommand(tmp_path):
    from mbsed.calibration import synthetic_dataset

    cfg = load_config(cli.bundled_config_path("calibration"), env={}).replace(
        atoms={"n_atoms": 4}, protocol={"spin_truncation": 1})
    targets = (0.15, 0.3, 0.45, 0.6)
    synthetic_dataset(cfg, targets, 160.0, 185.0, noise=0.0, n_samples=6).to_csv(tmp_path / "data.csv")
    code = run("fit", "--data", tmp_path / "data.csv", "--n-sim", 4, "--samples", 6,
               "--initial", "150,190", "--out", tmp_path / "fit")
    assert code == 0
    (fit,) = rows(tmp_path / "fit" / "fit.csv")
    assert float(fit["b_ee_bohr"]) == pytest.approx(160.0, rel=1e-2)
    assert float(fit["b_eg_bohr"]) == pytest.approx(185.0, rel=1e-2)
    assert len(rows(tmp_path / "fit" / "fit_points.csv")) == 4


def test_unknown_figure(tmp_path):
    assert run("reproduce", "fig2", "--out", tmp_path) == 1
