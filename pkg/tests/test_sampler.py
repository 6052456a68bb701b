import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mbsed.couplings import lamb_dicke
from mbsed.sampler import (
    PartitionTable,
    SamplerError,
    draw_ensemble,
    draw_states,
    partition_table,
    rabi_inhomogeneity_map,
    sample_rng,
)


def table_for(cfg, tz, tr):
    return partition_table(cfg.trap, cfg.replace(atoms={"T_z_uK": tz, "T_r_uK": tr}).atoms, cfg.constants)


def test_table_normalized(nstc):
    t = table_for(nstc, 3.0, 3.0)
    assert math.fsum(t.prob) == pytest.approx(1.0, abs=1e-12)
    assert t.n_z.max() <= nstc.trap.n_z_bands and t.n_r.max() <= nstc.trap.n_r_bands


def test_cold_limit(nstc):
    # hbar*omega_r/k_B is only 12 nK here, so "cold" must mean well below that
    t = table_for(nstc, 3e-4, 3e-4)
    assert t.probability(0, 0) > 1 - 1e-9


def test_longitudinal_boltzmann_ratio(nstc):
    t = table_for(nstc, 3.0, 2.0)
    ratio = math.exp(-nstc.constants.hbar * nstc.trap.omega_z / (nstc.constants.k_B * 3e-6))
    for n_r in (0, 1, 7, 200):
        assert t.probability(1, n_r) / t.probability(0, n_r) == pytest.approx(ratio, rel=1e-12)


def test_degeneracy_factor(nstc):
    # with T_r -> infinity the radial Boltzmann factors are equal, leaving the n_r + 1 degeneracy
    t = table_for(nstc, 3.0, 1e12)
    for n_z in (0, 2):
        assert t.probability(n_z, 1) / t.probability(n_z, 0) == pytest.approx(2.0, rel=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_ensembles_distinct_and_reproducible(seed, index):
    from mbsed.cli import resolve_config

    cfg = resolve_config("nstc")
    table = _TABLE.setdefault("t", partition_table(cfg.trap, cfg.atoms, cfg.constants))
    a = draw_ensemble(table, 6, seed, index)
    b = draw_ensemble(table, 6, seed, index)
    assert np.array_equal(a.modes, b.modes)
    assert np.unique(a.modes, axis=0).shape[0] == 6
    # transverse split sums to the drawn n_r and stays within the bound bands
    assert np.all(a.modes >= 0)
    assert np.all(a.modes[:, 2] <= cfg.trap.n_z_bands)
    assert np.all(a.modes[:, 0] + a.modes[:, 1] <= cfg.trap.n_r_bands)


_TABLE = {}


def test_single_state_table_rejects_pairs():
    table = PartitionTable(np.array([0]), np.array([0]), np.array([1.0]))
    with pytest.raises(SamplerError):
        draw_ensemble(table, 2, 1, 0)


def test_transverse_split_uniform(nstc):
    # n_x is uniform over 0..n_r once (n_z, n_r) is fixed
    table = PartitionTable(np.array([0]), np.array([4]), np.array([1.0]))
    modes = draw_states(table, 50000, sample_rng(3, 0))
    assert np.all(modes[:, 0] + modes[:, 1] == 4)
    counts = np.bincount(modes[:, 0], minlength=5)
    assert stats.chisquare(counts).pvalue > 0.01


def test_rabi_map_cold_limit(nstc):
    (_, _, mean, std, ratio), = rabi_inhomogeneity_map(nstc, 500.0, 1e-3, 1e-3, n_draws=2000)
    eta_x, _, eta_z = lamb_dicke(nstc.trap, nstc.constants)
    assert mean == pytest.approx(500.0 * math.exp(-0.5 * (eta_x**2 + eta_z**2)), rel=1e-12)
    assert ratio < 1e-12


def test_rabi_map_warm_threshold(nstc):
    (_, _, _, _, ratio), = rabi_inhomogeneity_map(nstc, 500.0, 3.0, 3.0, n_draws=20000)
    assert ratio > 0.3


def test_rabi_map_without_misalignment_ignores_radial_temperature(nstc):
    aligned = nstc.replace(trap={"misalignment": 0.0})
    rows = rabi_inhomogeneity_map(aligned, 500.0, [3.0], [1.0, 3.0, 5.0], n_draws=20000, seed=5)
    ratios = [r[4] for r in rows]
    # same n_z draws are not shared across T_r, so compare statistically
    assert max(ratios) - min(ratios) < 0.02
    assert rows[0][4] > 0.05


def test_rabi_map_grows_with_radial_temperature(nstc):
    rows = rabi_inhomogeneity_map(nstc, 500.0, [3.0], [1.0, 3.0, 5.0], n_draws=20000)
    ratios = [r[4] for r in rows]
    assert ratios[0] < ratios[1] < ratios[2]


def test_rabi_map_weak_longitudinal_dependence(nstc):
    rows = rabi_inhomogeneity_map(nstc, 500.0, [1.0, 5.0], [3.0], n_draws=40000)
    assert abs(rows[0][4] - rows[1][4]) < 0.05
