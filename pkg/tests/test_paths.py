"""Brownian ensemble generation: reproducibility, pairing, coarsening, IO."""

import numpy as np
import pytest

from absde_lab.paths import (
    OddAntitheticCount,
    coarsen_ensemble,
    dump_ensemble,
    load_ensemble,
    simulate_brownian,
)
from absde_lab.problem import build_time_grid

GRID = build_time_grid(T=1.0, K=0.5, n_T=8)


def test_same_seed_is_bit_identical():
    a = simulate_brownian(GRID, d=1, n_paths=64, seed=7)
    b = simulate_brownian(GRID, d=1, n_paths=64, seed=7)
    assert np.array_equal(a.increments, b.increments)
    assert np.array_equal(a.states, b.states)
    c = simulate_brownian(GRID, d=1, n_paths=64, seed=8)
    assert not np.array_equal(a.increments, c.increments)


def test_prefix_stable_in_path_count():
    # growing the ensemble must not disturb the paths already drawn
    small = simulate_brownian(GRID, d=2, n_paths=16, seed=3)
    big = simulate_brownian(GRID, d=2, n_paths=48, seed=3)
    assert np.array_equal(big.increments[:, :16, :], small.increments)


def test_shapes_and_cumsum_identity():
    ens = simulate_brownian(GRID, d=3, n_paths=10, seed=1)
    assert ens.n_steps == GRID.n_total == 12
    assert ens.n_paths == 10
    assert ens.d == 3
    assert ens.states.shape == (13, 10, 3)
    assert np.all(ens.states[0] == 0.0)
    # the running-sum identity is exact, not merely approximate
    assert np.array_equal(ens.states[:-1] + ens.increments, ens.states[1:])
    assert not ens.increments.flags.writeable
    assert not ens.states.flags.writeable


def test_antithetic_pairs_negate_exactly():
    ens = simulate_brownian(GRID, d=1, n_paths=32, seed=11, antithetic=True)
    assert np.array_equal(ens.increments[:, 1::2, :], -ens.increments[:, 0::2, :])
    # even members agree with the plain draw of half the size
    plain = simulate_brownian(GRID, d=1, n_paths=16, seed=11)
    assert np.array_equal(ens.increments[:, 0::2, :], plain.increments)


def test_antithetic_rejects_odd_count():
    with pytest.raises(OddAntitheticCount):
        simulate_brownian(GRID, d=1, n_paths=33, seed=0, antithetic=True)


def test_argument_validation():
    with pytest.raises(ValueError):
        simulate_brownian(GRID, d=0, n_paths=8, seed=0)
    with pytest.raises(ValueError):
        simulate_brownian(GRID, d=1, n_paths=1, seed=0)


def test_moments_and_quadratic_variation():
    grid = build_time_grid(T=1.0, K=0.5, n_T=16)
    ens = simulate_brownian(grid, d=1, n_paths=40000, seed=5)
    inc = ens.increments[:, :, 0]
    assert abs(inc.mean()) < 4e-4
    assert inc.var() == pytest.approx(grid.h, rel=0.02)
    qv = np.sum(inc**2, axis=0)
    assert qv.mean() == pytest.approx(1.5, rel=0.02)
    # terminal state variance matches the full horizon
    assert ens.states[-1, :, 0].var() == pytest.approx(1.5, rel=0.05)


def test_coarsen_matches_fine_states_on_shared_times():
    fine_grid = build_time_grid(T=1.0, K=0.5, n_T=32)
    fine = simulate_brownian(fine_grid, d=2, n_paths=50, seed=9)
    coarse = coarsen_ensemble(fine, factor=4)
    assert coarse.n_steps == fine.n_steps // 4
    assert coarse.h == pytest.approx(4 * fine.h)
    assert coarse.seed == fine.seed
    # shared-time states agree up to summation-order roundoff
    np.testing.assert_allclose(
        coarse.states, fine.states[::4], rtol=0.0, atol=1e-12
    )


def test_coarsen_factor_one_is_identity():
    ens = simulate_brownian(GRID, d=1, n_paths=6, seed=2)
    same = coarsen_ensemble(ens, factor=1)
    assert np.array_equal(same.increments, ens.increments)


def test_coarsen_rejects_non_divisor():
    ens = simulate_brownian(GRID, d=1, n_paths=6, seed=2)
    with pytest.raises(ValueError):
        coarsen_ensemble(ens, factor=5)


def test_dump_load_round_trip(tmp_path):
    ens = simulate_brownian(GRID, d=2, n_paths=12, seed=77, antithetic=True)
    target = tmp_path / "paths.bin"
    dump_ensemble(ens, target)
    back = load_ensemble(target)
    assert np.array_equal(back.increments, ens.increments)
    assert np.array_equal(back.states, ens.states)
    assert back.seed == ens.seed
    assert back.h == ens.h
    assert back.antithetic is True


def test_load_rejects_foreign_file(tmp_path):
    target = tmp_path / "junk.bin"
    target.write_bytes(b"\x00" * 64)
    with pytest.raises(ValueError):
        load_ensemble(target)
