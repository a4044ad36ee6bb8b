"""Quadratic-growth strategies: roots, fixed points, stitching, transform."""

import dataclasses
import warnings

import numpy as np
import pytest

from absde_lab.catalog import builtin_problem, compile_generator
from absde_lab.paths import simulate_brownian
from absde_lab.solver_lipschitz import NumericsSpec, solve_anticipated_lipschitz
from absde_lab.solver_quadratic import (
    STRATEGIES,
    CertificationFailed,
    OuterDivergence,
    build_phi_transform,
    choose_strategy,
    inner_quadratic_step,
    solve,
    solve_global_stitch,
    solve_local_contraction,
    solve_picard_small,
    solve_transform,
)


def test_inner_step_solves_quadratic_root():
    # y = a + h*y^2 has explicit root (1 - sqrt(1 - 4ha)) / (2h)
    h = 1.0 / 16.0
    got = inner_quadratic_step(
        1.0, h, 0.0, {}, lambda t, y, z, e: y**2, t=0.0
    )
    assert got == pytest.approx(8.0 * (1.0 - np.sqrt(0.75)), abs=1e-9)

    # with a z^2 contribution the constant just shifts
    z = 0.5
    a_eff = 1.0 + h * z**2
    expected = (1.0 - np.sqrt(1.0 - 4.0 * h * a_eff)) / (2.0 * h)
    got = inner_quadratic_step(
        1.0, h, z, {}, lambda t, y, zz, e: y**2 + zz[:, 0, 0][:, None] ** 2, t=0.0
    )
    assert got == pytest.approx(expected, abs=1e-9)


def test_picard_small_contracts_and_certifies():
    p = builtin_problem("small_quadratic")
    res = solve_picard_small(p, NumericsSpec(n_T=16, n_paths=4000, seed=13))
    assert res.strategy == "picard-small"
    assert res.certified
    assert res.outer_diffs[-1] <= 1e-8
    # successive iterate gaps shrink monotonically after the first step
    assert all(b < a for a, b in zip(res.outer_diffs[1:-1], res.outer_diffs[2:]))
    assert res.diagnostics["ball"]["member"]
    assert res.diagnostics["constants"]["admissible"]


def test_local_contraction_agrees_with_picard():
    p = builtin_problem("small_quadratic")
    num = NumericsSpec(n_T=16, n_paths=4000, seed=13)
    a = solve_picard_small(p, num)
    ens = simulate_brownian(p.grid(16), d=1, n_paths=4000, seed=13)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CertificationFailed)
        b = solve_local_contraction(p, num, ensemble=ens)
    # same ensemble, different fixed-point organizations: same limit
    assert abs(a.solution.y0_mean - b.solution.y0_mean) < 5e-4


def test_local_contraction_trivial_driver_matches_single_sweep():
    p = builtin_problem("martingale")
    num = NumericsSpec(n_T=8, n_paths=1500, seed=17)
    direct = solve_anticipated_lipschitz(p, num)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CertificationFailed)
        res = solve_local_contraction(p, num)
    np.testing.assert_allclose(res.solution.Y, direct.Y, rtol=0.0, atol=1e-12)


def test_local_contraction_window_argument():
    p = builtin_problem("small_quadratic")
    num = NumericsSpec(n_T=16, n_paths=1000, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CertificationFailed)
        res = solve_local_contraction(p, num, window=(0.5, 1.0))
    assert res.diagnostics["window_width"] == pytest.approx(0.5)
    # slices before the window start stay at their zero initialization
    assert np.all(res.solution.Y[:8] == 0.0)
    assert np.any(res.solution.Y[8] != 0.0)
    with pytest.raises(ValueError):
        solve_local_contraction(p, num, window=(1.0, 1.0))


def test_global_stitch_falls_back_to_single_slices():
    p = builtin_problem("split_quadratic")
    with pytest.warns(CertificationFailed):
        res = solve_global_stitch(p, NumericsSpec(n_T=8, n_paths=2000, seed=7))
    assert res.strategy == "global-stitch"
    assert not res.certified  # certified width underflows the grid step
    assert res.diagnostics["windows"] == 8
    assert res.diagnostics["barrier"]["holds"]
    assert res.diagnostics["barrier"]["max_ratio"] <= 1.0


def test_transform_identity_without_lambda():
    tr = build_phi_transform(None)
    assert tr.identity
    p = builtin_problem("small_quadratic")
    num = NumericsSpec(n_T=8, n_paths=1000, seed=8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CertificationFailed)
        via_transform = solve_transform(p, num)
    direct = solve_anticipated_lipschitz(p, num)
    assert np.array_equal(via_transform.solution.Y, direct.Y)
    assert np.array_equal(via_transform.solution.Z, direct.Z)


def test_transform_pure_quadratic_matches_deterministic_recursion():
    # lambda = 1, driver 1: the image problem is deterministic with driver
    # 2*ybar + 1, so the sweep collapses to a scalar Euler recursion whose
    # back-mapped slices are exactly (n_T - i) * log(1 + 2h) / 2; this pins
    # the full pipeline (quadrature, inverse map, terminal refill) at once
    p = builtin_problem("pure_quadratic")

    def run(n_T):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return solve_transform(p, NumericsSpec(n_T=n_T, n_paths=2000, seed=9))

    res = run(8)
    assert not res.certified  # a constant lambda does not decay
    assert not res.diagnostics["transform"]["integrable"]
    h = 1.0 / 8.0
    for i in range(9):
        expected = (8 - i) * np.log(1.0 + 2.0 * h) / 2.0
        assert np.max(np.abs(res.solution.Y[i] - expected)) < 1e-9
    assert np.max(np.abs(res.solution.Z[:8])) < 1e-9
    # the Euler bias against the true value T - t decays at first order
    errs = [abs(run(n).solution.y0_mean - 1.0) for n in (8, 16, 32)]
    assert errs[1] / errs[0] < 0.6 and errs[2] / errs[1] < 0.6


def test_transform_rejects_current_z_dependence():
    p = builtin_problem("pure_quadratic")
    bad = dataclasses.replace(p, generator=compile_generator("z^2"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(ValueError):
            solve_transform(bad, NumericsSpec(n_T=4, n_paths=500, seed=0))


def test_outer_divergence_for_large_terminal():
    p = builtin_problem("small_quadratic", eps0=5.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(OuterDivergence):
            solve_picard_small(p, NumericsSpec(n_T=8, n_paths=500, seed=1))


def test_ensemble_injection_and_mismatch():
    p = builtin_problem("small_quadratic")
    num = NumericsSpec(n_T=8, n_paths=800, seed=5)
    auto = solve_picard_small(p, num)
    ens = simulate_brownian(p.grid(8), d=1, n_paths=800, seed=5)
    injected = solve_picard_small(p, num, ensemble=ens)
    assert np.array_equal(auto.solution.Y, injected.solution.Y)

    wrong = simulate_brownian(p.grid(4), d=1, n_paths=800, seed=5)
    with pytest.raises(ValueError):
        solve_picard_small(p, num, ensemble=wrong)


def test_choose_strategy_per_problem():
    expected = {
        "anticipated_identity": "lipschitz",
        "bounded_anticipated": "transform",
        "constant_driver": "lipschitz",
        "martingale": "lipschitz",
        "pure_quadratic": "transform",
        "small_quadratic": "picard-small",
        "split_quadratic": "global-stitch",
        "subquadratic": "local-contraction",
    }
    for name, want in expected.items():
        assert choose_strategy(builtin_problem(name)) == want, name


def test_solve_dispatcher():
    p = builtin_problem("martingale")
    num = NumericsSpec(n_T=4, n_paths=300, seed=2)
    res = solve(p, num)  # auto resolves to lipschitz here
    assert res.strategy == "lipschitz"
    assert res.certified
    with pytest.raises(ValueError):
        solve(p, num, strategy="simulated-annealing")
    assert "auto" in STRATEGIES and "transform" in STRATEGIES
