"""Backward regression sweep on problems with known solutions."""

import numpy as np
import pytest

from absde_lab.catalog import builtin_problem
from absde_lab.paths import simulate_brownian
from absde_lab.solver_lipschitz import (
    InnerDivergence,
    NumericsSpec,
    solve_anticipated_lipschitz,
)


def test_martingale_recovers_brownian():
    p = builtin_problem("martingale")
    sol = solve_anticipated_lipschitz(p, NumericsSpec(n_T=16, n_paths=4000, seed=21))
    assert abs(sol.y0_mean) <= 3 * sol.y0_stderr
    # terminal slice holds the exact data, bitwise
    assert np.array_equal(sol.Y[16][:, 0], sol.ensemble.states[16][:, 0])
    assert np.array_equal(sol.Z[16], np.ones_like(sol.Z[16]))
    # interior Z estimates hover around the true constant 1; the polynomial
    # fit wiggles at the extreme sample tails, so test the bulk by quantile
    dev = np.abs(sol.Z[:16] - 1.0)
    assert np.quantile(dev, 0.99) < 0.05
    assert np.max(dev) < 0.5


def test_constant_driver_is_exact():
    p = builtin_problem("constant_driver", c=0.7)
    sol = solve_anticipated_lipschitz(p, NumericsSpec(n_T=8, n_paths=500, seed=1))
    expected = 0.7 * (1.0 - sol.grid.times[: 8 + 1])
    for i in range(9):
        assert np.max(np.abs(sol.Y[i][:, 0] - expected[i])) < 1e-10
    assert np.max(np.abs(sol.Z[:8])) < 1e-8


def test_anticipated_terminal_identity_is_exact():
    # driver pulls the anticipated value from the terminal block, so the
    # regression sweep reproduces the affine closed form to roundoff
    p = builtin_problem("anticipated_identity")
    sol = solve_anticipated_lipschitz(p, NumericsSpec(n_T=8, n_paths=2000, seed=3))
    assert sol.y0_mean == pytest.approx(2.0, abs=1e-10)
    mid = sol.Y[4][:, 0]
    assert np.max(np.abs(mid - 1.5)) < 1e-10


def test_schemes_coincide_for_y_independent_driver():
    p = builtin_problem("constant_driver", c=1.3)
    exp = solve_anticipated_lipschitz(p, NumericsSpec(n_T=8, n_paths=300, seed=5))
    imp = solve_anticipated_lipschitz(
        p, NumericsSpec(n_T=8, n_paths=300, seed=5, scheme="implicit")
    )
    assert np.array_equal(exp.Y, imp.Y)
    assert np.array_equal(exp.Z, imp.Z)
    assert imp.metadata["max_residual"] <= 1e-10
    assert max(imp.metadata["iterations"]) <= 2


def test_seed_reproducibility_and_ensemble_injection():
    p = builtin_problem("martingale")
    num = NumericsSpec(n_T=8, n_paths=400, seed=11)
    a = solve_anticipated_lipschitz(p, num)
    b = solve_anticipated_lipschitz(p, num)
    assert np.array_equal(a.Y, b.Y)

    ens = simulate_brownian(p.grid(8), d=1, n_paths=400, seed=11)
    c = solve_anticipated_lipschitz(p, num, ensemble=ens)
    assert np.array_equal(a.Y, c.Y)

    other = solve_anticipated_lipschitz(p, NumericsSpec(n_T=8, n_paths=400, seed=12))
    assert other.y0_mean != a.y0_mean

    coarse = simulate_brownian(p.grid(4), d=1, n_paths=400, seed=11)
    with pytest.raises(ValueError):
        solve_anticipated_lipschitz(p, num, ensemble=coarse)


def test_metadata_contents():
    p = builtin_problem("martingale")
    sol = solve_anticipated_lipschitz(p, NumericsSpec(n_T=4, n_paths=200, seed=0))
    md = sol.metadata
    for key in (
        "seed", "scheme", "n_T", "n_paths", "antithetic", "basis",
        "iterations", "residuals", "max_residual",
        "y0_mean", "y0_stderr", "y0_stderr_reduced",
    ):
        assert key in md
    assert md["y0_mean"] == sol.y0_mean
    assert md["y0_stderr"] == sol.y0_stderr > 0
    assert md["scheme"] == "explicit"
    assert len(md["iterations"]) == 4


def test_antithetic_pairing_runs():
    p = builtin_problem("martingale")
    sol = solve_anticipated_lipschitz(
        p, NumericsSpec(n_T=8, n_paths=2000, seed=33, antithetic=True)
    )
    assert sol.ensemble.antithetic
    assert abs(sol.y0_mean) <= 3 * sol.y0_stderr + 1e-12


def test_inner_divergence_on_explosive_implicit_step():
    p = builtin_problem("martingale")
    num = NumericsSpec(n_T=4, n_paths=200, seed=2, scheme="implicit", inner_max_iter=8)
    with pytest.raises(InnerDivergence):
        solve_anticipated_lipschitz(
            p, num, driver=lambda t, y, z, expect: 1e6 * y
        )
