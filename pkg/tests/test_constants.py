"""Certification constant families: exact values, identities, branch logic."""

import dataclasses

import mpmath as mp
import numpy as np
import pytest

from absde_lab.catalog import builtin_problem
from absde_lab.constants import (
    applicability_report,
    barrier_constants,
    envelope_scale_for,
    local_window_constants,
    small_terminal_constants,
)


def test_small_terminal_unit_values_are_exact():
    b = small_terminal_constants(C=1.0, L=1.0, T=1.0, K=0.0)
    assert float(b.modulus_scale) == 2048.0
    assert b.radius_sq * 32768 == 1
    assert float(b.radius_sq) == 3.0517578125e-05
    assert float(b.growth_rate) == pytest.approx(32.0 * np.sqrt(2.0), rel=1e-15)
    assert float(b.ball_radius) == 0.0
    assert b.admissible  # zero data always fits


def test_small_terminal_radius_identity():
    rng = np.random.default_rng(314)
    for _ in range(25):
        C = rng.uniform(0.1, 5.0)
        L = rng.uniform(0.2, 3.0)
        T = rng.uniform(0.1, 2.0)
        K = rng.uniform(0.0, 1.0)
        b = small_terminal_constants(C, L, T, K)
        with mp.workdps(60):
            assert abs(16 * b.modulus_scale * b.radius_sq - 1) < mp.mpf("1e-50")


def test_small_terminal_admissibility_threshold():
    # radius_sq = 1/32768, so sup thresholds near sqrt of that
    good = small_terminal_constants(1.0, 1.0, 1.0, 0.0, xi_sup=0.005)
    bad = small_terminal_constants(1.0, 1.0, 1.0, 0.0, xi_sup=0.006)
    assert good.admissible
    assert not bad.admissible
    assert float(bad.data_sq) == pytest.approx(3.6e-5, rel=1e-12)


def test_small_terminal_rejects_bad_parameters():
    for kwargs in ({"C": 0.0}, {"L": -1.0}, {"T": 0.0}, {"K": -0.1}):
        full = {"C": 1.0, "L": 1.0, "T": 1.0, "K": 0.0, **kwargs}
        with pytest.raises(ValueError):
            small_terminal_constants(**full)


def test_local_window_construction_invariants():
    b = local_window_constants(
        C=1.0, gamma=1.0, alpha_holder=0.0, L=1.0, T=1.0, K=0.5,
        xi_sup=0.1, eta_z2=0.05,
    )
    with mp.workdps(60):
        cap = mp.exp(-b.C * b.T) / (3 * b.C * b.L)
        assert 0 < b.window <= cap
        assert b.discriminant >= 0
        assert b.z2_bound == (3 - 2 * mp.sqrt(b.discriminant)) / (4 * b.damping)
        assert b.identity_residual < mp.mpf("1e-30")
    assert b.binding_branch in ("horizon", "smallness")
    if b.binding_branch == "horizon":
        assert b.window == cap
    assert mp.isfinite(b.exp_sup_log_bound())


def test_local_window_deep_smallness_branch():
    # alpha near 1 drives the moment factor beyond mpf range; every remaining
    # quantity then takes its exact window -> 0 limit
    b = local_window_constants(
        C=1.0, gamma=1.0, alpha_holder=0.95, L=1.0, T=1.0, K=0.0
    )
    assert b.binding_branch == "smallness-deep"
    assert b.window == 0
    assert b.discriminant == 0
    assert b.z2_bound == 6 * b.data_level
    assert b.identity_residual == 0
    assert b.window_log10 is not None and b.window_log10 < -50
    assert b.exp_moment_factor == mp.inf
    assert mp.isfinite(b.exp_sup_log_bound())
    vals = b.as_floats()
    assert vals["binding_branch"] == "smallness-deep"
    assert vals["log10_window"] < -50
    assert "log10_exp_moment_factor" in vals


def test_local_window_rejects_bad_parameters():
    with pytest.raises(ValueError):
        local_window_constants(1.0, 1.0, 1.0, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        local_window_constants(1.0, -2.0, 0.0, 1.0, 1.0, 0.0)


def test_barrier_closed_form_solves_integral_equation():
    bundle = barrier_constants(C_tilde=3.0, L=1.0, T=1.0, K=0.5)
    S, L, horizon = 3.0, 1.0, 1.5
    kappa = (2 + L) * S
    for t in np.linspace(0.0, horizon, 13):
        val = bundle.barrier_at(t)
        integral = (S + 1 / (2 + L)) * (np.exp(kappa * (horizon - t)) - 1) / kappa - (
            horizon - t
        ) / (2 + L)
        rhs = S + S * (horizon - t) + kappa * integral
        assert val == pytest.approx(rhs, rel=1e-12)
    # at the far end of the horizon the envelope equals the scale itself
    assert bundle.barrier_at(horizon) == pytest.approx(3.0, abs=1e-12)
    assert float(bundle.barrier_sup) == pytest.approx(bundle.barrier_at(0.0), rel=1e-15)
    assert bundle.window_width == bundle.window_bundle.window


def test_barrier_validation():
    with pytest.raises(ValueError):
        barrier_constants(C_tilde=0.0, L=1.0, T=1.0, K=0.0)


def test_envelope_scale_branches():
    assert envelope_scale_for(C=2.0, xi_sup=0.1) == 6.0
    assert envelope_scale_for(C=0.1, xi_sup=0.2) == 1.0
    assert envelope_scale_for(C=0.5, xi_sup=3.0) == 9.0


def test_applicability_small_quadratic():
    p = builtin_problem("small_quadratic")
    rep = applicability_report(p, {"xi_sup": 0.004, "eta_z2": 0.0, "f0_int": 0.0})
    assert rep["small-terminal"]["verdict"] == "applies"
    assert rep["small-terminal"]["data_sq"] <= rep["small-terminal"]["radius_sq"]
    assert rep["transform"]["verdict"] == "fails"
    assert rep["suggested_strategy"] == "picard-small"


def test_applicability_pure_quadratic_prefers_transform():
    p = builtin_problem("pure_quadratic")
    rep = applicability_report(p, {"xi_sup": 1.0, "eta_z2": 0.0, "f0_int": 1.0})
    assert rep["transform"]["verdict"] == "applies"
    assert rep["suggested_strategy"] == "transform"
    assert rep["small-terminal"]["verdict"] == "fails"


def test_applicability_split_driver_gets_barrier():
    p = builtin_problem("split_quadratic")
    rep = applicability_report(p, {"xi_sup": 0.3, "eta_z2": 0.1, "f0_int": 0.5})
    assert rep["barrier-stitch"]["verdict"] == "applies"
    assert rep["barrier-stitch"]["envelope_scale"] >= 1.0
    assert rep["suggested_strategy"] == "global-stitch"


def test_applicability_opaque_generator_not_checkable():
    base = builtin_problem("martingale")
    opaque = dataclasses.replace(base, generator=lambda t, y, z, yd, zd: 0.0 * y)
    rep = applicability_report(opaque, {"xi_sup": 0.5})
    for key in ("small-terminal", "local-window", "barrier-stitch", "transform"):
        assert rep[key]["verdict"] == "not-checkable"
    assert rep["suggested_strategy"] == "lipschitz"
