"""Builtin problem instances and the compilation wrappers around the DSL."""

import numpy as np
import pytest

from absde_lab import genexpr
from absde_lab.catalog import (
    PROBLEMS,
    builtin_problem,
    compile_generator,
    compile_lambda,
    reference_y0,
    terminal_from_callable,
    terminal_from_expr,
)


def test_problem_registry_contents():
    expected = {
        "martingale", "constant_driver", "anticipated_identity",
        "small_quadratic", "subquadratic", "split_quadratic",
        "pure_quadratic", "bounded_anticipated",
    }
    assert set(PROBLEMS) == expected
    for name in expected:
        p = builtin_problem(name)
        assert p.T > 0 and p.K >= 0
        assert p.m == 1 and p.d == 1


def test_unknown_problem_name():
    with pytest.raises(KeyError, match="available"):
        builtin_problem("ornstein")


def test_reference_values():
    assert reference_y0("martingale") == 0.0
    assert reference_y0("constant_driver", c=2.0, T=0.5) == 1.0
    assert reference_y0("anticipated_identity") == 2.0
    assert reference_y0("anticipated_identity", xi0=0.3, T=2.0) == pytest.approx(0.9)
    assert reference_y0("pure_quadratic") == 1.0
    assert reference_y0("small_quadratic") is None
    assert reference_y0("bounded_anticipated", xi_form="sin") is None


def test_generator_compilation_and_f_at_zero():
    gen = compile_generator("1 + y^2 + E[abs(cos(zzeta))]")
    assert gen.source == "1 + y^2 + E[abs(cos(zzeta))]"
    assert len(gen.terms) == 1
    assert gen.growth is not None
    # at zero state the anticipated term contributes cos(0) = 1
    assert gen.f_at_zero(0.0) == pytest.approx(2.0)

    y = np.array([[0.5], [1.0]])
    z = np.zeros((2, 1, 1))
    expect = {gen.terms[0].key: np.array([1.0, 1.0])}
    vals = gen.driver(0.0, y, z, expect)
    np.testing.assert_allclose(vals[:, 0], [2.25, 3.0])


def test_terminal_wrappers_broadcast():
    spec = terminal_from_expr("shifted", "w + t")
    w = np.array([[0.1], [0.2], [0.3]])
    np.testing.assert_allclose(spec(1.0, w), [1.1, 1.2, 1.3])

    const = terminal_from_callable("c", lambda t, w: 0.25, sup_bound=0.25)
    np.testing.assert_allclose(const(0.0, w), [0.25, 0.25, 0.25])
    assert const.sup_bound == 0.25


def test_lambda_compilation_scope():
    lam = compile_lambda("t * exp(neg(y^2))")
    got = lam(2.0, np.array([0.0, 1.0]))
    np.testing.assert_allclose(got, [2.0, 2.0 * np.exp(-1.0)])
    with pytest.raises(genexpr.ScopeError):
        compile_lambda("z^2")
    with pytest.raises(genexpr.ScopeError):
        compile_lambda("E[ydelta]")


def test_small_quadratic_default_level_sits_inside_radius():
    p = builtin_problem("small_quadratic")
    # declared terminal sup must honor the advertised smallness margin
    assert p.terminal_xi.sup_bound is not None
    assert p.terminal_xi.sup_bound > 0
    from absde_lab.constants import small_terminal_constants

    bundle = small_terminal_constants(1.0, 1.0, p.T, p.K)
    assert p.terminal_xi.sup_bound**2 <= float(bundle.radius_sq)


def test_xi_form_variants_change_terminal():
    base = builtin_problem("small_quadratic")
    sin_var = builtin_problem("small_quadratic", xi_form="sin")
    w = np.array([[0.3], [0.9]])
    vals_base = base.terminal_xi(base.T, w)
    vals_sin = sin_var.terminal_xi(base.T, w)
    assert np.allclose(vals_base, vals_base[0])  # constant form
    assert not np.allclose(vals_sin, vals_sin[0])  # state-dependent form
