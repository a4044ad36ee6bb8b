"""Problem catalog: driver/terminal wrappers and builtin instances.

The solvers consume a handful of callable wrappers:

  * GeneratorSpec.driver(t, y, z, expect) -> (n, m) driver values, where y is
    (n, m), z is (n, m, d) and expect maps each anticipated term's key to its
    per-path conditional-expectation estimate (n,).
  * AnticipatedTerm.inner(t_d, y_d, t_z, z_z, y_z) -> (n,) pathwise values of
    the expression inside E[...], evaluated at the shifted slices (y_d at the
    y-shift; z_z and y_z at the z-shift).
  * TerminalSpec.fn(t, w) -> (n,) terminal data from the Brownian state
    w (n, d); one spec each for the y-block and the z-block.
  * LambdaSpec(t, y) -> the coefficient of the |z|^2 term handled by the
    exponential change of variables.

Builtin problems are registered in PROBLEMS and constructed by
builtin_problem(name, **overrides); driver expressions go through the
genexpr DSL so the growth classifier sees them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import genexpr
from .constants import small_terminal_constants
from .problem import DelaySpec, ProblemSpec, StructuralConstants


@dataclass(frozen=True)
class AnticipatedTerm:
    key: str
    inner: Callable = field(repr=False)


@dataclass(frozen=True)
class GeneratorSpec:
    name: str
    driver: Callable = field(repr=False)
    terms: tuple = ()
    growth: Optional[genexpr.GrowthReport] = None
    source: Optional[str] = None
    scalar_only: bool = True

    def f_at_zero(self, t: float) -> float:
        """|f(t, 0, 0, 0, 0)|: the driver at zero state AND zero anticipated data.

        The anticipated terms are evaluated at zero arguments too; their inner
        expressions need not vanish there (e.g. E[abs(cos(...))] gives 1).
        """
        y0 = np.zeros((1, 1))
        z0 = np.zeros((1, 1, 1))
        expect = {
            term.key: np.asarray(term.inner(t, y0, t, z0, y0), dtype=float)
            for term in self.terms
        }
        return float(abs(np.asarray(self.driver(t, y0, z0, expect))[0, 0]))


@dataclass(frozen=True)
class TerminalSpec:
    """One terminal datum g(t, W_t) on [T, T+K] (either the y- or the z-block)."""

    name: str
    fn: Callable = field(repr=False)
    sup_bound: Optional[float] = None  # known sup bound; None = unknown/unbounded
    z2_norm: Optional[float] = None  # known squared-integral norm (z-block data)

    def __call__(self, t, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return _as_paths(self.fn(t, w), w.shape[0])


@dataclass(frozen=True)
class LambdaSpec:
    """Coefficient lambda(t, y) of the |z|^2 driver term removed by the transform."""

    name: str
    func: Callable = field(repr=False)
    d_t: Optional[Callable] = field(default=None, repr=False)  # time partial, if known
    source: Optional[str] = None

    def __call__(self, t, y):
        return self.func(t, np.asarray(y, dtype=float))


def _as_paths(values, n: int) -> np.ndarray:
    out = np.asarray(values, dtype=float)
    if out.ndim == 0:
        return np.full(n, float(out))
    return out


def compile_generator(src: str, name: Optional[str] = None) -> GeneratorSpec:
    """Build a GeneratorSpec from a driver expression.

    Each distinct E[...] subexpression becomes an AnticipatedTerm keyed by its
    canonical text; the driver looks those keys up in the expect mapping.
    Scalar problems only (the expression grammar has scalar y and z).
    """
    ast = genexpr.parse_generator(src)
    terms = []
    for key, inner in genexpr.expectation_terms(ast):
        def inner_eval(t_d, y_d, t_z, z_z, y_z, _inner=inner):
            ctx = {"ydelta": y_d[:, 0], "zzeta": z_z[:, 0, 0]}
            return _as_paths(genexpr.eval_node(_inner, ctx), y_d.shape[0])

        terms.append(AnticipatedTerm(key=key, inner=inner_eval))

    def driver(t, y, z, expect):
        ctx = {"t": t, "y": y[:, 0], "z": z[:, 0, 0], "expectations": expect}
        return _as_paths(genexpr.eval_node(ast, ctx), y.shape[0])[:, None]

    return GeneratorSpec(
        name=name or src,
        driver=driver,
        terms=tuple(terms),
        growth=genexpr.analyze_growth(ast),
        source=src,
    )


def terminal_from_expr(
    name: str,
    src: str,
    sup_bound: Optional[float] = None,
    z2_norm: Optional[float] = None,
) -> TerminalSpec:
    """Compile a terminal expression in t and w into a TerminalSpec."""
    ast = genexpr.parse_terminal(src)

    def fn(t, w):
        return genexpr.eval_node(ast, {"t": t, "w": w[:, 0]})

    return TerminalSpec(name=name, fn=fn, sup_bound=sup_bound, z2_norm=z2_norm)


def terminal_from_callable(
    name: str,
    fn: Callable,
    sup_bound: Optional[float] = None,
    z2_norm: Optional[float] = None,
) -> TerminalSpec:
    """Wrap a callable (t, w_scalar (n,)) -> (n,) into a TerminalSpec."""
    return TerminalSpec(
        name=name,
        fn=lambda t, w: fn(t, w[:, 0]),
        sup_bound=sup_bound,
        z2_norm=z2_norm,
    )


def compile_lambda(src: str, name: Optional[str] = None) -> LambdaSpec:
    """Parse a lambda(t, y) expression (same grammar, variables t and y only)."""
    ast = genexpr.parse_generator(src)
    used = genexpr.variables_used(ast)
    if not used <= {"t", "y"}:
        raise genexpr.ScopeError(
            f"lambda expression may use t and y only, found {sorted(used)}", 0
        )
    if any(isinstance(node, genexpr.Expect) for node in genexpr.walk(ast)):
        raise genexpr.ScopeError("lambda expression cannot contain E[...]", 0)

    def fn(t, y):
        y = np.asarray(y, dtype=float)
        vals = genexpr.eval_node(ast, {"t": t, "y": y})
        return np.broadcast_to(np.asarray(vals, dtype=float), y.shape).copy()

    return LambdaSpec(name=name or src, func=fn, source=src)


ZERO_TERMINAL = terminal_from_callable(
    "zero", lambda t, w: np.zeros_like(w), sup_bound=0.0, z2_norm=0.0
)

LAMBDA_ONE = LambdaSpec(
    "one",
    lambda t, y: np.ones_like(np.asarray(y, dtype=float)),
    d_t=lambda t, y: np.zeros_like(np.asarray(y, dtype=float)),
)
# lambda(t, y) = exp(-y^2) * t: bounded, decaying in y, used by the transform demo
LAMBDA_GAUSS_TIME = LambdaSpec(
    "gauss_time",
    lambda t, y: np.exp(-np.asarray(y, dtype=float) ** 2) * t,
    d_t=lambda t, y: np.exp(-np.asarray(y, dtype=float) ** 2),
)


def _xi_variant(form: str, level: float) -> TerminalSpec:
    """Constant or bounded-oscillating terminal at a given sup level."""
    if form == "constant":
        return terminal_from_callable(
            f"const_{level:g}",
            lambda t, w: np.full(w.shape[0], float(level)),
            sup_bound=abs(level),
        )
    if form == "sin":
        return terminal_from_callable(
            f"sin_{level:g}", lambda t, w: level * np.sin(w), sup_bound=abs(level)
        )
    if form == "cos":
        return terminal_from_callable(
            f"cos_{level:g}", lambda t, w: level * np.cos(w), sup_bound=abs(level)
        )
    raise ValueError(f"unknown terminal form {form!r}")


def _martingale(T: float = 1.0) -> ProblemSpec:
    """Driver 0, terminal W_T: the solution is the Brownian motion itself (Z = 1)."""
    return ProblemSpec(
        T=T,
        K=0.0,
        generator=compile_generator("0", name="zero"),
        terminal_xi=terminal_from_expr("brownian", "w"),
        terminal_eta=terminal_from_expr("one", "1.0", sup_bound=1.0),
        constants=StructuralConstants(C=1.0, gamma=1.0, L=1.0),
    )


def _constant_driver(c: float = 1.0, T: float = 1.0) -> ProblemSpec:
    """Driver c, zero terminal: Y_t = c*(T - t) exactly, Z = 0."""
    src = f"neg({abs(float(c))!r})" if c < 0 else repr(float(c))
    return ProblemSpec(
        T=T,
        K=0.0,
        generator=compile_generator(src, name=f"const_{c:g}"),
        terminal_xi=ZERO_TERMINAL,
        terminal_eta=ZERO_TERMINAL,
        constants=StructuralConstants(C=max(abs(c), 1.0), gamma=1.0, L=1.0),
    )


def _anticipated_identity(xi0: float = 1.0, T: float = 1.0) -> ProblemSpec:
    """Driver E_t[Y_{t+T}] with constant terminal xi0 on [T, 2T].

    The anticipated slice always lands in the terminal block, so the driver
    is constantly xi0 and Y_t = xi0*(1 + T - t); Y_0 = xi0*(1 + T).
    """
    return ProblemSpec(
        T=T,
        K=T,
        generator=compile_generator("E[ydelta]", name="anticipated_identity"),
        terminal_xi=_xi_variant("constant", xi0),
        terminal_eta=ZERO_TERMINAL,
        delta_shift=DelaySpec("constant", a=T),
        zeta_shift=DelaySpec("constant", a=T),
        constants=StructuralConstants(C=1.0, gamma=1.0, L=1.0),
    )


def _small_quadratic(
    eps0: Optional[float] = None,
    T: float = 1.0,
    K: float = 0.5,
    xi_form: str = "constant",
) -> ProblemSpec:
    """Fully quadratic driver with anticipated squares; solvable for small terminals.

    Default terminal level is half the admissible radius for (C, L) = (1, 1),
    which puts the fixed-point contraction modulus at exactly 1/8.
    """
    if eps0 is None:
        bundle = small_terminal_constants(1.0, 1.0, T, K)
        eps0 = float(bundle.radius_sq) ** 0.5 / 2.0
    return ProblemSpec(
        T=T,
        K=K,
        generator=compile_generator(
            "y^2 + z^2 + E[ydelta^2 + zzeta^2]", name="small_quadratic"
        ),
        terminal_xi=_xi_variant(xi_form, eps0),
        terminal_eta=ZERO_TERMINAL,
        delta_shift=DelaySpec("constant", a=K),
        zeta_shift=DelaySpec("constant", a=K),
        constants=StructuralConstants(C=1.0, gamma=2.0, L=1.0),
    )


def _subquadratic(
    alpha: float = 0.5,
    xi_level: float = 0.1,
    T: float = 1.0,
    K: float = 0.5,
    xi_form: str = "constant",
) -> ProblemSpec:
    """Quadratic in z, sub-quadratic (power 1+alpha) in the anticipated z."""
    src = f"1 + abs(y) + z^2 + E[abs(ydelta) + abs(zzeta)^{1.0 + alpha!r}]"
    return ProblemSpec(
        T=T,
        K=K,
        generator=compile_generator(src, name=f"subquadratic_{alpha:g}"),
        terminal_xi=_xi_variant(xi_form, xi_level),
        terminal_eta=ZERO_TERMINAL,
        delta_shift=DelaySpec("constant", a=K),
        zeta_shift=DelaySpec("constant", a=K),
        constants=StructuralConstants(C=1.0, gamma=2.0, alpha_holder=alpha, L=1.0),
    )


def _split_quadratic(
    xi_level: float = 0.5,
    T: float = 1.0,
    K: float = 0.5,
    xi_form: str = "constant",
) -> ProblemSpec:
    """Pure |z|^2 summand plus a bounded-growth remainder: stitchable globally."""
    src = "1 + z^2 + 1 + abs(y) + E[abs(ydelta) + abs(sin(zzeta))]"
    return ProblemSpec(
        T=T,
        K=K,
        generator=compile_generator(src, name="split_quadratic"),
        terminal_xi=_xi_variant(xi_form, xi_level),
        terminal_eta=ZERO_TERMINAL,
        delta_shift=DelaySpec("constant", a=K),
        zeta_shift=DelaySpec("constant", a=K),
        constants=StructuralConstants(C=1.0, gamma=2.0, L=1.0),
    )


def _pure_quadratic(T: float = 1.0) -> ProblemSpec:
    """Driver 1 + |z|^2 via the lambda structure, zero terminal: Y_t = T - t."""
    return ProblemSpec(
        T=T,
        K=0.0,
        generator=compile_generator("1", name="pure_quadratic_base"),
        terminal_xi=ZERO_TERMINAL,
        terminal_eta=ZERO_TERMINAL,
        lambda_term=LAMBDA_ONE,
        constants=StructuralConstants(C=1.0, gamma=2.0, L=1.0),
    )


def _bounded_anticipated(
    T: float = 1.0, K: float = 0.5, xi_form: str = "brownian"
) -> ProblemSpec:
    """Bounded driver plus lambda(t,y)|z|^2 with lambda = exp(-y^2) t.

    The base driver has constant z-growth, so the exponential change of
    variables carries the whole quadratic part.
    """
    src = "1 + abs(sin(y)) + E[abs(cos(ydelta)) + abs(cos(zzeta))]"
    if xi_form == "brownian":
        terminal = terminal_from_expr("brownian", "w")
    else:
        terminal = _xi_variant(xi_form, 0.5)
    return ProblemSpec(
        T=T,
        K=K,
        generator=compile_generator(src, name="bounded_anticipated"),
        terminal_xi=terminal,
        terminal_eta=ZERO_TERMINAL,
        lambda_term=LAMBDA_GAUSS_TIME,
        delta_shift=DelaySpec("constant", a=K),
        zeta_shift=DelaySpec("constant", a=K),
        constants=StructuralConstants(C=4.0, gamma=2.0, L=1.0),
    )


PROBLEMS = {
    "martingale": _martingale,
    "constant_driver": _constant_driver,
    "anticipated_identity": _anticipated_identity,
    "small_quadratic": _small_quadratic,
    "subquadratic": _subquadratic,
    "split_quadratic": _split_quadratic,
    "pure_quadratic": _pure_quadratic,
    "bounded_anticipated": _bounded_anticipated,
}


def builtin_problem(name: str, **overrides) -> ProblemSpec:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise KeyError(
            f"unknown builtin problem {name!r}; available: {', '.join(sorted(PROBLEMS))}"
        ) from None
    return factory(**overrides)


def reference_y0(name: str, **overrides):
    """Exact Y_0 for the builtins with a closed form, else None.

    Only problems whose solution is deterministic in time qualify; the
    randomized-terminal variants (xi_form other than "constant") drop out.
    """
    if overrides.get("xi_form", "constant") not in ("constant",) and name in (
        "small_quadratic", "bounded_anticipated"
    ):
        return None
    T = float(overrides.get("T", 1.0))
    if name == "martingale":
        return 0.0
    if name == "constant_driver":
        return float(overrides.get("c", 1.0)) * T
    if name == "anticipated_identity":
        return float(overrides.get("xi0", 1.0)) * (1.0 + T)
    if name == "pure_quadratic":
        return T
    return None
