"""Norm estimators and theorem-conclusion checks for discrete solutions.

Estimates the sup and quadratic-tail norms of a solved pair, checks the
exponential a-priori bound at t = 0, tests ball/barrier membership against
bundles from the constants module, and summarizes outer-iteration decay.
Everything here is a read-only consumer of DiscreteSolution tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import mpmath as mp
import numpy as np

from .condexp import BasisSpec, apply_conditional, fit_conditional
from .constants import LocalWindowBundle, SmallTerminalBundle
from .problem import ProblemSpec
from .solver_lipschitz import DiscreteSolution

_BIAS_NOTE = (
    "stopping-time sup approximated by grid-time sup and esssup by sample max; "
    "both biases are downward"
)


@dataclass(frozen=True)
class NormReport:
    y_sup: float
    z_z2: float
    per_slice_z2: np.ndarray
    bias_note: str = _BIAS_NOTE


def z2_norm_estimate(
    solution: DiscreteSolution,
    basis: Optional[BasisSpec] = None,
    i_lo: int = 0,
    i_hi: Optional[int] = None,
) -> NormReport:
    """Estimate sup_tau E_tau[sum of remaining |Z|^2 h] over grid times.

    Per slice i the pathwise tail sum over [t_i, t_hi] is regressed onto the
    slice-i states; the report takes the max of the fitted values over paths
    and then over slices.  Restricting [i_lo, i_hi] supports window-local
    membership checks.
    """
    if basis is None:
        basis = BasisSpec()
    grid = solution.grid
    if i_hi is None:
        i_hi = grid.n_total
    # slice j carries the interval [t_j, t_{j+1}); the right endpoint adds none
    z_sq = (solution.Z[i_lo:i_hi] ** 2).sum(axis=(2, 3)) * grid.h  # (slices, n)
    tail = np.cumsum(z_sq[::-1], axis=0)[::-1]
    per_slice = np.zeros(i_hi - i_lo + 1)
    for k in range(tail.shape[0]):
        states = solution.ensemble.states[i_lo + k]
        spread = float(np.ptp(states[:, 0])) if states.shape[1] == 1 else 1.0
        if spread == 0.0:
            per_slice[k] = float(np.mean(tail[k]))
        else:
            est = fit_conditional(states, tail[k], basis)
            per_slice[k] = float(apply_conditional(est, states).max())
    y_sup = float(np.abs(solution.Y[i_lo : i_hi + 1]).max())
    return NormReport(
        y_sup=y_sup,
        z_z2=float(per_slice.max()),
        per_slice_z2=per_slice,
    )


def apriori_bound_check(
    solution: DiscreteSolution,
    g_bound: Union[float, Sequence[float]],
    gamma: float,
    beta_lin: float,
) -> dict:
    """Exponential a-priori bound at t = 0 for drivers |f| <= g + beta|y| + (gamma/2)|z|^2.

    lhs = exp(gamma |Y_0|); rhs = ensemble mean of
    exp(gamma (e^{beta T} |Y_T| + integral of e^{beta s} g_s ds)).
    holds allows 3x the Monte Carlo relative standard error of the mean.
    Evaluated at t = 0 only, where the conditional expectation is a plain
    average and no regression error enters the diagnostic.
    """
    grid = solution.grid
    n_T = grid.n_T
    g = np.asarray(g_bound, dtype=float)
    if g.ndim == 0:
        g = np.full(n_T, float(g))
    if g.shape[0] < n_T:
        raise ValueError(f"g_bound needs {n_T} per-slice values, got {g.shape[0]}")
    t_core = grid.times[:n_T]
    g_integral = float(np.sum(np.exp(beta_lin * t_core) * g[:n_T]) * grid.h)
    xi_T = np.abs(solution.Y[n_T][:, 0])
    samples = np.exp(gamma * (np.exp(beta_lin * grid.T) * xi_T + g_integral))
    rhs = float(samples.mean())
    rel_se = float(samples.std() / (np.sqrt(samples.size) * rhs))
    y0 = float(np.abs(np.mean(solution.Y[0][:, 0])))
    lhs = float(np.exp(gamma * y0))
    return {
        "holds": bool(lhs <= rhs * (1.0 + 3.0 * rel_se)),
        "margin": rhs - lhs,
        "lhs": lhs,
        "rhs": rhs,
        "rel_se": rel_se,
    }


def ball_membership(
    solution: DiscreteSolution,
    bundle: Union[SmallTerminalBundle, LocalWindowBundle],
    slack: float = 0.1,
    basis: Optional[BasisSpec] = None,
    i_lo: int = 0,
    i_hi: Optional[int] = None,
) -> dict:
    """Check the solved pair against the solution set the certifying theorem names.

    Small-terminal bundles use one condition, y_sup^2 + z_z2 <= radius_sq;
    window bundles use the pair (exponential sup bound, z_z2 <= z2_bound).
    The exponential condition is compared on the log scale because its right
    side can exceed float range; slack enters as log(1 + slack) there.
    """
    report = z2_norm_estimate(solution, basis=basis, i_lo=i_lo, i_hi=i_hi)
    if isinstance(bundle, SmallTerminalBundle):
        lhs = report.y_sup**2 + report.z_z2
        rhs = float(bundle.radius_sq) * (1.0 + slack)
        return {
            "kind": "small-terminal",
            "member": bool(lhs <= rhs),
            "lhs": lhs,
            "rhs": rhs,
            "margin": rhs - lhs,
            "norms": report,
        }
    rate = 2.0 * float(bundle.gamma) / (1.0 - float(bundle.alpha_holder))
    sup_lhs_log = rate * report.y_sup
    sup_rhs_log = bundle.exp_sup_log_bound() + mp.log(1 + slack)
    z_rhs = float(bundle.z2_bound) * (1.0 + slack)
    sup_ok = bool(mp.mpf(sup_lhs_log) <= sup_rhs_log)
    z_ok = bool(report.z_z2 <= z_rhs)
    return {
        "kind": "local-window",
        "member": sup_ok and z_ok,
        "sup_condition": sup_ok,
        "z_condition": z_ok,
        "sup_lhs_log": float(sup_lhs_log),
        "sup_rhs_log": float(sup_rhs_log) if sup_rhs_log < mp.mpf(1e300) else float("inf"),
        "z_lhs": report.z_z2,
        "z_rhs": z_rhs,
        "norms": report,
    }


def contraction_report(outer_diffs: Sequence[float]) -> dict:
    """Ratios of successive outer diffs; geometric decay means every ratio past the first is < 1."""
    diffs = [float(v) for v in outer_diffs]
    if len(diffs) < 3:
        raise ValueError("need at least 3 outer diffs to assess decay")
    ratios = []
    for a, b in zip(diffs, diffs[1:]):
        ratios.append(b / a if a > 0 else 0.0)
    geometric = all(r < 1.0 for r in ratios[1:])
    positive = [r for r in ratios if r > 0]
    if positive and len(positive) == len(ratios):
        fitted = float(np.exp(np.mean(np.log(ratios))))
    else:
        fitted = 0.0
    return {"ratios": ratios, "geometric": geometric, "fitted_rate": fitted}


def estimate_terminal_norms(
    problem: ProblemSpec,
    n_T: int = 32,
    n_paths: int = 4096,
    seed: int = 0,
) -> Mapping[str, float]:
    """Sample-based stand-ins for the data norms the certification formulas need.

    Uses declared sup/z2 hints when the terminal specs carry them; otherwise
    estimates from a modest simulated ensemble (sample max for sup norms,
    max over slices of the mean remaining tail for the z-block norm).
    f0_int is the Riemann sum of |driver at the zero state| over [0, T].
    """
    from .paths import simulate_brownian

    grid = problem.grid(n_T)
    xi_sup = problem.terminal_xi.sup_bound
    eta_z2 = problem.terminal_eta.z2_norm
    if xi_sup is None or eta_z2 is None:
        ens = simulate_brownian(grid, problem.d, n_paths, seed)
        xi_vals = np.empty((grid.n_total - grid.n_T + 1, n_paths))
        eta_sq = np.empty_like(xi_vals)
        for k, i in enumerate(range(grid.n_T, grid.n_total + 1)):
            t = float(grid.times[i])
            xi_vals[k] = np.abs(problem.terminal_xi(t, ens.states[i]))
            eta_sq[k] = np.asarray(problem.terminal_eta(t, ens.states[i])) ** 2
        if xi_sup is None:
            xi_sup = float(xi_vals.max())
        if eta_z2 is None:
            tails = np.cumsum(eta_sq[::-1], axis=0)[::-1] * grid.h
            eta_z2 = float(np.sqrt(tails.mean(axis=1).max()))
    f0 = [problem.generator.f_at_zero(float(t)) for t in grid.times[: grid.n_T]]
    f0_int = float(np.sum(f0) * grid.h)
    return {"xi_sup": float(xi_sup), "eta_z2": float(eta_z2), "f0_int": f0_int}
