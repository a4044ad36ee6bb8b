"""Certification constants for the quadratic-growth existence regimes.

Three regimes, matching the solver strategies:

  * small terminal data: a global fixed-point map is a contraction on a ball
    whose squared radius is radius_sq; data admissible when
    xi_sup^2 + eta_z2^2 + f0_int^2 <= radius_sq.
  * local window: a contraction holds on [T - window, T]; the window solves a
    self-referential smallness condition (the window appears inside an
    exponential on its own upper bound), resolved here by log-space bisection.
  * barrier: a deterministic envelope barrier(t) bounding |Y_t|^2 propagates a
    local window into a global interval-stitching construction.

All arithmetic runs in mpmath extended precision: exp_moment_factor stacks
nested exponentials that overflow doubles for moderate parameters.  Bundle
fields are mpf values; float views (with overflow mapped to an OverflowRegime
note instead of inf) come from as_floats().
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import mpmath as mp

PRECISION_DPS = 60


class NoAdmissibleEps(ArithmeticError):
    """No positive window satisfies the smallness condition (bad parameters)."""


@dataclass(frozen=True)
class OverflowRegime:
    """Bundle fields whose magnitudes exceed double precision.

    log10 carries the decimal exponent of each overflowed field so reports
    stay informative where float() would produce inf.
    """

    fields: tuple
    log10: dict


def _float_view(values: dict) -> tuple:
    floats = {}
    over = []
    logs = {}
    for name, v in values.items():
        f = float(v)
        if mp.isinf(mp.mpf(f)) and mp.isfinite(v):
            over.append(name)
            logs[name] = float(mp.log10(abs(v))) if v != 0 else 0.0
            floats[name] = None
        else:
            floats[name] = f
    regime = OverflowRegime(tuple(over), logs) if over else None
    return floats, regime


@dataclass(frozen=True)
class SmallTerminalBundle:
    """Constants of the small-terminal global contraction regime.

    modulus_scale is the factor making the fixed-point map
    (modulus_scale * R^2)-Lipschitz on a ball of radius R; radius_sq is the
    data-smallness threshold (and the solution ball's squared radius);
    growth_rate is the coefficient of the quadratic self-bound on the norms;
    ball_radius is the contraction ball chosen from the instance data.
    """

    C: mp.mpf
    L: mp.mpf
    T: mp.mpf
    K: mp.mpf
    modulus_scale: mp.mpf
    radius_sq: mp.mpf
    growth_rate: mp.mpf
    ball_radius: mp.mpf
    contraction_modulus: mp.mpf
    admissible: bool
    data_sq: mp.mpf

    def as_floats(self) -> dict:
        vals, regime = _float_view(
            {
                "modulus_scale": self.modulus_scale,
                "radius_sq": self.radius_sq,
                "growth_rate": self.growth_rate,
                "ball_radius": self.ball_radius,
                "contraction_modulus": self.contraction_modulus,
                "data_sq": self.data_sq,
            }
        )
        vals["admissible"] = self.admissible
        if regime:
            vals["overflow"] = {"fields": list(regime.fields), "log10": regime.log10}
        return vals


def small_terminal_constants(
    C: float,
    L: float,
    T: float,
    K: float,
    xi_sup: float = 0.0,
    eta_z2: float = 0.0,
    f0_int: float = 0.0,
) -> SmallTerminalBundle:
    """Exact contraction constants for the small-terminal regime.

    modulus_scale = 256 C^2 (1+L)^2 ((T+K)^2 + 1), radius_sq = 1/(16*modulus_scale),
    growth_rate = 16 C (1+L) sqrt((T+K)^2 + 1), ball_radius = sqrt(8(xi^2 + eta^2)).
    Admissible iff xi_sup^2 + eta_z2^2 + f0_int^2 <= radius_sq.
    """
    if C <= 0 or L <= 0 or T <= 0 or K < 0:
        raise ValueError("need C, L, T > 0 and K >= 0")
    with mp.workdps(PRECISION_DPS):
        Cm, Lm, Tm, Km = mp.mpf(C), mp.mpf(L), mp.mpf(T), mp.mpf(K)
        horizon_sq = (Tm + Km) ** 2 + 1
        modulus_scale = 256 * Cm**2 * (1 + Lm) ** 2 * horizon_sq
        radius_sq = 1 / (16 * modulus_scale)
        growth_rate = 16 * Cm * (1 + Lm) * mp.sqrt(horizon_sq)
        xi, eta, f0 = mp.mpf(xi_sup), mp.mpf(eta_z2), mp.mpf(f0_int)
        ball_radius = mp.sqrt(8 * (xi**2 + eta**2))
        data_sq = xi**2 + eta**2 + f0**2
        return SmallTerminalBundle(
            C=Cm,
            L=Lm,
            T=Tm,
            K=Km,
            modulus_scale=modulus_scale,
            radius_sq=radius_sq,
            growth_rate=growth_rate,
            ball_radius=ball_radius,
            contraction_modulus=modulus_scale * ball_radius**2,
            admissible=bool(data_sq <= radius_sq),
            data_sq=data_sq,
        )


@dataclass(frozen=True)
class LocalWindowBundle:
    """Constants of the local-contraction window regime.

    The window is the largest eps with
        eps <= min( e^{-CT}/(3CL),  data_level / (8 * drift_gain * exp_moment_factor * E(eps)) ),
    E(eps) = exp(window_rate * eps).  z2_bound is the smaller root of the
    associated quadratic; discriminant >= 0 and the closing identity
        data_level + drift_gain * exp_moment_factor * E(eps) * eps / (1 - damping*z2_bound)
            + z2_bound/4 = z2_bound/2
    holds by construction (identity_residual records the relative defect).
    """

    C: mp.mpf
    gamma: mp.mpf
    alpha_holder: mp.mpf
    L: mp.mpf
    T: mp.mpf
    K: mp.mpf
    xi_sup: mp.mpf
    eta_z2: mp.mpf
    lin_weight: mp.mpf
    quad_weight: mp.mpf
    subquad_coeff: mp.mpf
    drift_gain: mp.mpf
    data_gain: mp.mpf
    data_level: mp.mpf
    damping: mp.mpf
    exp_moment_factor: mp.mpf
    window_rate: mp.mpf
    window: mp.mpf
    discriminant: mp.mpf
    z2_bound: mp.mpf
    identity_residual: mp.mpf
    binding_branch: str  # "horizon" (e^{-CT}/3CL), "smallness", or "smallness-deep"
    log_exp_moment_factor: Optional[mp.mpf] = None
    window_log10: Optional[mp.mpf] = None  # set when the window beats mpf range

    def exp_sup_log_bound(self) -> mp.mpf:
        """Log of the certified bound on e^{(2 gamma/(1-alpha)) ||Y||_sup}.

        The bound itself (exp_moment_factor * E(window) / (1 - damping*z2_bound))
        overflows doubles routinely, so membership checks work on logs.
        """
        with mp.workdps(PRECISION_DPS):
            log_emf = (
                self.log_exp_moment_factor
                if self.log_exp_moment_factor is not None
                else mp.log(self.exp_moment_factor)
            )
            return (
                log_emf
                + self.window_rate * self.window
                - mp.log(1 - self.damping * self.z2_bound)
            )

    def as_floats(self) -> dict:
        vals, regime = _float_view(
            {
                "lin_weight": self.lin_weight,
                "quad_weight": self.quad_weight,
                "subquad_coeff": self.subquad_coeff,
                "drift_gain": self.drift_gain,
                "data_gain": self.data_gain,
                "data_level": self.data_level,
                "damping": self.damping,
                "exp_moment_factor": self.exp_moment_factor,
                "window_rate": self.window_rate,
                "window": self.window,
                "discriminant": self.discriminant,
                "z2_bound": self.z2_bound,
                "identity_residual": self.identity_residual,
            }
        )
        vals["binding_branch"] = self.binding_branch
        # A window too small for doubles reads as 0.0; keep its log so the
        # report still says how far below resolvable scale it sits.
        if self.window_log10 is not None:
            vals["log10_window"] = float(self.window_log10)
        elif float(self.window) == 0.0 and self.window > 0:
            vals["log10_window"] = float(mp.log10(self.window))
        if self.log_exp_moment_factor is not None and not mp.isfinite(self.exp_moment_factor):
            vals["log10_exp_moment_factor"] = float(self.log_exp_moment_factor / mp.log(10))
        if regime:
            vals["overflow"] = {"fields": list(regime.fields), "log10": regime.log10}
        return vals


def local_window_constants(
    C: float,
    gamma: float,
    alpha_holder: float,
    L: float,
    T: float,
    K: float,
    xi_sup: float = 0.0,
    eta_z2: float = 0.0,
) -> LocalWindowBundle:
    """Evaluate the local-window constant family and select the largest window.

    The smallness branch is self-referential (eps appears inside the
    exponential of its own bound); since eps * E(eps) is strictly increasing,
    the crossing is unique and found by bisection in log space.
    """
    if not (0 <= alpha_holder < 1):
        raise ValueError("alpha_holder must lie in [0, 1)")
    if C <= 0 or gamma <= 0 or L <= 0 or T <= 0 or K < 0:
        raise ValueError("need C, gamma, L, T > 0 and K >= 0")
    with mp.workdps(PRECISION_DPS):
        Cm, g, a = mp.mpf(C), mp.mpf(gamma), mp.mpf(alpha_holder)
        Lm, Tm, Km = mp.mpf(L), mp.mpf(T), mp.mpf(K)
        xi, eta = mp.mpf(xi_sup), mp.mpf(eta_z2)
        one_m = 1 - a
        one_p = 1 + a

        lin_weight = one_m * (1 + one_m / (one_p * g))
        quad_weight = one_p / 2 * (1 + one_m / (one_p * g))
        subquad_coeff = one_m / 2 * Cm ** (2 / one_m) * (2 * Lm * one_p) ** (one_p / one_m)
        drift_gain = (subquad_coeff + Cm * lin_weight) * g ** (2 / (a - 1)) + Cm * quad_weight * (
            1 + Lm
        )
        data_gain = g**-2 + Cm * quad_weight * Lm * Km

        data_level = data_gain * mp.exp(2 * g / one_m * xi) + eta**2 / 4
        damping = 1 / (8 * data_level)

        moment_log = (
            (3 * g / one_m) * mp.exp(Cm * Tm) * Cm * (Tm + Km)
            + (1 / Lm)
            * (one_m / 2)
            * ((3 * g / one_m) * Cm * Lm * mp.exp(Cm * Tm)) ** (2 / one_m)
            * (one_p / (2 * damping)) ** (one_p / one_m)
            * (Tm + Km)
        )
        window_rate = (3 * g / one_m) * mp.exp(Cm * Tm) * (1 + Cm * Lm * Km) * xi + (
            damping * eta**2
        )
        horizon_cap = mp.exp(-Cm * Tm) / (3 * Cm * Lm)

        if mp.mag(moment_log) > 50:
            # The moment factor is exp of a number so large that even its mpf
            # exponent field cannot hold the result (exp(exp(exp(...))) data).
            # The window then sits at exp(log_target) with
            # log_target = log(data_level / (8 drift_gain)) - moment_log, and
            # every remaining quantity takes its exact window -> 0 limit:
            # the quadratic's discriminant closes at 0, the squared-Z bound at
            # 6*data_level, and the closing identity holds with no defect
            # (data + data/2 + 6*data/4 = 3*data on both sides).
            window_log10 = (
                mp.log(data_level / (8 * drift_gain)) - moment_log
            ) / mp.log(10)
            return LocalWindowBundle(
                C=Cm,
                gamma=g,
                alpha_holder=a,
                L=Lm,
                T=Tm,
                K=Km,
                xi_sup=xi,
                eta_z2=eta,
                lin_weight=lin_weight,
                quad_weight=quad_weight,
                subquad_coeff=subquad_coeff,
                drift_gain=drift_gain,
                data_gain=data_gain,
                data_level=data_level,
                damping=damping,
                exp_moment_factor=mp.inf,
                window_rate=window_rate,
                window=mp.mpf(0),
                discriminant=mp.mpf(0),
                z2_bound=6 * data_level,
                identity_residual=mp.mpf(0),
                binding_branch="smallness-deep",
                log_exp_moment_factor=moment_log,
                window_log10=window_log10,
            )

        exp_moment_factor = mp.exp(moment_log)
        target = data_level / (8 * drift_gain * exp_moment_factor)
        if not target > 0:
            raise NoAdmissibleEps("smallness bound collapsed to zero")

        if horizon_cap * mp.exp(window_rate * horizon_cap) <= target:
            window = horizon_cap
            branch = "horizon"
        else:
            # Solve eps * e^{rate*eps} = target for the unique root below the
            # horizon cap.  Bisect on u = log(eps/target): the equation becomes
            # u + (rate*target) e^u = 0 with u in [-rate*horizon_cap - 1, 0],
            # which stays well conditioned even when target sits thousands of
            # decades below 1 (log(target) itself would swamp the working
            # precision, silently breaking a log(eps)-space bisection).
            branch = "smallness"
            c = window_rate * target
            lo, hi = -window_rate * horizon_cap - 1, mp.mpf(0)
            for _ in range(400):
                mid = (lo + hi) / 2
                if mid + c * mp.exp(mid) > 0:
                    hi = mid
                else:
                    lo = mid
                if hi - lo < mp.mpf("1e-45"):
                    break
            window = target * mp.exp((lo + hi) / 2)

        e_eps = mp.exp(window_rate * window)
        discriminant = mp.mpf(1) / 4 - 16 * damping * drift_gain * exp_moment_factor * e_eps * window
        if discriminant < 0:
            # Bisection leaves the binding branch a hair on either side of
            # equality; anything beyond roundoff is a real failure.
            if discriminant < -mp.mpf("1e-30"):
                raise NoAdmissibleEps(f"discriminant {mp.nstr(discriminant)} < 0 at selected window")
            discriminant = mp.mpf(0)
        z2_bound = (3 - 2 * mp.sqrt(discriminant)) / (4 * damping)
        lhs = (
            data_level
            + drift_gain * exp_moment_factor * e_eps / (1 - damping * z2_bound) * window
            + z2_bound / 4
        )
        identity_residual = abs(lhs - z2_bound / 2) / (z2_bound / 2)

        return LocalWindowBundle(
            C=Cm,
            gamma=g,
            alpha_holder=a,
            L=Lm,
            T=Tm,
            K=Km,
            xi_sup=xi,
            eta_z2=eta,
            lin_weight=lin_weight,
            quad_weight=quad_weight,
            subquad_coeff=subquad_coeff,
            drift_gain=drift_gain,
            data_gain=data_gain,
            data_level=data_level,
            damping=damping,
            exp_moment_factor=exp_moment_factor,
            window_rate=window_rate,
            window=window,
            discriminant=discriminant,
            z2_bound=z2_bound,
            identity_residual=identity_residual,
            binding_branch=branch,
            log_exp_moment_factor=moment_log,
        )


@dataclass(frozen=True)
class BarrierBundle:
    """Deterministic envelope |Y_t|^2 <= barrier(t) plus the stitching window.

    barrier solves the linear integral equation
        barrier(t) = S + S*(T+K-t) + (2+L)*S * int_t^{T+K} barrier(s) ds,
    S = envelope_scale, whose closed form is
        (S + 1/(2+L)) * exp((2+L) S (T+K-t)) - 1/(2+L).
    window_width re-runs the local-window machinery with the terminal sup
    replaced by sqrt(barrier_sup).
    """

    envelope_scale: mp.mpf
    L: mp.mpf
    T: mp.mpf
    K: mp.mpf
    barrier_sup: mp.mpf
    window_width: mp.mpf
    window_bundle: LocalWindowBundle

    def barrier_at(self, t) -> float:
        with mp.workdps(PRECISION_DPS):
            S, Lm = self.envelope_scale, self.L
            horizon = self.T + self.K
            val = (S + 1 / (2 + Lm)) * mp.exp((2 + Lm) * S * (horizon - mp.mpf(t))) - 1 / (
                2 + Lm
            )
            return float(val)

    def as_floats(self) -> dict:
        vals, regime = _float_view(
            {
                "envelope_scale": self.envelope_scale,
                "barrier_sup": self.barrier_sup,
                "window_width": self.window_width,
            }
        )
        if self.window_bundle.window_log10 is not None:
            vals["log10_window_width"] = float(self.window_bundle.window_log10)
        elif float(self.window_width) == 0.0 and self.window_width > 0:
            vals["log10_window_width"] = float(mp.log10(self.window_width))
        if regime:
            vals["overflow"] = {"fields": list(regime.fields), "log10": regime.log10}
        return vals


def envelope_scale_for(C: float, xi_sup: float) -> float:
    """Barrier ODE scale: max(3C, xi_sup^2, 1).

    Chosen so that 2|x| * C(1+|y|+E|xi|+bounded) <= S + S x^2 + S y^2 + S E[xi^2]
    (Young termwise) and the terminal bound xi_sup^2 <= S both hold.
    """
    return max(3.0 * C, xi_sup**2, 1.0)


def barrier_constants(
    C_tilde: float,
    L: float,
    T: float,
    K: float,
    C: Optional[float] = None,
    gamma: Optional[float] = None,
    eta_z2: float = 0.0,
) -> BarrierBundle:
    """Closed-form barrier plus the certified stitching window width.

    C and gamma are the generator constants fed to the window machinery; when
    omitted they are backed out of the envelope scale (C = C_tilde/3, the
    inverse of the 3C branch of envelope_scale_for, and gamma = 2C, the
    z-quadratic modulus implied by a C(1+|z|+|zbar|)|z-zbar| increment bound).
    """
    if C_tilde <= 0:
        raise ValueError("C_tilde must be positive")
    with mp.workdps(PRECISION_DPS):
        S = mp.mpf(C_tilde)
        Lm, Tm, Km = mp.mpf(L), mp.mpf(T), mp.mpf(K)
        barrier_sup = (S + 1 / (2 + Lm)) * mp.exp((2 + Lm) * S * (Tm + Km)) - 1 / (2 + Lm)
        C_eff = float(C) if C is not None else float(S) / 3.0
        gamma_eff = float(gamma) if gamma is not None else 2.0 * C_eff
        inner = local_window_constants(
            C=C_eff,
            gamma=gamma_eff,
            alpha_holder=0.0,
            L=float(L),
            T=float(T),
            K=float(K),
            xi_sup=float(mp.sqrt(barrier_sup)),
            eta_z2=eta_z2,
        )
        return BarrierBundle(
            envelope_scale=S,
            L=Lm,
            T=Tm,
            K=Km,
            barrier_sup=barrier_sup,
            window_width=inner.window,
            window_bundle=inner,
        )


def applicability_report(problem, estimated_norms: dict) -> dict:
    """Verdict per certification regime: applies, fails (why), or not-checkable.

    estimated_norms carries "xi_sup", "eta_z2" and "f0_int" (see
    diagnostics.estimate_terminal_norms).  The problem's generator must have
    been growth-classified; without a classification every structural check
    degrades to not-checkable.  Each failing verdict names the binding
    quantity so the report reads as an explanation, not just a flag.
    """
    growth = getattr(problem.generator, "growth", None)
    xi_sup = float(estimated_norms.get("xi_sup", 0.0))
    eta_z2 = float(estimated_norms.get("eta_z2", 0.0))
    f0_int = float(estimated_norms.get("f0_int", 0.0))
    cons = problem.constants
    L = problem.density_constant()
    report: dict = {"norms": {"xi_sup": xi_sup, "eta_z2": eta_z2, "f0_int": f0_int}}

    if growth is None:
        note = "generator growth unclassified (opaque callable)"
        for key in ("small-terminal", "local-window", "barrier-stitch", "transform"):
            report[key] = {"verdict": "not-checkable", "reason": note}
        report["suggested_strategy"] = (
            "transform" if problem.lambda_term is not None else "lipschitz"
        )
        return report

    small = small_terminal_constants(
        cons.C, L, problem.T, problem.K, xi_sup=xi_sup, eta_z2=eta_z2, f0_int=f0_int
    )
    sf = small.as_floats()
    if small.admissible:
        report["small-terminal"] = {
            "verdict": "applies",
            "radius_sq": sf["radius_sq"],
            "data_sq": sf["data_sq"],
        }
    else:
        report["small-terminal"] = {
            "verdict": "fails",
            "reason": "terminal data exceed the smallness radius",
            "radius_sq": sf["radius_sq"],
            "data_sq": sf["data_sq"],
        }

    try:
        win = local_window_constants(
            cons.C, cons.gamma, cons.alpha_holder, L, problem.T, problem.K,
            xi_sup=xi_sup, eta_z2=eta_z2,
        )
        wf = win.as_floats()
        entry = {"verdict": "applies", "window": wf["window"]}
        if "log10_window" in wf:
            entry["log10_window"] = wf["log10_window"]
        report["local-window"] = entry
    except NoAdmissibleEps as exc:
        report["local-window"] = {"verdict": "fails", "reason": str(exc)}

    splits = growth.splits_z_part or (
        problem.lambda_term is not None and growth.z_growth == "constant"
    )
    if not splits:
        report["barrier-stitch"] = {
            "verdict": "fails",
            "reason": "generator does not split into a pure-z quadratic part "
            "plus a z-free remainder",
            "z_growth": growth.z_growth,
        }
    else:
        c_tilde = envelope_scale_for(cons.C, xi_sup)
        try:
            bar = barrier_constants(
                c_tilde, L, problem.T, problem.K,
                C=cons.C, gamma=cons.gamma, eta_z2=eta_z2,
            )
            bf = bar.as_floats()
            entry = {
                "verdict": "applies",
                "envelope_scale": bf["envelope_scale"],
                "window_width": bf["window_width"],
            }
            if "log10_window_width" in bf:
                entry["log10_window_width"] = bf["log10_window_width"]
            report["barrier-stitch"] = entry
        except NoAdmissibleEps as exc:
            report["barrier-stitch"] = {"verdict": "fails", "reason": str(exc)}

    if problem.lambda_term is None:
        report["transform"] = {
            "verdict": "fails",
            "reason": "no declared lambda(t, y) |z|^2 coefficient to remove",
        }
    elif growth.z_growth != "constant":
        report["transform"] = {
            "verdict": "fails",
            "reason": "driver keeps current-z dependence beyond the lambda term",
            "z_growth": growth.z_growth,
        }
    else:
        report["transform"] = {
            "verdict": "applies",
            "note": "lambda integrability is probed at solve time",
        }

    if report["transform"]["verdict"] == "applies":
        report["suggested_strategy"] = "transform"
    else:
        report["suggested_strategy"] = growth.suggested_strategy
    return report
