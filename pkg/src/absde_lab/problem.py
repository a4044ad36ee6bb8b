"""Problem specification, time discretization, and delay-index machinery.

Anticipation is handled on a uniform grid over [0, T+K]: a delay function
maps each grid time t_i to a shifted time t_i + delta(t_i), which is snapped
to the nearest grid index j >= i.  All downstream solvers consume anticipated
values through these index maps, so commensurability of K with the step size
is enforced at grid construction instead of being patched up later.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class NonCommensurateHorizon(ValueError):
    """K is not an integer multiple of the step size h = T / n_T."""


class HorizonViolation(ValueError):
    """A shifted time t + delta(t) lands beyond T + K by more than rounding."""


class DegenerateDelay(ValueError):
    """Delay map without a finite density constant (affine slope b <= -1)."""


class GridSnapWarning(UserWarning):
    """Emitted when a shifted time is snapped to the grid by more than roundoff."""


@dataclass(frozen=True)
class DelaySpec:
    """Delay function delta(t) on [0, T].

    kind:
        "constant"  delta(t) = a
        "affine"    delta(t) = a + b*t
        "tabulated" per-grid-slice values, with a caller-supplied density
                    constant (density_l) since it cannot be derived.
    """

    kind: str
    a: float = 0.0
    b: float = 0.0
    values: Optional[tuple] = None
    density_l: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("constant", "affine", "tabulated"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if self.kind == "constant" and self.a < 0:
            raise ValueError("constant delay must be nonnegative")
        if self.kind == "tabulated":
            if self.values is None:
                raise ValueError("tabulated delay needs per-slice values")
            if self.density_l is None:
                raise ValueError("tabulated delay needs an explicit density_l")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def at_times(self, times: np.ndarray) -> np.ndarray:
        """Evaluate delta at the given grid times (tabulated: by slice index)."""
        if self.kind == "tabulated":
            vals = np.asarray(self.values, dtype=float)
            if len(vals) < len(times):
                raise ValueError(
                    f"tabulated delay has {len(vals)} values, grid needs {len(times)}"
                )
            return vals[: len(times)].copy()
        return self.a + self.b * np.asarray(times, dtype=float)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid over [0, T+K] with h = T/n_T and t_{n_T} = T exactly."""

    T: float
    K: float
    n_T: int
    n_total: int
    h: float
    times: np.ndarray = field(repr=False)

    def index_of(self, t: float) -> int:
        """Nearest grid index of a time (ties up), clamped to the grid."""
        j = int(np.floor(t / self.h + 0.5))
        return min(max(j, 0), self.n_total)


@dataclass(frozen=True)
class DelayMap:
    """Grid-index form of a delay: slice i maps to slice shift_index[i] >= i."""

    shift_index: np.ndarray = field(repr=False)
    snap_errors: np.ndarray = field(repr=False)

    def __getitem__(self, i: int) -> int:
        return int(self.shift_index[i])


def build_time_grid(T: float, K: float, n_T: int) -> TimeGrid:
    """Build the uniform grid on [0, T+K].

    Raises NonCommensurateHorizon unless K is an integer multiple of
    h = T/n_T (within 1e-9 of an integer ratio): anticipated slices must
    land exactly on the grid for the index maps to be exact.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if K < 0:
        raise ValueError("K must be nonnegative")
    if n_T < 1:
        raise ValueError("n_T must be a positive integer")
    h = T / n_T
    ratio = K / h
    n_tail = int(round(ratio))
    if abs(ratio - n_tail) > 1e-9:
        raise NonCommensurateHorizon(
            f"K={K} is not an integer multiple of h={h} (K/h={ratio})"
        )
    n_total = n_T + n_tail
    times = h * np.arange(n_total + 1, dtype=float)
    # Pin the two horizon points so index arithmetic at the seams is exact.
    times[n_T] = T
    times[n_total] = T + K
    times.setflags(write=False)
    return TimeGrid(T=float(T), K=float(K), n_T=n_T, n_total=n_total, h=h, times=times)


def snap_delay(grid: TimeGrid, spec: DelaySpec) -> DelayMap:
    """Snap t_i + delta(t_i) to grid indices for every slice i <= n_T.

    Nearest-index rounding with ties up, clamped to [i, n_total].  Snap
    errors beyond roundoff are recorded and reported once via a
    GridSnapWarning.  Raises HorizonViolation if some shifted time exceeds
    T + K by more than half a step (rounding cannot absorb it).
    """
    core = grid.times[: grid.n_T + 1]
    shifts = spec.at_times(core)
    if np.any(shifts < -1e-12 * max(1.0, grid.T)):
        raise ValueError("delay values must be nonnegative")
    targets = core + np.maximum(shifts, 0.0)
    j = np.floor(targets / grid.h + 0.5).astype(np.int64)  # half-up rounding
    over = j > grid.n_total
    if np.any(over):
        i_bad = int(np.argmax(over))
        raise HorizonViolation(
            f"t_{i_bad} + delta = {targets[i_bad]:.6g} exceeds T+K = {grid.T + grid.K:.6g} "
            "beyond rounding"
        )
    j = np.maximum(j, np.arange(grid.n_T + 1, dtype=np.int64))
    snap_err = np.abs(grid.times[j] - targets)
    tol = 1e-9 * max(grid.h, 1.0)
    if float(snap_err.max(initial=0.0)) > tol:
        warnings.warn(
            f"delay snapped to grid with max error {snap_err.max():.3g} "
            f"(h = {grid.h:.3g}); refine n_T if this matters",
            GridSnapWarning,
            stacklevel=2,
        )
    snap_err.setflags(write=False)
    j.setflags(write=False)
    return DelayMap(shift_index=j, snap_errors=snap_err)


def delay_density_L(spec: DelaySpec) -> float:
    """Smallest density constant L for the delay's change of variables.

    For s -> s + a the substitution has unit Jacobian, so L = 1.  For
    s -> (1+b)s + a, du = (1+b) ds gives L = 1/(1+b); the map degenerates
    at b <= -1.  Tabulated delays carry a user-supplied constant.
    """
    if spec.kind == "constant":
        return 1.0
    if spec.kind == "affine":
        if spec.b <= -1.0:
            raise DegenerateDelay(f"affine delay slope b={spec.b} <= -1 has no finite L")
        return 1.0 / (1.0 + spec.b)
    return float(spec.density_l)


@dataclass(frozen=True)
class StructuralConstants:
    """Structural constants of the generator used by the certification layer.

    C bounds the generator's increments/growth, gamma is the coefficient of
    the quadratic z term (|f| <= ... + (gamma/2)|z|^2), alpha_holder in [0,1)
    is the exponent of the anticipated-z power term, and L is the delay
    density constant (derived from the delay specs when not overridden).
    """

    C: float = 1.0
    gamma: float = 1.0
    alpha_holder: float = 0.0
    L: Optional[float] = None

    def __post_init__(self):
        if self.C <= 0 or self.gamma <= 0:
            raise ValueError("C and gamma must be positive")
        if not (0.0 <= self.alpha_holder < 1.0):
            raise ValueError("alpha_holder must lie in [0, 1)")
        if self.L is not None and self.L <= 0:
            raise ValueError("L must be positive when supplied")


@dataclass
class ProblemSpec:
    """Full problem description consumed by the solvers.

    generator / terminal_xi / terminal_eta / lambda_term are the catalog
    wrapper types (see absde_lab.catalog); they are kept loosely typed here
    to avoid an import cycle.
    """

    T: float
    K: float
    generator: object
    terminal_xi: object
    terminal_eta: object
    delta_shift: DelaySpec = DelaySpec("constant", a=0.0)
    zeta_shift: DelaySpec = DelaySpec("constant", a=0.0)
    m: int = 1
    d: int = 1
    lambda_term: Optional[object] = None
    constants: StructuralConstants = field(default_factory=StructuralConstants)

    def __post_init__(self):
        if self.T <= 0 or self.K < 0:
            raise ValueError("need T > 0 and K >= 0")
        if self.m < 1 or self.d < 1:
            raise ValueError("need m >= 1 and d >= 1")

    def density_constant(self) -> float:
        """Delay density constant: explicit override, else the worst of the two maps."""
        if self.constants.L is not None:
            return self.constants.L
        return max(delay_density_L(self.delta_shift), delay_density_L(self.zeta_shift))

    def grid(self, n_T: int) -> TimeGrid:
        return build_time_grid(self.T, self.K, n_T)

    def delay_maps(self, grid: TimeGrid) -> tuple[DelayMap, DelayMap]:
        return snap_delay(grid, self.delta_shift), snap_delay(grid, self.zeta_shift)
