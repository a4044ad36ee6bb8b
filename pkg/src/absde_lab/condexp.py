"""Cross-sectional regression estimators for conditional expectations.

Given per-path states X and targets V at one time slice, fit an estimator of
E[V | X].  Two basis families: global polynomials (ridge-regularized normal
equations, Cholesky solve) and equal-count bins (piecewise-constant means on
quantile cells).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_CONDITION_CUTOFF = 1e14
_MAX_DEGREE = 12


class SingularDesign(ValueError):
    """Normal equations too ill-conditioned to trust."""


@dataclass(frozen=True)
class BasisSpec:
    """Regression basis: kind is "polynomial" (with degree) or "binned" (with n_bins)."""

    kind: str = "polynomial"
    degree: int = 3
    n_bins: int = 20
    ridge: float = 1e-10

    def __post_init__(self):
        if self.kind not in ("polynomial", "binned"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "polynomial" and not 0 <= self.degree <= _MAX_DEGREE:
            raise ValueError(f"degree must be in [0, {_MAX_DEGREE}], got {self.degree}")
        if self.kind == "binned" and self.n_bins < 1:
            raise ValueError("n_bins must be positive")


@dataclass(frozen=True)
class CondEstimator:
    basis: BasisSpec
    n_state_dims: int
    # polynomial payload: standardized-monomial coefficients plus the affine
    # standardization applied to each state column before evaluation.
    powers: tuple = ()
    coef: np.ndarray = field(default=None, repr=False)
    mu: np.ndarray = field(default=None, repr=False)
    sigma: np.ndarray = field(default=None, repr=False)
    # binned payload
    edges: np.ndarray = field(default=None, repr=False)
    bin_means: np.ndarray = field(default=None, repr=False)
    residual_rms: float = 0.0
    condition: float = 1.0

    @property
    def coefficients(self) -> np.ndarray:
        """Raw monomial coefficients (constant term first) for scalar states."""
        if self.basis.kind != "polynomial" or self.n_state_dims != 1:
            raise ValueError("raw coefficients only defined for scalar polynomial fits")
        poly = np.polynomial.Polynomial(np.zeros(1))
        x = np.polynomial.Polynomial([-self.mu[0] / self.sigma[0], 1.0 / self.sigma[0]])
        for (k,), c in zip(self.powers, self.coef):
            poly = poly + c * x**k
        out = np.zeros(max(k for (k,) in self.powers) + 1)
        out[: len(poly.coef)] = poly.coef
        return out


def _as_columns(states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        return states[:, None]
    if states.ndim == 2:
        return states
    raise ValueError(f"states must be (n,) or (n, ds), got shape {states.shape}")


def _monomial_powers(ds: int, degree: int) -> tuple:
    return tuple(
        p for p in product(range(degree + 1), repeat=ds) if sum(p) <= degree
    )


def _design(cols: np.ndarray, powers: tuple) -> np.ndarray:
    n = cols.shape[0]
    phi = np.ones((n, len(powers)))
    for j, p in enumerate(powers):
        for k, e in enumerate(p):
            if e:
                phi[:, j] *= cols[:, k] ** e
    return phi


def fit_conditional(states: np.ndarray, targets: np.ndarray, basis: BasisSpec) -> CondEstimator:
    """Least-squares fit of targets on basis functions of states.

    Polynomial fits standardize each state column, assemble ridge-regularized
    normal equations, and solve them by Cholesky factorization; a condition
    estimate above 1e14 raises SingularDesign.  Binned fits use equal-count
    quantile cells and per-cell target means.
    """
    cols = _as_columns(states)
    targets = np.asarray(targets, dtype=float)
    n, ds = cols.shape
    if targets.shape != (n,):
        raise ValueError("states and targets must have matching first dimension")

    if basis.kind == "binned":
        if ds != 1:
            raise ValueError("binned basis requires scalar states")
        if basis.n_bins > n // 10:
            raise ValueError(f"n_bins={basis.n_bins} too large for {n} samples")
        x = cols[:, 0]
        edges = np.quantile(x, np.linspace(0.0, 1.0, basis.n_bins + 1)[1:-1])
        idx = np.searchsorted(edges, x, side="right")
        means = np.full(basis.n_bins, targets.mean())
        for b in range(basis.n_bins):
            mask = idx == b
            if mask.any():
                means[b] = targets[mask].mean()
        resid = targets - means[idx]
        return CondEstimator(
            basis=basis,
            n_state_dims=ds,
            edges=edges,
            bin_means=means,
            residual_rms=float(np.sqrt(np.mean(resid**2))),
            condition=1.0,
        )

    mu = cols.mean(axis=0)
    sigma = cols.std(axis=0)
    live = sigma > 0
    if not live.any():
        # Degenerate slice (all states identical, e.g. the initial time):
        # the conditional expectation is the plain mean.
        c = targets.mean()
        resid = targets - c
        return CondEstimator(
            basis=basis,
            n_state_dims=ds,
            powers=((0,) * ds,),
            coef=np.array([c]),
            mu=mu,
            sigma=np.ones(ds),
            residual_rms=float(np.sqrt(np.mean(resid**2))),
            condition=1.0,
        )
    sigma = np.where(live, sigma, 1.0)
    z = (cols - mu) / sigma
    powers = tuple(
        p
        for p in _monomial_powers(ds, basis.degree)
        if all(e == 0 or live[k] for k, e in enumerate(p))
    )
    phi = _design(z, powers)
    gram = phi.T @ phi + basis.ridge * np.eye(len(powers))
    rhs = phi.T @ targets
    condition = float(np.linalg.cond(gram))
    if not np.isfinite(condition) or condition > _CONDITION_CUTOFF:
        raise SingularDesign(f"normal-equation condition {condition:.3e} exceeds 1e14")
    coef = cho_solve(cho_factor(gram), rhs)
    resid = targets - phi @ coef
    return CondEstimator(
        basis=basis,
        n_state_dims=ds,
        powers=powers,
        coef=coef,
        mu=mu,
        sigma=sigma,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        condition=condition,
    )


def apply_conditional(est: CondEstimator, states: np.ndarray) -> np.ndarray:
    """Evaluate a fitted estimator at new states (total: out-of-range states clamp)."""
    cols = _as_columns(states)
    if cols.shape[1] != est.n_state_dims:
        raise ValueError(
            f"estimator fitted on {est.n_state_dims}-dim states, got {cols.shape[1]}"
        )
    if est.basis.kind == "binned":
        idx = np.searchsorted(est.edges, cols[:, 0], side="right")
        return est.bin_means[idx]
    z = (cols - est.mu) / est.sigma
    return _design(z, est.powers) @ est.coef


def nested_mc_oracle(
    terminal_payoff,
    t_from: float,
    t_to: float,
    state,
    n_inner: int,
    seed: int,
    d: int = 1,
    n_steps: int = 16,
) -> float:
    """Brute-force conditional expectation E[g(W_{t_to}) | W_{t_from} = state].

    Test-only reference: resimulates n_inner independent continuations with a
    plain PCG stream (deliberately a different generator route from the main
    ensembles) and averages the payoff.
    """
    if n_inner < 1000:
        raise ValueError("oracle needs at least 1000 inner samples")
    rng = np.random.default_rng(seed)
    state = np.atleast_1d(np.asarray(state, dtype=float))
    dt = (t_to - t_from) / n_steps
    w = np.broadcast_to(state, (n_inner, d)).copy()
    for _ in range(n_steps):
        w += rng.normal(0.0, np.sqrt(dt), size=(n_inner, d))
    vals = terminal_payoff(w[:, 0] if d == 1 else w)
    return float(np.mean(vals))
