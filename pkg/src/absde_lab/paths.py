"""Seeded Brownian ensembles on the time grid.

Reproducibility contract: every path has its own counter-based substream,
keyed by (seed, path index) through the Philox bit generator, so results do
not depend on how many paths are generated or in what order.  Normal draws
are produced by applying the inverse normal CDF (scipy.special.ndtri, which
is accurate to a few ulps, far below the 1e-9 CDF error budget) to the
substream's uniforms, so the tables are platform-stable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .problem import TimeGrid


class OddAntitheticCount(ValueError):
    """Antithetic pairing needs an even number of paths."""


_MAGIC = b"ABSDEW01"
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class PathEnsemble:
    """Brownian increments and states, indexed [step][path][component].

    states[0] = 0 and states[i+1] = states[i] + increments[i] holds exactly
    (bitwise), not just approximately.  With antithetic on, paths come in
    pairs (2q, 2q+1) with the odd member the exact negation of the even one.
    """

    h: float
    seed: int
    antithetic: bool
    increments: np.ndarray = field(repr=False)  # (n_steps, n_paths, d)
    states: np.ndarray = field(repr=False)  # (n_steps + 1, n_paths, d)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_paths(self) -> int:
        return self.increments.shape[1]

    @property
    def d(self) -> int:
        return self.increments.shape[2]


def _substream_uniforms(seed: int, index: int, size: int) -> np.ndarray:
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.random(size)


def simulate_brownian(
    grid: TimeGrid,
    d: int,
    n_paths: int,
    seed: int,
    antithetic: bool = False,
) -> PathEnsemble:
    """Simulate n_paths d-dimensional Brownian paths over the full grid [0, T+K].

    Increments are Normal(0, h) per step and component.  Identical arguments
    give bit-identical tables.
    """
    if d < 1:
        raise ValueError("d must be a positive integer")
    if n_paths < 2:
        raise ValueError("need at least two paths")
    if antithetic and n_paths % 2:
        raise OddAntitheticCount(f"antithetic pairing needs an even count, got {n_paths}")

    n_steps = grid.n_total
    n_base = n_paths // 2 if antithetic else n_paths
    u = np.empty((n_base, n_steps * d))
    for p in range(n_base):
        u[p] = _substream_uniforms(seed, p, n_steps * d)
    # rng.random() yields [0, 1); clamp away exact zero so ndtri stays finite.
    np.maximum(u, np.finfo(float).tiny, out=u)
    z = ndtri(u).reshape(n_base, n_steps, d)
    z *= np.sqrt(grid.h)

    increments = np.empty((n_steps, n_paths, d))
    if antithetic:
        increments[:, 0::2, :] = np.transpose(z, (1, 0, 2))
        increments[:, 1::2, :] = -increments[:, 0::2, :]
    else:
        increments[:] = np.transpose(z, (1, 0, 2))

    states = np.zeros((n_steps + 1, n_paths, d))
    np.cumsum(increments, axis=0, out=states[1:])
    increments.setflags(write=False)
    states.setflags(write=False)
    return PathEnsemble(
        h=grid.h, seed=int(seed), antithetic=antithetic, increments=increments, states=states
    )


def coarsen_ensemble(ens: PathEnsemble, factor: int) -> PathEnsemble:
    """Aggregate groups of `factor` consecutive increments into one coarse step.

    This is how convergence studies share one Brownian realization across
    grids (common random numbers): the coarse ensemble's path at the coarse
    times coincides with the fine one's.
    """
    if factor < 1 or ens.n_steps % factor:
        raise ValueError(f"cannot coarsen {ens.n_steps} steps by {factor}")
    shape = (ens.n_steps // factor, factor, ens.n_paths, ens.d)
    increments = ens.increments.reshape(shape).sum(axis=1)
    states = np.zeros((shape[0] + 1, ens.n_paths, ens.d))
    np.cumsum(increments, axis=0, out=states[1:])
    increments.setflags(write=False)
    states.setflags(write=False)
    return PathEnsemble(
        h=ens.h * factor,
        seed=ens.seed,
        antithetic=ens.antithetic,
        increments=increments,
        states=states,
    )


def dump_ensemble(ens: PathEnsemble, path) -> None:
    """Write the ensemble as little-endian float64 with a small fixed header."""
    header = struct.pack(
        "<8sQIIIB3xd",
        _MAGIC,
        ens.seed & _MASK64,
        ens.n_steps,
        ens.n_paths,
        ens.d,
        1 if ens.antithetic else 0,
        ens.h,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ens.increments, dtype="<f8").tobytes())


def load_ensemble(path) -> PathEnsemble:
    """Read an ensemble written by dump_ensemble; states are rebuilt by prefix sum."""
    header_size = struct.calcsize("<8sQIIIB3xd")
    with open(path, "rb") as fh:
        raw = fh.read(header_size)
        magic, seed, n_steps, n_paths, d, anti, h = struct.unpack("<8sQIIIB3xd", raw)
        if magic != _MAGIC:
            raise ValueError(f"not an ensemble file (magic {magic!r})")
        payload = fh.read(n_steps * n_paths * d * 8)
    increments = np.frombuffer(payload, dtype="<f8").astype(float).reshape(n_steps, n_paths, d)
    states = np.zeros((n_steps + 1, n_paths, d))
    np.cumsum(increments, axis=0, out=states[1:])
    increments.setflags(write=False)
    states.setflags(write=False)
    return PathEnsemble(
        h=h, seed=int(seed), antithetic=bool(anti), increments=increments, states=states
    )
