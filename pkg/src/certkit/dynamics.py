"""Discrete-time systems, trajectory unrolling, and initial-state sampling.

Systems update as x(k+1) = f(x(k)).  Three benchmarks are built in
(``spiral2d``, ``highdim8``, ``nonlinear4``); anything else is supplied as
one expression string per coordinate via :mod:`certkit.dynexpr`.

Sampling is counter based: the initial state of sample ``i`` is a pure
function of ``(seed, i)`` (numpy Philox keyed with ``seed * 2**64 + i``), so
extending N never changes earlier samples and draws may be reproduced on any
machine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynexpr
from ._kernels import kernels
from .regions import Ball, Box, Region, contains_batch

BUILTIN_SYSTEMS = ("spiral2d", "highdim8", "nonlinear4")

_BUILTIN_DIMS = {"spiral2d": 2, "highdim8": 8, "nonlinear4": 4}


@dataclass(frozen=True)
class System:
    """A deterministic update map together with its state dimension."""

    name: str
    dim: int
    expressions: tuple[str, ...] | None = None  # set for expression systems

    def _exprs(self):
        return tuple(dynexpr.parse(src) for src in self.expressions)


def builtin_system(name: str) -> System:
    if name not in BUILTIN_SYSTEMS:
        raise ValueError(f"unknown builtin system {name!r}; expected one of {BUILTIN_SYSTEMS}")
    return System(name=name, dim=_BUILTIN_DIMS[name])


def expression_system(expressions) -> System:
    """System defined by one update expression per coordinate."""
    expressions = tuple(str(s) for s in expressions)
    dim = len(expressions)
    if dim == 0:
        raise ValueError("need at least one expression")
    for src in expressions:
        expr = dynexpr.parse(src)
        top = dynexpr.max_var_index(expr)
        if top > dim:
            raise ValueError(f"expression {src!r} references x{top} but the system has dim {dim}")
    return System(name="expression", dim=dim, expressions=expressions)


def _step_batch(system: System, X: np.ndarray) -> np.ndarray:
    if system.expressions is None:
        return _unroll_builtin(system, X, 1)[:, 1, :]
    cols = [dynexpr.evaluate_batch(expr, X) for expr in system._exprs()]
    return np.stack(cols, axis=1)


def _unroll_builtin(system: System, X0: np.ndarray, T: int) -> np.ndarray:
    ks = kernels()
    if system.name == "spiral2d":
        return ks.unroll_spiral2d(X0, T)
    if system.name == "highdim8":
        return ks.unroll_highdim8(X0, T)
    if system.name == "nonlinear4":
        return ks.unroll_nonlinear4(X0, T)
    raise ValueError(f"unknown builtin {system.name!r}")


def step(system: System, x) -> np.ndarray:
    """Single application of the update map."""
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape != (system.dim,):
        raise ValueError(f"state of shape {x.shape} does not match system dim {system.dim}")
    nxt = _step_batch(system, x[None, :])[0]
    if not np.all(np.isfinite(nxt)):
        raise FloatingPointError(f"non-finite state after one step of {system.name}: {nxt}")
    return nxt


def unroll(system: System, x0, T: int) -> np.ndarray:
    """Trajectory of T+1 states from x0, as an array of shape (T+1, dim)."""
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise ValueError(f"state of shape {x0.shape} does not match system dim {system.dim}")
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    return unroll_batch(system, x0[None, :], T)[0]


def unroll_batch(system: System, X0: np.ndarray, T: int) -> np.ndarray:
    """Unroll a batch of initial states; result has shape (B, T+1, dim)."""
    X0 = np.ascontiguousarray(X0, dtype=float)
    if X0.ndim != 2 or X0.shape[1] != system.dim:
        raise ValueError(f"expected initial states of shape (B, {system.dim}), got {X0.shape}")
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    if system.expressions is None:
        out = _unroll_builtin(system, X0, T)
    else:
        exprs = system._exprs()
        out = np.empty((X0.shape[0], T + 1, system.dim))
        out[:, 0, :] = X0
        for k in range(T):
            cur = out[:, k, :]
            for j, expr in enumerate(exprs):
                out[:, k + 1, j] = dynexpr.evaluate_batch(expr, cur)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out).all(axis=2))
        sample, k = bad[0]
        raise FloatingPointError(
            f"non-finite state in {system.name} trajectory {sample} at step {k}"
        )
    return out


@dataclass(frozen=True)
class UniformDistribution:
    """Uniform initial-state law over a box or ball, with a 64-bit seed."""

    region: Region
    seed: int

    def __post_init__(self):
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "seed", seed)


def _sample_stream(seed: int, index: int) -> np.random.Generator:
    # one independent Philox stream per (seed, sample index)
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(index)))


def initial_state(dist: UniformDistribution, index: int) -> np.ndarray:
    """Initial state of sample ``index``; depends only on (seed, index)."""
    rng = _sample_stream(dist.seed, index)
    region = dist.region
    if isinstance(region, Box):
        low = np.asarray(region.low)
        high = np.asarray(region.high)
        return low + rng.random(region.dim) * (high - low)
    assert isinstance(region, Ball)
    box = region.bounding_box()
    low = np.asarray(box.low)
    high = np.asarray(box.high)
    while True:  # rejection from the bounding box; terminates a.s.
        x = low + rng.random(region.dim) * (high - low)
        if contains_batch(region, x[None, :])[0]:
            return x


def sample_initial_states(dist: UniformDistribution, N: int, start: int = 0) -> np.ndarray:
    if N < 1:
        raise ValueError("N must be >= 1")
    return np.stack([initial_state(dist, start + i) for i in range(N)])


def sample_trajectories(system: System, dist: UniformDistribution, N: int, T: int) -> np.ndarray:
    """N i.i.d. trajectories as an array of shape (N, T+1, dim)."""
    if dist.region.dim != system.dim:
        raise ValueError("sampling region dimension does not match the system")
    X0 = sample_initial_states(dist, N)
    return unroll_batch(system, X0, T)
