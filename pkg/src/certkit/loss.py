"""Certificate losses: the grid-based state loss and per-trajectory loss.

The state loss averages hinge penalties over deterministic grids and is zero
exactly when the level-set conditions hold on every grid point (strict
inequalities are enforced with the margin ``tau``).  The trajectory loss
penalizes violations of the decrease condition along one sampled trajectory,
with the supremum/infimum of V over the continuous sets replaced by the
max/min over the corresponding grids.  A certificate candidate satisfies the
encoded conditions on given data iff both losses are exactly zero.

Subgradients are Clarke subgradients realized by differentiating through the
deterministically selected argmax (lowest index on ties); inactive hinges
contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import network, regions
from ._kernels import kernels
from .network import NetworkSpec
from .regions import Region

KINDS = ("reach", "safe", "rwa")


@dataclass(frozen=True)
class GridDensities:
    """Lattice points per axis for each state-loss grid."""

    initial: int
    domain: int
    boundary: int
    unsafe: int


def default_grid_densities(dim: int) -> GridDensities:
    """Defaults: 10/30/30/10 points per axis in low dimension, halved per
    added dimension above four with a floor of three."""

    def scale(base: int) -> int:
        if dim <= 4:
            return base
        return max(3, base // (2 ** (dim - 4)))

    return GridDensities(initial=scale(10), domain=scale(30), boundary=scale(30), unsafe=scale(10))


@dataclass(frozen=True)
class PropertySpec:
    """A property kind with its regions, horizon and loss margins."""

    kind: str
    domain: Region
    initial: Region
    horizon: int
    goal: Region | None = None
    unsafe: Region | None = None
    delta: float = 0.1
    tau: float = 0.01
    grids: GridDensities | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown property kind {self.kind!r}; expected one of {KINDS}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        dims = {self.domain.dim, self.initial.dim}
        if not regions.region_subset(self.initial, self.domain):
            raise ValueError("initial set must be contained in the domain")
        if self.kind in ("reach", "rwa"):
            if self.goal is None:
                raise ValueError(f"{self.kind} property requires a goal region")
            dims.add(self.goal.dim)
            if not regions.region_subset(self.goal, self.domain):
                raise ValueError("goal set must be contained in the domain")
        if self.kind in ("safe", "rwa"):
            if self.unsafe is None:
                raise ValueError(f"{self.kind} property requires an unsafe region")
            dims.add(self.unsafe.dim)
            if not regions.set_difference_nonempty(self.initial, self.unsafe):
                raise ValueError("initial and unsafe sets must be disjoint (probe found overlap)")
        if self.kind == "rwa":
            if not regions.set_difference_nonempty(self.goal, self.unsafe):
                raise ValueError("goal and unsafe sets must be disjoint (probe found overlap)")
        if len(dims) != 1:
            raise ValueError("all regions must share one dimension")
        if self.grids is None:
            object.__setattr__(self, "grids", default_grid_densities(self.dim))

    @property
    def dim(self) -> int:
        return self.domain.dim


@dataclass
class LossBreakdown:
    """State and trajectory loss of one candidate on one trajectory."""

    state_value: float
    traj_value: float
    total: float
    k_goal: int
    k_star: int            # argmax step of the (first) decrease hinge, -1 if inactive
    k_star2: int           # argmax step of the post-goal hinge (rwa), -1 otherwise
    sup_initial_index: int  # grid argmax of V over the initial lattice
    inf_unsafe_index: int   # grid argmin of V over the unsafe lattice, -1 if unused
    subgradient: np.ndarray


class LossEvaluator:
    """Precomputed grids plus batched loss/subgradient evaluation.

    All selections (argmax over steps, over grid points, over samples) break
    ties at the lowest index so results are independent of evaluation order.
    """

    def __init__(self, prop: PropertySpec, net: NetworkSpec):
        if net.n_inputs != prop.dim:
            raise ValueError("network input dimension does not match the property regions")
        self.prop = prop
        self.net = net
        g = prop.grids
        self.grid_initial = regions.lattice(prop.initial, g.initial)
        self.grid_domain = None
        self.grid_boundary = None
        self.grid_unsafe = None
        if prop.kind in ("reach", "rwa"):
            self.grid_domain = regions.domain_lattice_excluding(prop.domain, prop.goal, g.domain)
            self.grid_boundary = regions.boundary_lattice(prop.domain, g.boundary)
        if prop.kind in ("safe", "rwa"):
            self.grid_unsafe = regions.lattice(prop.unsafe, g.unsafe)
        for name in ("grid_initial", "grid_domain", "grid_boundary", "grid_unsafe"):
            pts = getattr(self, name)
            if pts is not None and pts.shape[0] == 0:
                raise ValueError(f"{name} is empty; increase its grid density")

        blocks = [self.grid_initial]
        self._sl_initial = slice(0, len(self.grid_initial))
        start = len(self.grid_initial)
        for name in ("grid_domain", "grid_boundary", "grid_unsafe"):
            pts = getattr(self, name)
            if pts is None:
                setattr(self, "_sl_" + name.removeprefix("grid_"), None)
                continue
            blocks.append(pts)
            setattr(self, "_sl_" + name.removeprefix("grid_"), slice(start, start + len(pts)))
            start += len(pts)
        self._grid_all = np.ascontiguousarray(np.concatenate(blocks, axis=0))

    # -- state loss ---------------------------------------------------------

    def _state_terms(self, v_grid: np.ndarray):
        """Hinge values and signed mean-weights per concatenated grid point."""
        prop = self.prop
        hinge = np.zeros_like(v_grid)
        coef = np.zeros_like(v_grid)

        sl = self._sl_initial
        vi = v_grid[sl]
        hinge[sl] = np.maximum(0.0, vi)
        coef[sl] = np.where(vi > 0.0, 1.0 / vi.shape[0], 0.0)

        if self._sl_domain is not None:
            sl = self._sl_domain
            vd = v_grid[sl]
            hinge[sl] = np.maximum(0.0, -prop.delta - vd)
            coef[sl] = np.where(-prop.delta - vd > 0.0, -1.0 / vd.shape[0], 0.0)
        if self._sl_boundary is not None:
            sl = self._sl_boundary
            vb = v_grid[sl]
            hinge[sl] = np.maximum(0.0, -vb + prop.tau)
            coef[sl] = np.where(-vb + prop.tau > 0.0, -1.0 / vb.shape[0], 0.0)
        if self._sl_unsafe is not None:
            sl = self._sl_unsafe
            vu = v_grid[sl]
            hinge[sl] = np.maximum(0.0, -vu + prop.tau)
            coef[sl] = np.where(-vu + prop.tau > 0.0, -1.0 / vu.shape[0], 0.0)

        value = 0.0
        for s in (self._sl_initial, self._sl_domain, self._sl_boundary, self._sl_unsafe):
            if s is not None:
                value += float(hinge[s].mean())
        return value, coef

    def state_loss(self, theta: np.ndarray):
        """State loss and its subgradient."""
        v_grid = network.values(self.net, theta, self._grid_all)
        value, coef = self._state_terms(v_grid)
        grad = np.zeros(self.net.n_params)
        active = np.nonzero(coef)[0]
        if active.size:
            _, g_active = network.values_and_grads(self.net, theta, self._grid_all[active])
            grad = coef[active] @ g_active
        return value, grad

    def state_loss_value(self, theta: np.ndarray) -> float:
        v_grid = network.values(self.net, theta, self._grid_all)
        value, _ = self._state_terms(v_grid)
        return value

    # -- trajectory loss ----------------------------------------------------

    def batch(self, theta: np.ndarray, trajs: np.ndarray) -> "BatchLosses":
        """Evaluate state loss and the trajectory loss of every sample."""
        theta = np.ascontiguousarray(theta, dtype=float)
        trajs = np.ascontiguousarray(trajs, dtype=float)
        prop = self.prop
        T = prop.horizon
        if trajs.ndim != 3 or trajs.shape[2] != prop.dim:
            raise ValueError(f"expected trajectories of shape (N, T+1, {prop.dim})")
        if trajs.shape[1] != T + 1:
            raise ValueError(f"trajectory horizon {trajs.shape[1] - 1} does not match the property horizon {T}")
        N = trajs.shape[0]

        v_grid = network.values(self.net, theta, self._grid_all)
        state_value, state_coef = self._state_terms(v_grid)

        vi = v_grid[self._sl_initial]
        s_idx = int(np.argmax(vi))
        s_hat = float(vi[s_idx])
        if self._sl_unsafe is not None:
            vu = v_grid[self._sl_unsafe]
            i_idx = int(np.argmin(vu))
            i_hat = float(vu[i_idx])
        else:
            i_idx = -1
            i_hat = np.nan

        flat = trajs.reshape(N * (T + 1), prop.dim)
        v_states = network.values(self.net, theta, flat).reshape(N, T + 1)
        use_kg = prop.kind in ("reach", "rwa")
        kg, m1, k1, m2, k2 = kernels().traj_split_max(v_states, prop.delta, use_kg, T)

        if prop.kind == "reach":
            thr1 = -(s_hat + prop.delta) / T
            thr2 = np.nan
        elif prop.kind == "safe":
            thr1 = (i_hat - s_hat) / T
            thr2 = np.nan
        else:
            thr1 = -(s_hat + prop.delta) / T
            thr2 = (i_hat + prop.delta) / T

        l1 = np.maximum(0.0, m1 - thr1)
        if prop.kind == "rwa":
            l2 = np.maximum(0.0, m2 - thr2)
        else:
            l2 = np.zeros(N)
        traj_part = l1 + l2

        return BatchLosses(
            evaluator=self,
            theta=theta,
            trajs=trajs,
            state_value=state_value,
            state_coef=state_coef,
            s_hat=s_hat,
            s_idx=s_idx,
            i_hat=i_hat,
            i_idx=i_idx,
            v_states=v_states,
            kg=kg,
            k1=k1,
            l1=l1,
            k2=k2,
            l2=l2,
            traj_part=traj_part,
        )


@dataclass
class BatchLosses:
    """Losses of one parameter vector over a batch of trajectories."""

    evaluator: LossEvaluator
    theta: np.ndarray
    trajs: np.ndarray
    state_value: float
    state_coef: np.ndarray
    s_hat: float
    s_idx: int
    i_hat: float
    i_idx: int
    v_states: np.ndarray
    kg: np.ndarray
    k1: np.ndarray
    l1: np.ndarray
    k2: np.ndarray
    l2: np.ndarray
    traj_part: np.ndarray

    _state_grad: np.ndarray | None = None
    _g_s: np.ndarray | None = None
    _g_u: np.ndarray | None = None

    @property
    def totals(self) -> np.ndarray:
        return self.state_value + self.traj_part

    def state_grad(self) -> np.ndarray:
        if self._state_grad is None:
            ev = self.evaluator
            grad = np.zeros(ev.net.n_params)
            active = np.nonzero(self.state_coef)[0]
            if active.size:
                _, g_active = network.values_and_grads(ev.net, self.theta, ev._grid_all[active])
                grad = self.state_coef[active] @ g_active
            self._state_grad = grad
        return self._state_grad

    def _grid_argmax_grads(self):
        if self._g_s is None:
            ev = self.evaluator
            pts = [ev.grid_initial[self.s_idx]]
            if self.i_idx >= 0:
                pts.append(ev.grid_unsafe[self.i_idx])
            _, g = network.values_and_grads(ev.net, self.theta, np.asarray(pts))
            self._g_s = g[0]
            self._g_u = g[1] if self.i_idx >= 0 else None
        return self._g_s, self._g_u

    def subgradients(self, indices) -> np.ndarray:
        """Total-loss subgradients of the requested samples, shape (m, P)."""
        ev = self.evaluator
        prop = ev.prop
        T = prop.horizon
        indices = np.asarray(indices, dtype=np.int64)
        out = np.tile(self.state_grad(), (indices.shape[0], 1))

        # collect the trajectory states whose gradients feed active hinges
        need_pts = []
        need_map = []  # (row, sign) pairs into the stacked gradient batch
        for row, i in enumerate(indices):
            if self.l1[i] > 0.0:
                k = int(self.k1[i])
                need_map.append((row, len(need_pts), 1))
                need_pts.append(self.trajs[i, k + 1])
                need_map.append((row, len(need_pts), 2))
                need_pts.append(self.trajs[i, k])
            if self.l2[i] > 0.0:
                k = int(self.k2[i])
                need_map.append((row, len(need_pts), 3))
                need_pts.append(self.trajs[i, k + 1])
                need_map.append((row, len(need_pts), 4))
                need_pts.append(self.trajs[i, k])

        if need_pts:
            _, g_states = network.values_and_grads(ev.net, self.theta, np.asarray(need_pts))
            g_s, g_u = self._grid_argmax_grads()
            for row, pos, tag in need_map:
                if tag in (1, 3):
                    out[row] += g_states[pos]
                else:
                    out[row] -= g_states[pos]
            for row, i in enumerate(indices):
                if self.l1[i] > 0.0:
                    if prop.kind in ("reach", "rwa"):
                        out[row] += g_s / T          # d/dtheta of +(s_hat+delta)/T
                    else:
                        out[row] += (g_s - g_u) / T  # d/dtheta of -(i_hat-s_hat)/T
                if self.l2[i] > 0.0:
                    out[row] -= g_u / T              # d/dtheta of -(i_hat+delta)/T
        return out

    def subgradient(self, i: int) -> np.ndarray:
        return self.subgradients([i])[0]


@lru_cache(maxsize=64)
def get_evaluator(prop: PropertySpec, net: NetworkSpec) -> LossEvaluator:
    return LossEvaluator(prop, net)


# -- module-level operations -------------------------------------------------


def state_loss(prop: PropertySpec, net: NetworkSpec, theta) -> tuple[float, np.ndarray]:
    """Sample-independent loss over the deterministic grids, with subgradient."""
    return get_evaluator(prop, net).state_loss(np.ascontiguousarray(theta, dtype=float))


def k_goal(prop: PropertySpec, net: NetworkSpec, theta, traj) -> int:
    """First step k with V(x(k)) <= -delta, else the horizon T."""
    if prop.kind not in ("reach", "rwa"):
        raise ValueError("k_goal is defined for reach and rwa properties")
    bls = get_evaluator(prop, net).batch(
        np.ascontiguousarray(theta, dtype=float), np.asarray(traj, dtype=float)[None, :, :]
    )
    return int(bls.kg[0])


def traj_loss(prop: PropertySpec, net: NetworkSpec, theta, traj) -> tuple[float, np.ndarray]:
    """Trajectory-dependent loss of one sample, with subgradient."""
    ev = get_evaluator(prop, net)
    bls = ev.batch(np.ascontiguousarray(theta, dtype=float), np.asarray(traj, dtype=float)[None, :, :])
    value = float(bls.traj_part[0])
    if value > 0.0:
        grad = bls.subgradients([0])[0] - bls.state_grad()
    else:
        grad = np.zeros(net.n_params)
    return value, grad


def total_loss(prop: PropertySpec, net: NetworkSpec, theta, traj) -> LossBreakdown:
    """State plus trajectory loss on one sample, with combined subgradient."""
    ev = get_evaluator(prop, net)
    bls = ev.batch(np.ascontiguousarray(theta, dtype=float), np.asarray(traj, dtype=float)[None, :, :])
    sub = bls.subgradients([0])[0]
    return LossBreakdown(
        state_value=bls.state_value,
        traj_value=float(bls.traj_part[0]),
        total=float(bls.totals[0]),
        k_goal=int(bls.kg[0]),
        k_star=int(bls.k1[0]) if bls.l1[0] > 0.0 else -1,
        k_star2=int(bls.k2[0]) if bls.l2[0] > 0.0 else -1,
        sup_initial_index=bls.s_idx,
        inf_unsafe_index=bls.i_idx,
        subgradient=sub,
    )


def check_conditions(prop: PropertySpec, net: NetworkSpec, theta, traj) -> bool:
    """Exact certificate-condition check: both losses are exactly zero."""
    ev = get_evaluator(prop, net)
    bls = ev.batch(np.ascontiguousarray(theta, dtype=float), np.asarray(traj, dtype=float)[None, :, :])
    return bls.state_value == 0.0 and float(bls.traj_part[0]) == 0.0


def check_conditions_batch(prop: PropertySpec, net: NetworkSpec, theta, trajs) -> np.ndarray:
    """Vectorized check_conditions over a batch of trajectories."""
    ev = get_evaluator(prop, net)
    bls = ev.batch(np.ascontiguousarray(theta, dtype=float), np.asarray(trajs, dtype=float))
    return (bls.state_value == 0.0) & (bls.traj_part == 0.0)


def delta_margin_satisfied(prop: PropertySpec, net: NetworkSpec, theta) -> tuple[bool, float]:
    """Post-hoc check that delta exceeds -max V over the initial grid.

    Returns (ok, grid max of V over the initial lattice).  A False result is
    reported as a warning, not an error, because V is unknown a priori.
    """
    ev = get_evaluator(prop, net)
    vi = network.values(net, np.ascontiguousarray(theta, dtype=float), ev.grid_initial)
    s_hat = float(vi.max())
    return prop.delta > -s_hat, s_hat
