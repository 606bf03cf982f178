"""Geometric state-space sets (boxes and balls) and deterministic point grids.

Regions describe the domain X, initial set X_I, goal set X_G and unsafe set
X_U.  Grids are the fixed synthetic point sets used by the state loss; they
are pure functions of (region, role, points_per_axis), so two calls with
equal arguments return element-wise identical arrays.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

ROLE_INITIAL = "initial"
ROLE_UNSAFE = "unsafe"
ROLE_DOMAIN_MINUS_GOAL = "domain-minus-goal"
ROLE_BOUNDARY = "boundary"

_ROLES = (ROLE_INITIAL, ROLE_UNSAFE, ROLE_DOMAIN_MINUS_GOAL, ROLE_BOUNDARY)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [low, high] (closed)."""

    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "low", tuple(float(v) for v in self.low))
        object.__setattr__(self, "high", tuple(float(v) for v in self.high))
        if len(self.low) != len(self.high):
            raise ValueError("low and high must have equal length")
        if len(self.low) == 0:
            raise ValueError("box must have at least one dimension")
        for lo, hi in zip(self.low, self.high):
            if not lo < hi:
                raise ValueError(f"box requires low < high per axis, got [{lo}, {hi}]")

    @property
    def dim(self) -> int:
        return len(self.low)

    def bounding_box(self) -> "Box":
        return self


@dataclass(frozen=True)
class Ball:
    """Closed Euclidean ball of given center and radius."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if len(self.center) == 0:
            raise ValueError("ball must have at least one dimension")
        if not self.radius > 0:
            raise ValueError(f"ball requires radius > 0, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.center)

    def bounding_box(self) -> Box:
        c = np.asarray(self.center)
        return Box(tuple(c - self.radius), tuple(c + self.radius))


Region = Box | Ball


def contains(region: Region, x) -> bool:
    """Exact closed-region membership of a single point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (region.dim,):
        raise ValueError(f"point of dim {x.shape} does not match region dim {region.dim}")
    return bool(contains_batch(region, x[None, :])[0])


def contains_batch(region: Region, pts: np.ndarray) -> np.ndarray:
    """Vectorized membership test over an (m, dim) array of points."""
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != region.dim:
        raise ValueError(f"expected points of shape (m, {region.dim}), got {pts.shape}")
    if isinstance(region, Box):
        low = np.asarray(region.low)
        high = np.asarray(region.high)
        return np.all((pts >= low) & (pts <= high), axis=1)
    c = np.asarray(region.center)
    d2 = np.sum((pts - c) ** 2, axis=1)
    return d2 <= region.radius**2


def region_subset(inner: Region, outer: Region) -> bool:
    """Exact containment check inner ⊆ outer for box/ball combinations."""
    if inner.dim != outer.dim:
        raise ValueError("dimension mismatch")
    if isinstance(inner, Box):
        if isinstance(outer, Box):
            return all(
                ol <= il and ih <= oh
                for il, ih, ol, oh in zip(inner.low, inner.high, outer.low, outer.high)
            )
        # box in ball: all corners inside
        corners = np.array(list(itertools.product(*zip(inner.low, inner.high))))
        return bool(np.all(contains_batch(outer, corners)))
    if isinstance(outer, Box):
        # ball in box: center +- radius within bounds per axis
        return all(
            ol <= c - inner.radius and c + inner.radius <= oh
            for c, ol, oh in zip(inner.center, outer.low, outer.high)
        )
    dist = float(np.linalg.norm(np.asarray(inner.center) - np.asarray(outer.center)))
    return dist + inner.radius <= outer.radius


def _axis_lattice(box: Box, points_per_axis: int) -> list[np.ndarray]:
    return [np.linspace(lo, hi, points_per_axis) for lo, hi in zip(box.low, box.high)]


def _full_lattice(box: Box, points_per_axis: int) -> np.ndarray:
    axes = _axis_lattice(box, points_per_axis)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def lattice(region: Region, points_per_axis: int) -> np.ndarray:
    """Uniform lattice covering the region, ordered lexicographically.

    For a ball the lattice of the bounding box is filtered by membership.
    """
    if points_per_axis < 2:
        raise ValueError("points_per_axis must be >= 2")
    pts = _full_lattice(region.bounding_box(), points_per_axis)
    if isinstance(region, Ball):
        pts = pts[contains_batch(region, pts)]
        if pts.shape[0] == 0:
            raise ValueError("lattice over ball produced no points; increase density")
    return pts


def boundary_lattice(box: Region, points_per_axis: int) -> np.ndarray:
    """Lattice points lying on the faces of a box (any coordinate at a bound)."""
    if not isinstance(box, Box):
        raise ValueError("boundary grids are only defined for boxes")
    if points_per_axis < 2:
        raise ValueError("points_per_axis must be >= 2")
    pts = _full_lattice(box, points_per_axis)
    axes = _axis_lattice(box, points_per_axis)
    on_face = np.zeros(pts.shape[0], dtype=bool)
    for j in range(box.dim):
        # exact comparison is safe: pts come from the same linspace endpoints
        on_face |= pts[:, j] == axes[j][0]
        on_face |= pts[:, j] == axes[j][-1]
    return pts[on_face]


def domain_lattice_excluding(domain: Region, goal: Region, points_per_axis: int) -> np.ndarray:
    """Lattice over the domain with points belonging to the goal removed."""
    if goal.dim != domain.dim:
        raise ValueError("dimension mismatch between domain and goal")
    if not region_subset(goal, domain):
        raise ValueError("goal region must be contained in the domain")
    pts = lattice(domain, points_per_axis)
    keep = ~contains_batch(goal, pts)
    return pts[keep]


def grid(region: Region, role: str, points_per_axis: int, goal: Region | None = None) -> np.ndarray:
    """Deterministic point grid for one of the state-loss roles.

    Roles: ``initial`` and ``unsafe`` build a plain lattice over the region,
    ``domain-minus-goal`` builds a lattice over the domain with goal points
    removed (requires ``goal``), ``boundary`` restricts the lattice to the
    faces of a box domain.
    """
    if role not in _ROLES:
        raise ValueError(f"unknown grid role {role!r}; expected one of {_ROLES}")
    if role == ROLE_DOMAIN_MINUS_GOAL:
        if goal is None:
            raise ValueError("role 'domain-minus-goal' requires a goal region")
        return domain_lattice_excluding(region, goal, points_per_axis)
    if role == ROLE_BOUNDARY:
        return boundary_lattice(region, points_per_axis)
    return lattice(region, points_per_axis)


@dataclass(frozen=True)
class GridSpec:
    """A grid role together with its lattice density."""

    role: str
    points_per_axis: int

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown grid role {self.role!r}")
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be >= 2")

    def generate(self, region: Region, goal: Region | None = None) -> np.ndarray:
        return grid(region, self.role, self.points_per_axis, goal=goal)


def set_difference_nonempty(a: Region, b: Region, points_per_axis: int | None = None) -> bool:
    """True iff no probe-grid point of ``a`` lies inside ``b``.

    Used to validate the emptiness of intersections such as X_I ∩ X_U on a
    deterministic probe grid.
    """
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    if points_per_axis is None:
        points_per_axis = 5 if a.dim <= 4 else 3
    probe = lattice(a, points_per_axis)
    return not bool(np.any(contains_batch(b, probe)))


def region_to_dict(region: Region) -> dict:
    if isinstance(region, Box):
        return {"type": "box", "low": list(region.low), "high": list(region.high)}
    return {"type": "ball", "center": list(region.center), "radius": region.radius}


def region_from_dict(data: dict) -> Region:
    """Parse a region literal of the experiment config file."""
    kind = data.get("type")
    if kind == "box":
        return Box(tuple(data["low"]), tuple(data["high"]))
    if kind == "ball":
        return Ball(tuple(data["center"]), float(data["radius"]))
    raise ValueError(f"unknown region type {kind!r}; expected 'box' or 'ball'")
