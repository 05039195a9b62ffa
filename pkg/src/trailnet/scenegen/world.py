"""Procedural trail worlds: a seeded centerline spline, side branches and rocks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

from ..errors import ConfigurationError, InputError

SAMPLE_STEP = 0.05
GRID_RES = 0.1
FAR = 1e4


@dataclass(frozen=True)
class WorldParams:
    size: float = 400.0
    length: float = 600.0
    half_width: float = 1.5
    control_spacing: float = 5.0
    max_turn_deg: float = 18.0
    turn_sigma_deg: float = 7.0
    branches: int = 2
    branch_length: tuple[float, float] = (20.0, 40.0)
    obstacles: int = 250
    edge_margin: float = 30.0

    def validate(self):
        if self.size <= 0 or self.length <= 0:
            raise ConfigurationError(f"world size and length must be positive: {self}")
        if not 0.5 <= self.half_width <= 3.0:
            raise ConfigurationError(f"half width {self.half_width} outside [0.5, 3.0] m")
        if self.control_spacing <= 0 or self.max_turn_deg < 0:
            raise ConfigurationError("control spacing must be positive and turn bound non-negative")
        if self.length / self.control_spacing < 3:
            raise ConfigurationError("trail needs at least 4 control points")
        if self.size <= 2 * self.edge_margin:
            raise ConfigurationError(f"world size {self.size} leaves no room inside the edge margin")


class Pose(NamedTuple):
    x: float
    y: float
    yaw: float

    def normalized(self) -> "Pose":
        return Pose(self.x, self.y, wrap_angle(self.yaw))


class TrailPoint(NamedTuple):
    s: float
    distance: float
    tangent: float
    lateral: float  # signed, positive when the point lies left of the direction of travel


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2 * np.pi)
    return float(w) if np.ndim(w) == 0 else w


class Curve:
    """C1 cubic interpolant through control points, resampled by arc length."""

    def __init__(self, control: np.ndarray):
        control = np.asarray(control, dtype=np.float64)
        chord = np.r_[0.0, np.cumsum(np.hypot(*np.diff(control, axis=0).T))]
        self.control = control
        self.spline = CubicSpline(chord, control, axis=0, bc_type="natural")
        u = np.arange(0.0, chord[-1], SAMPLE_STEP / 4)
        u = np.r_[u, chord[-1]]
        fine = self.spline(u)
        arc = np.r_[0.0, np.cumsum(np.hypot(*np.diff(fine, axis=0).T))]
        self.length = float(arc[-1])
        self.s = np.arange(0.0, self.length, SAMPLE_STEP)
        self.s = np.r_[self.s, self.length] if self.length - self.s[-1] > 1e-9 else self.s
        self._u_of_s = (arc, u)
        uu = np.interp(self.s, arc, u)
        self.points = self.spline(uu)
        d = self.spline(uu, 1)
        self.tangents = np.arctan2(d[:, 1], d[:, 0])

    def point_at(self, s: float) -> tuple[float, float, float]:
        s = float(np.clip(s, 0.0, self.length))
        arc, u = self._u_of_s
        uu = np.interp(s, arc, u)
        p = self.spline(uu)
        d = self.spline(uu, 1)
        return float(p[0]), float(p[1]), math.atan2(d[1], d[0])

    def fine_points(self, step: float) -> np.ndarray:
        """Points spaced at most `step` apart along the curve (brute-force use)."""
        arc, u = self._u_of_s
        n = int(math.ceil(self.length / step)) + 1
        return self.spline(np.interp(np.linspace(0, self.length, n), arc, u))

    def closest(self, point) -> TrailPoint:
        p = np.asarray(point, dtype=np.float64)
        d2 = ((self.points - p) ** 2).sum(axis=1)
        i = int(np.argmin(d2))
        best = None
        for j in (i - 1, i):
            if j < 0 or j + 1 >= len(self.points):
                continue
            a, b = self.points[j], self.points[j + 1]
            seg = b - a
            t = float(np.clip(np.dot(p - a, seg) / max(np.dot(seg, seg), 1e-18), 0.0, 1.0))
            q = a + t * seg
            dist = float(np.hypot(*(p - q)))
            if best is None or dist < best[0] - 1e-12:
                s = self.s[j] + t * (self.s[j + 1] - self.s[j])
                best = (dist, s, math.atan2(seg[1], seg[0]), q)
        if best is None:
            q = self.points[i]
            best = (float(np.sqrt(d2[i])), float(self.s[i]), float(self.tangents[i]), q)
        dist, s, tan, q = best
        cross = math.cos(tan) * (p[1] - q[1]) - math.sin(tan) * (p[0] - q[0])
        return TrailPoint(float(s), dist, tan, float(math.copysign(dist, cross) if dist else 0.0))


def _random_walk(rng, start, heading, n_points, params: WorldParams, lo, hi):
    pts = [np.asarray(start, dtype=np.float64)]
    max_turn = math.radians(params.max_turn_deg)
    sigma = math.radians(params.turn_sigma_deg)
    turn = 0.0
    center = np.array([(lo + hi) / 2, (lo + hi) / 2])
    for _ in range(n_points - 1):
        turn = 0.6 * turn + rng.normal(0.0, sigma)
        p = pts[-1]
        ahead = p + 3 * params.control_spacing * np.array([math.cos(heading), math.sin(heading)])
        if np.any(ahead < lo + params.edge_margin) or np.any(ahead > hi - params.edge_margin):
            to_center = math.atan2(center[1] - p[1], center[0] - p[0])
            turn = wrap_angle(to_center - heading)
        turn = float(np.clip(turn, -max_turn, max_turn))
        heading = wrap_angle(heading + turn)
        pts.append(p + params.control_spacing * np.array([math.cos(heading), math.sin(heading)]))
    return np.array(pts)


@dataclass
class TrailWorld:
    seed: int
    params: WorldParams
    control_points: np.ndarray
    branch_controls: list[np.ndarray]
    obstacles: np.ndarray  # rows of (x, y, radius, height)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def half_width(self) -> float:
        return self.params.half_width

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (0.0, 0.0, self.params.size, self.params.size)

    @property
    def main(self) -> Curve:
        if "main" not in self._cache:
            self._cache["main"] = Curve(self.control_points)
        return self._cache["main"]

    @property
    def branches(self) -> list[Curve]:
        if "branches" not in self._cache:
            self._cache["branches"] = [Curve(c) for c in self.branch_controls]
        return self._cache["branches"]

    def in_bounds(self, x, y) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1

    def all_trail_points(self) -> np.ndarray:
        return np.concatenate([self.main.points] + [b.points for b in self.branches])

    def distance_field(self) -> np.ndarray:
        """Distance (m) to the nearest trail centerline on a GRID_RES grid.

        Exact within a band around the trails; farther cells hold the
        rasterized estimate, which only ever decides "not trail".
        """
        if "dist" in self._cache:
            return self._cache["dist"]
        n = int(round(self.params.size / GRID_RES)) + 1
        pts = self.all_trail_points()
        ij = np.clip(np.rint(pts / GRID_RES).astype(np.int64), 0, n - 1)
        free = np.ones((n, n), dtype=bool)
        free[ij[:, 0], ij[:, 1]] = False
        approx = distance_transform_edt(free).astype(np.float32) * GRID_RES
        band = approx < self.half_width + 4.0
        bi, bj = np.nonzero(band)
        exact, _ = cKDTree(pts).query(np.column_stack([bi, bj]) * GRID_RES)
        approx[bi, bj] = exact
        self._cache["dist"] = approx
        return approx

    def distance_to_trails(self, x, y) -> np.ndarray:
        return sample_bilinear(self.distance_field(), x, y, GRID_RES, FAR)

    def closest_on_trail(self, point) -> TrailPoint:
        return closest_on_trail(self, point)


def sample_bilinear(grid: np.ndarray, x, y, res: float, fill: float) -> np.ndarray:
    """Bilinear lookup of grid[i, j] at (i*res, j*res); outside -> fill."""
    n0, n1 = grid.shape
    gx = np.asarray(x, dtype=np.float32) / np.float32(res)
    gy = np.asarray(y, dtype=np.float32) / np.float32(res)
    inside = (gx >= 0) & (gy >= 0) & (gx <= n0 - 1) & (gy <= n1 - 1)
    gx = np.clip(gx, 0, n0 - 1.001)
    gy = np.clip(gy, 0, n1 - 1.001)
    i = gx.astype(np.int32)
    j = gy.astype(np.int32)
    fx = gx - i
    fy = gy - j
    flat = grid.ravel()
    k = i * n1 + j
    v00 = flat[k]
    v01 = flat[k + 1]
    v10 = flat[k + n1]
    v11 = flat[k + n1 + 1]
    top = v00 + (v01 - v00) * fy
    bot = v10 + (v11 - v10) * fy
    out = top + (bot - top) * fx
    return np.where(inside, out, np.float32(fill))


def generate_world(seed: int, params: WorldParams | None = None) -> TrailWorld:
    """Deterministic world from a seed."""
    params = params or WorldParams()
    params.validate()
    rng = np.random.default_rng([seed, 0x7A11])
    lo, hi = 0.0, params.size
    m = params.edge_margin
    start = rng.uniform(lo + m, hi - m, size=2)
    heading = rng.uniform(-np.pi, np.pi)
    n_points = max(4, int(math.ceil(params.length / params.control_spacing)) + 1)
    control = _random_walk(rng, start, heading, n_points, params, lo, hi)
    main = Curve(control)

    branch_controls = []
    for _ in range(params.branches):
        if main.length < 120:
            break
        s0 = rng.uniform(50.0, main.length - 50.0)
        x, y, tan = main.point_at(s0)
        side = rng.choice([-1.0, 1.0])
        h0 = tan + side * math.radians(rng.uniform(35.0, 60.0))
        blen = rng.uniform(*params.branch_length)
        nb = max(4, int(math.ceil(blen / params.control_spacing)) + 1)
        branch_controls.append(_random_walk(rng, (x, y), h0, nb, params, lo, hi))

    obstacles = _place_obstacles(rng, params, [main] + [Curve(c) for c in branch_controls])
    return TrailWorld(seed, params, control, branch_controls, obstacles)


def _place_obstacles(rng, params: WorldParams, curves: list[Curve]) -> np.ndarray:
    if params.obstacles <= 0:
        return np.zeros((0, 4))
    tree = cKDTree(np.concatenate([c.points for c in curves]))
    # half of the rocks hug the trail corridor, the rest are scattered
    n_near = params.obstacles // 2
    main = curves[0]
    s = rng.uniform(0, main.length, n_near)
    base = main.points[np.minimum((s / SAMPLE_STEP).astype(int), len(main.points) - 1)]
    near = base + rng.normal(0.0, 6.0, size=(n_near, 2))
    far = rng.uniform(0, params.size, size=(params.obstacles - n_near, 2))
    xy = np.clip(np.concatenate([near, far]), 0, params.size)
    radius = rng.uniform(0.3, 1.2, len(xy))
    height = radius * rng.uniform(0.8, 1.6, len(xy))
    dist, _ = tree.query(xy)
    keep = dist > params.half_width + radius + 0.5 + SAMPLE_STEP
    return np.column_stack([xy, radius, height])[keep]


def closest_on_trail(world: TrailWorld, point) -> TrailPoint:
    """Globally closest point on the main centerline; ties go to the smallest s."""
    return world.main.closest(point)


def turn_rates(curve: Curve, window: float = 5.0) -> np.ndarray:
    """Absolute heading change (radians) over each `window` metres of arc."""
    k = max(1, int(round(window / SAMPLE_STEP)))
    t = np.unwrap(curve.tangents)
    return np.abs(t[k:] - t[:-k])
