"""Flat-ground raycast renderer.

Pinhole camera at fixed height with zero pitch and roll, so the horizon sits
exactly between the two middle image rows. Ground pixels are coloured by
distance to the nearest trail centerline; rocks and trees are camera-facing
billboards painted back to front. Every noise value is a hash of the world
seed, the style seed and a lattice coordinate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from ..errors import InputError
from .styles import StylePack
from .world import Pose, TrailWorld

MAX_GROUND_RANGE = 250.0
MAX_BILLBOARD_RANGE = 70.0
DITHER_SCALE = 0.2
TRUNK_COLOR = (70, 52, 36)

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xC2B2AE3D27D4EB4F)
_M3 = np.uint64(0xFF51AFD7ED558CCD)
_M4 = np.uint64(0xC4CEB9FE1A85EC53)


@dataclass(frozen=True)
class Camera:
    fov_deg: float = 80.0
    width: int = 400
    height: int = 400
    mount_height: float = 1.5

    @property
    def focal(self) -> float:
        return (self.width / 2) / math.tan(math.radians(self.fov_deg) / 2)

    @property
    def horizon_row(self) -> int:
        """First row that sees the ground."""
        return self.height // 2


CAMERA = Camera()


def hash_uniform(i, j, seed: int) -> np.ndarray:
    """Deterministic uniform [0, 1) values for integer lattice coordinates."""
    with np.errstate(over="ignore"):
        h = np.asarray(i, dtype=np.int64).astype(np.uint64) * _M1
        h ^= np.asarray(j, dtype=np.int64).astype(np.uint64) * _M2
        h ^= np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _M3
        h ^= h >> np.uint64(33)
        h *= _M3
        h ^= h >> np.uint64(33)
        h *= _M4
        h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def mix_seed(*parts: int) -> int:
    h = 0x243F6A8885A308D3
    for p in parts:
        h = (h ^ (int(p) & 0xFFFFFFFFFFFFFFFF)) * 0x100000001B3 & 0xFFFFFFFFFFFFFFFF
        h ^= h >> 29
    return h


def noise_lattice(size: float, scale: float, seed: int) -> np.ndarray:
    n = int(math.ceil(size / scale)) + 2
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return (hash_uniform(i, j, seed) * 2 - 1).astype(np.float32)


@lru_cache(maxsize=8)
def ray_table(camera: Camera):
    """Per-pixel ground geometry for the rows below the horizon.

    Returns forward distance per row, lateral offset per pixel (right
    positive) and euclidean range per pixel.
    """
    f = camera.focal
    rows = np.arange(camera.horizon_row, camera.height)
    yc = (rows + 0.5 - camera.height / 2) / f
    xc = (np.arange(camera.width) + 0.5 - camera.width / 2) / f
    fwd = camera.mount_height / yc
    lat = fwd[:, None] * xc[None, :]
    rng = fwd[:, None] * np.sqrt(1 + xc[None, :] ** 2 + yc[:, None] ** 2)
    return fwd.astype(np.float32), lat.astype(np.float32), rng.astype(np.float32)


class SceneTextures:
    """Noise lattices and billboards for one (world, style) pairing."""

    def __init__(self, world: TrailWorld, style: StylePack):
        size = world.params.size
        self.trail_noise_scale = style.trail_noise_scale
        self.ground_noise_scale = style.ground_noise_scale
        self.trail_noise = noise_lattice(size, style.trail_noise_scale, mix_seed(world.seed, style.seed, 1))
        self.ground_noise = noise_lattice(size, style.ground_noise_scale, mix_seed(world.seed, style.seed, 2))
        self.dither = noise_lattice(size, DITHER_SCALE, mix_seed(world.seed, style.seed, 3)) * 0.5
        self.billboards = self._billboards(world, style)

    @staticmethod
    def _billboards(world: TrailWorld, style: StylePack) -> np.ndarray:
        """Rows of (x, y, radius, height, is_tree)."""
        rocks = np.column_stack([world.obstacles, np.zeros(len(world.obstacles))])
        size = world.params.size
        count = int(round(style.tree_density * size * size / 100.0))
        if count == 0:
            return rocks
        rng = np.random.default_rng(mix_seed(world.seed, style.seed, 4))
        xy = rng.uniform(0, size, size=(count, 2))
        radius = rng.uniform(0.8, 1.8, count)
        height = rng.uniform(4.0, 9.0, count)
        clear = world.distance_to_trails(xy[:, 0], xy[:, 1]) > world.half_width + radius + 0.5
        trees = np.column_stack([xy, radius, height, np.ones(count)])[clear]
        return np.concatenate([rocks, trees])


def scene_textures(world: TrailWorld, style: StylePack) -> SceneTextures:
    key = ("textures", style)
    if key not in world._cache:
        world._cache[key] = SceneTextures(world, style)
    return world._cache[key]


def _rgb(c) -> np.ndarray:
    return np.asarray(c, dtype=np.float32)


def render(
    world: TrailWorld,
    pose: Pose,
    style: StylePack,
    camera: Camera = CAMERA,
    yaw_offset_deg: float = 0.0,
) -> np.ndarray:
    """Render one (height, width, 3) uint8 frame."""
    if not world.in_bounds(pose.x, pose.y):
        raise InputError(f"pose ({pose.x:.2f}, {pose.y:.2f}) outside world bounds {world.bounds}")
    tex = scene_textures(world, style)
    h_img, w_img = camera.height, camera.width
    img = np.empty((h_img, w_img, 3), dtype=np.float32)

    # sky: vertical gradient, one colour per row
    hr = camera.horizon_row
    t = np.linspace(0.0, 1.0, hr, dtype=np.float32)[:, None]
    img[:hr] = (_rgb(style.sky_top) + (_rgb(style.sky_bottom) - _rgb(style.sky_top)) * t)[:, None, :]

    heading = pose.yaw + math.radians(yaw_offset_deg)
    fwd, lat, rng = ray_table(camera)
    _shade_ground(
        img[hr:], fwd, lat, rng, pose.x, pose.y, math.cos(heading), math.sin(heading),
        world.distance_field(), 0.1, world.half_width,
        tex.dither, DITHER_SCALE, style.edge_dither,
        tex.ground_noise, style.ground_noise_scale, style.ground_noise,
        tex.trail_noise, style.trail_noise_scale, style.trail_noise,
        _rgb(style.ground_color), _rgb(style.trail_color), _rgb(style.sky_bottom),
        style.fog, MAX_GROUND_RANGE,
    )
    _draw_billboards(img, tex.billboards, pose, heading, style, camera)
    return np.clip(img + 0.5, 0, 255).astype(np.uint8)


@numba.njit(cache=True, inline="always")
def _bilinear(grid, x, y, res, fill):
    n0, n1 = grid.shape
    gx = x / res
    gy = y / res
    if gx < 0 or gy < 0 or gx > n0 - 1 or gy > n1 - 1:
        return fill
    i = min(int(gx), n0 - 2)
    j = min(int(gy), n1 - 2)
    fx = gx - i
    fy = gy - j
    top = grid[i, j] + (grid[i, j + 1] - grid[i, j]) * fy
    bot = grid[i + 1, j] + (grid[i + 1, j + 1] - grid[i + 1, j]) * fy
    return top + (bot - top) * fx


@numba.njit(cache=True)
def _shade_ground(
    out, fwd, lat, rng, px, py, ch, sh,
    dist, dist_res, half_width,
    dither, dither_res, dither_amp,
    gnoise, gnoise_res, gnoise_amp,
    tnoise, tnoise_res, tnoise_amp,
    ground_rgb, trail_rgb, fog_rgb, fog, max_range,
):
    rows, cols = lat.shape
    for r in range(rows):
        for c in range(cols):
            x = px + fwd[r] * ch + lat[r, c] * sh
            y = py + fwd[r] * sh - lat[r, c] * ch
            dist_m = rng[r, c]
            is_trail = False
            shade = 0.0
            if dist_m < max_range:
                d = _bilinear(dist, x, y, dist_res, 1e4)
                if dither_amp > 0:
                    d -= dither_amp * _bilinear(dither, x, y, dither_res, 0.0)
                is_trail = d < half_width
                if is_trail:
                    if tnoise_amp > 0:
                        shade = tnoise_amp * _bilinear(tnoise, x, y, tnoise_res, 0.0)
                elif gnoise_amp > 0:
                    shade = gnoise_amp * _bilinear(gnoise, x, y, gnoise_res, 0.0)
            keep = 1.0
            if fog > 0:
                keep = math.exp(-fog * dist_m)
            for k in range(3):
                base = trail_rgb[k] if is_trail else ground_rgb[k]
                out[r, c, k] = (base + shade) * keep + fog_rgb[k] * (1.0 - keep)


def _draw_billboards(img, boards, pose: Pose, heading: float, style: StylePack, camera: Camera):
    if len(boards) == 0:
        return
    f = camera.focal
    dx = boards[:, 0] - pose.x
    dy = boards[:, 1] - pose.y
    z = dx * math.cos(heading) + dy * math.sin(heading)
    x = dx * math.sin(heading) - dy * math.cos(heading)
    r = boards[:, 2]
    half_fov = math.tan(math.radians(camera.fov_deg) / 2)
    vis = (z > 0.3) & (z < MAX_BILLBOARD_RANGE) & (np.abs(x) - r < z * half_fov)
    idx = np.nonzero(vis)[0]
    if len(idx) == 0:
        return
    idx = idx[np.argsort(-z[idx], kind="stable")]
    h_img, w_img = camera.height, camera.width
    cy = h_img / 2
    cx = w_img / 2
    fog_rgb = _rgb(style.sky_bottom)
    cols_all = np.arange(w_img) + 0.5
    rows_all = np.arange(h_img) + 0.5
    for k in idx:
        zk, xk, rk, hk, is_tree = z[k], x[k], r[k], boards[k, 3], boards[k, 4]
        uc = cx + f * xk / zk
        w = f * rk / zk
        v_base = cy + f * camera.mount_height / zk
        v_top = cy - f * (hk - camera.mount_height) / zk
        c0 = max(int(math.floor(uc - w)), 0)
        c1 = min(int(math.ceil(uc + w)) + 1, w_img)
        r0 = max(int(math.floor(v_top)), 0)
        r1 = min(int(math.ceil(v_base)) + 1, h_img)
        if c0 >= c1 or r0 >= r1:
            continue
        u = cols_all[c0:c1][None, :] - uc
        v = rows_all[r0:r1][:, None]
        keep = math.exp(-style.fog * zk)
        if is_tree:
            v_crown = v_top + 0.75 * (v_base - v_top)
            frac = (v - v_top) / max(v_crown - v_top, 1e-6)
            crown = (v >= v_top) & (v <= v_crown) & (np.abs(u) <= w * frac)
            trunk = (v > v_crown) & (v <= v_base) & (np.abs(u) <= 0.15 * w)
            for mask, color in ((crown, style.tree_color), (trunk, TRUNK_COLOR)):
                rgb = _rgb(color) * keep + fog_rgb * (1 - keep)
                img[r0:r1, c0:c1][mask] = rgb
        else:
            hgt = max(v_base - v_top, 1e-6)
            mask = (v <= v_base) & ((u / max(w, 1e-6)) ** 2 + ((v_base - v) / hgt) ** 2 <= 1)
            img[r0:r1, c0:c1][mask] = _rgb(style.rock_color) * keep + fog_rgb * (1 - keep)
