"""Geometric inlier-ratio estimation for depth observations.

An observed 3D point is scored against the surfels stored along its scanning
ray: a projective-distance factor (how close the point is to the surfel
plane), an angle factor (how frontally the ray hits the surfel), and a radius
factor (how far the point sits from the surfel center inside its disk). The
per-observation inlier ratio is the best product over the collected surfels,
floored by a constant occupancy prior where no surfels exist yet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "InlierConfig", "Ray",
    "weight_dist", "weight_angle", "weight_radius", "inlier_ratio",
    "collect_surfels", "voxel_dda",
]

_EXP_ARG_MAX = 500.0  # exp() guard for degenerate radii / distances


@dataclass(frozen=True)
class InlierConfig:
    """Scoring parameters.

    theta is the projective-distance bandwidth (proportional to the voxel
    resolution); gamma the floor of the radius factor; rays hitting a surfel
    at more than alpha_max_deg get the constant angle floor; rho_prior is the
    occupancy prior used where no surfel supports the observation.
    """

    theta: float
    gamma: float = 0.5
    alpha_max_deg: float = 80.0
    w_angle_floor: float = 0.1
    rho_prior: float = 0.1

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")

    @property
    def cos_alpha_max(self) -> float:
        return math.cos(math.radians(self.alpha_max_deg))

    @classmethod
    def for_voxel_size(cls, voxel_size: float, **kw) -> "InlierConfig":
        """Defaults with theta = 2 * voxel_size."""
        return cls(theta=2.0 * voxel_size, **kw)


@dataclass(frozen=True)
class Ray:
    """A scanning ray: camera center, unit direction, and the distance along
    the ray to the observed point."""

    origin: np.ndarray
    dir: np.ndarray
    depth: float

    def __post_init__(self):
        object.__setattr__(self, "origin",
                           np.asarray(self.origin, dtype=np.float64))
        d = np.asarray(self.dir, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "dir", d)
        if self.depth <= 0:
            raise ValueError("ray depth must be positive")

    @property
    def point(self) -> np.ndarray:
        return self.origin + self.depth * self.dir


def weight_dist(surfel, point, cfg: InlierConfig) -> float:
    """exp(-(n . (x - p))^2 / (2 theta^2)): 1 on the surfel plane, decaying
    with projective distance."""
    d = float(np.dot(surfel.normal, np.asarray(point) - surfel.position))
    return math.exp(-min(0.5 * (d / cfg.theta) ** 2, _EXP_ARG_MAX))


def weight_angle(surfel, ray: Ray, cfg: InlierConfig) -> float:
    """Frontality factor: linear in cos(alpha) down to the alpha_max cutoff,
    then the constant floor. alpha is measured sign-free so the stored normal
    orientation does not matter."""
    cos_a = abs(float(np.dot(surfel.normal, ray.dir)))
    cmax = cfg.cos_alpha_max
    if cos_a > cmax:
        return (cos_a - cmax) / (1.0 - cmax)
    return cfg.w_angle_floor


def weight_radius(surfel, point, cfg: InlierConfig) -> float:
    """Disk-support factor: 1 at the surfel center, decreasing monotonically
    toward gamma with the in-plane distance, with a transition scaled by the
    surfel radius."""
    delta = np.asarray(point, dtype=np.float64) - surfel.position
    along = float(np.dot(surfel.normal, delta))
    d_disk = math.sqrt(max(float(delta @ delta) - along * along, 0.0))
    r = max(surfel.radius, 1e-12)
    x = min(d_disk / r, _EXP_ARG_MAX)
    return cfg.gamma + 2.0 * (1.0 - cfg.gamma) / (1.0 + math.exp(x))


def inlier_ratio(surfels, ray: Ray, cfg: InlierConfig) -> float:
    """Best product of the three factors over the candidate surfels, floored
    by the occupancy prior."""
    point = ray.point
    best = cfg.rho_prior
    for s in surfels:
        rho = (weight_dist(s, point, cfg)
               * weight_radius(s, point, cfg)
               * weight_angle(s, ray, cfg))
        if rho > best:
            best = rho
    return best


def voxel_dda(p0, p1, voxel_size: float):
    """Integer voxel coordinates crossed by the segment p0 -> p1, in traversal
    order (Amanatides-Woo stepping, endpoints included)."""
    from .volume_grid import GRID_EPS

    h = float(voxel_size)
    cur = [int(math.floor(float(c) / h + GRID_EPS)) for c in p0]
    end = [int(math.floor(float(c) / h + GRID_EPS)) for c in p1]
    d = [float(p1[i]) - float(p0[i]) for i in range(3)]
    step, t_max, t_delta = [0, 0, 0], [math.inf] * 3, [math.inf] * 3
    for i in range(3):
        if d[i] > 0:
            step[i] = 1
            t_max[i] = ((cur[i] + 1) * h - float(p0[i])) / d[i]
            t_delta[i] = h / d[i]
        elif d[i] < 0:
            step[i] = -1
            t_max[i] = (cur[i] * h - float(p0[i])) / d[i]
            t_delta[i] = -h / d[i]
    out = [tuple(cur)]
    # bounded by the segment's voxel extent; ties broken x before y before z
    for _ in range(sum(abs(end[i] - cur[i]) for i in range(3)) + 6):
        if cur == end:
            break
        axis = 0
        if t_max[1] < t_max[axis]:
            axis = 1
        if t_max[2] < t_max[axis]:
            axis = 2
        if t_max[axis] > 1.0 and cur != end:
            # numerical shortfall: hop directly toward the endpoint
            axis = max(range(3), key=lambda i: abs(end[i] - cur[i]))
            if cur[axis] == end[axis]:
                break
            cur[axis] += 1 if end[axis] > cur[axis] else -1
            out.append(tuple(cur))
            continue
        cur[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        out.append(tuple(cur))
    return out


def collect_surfels(grid, ray: Ray, band: Optional[float] = None) -> list:
    """All surfels stored in the voxels crossed by the ray segment from
    depth - band to depth + band (band defaults to the grid truncation).
    Rays through unallocated space return an empty list."""
    from .surface_extraction import Surfel

    band = band if band is not None else grid.truncation
    t0 = max(ray.depth - band, 1e-6)
    p0 = ray.origin + t0 * ray.dir
    p1 = ray.origin + (ray.depth + band) * ray.dir
    out = []
    for g in voxel_dda(p0, p1, grid.voxel_size):
        blk = grid.blocks.get((g[0] >> 3, g[1] >> 3, g[2] >> 3))
        if blk is None:
            continue
        from .volume_grid import voxel_index
        idx = voxel_index(g[0] & 7, g[1] & 7, g[2] & 7)
        for axis in range(3):
            row = blk.surfel_index[idx, axis]
            if row >= 0:
                out.append(Surfel(position=blk.surfel_pos[row].copy(),
                                  normal=blk.surfel_normal[row].copy(),
                                  radius=float(blk.surfel_radius[row]),
                                  confidence=float(blk.surfel_conf[row])))
    return out
