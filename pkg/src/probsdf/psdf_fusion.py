"""Per-voxel signed-distance observations and the parametric Bayesian update.

The per-voxel state is a joint posterior Beta(pi; a, b) * N(D; mu, sigma^2)
over the inlier ratio pi and the signed distance D. An observation d with
noise std tau is modeled as the mixture

    p(d | D, pi) = pi * N(d; D, tau^2) + (1 - pi) * U(d; -band, +band),

and the post-update mixture posterior is projected back onto the parametric
family by matching first and second moments of both D and pi. The geometric
per-frame inlier estimate rho replaces the Beta-mean factor in the inlier
component's evidence weight (and symmetrically 1-rho in the outlier one).

A plain weighted-average TSDF baseline is maintained alongside in separate
fields; neither update touches the other's state.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import impl as _impl
from .inlier_eval import InlierConfig
from .sensor_io import DepthFrame
from .volume_grid import BLOCK, BlockGrid, PsdfVoxel

__all__ = [
    "SIGMA_FLOOR", "AB_MIN", "AB_MAX",
    "SdfObservation", "sdf_observation", "psdf_update", "tsdf_update",
    "FusionStats", "fuse_frame",
]

# numerical floors: keep the state usable over arbitrarily long sequences
SIGMA_FLOOR = 1e-4   # meters
AB_MIN = 0.5
AB_MAX = 1e4
TSDF_WEIGHT_CAP = 255.0


@dataclass(frozen=True)
class SdfObservation:
    """One projective signed-distance observation for a voxel.

    d_obs = observed depth minus the voxel corner's camera depth; tau is the
    axial noise std of the generating pixel; band is the truncation half-width
    (the uniform outlier component is supported on [-band, +band]); rho is the
    per-frame geometric inlier estimate.
    """

    d_obs: float
    tau: float
    rho: float
    band: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.band <= 0:
            raise ValueError("band must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if abs(self.d_obs) > self.band * (1 + 1e-12):
            raise ValueError("observation outside the truncation band")


def sdf_observation(corner, frame: DepthFrame, *, voxel_size: float,
                    trunc_scale: float = 3.0,
                    rho: float = 1.0) -> Optional[SdfObservation]:
    """Projective SDF observation of a voxel corner from one frame.

    Projects the corner into the frame, takes the depth of the nearest pixel
    z_i, and returns d_obs = z_i - z_corner with tau equal to that pixel's
    noise std, truncated to the per-observation band
    trunc_scale * (voxel_size + tau). None when the corner is behind the
    camera, projects out of the image, hits an invalid pixel, or |d_obs|
    exceeds the band. rho is attached by the caller.
    """
    frame.ensure_noise()
    p_cam = frame.world_to_camera(np.asarray(corner, dtype=np.float64))[0]
    z_corner = p_cam[2]
    if z_corner <= 0:
        return None
    intr = frame.intrinsics
    u = intr.fx * p_cam[0] / z_corner + intr.cx
    v = intr.fy * p_cam[1] / z_corner + intr.cy
    px = int(math.floor(u + 0.5))
    py = int(math.floor(v + 0.5))
    if not (0 <= px < intr.width and 0 <= py < intr.height):
        return None
    z_i = frame.depth[py, px]
    if z_i <= 0:
        return None
    tau = frame.noise[py, px]
    band = trunc_scale * (voxel_size + tau)
    d = z_i - z_corner
    if abs(d) > band:
        return None
    return SdfObservation(d_obs=d, tau=tau, rho=rho, band=band)


def psdf_update(v: PsdfVoxel, obs: SdfObservation) -> PsdfVoxel:
    """One moment-matched posterior update; returns a new voxel, baseline
    fields untouched.

    The two mixture components after the update are
      inlier:  weight C1 = rho * N(d; mu, sigma^2 + tau^2),
               Beta(a+1, b) * N(m, s^2)
      outlier: weight C2 = (1-rho) / (2*band),
               Beta(a, b+1) * N(mu, sigma^2)
    with s^2 = 1/(1/sigma^2 + 1/tau^2), m = s^2 (mu/sigma^2 + d/tau^2).
    mu and sigma^2 match the mixture's first two D-moments; a and b are fit to
    the mixture's pi mean and second moment.
    """
    sigma = max(v.sigma, SIGMA_FLOOR)
    mu, a, b = v.mu, v.a, v.b
    tau2 = obs.tau * obs.tau
    sig2 = sigma * sigma
    d = obs.d_obs

    s2 = 1.0 / (1.0 / sig2 + 1.0 / tau2)
    m = s2 * (mu / sig2 + d / tau2)

    var = sig2 + tau2
    c1 = obs.rho * math.exp(-0.5 * (d - mu) ** 2 / var) / math.sqrt(2.0 * math.pi * var)
    c2 = (1.0 - obs.rho) / (2.0 * obs.band)
    w = c1 + c2
    if w <= 0.0:  # rho == 1 and the Gaussian underflowed: pure inlier step
        c1p, c2p = 1.0, 0.0
    else:
        c1p, c2p = c1 / w, c2 / w

    mu_n = c1p * m + c2p * mu
    second = c1p * (s2 + m * m) + c2p * (sig2 + mu * mu)
    var_n = max(second - mu_n * mu_n, SIGMA_FLOOR * SIGMA_FLOOR)

    e1 = (c1p * (a + 1.0) + c2p * a) / (a + b + 1.0)
    e2 = (c1p * (a + 1.0) * (a + 2.0) + c2p * a * (a + 1.0)) / \
         ((a + b + 1.0) * (a + b + 2.0))
    dv = e2 - e1 * e1
    if dv <= 0.0:  # numerically degenerate pi posterior: pin at max counts
        a_n = AB_MAX * e1
        b_n = AB_MAX * (1.0 - e1)
    else:
        a_n = e1 * (e1 - e2) / dv
        b_n = a_n * (1.0 - e1) / e1

    return PsdfVoxel(
        a=min(max(a_n, AB_MIN), AB_MAX),
        b=min(max(b_n, AB_MIN), AB_MAX),
        mu=mu_n,
        sigma=max(math.sqrt(var_n), SIGMA_FLOOR),
        tsdf_value=v.tsdf_value,
        tsdf_weight=v.tsdf_weight,
    )


def tsdf_update(v: PsdfVoxel, obs: SdfObservation) -> PsdfVoxel:
    """Weighted-average baseline with unit observation weight, accumulation
    capped at 255. Posterior fields untouched."""
    w = v.tsdf_weight
    value = (w * v.tsdf_value + obs.d_obs) / (w + 1.0)
    return PsdfVoxel(a=v.a, b=v.b, mu=v.mu, sigma=v.sigma,
                     tsdf_value=value,
                     tsdf_weight=min(w + 1.0, TSDF_WEIGHT_CAP))


@dataclass
class FusionStats:
    """Per-frame fusion summary."""

    voxels_updated: int = 0
    mean_rho: float = 0.0
    blocks_processed: int = 0
    rho_map_ms: float = 0.0
    fuse_ms: float = 0.0


def _block_in_frustum(coord, side, pose_inv_rot, pose_inv_t, intr) -> bool:
    """Conservative test: can any point of this block project into the image?"""
    base = np.array(coord, dtype=np.float64) * side
    corners = base + side * np.array(
        [(x, y, z) for z in (0, 1) for y in (0, 1) for x in (0, 1)],
        dtype=np.float64)
    cam = corners @ pose_inv_rot.T + pose_inv_t
    z = cam[:, 2]
    if np.all(z <= 1e-9):
        return False
    if np.any(z <= 1e-9):
        return True  # straddles the camera plane: keep, let per-voxel tests decide
    u = intr.fx * cam[:, 0] / z + intr.cx
    v = intr.fy * cam[:, 1] / z + intr.cy
    return not (u.max() < -1 or u.min() > intr.width or
                v.max() < -1 or v.min() > intr.height)


def fuse_frame(grid: BlockGrid, frame: DepthFrame, snapshot=None,
               cfg: Optional[InlierConfig] = None) -> FusionStats:
    """Fuse one frame into every allocated voxel with a valid observation.

    The inlier ratio of each observation is evaluated against ``snapshot``
    (the surfels from the previous extraction; None or empty means the
    occupancy prior everywhere). Applies the posterior update and the TSDF
    baseline update to each observed voxel; unobserved voxels are untouched.
    Allocation for the frame must already have run.
    """
    frame.ensure_noise()
    cfg = cfg or InlierConfig.for_voxel_size(grid.voxel_size)
    intr = frame.intrinsics

    if snapshot is None or snapshot.count == 0:
        skeys = np.empty(0, dtype=np.int64)
        spos = np.empty((0, 3))
        snrm = np.empty((0, 3))
        srad = np.empty(0)
    else:
        skeys, spos, snrm, srad = snapshot.ray_query_arrays()

    t0 = time.perf_counter()
    rho = np.empty_like(frame.depth)
    _impl.rho_map(frame.depth, frame.noise, frame.rotation, frame.camera_center,
                  intr.fx, intr.fy, intr.cx, intr.cy,
                  grid.voxel_size, grid.trunc_scale,
                  skeys, spos, snrm, srad,
                  cfg.theta, cfg.gamma, cfg.cos_alpha_max, cfg.w_angle_floor,
                  cfg.rho_prior, rho)
    t1 = time.perf_counter()

    R_cw = frame.rotation.T.copy()
    t_cw = -R_cw @ frame.camera_center
    side = grid.voxel_size * BLOCK

    stats = FusionStats(rho_map_ms=(t1 - t0) * 1e3)
    rho_sum = 0.0
    for coord in grid.sorted_coords():
        if not _block_in_frustum(coord, side, R_cw, t_cw, intr):
            continue
        blk = grid.blocks[coord]
        n, rs = _impl.fuse_block(
            blk.mu, blk.sigma, blk.a, blk.b, blk.tsdf_value, blk.tsdf_weight,
            coord[0], coord[1], coord[2], grid.voxel_size,
            R_cw, t_cw, intr.fx, intr.fy, intr.cx, intr.cy,
            frame.depth, frame.noise, rho, grid.trunc_scale,
            SIGMA_FLOOR, AB_MIN, AB_MAX)
        stats.voxels_updated += int(n)
        stats.blocks_processed += 1
        rho_sum += rs
    stats.fuse_ms = (time.perf_counter() - t1) * 1e3
    if stats.voxels_updated:
        stats.mean_rho = rho_sum / stats.voxels_updated
    return stats
