"""Depth-frame model, pinhole camera, sensor noise, TUM-layout datasets, and
an analytic synthetic-scene renderer with controllable noise and outliers.

Conventions: poses are rigid transforms mapping camera coordinates to world
coordinates (p_world = R @ p_cam + t), stored as 4x4 matrices. The camera
looks along +z, x points right, y points down (image rows grow downward).
Depth means the camera-frame z coordinate, not ray length. Invalid depth
pixels hold 0.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "CameraIntrinsics", "NoiseModel", "DepthFrame",
    "project", "unproject", "axial_noise", "look_at_pose",
    "Plane", "Sphere", "Box", "SyntheticScene",
    "render_synthetic", "load_scene_file", "SceneConfig",
    "load_tum_sequence", "write_tum_sequence", "TumSequence",
    "TUM_DEPTH_SCALE", "DEFAULT_TUM_INTRINSICS",
]

TUM_DEPTH_SCALE = 5000.0  # raw 16-bit units per meter


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")


DEFAULT_TUM_INTRINSICS = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)


def project(p, intr: CameraIntrinsics):
    """Project a camera-frame point to continuous pixel coordinates.

    Returns (u, v) or None when the point is behind the camera or its
    nearest pixel falls outside the image.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if z <= 0:
        return None
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    if not (-0.5 <= u < intr.width - 0.5 and -0.5 <= v < intr.height - 0.5):
        return None
    return u, v


def unproject(u: float, v: float, z: float, intr: CameraIntrinsics) -> np.ndarray:
    """Back-project pixel (u, v) at depth z to a camera-frame point."""
    return np.array([(u - intr.cx) / intr.fx * z,
                     (v - intr.cy) / intr.fy * z,
                     z], dtype=np.float64)


@dataclass(frozen=True)
class NoiseModel:
    """Axial depth-noise std curve: iota(z) = k0 + k1 * (z - z0)^2.

    Defaults follow a structured-light sensor error model with the
    viewing-angle factor removed; all coefficients are configurable.
    """

    k0: float = 0.0012
    k1: float = 0.0019
    z0: float = 0.4

    def axial(self, z):
        z = np.asarray(z, dtype=np.float64)
        return self.k0 + self.k1 * (z - self.z0) ** 2


def axial_noise(z, model: Optional[NoiseModel] = None):
    """Axial depth std at depth z (meters). Accepts scalars or arrays."""
    model = model or NoiseModel()
    out = model.axial(z)
    return float(out) if np.isscalar(z) else out


def _check_pose(pose: np.ndarray):
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4) or not np.all(np.isfinite(pose)):
        raise ValueError("pose must be a finite 4x4 matrix")
    R = pose[:3, :3]
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
        raise ValueError("pose rotation is not orthonormal")
    if not np.allclose(pose[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
        raise ValueError("pose last row must be [0 0 0 1]")
    return pose


@dataclass
class DepthFrame:
    """One depth image with its pose (world-from-camera) and intrinsics.

    ``noise`` holds the per-pixel axial std (same shape as ``depth``,
    0 where depth is invalid); producers fill it from a NoiseModel.
    """

    depth: np.ndarray
    pose: np.ndarray
    intrinsics: CameraIntrinsics
    timestamp: float = 0.0
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        self.depth = np.ascontiguousarray(self.depth, dtype=np.float64)
        if self.depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("depth shape does not match intrinsics")
        if not np.all(np.isfinite(self.depth)):
            raise ValueError("depth contains non-finite values")
        self.pose = _check_pose(self.pose)
        if self.noise is not None:
            self.noise = np.ascontiguousarray(self.noise, dtype=np.float64)
            if self.noise.shape != self.depth.shape:
                raise ValueError("noise shape does not match depth")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def camera_center(self) -> np.ndarray:
        return self.pose[:3, 3]

    def ensure_noise(self, model: Optional[NoiseModel] = None) -> np.ndarray:
        """Fill ``noise`` from a NoiseModel where missing; returns it."""
        if self.noise is None:
            model = model or NoiseModel()
            n = model.axial(self.depth)
            n[self.depth <= 0] = 0.0
            self.noise = n
        return self.noise

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points) - self.pose[:3, 3]
        return p @ self.pose[:3, :3]  # R^T applied from the right


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera pose looking from eye toward target.

    Camera z points at the target; y points "down" relative to ``up``.
    """
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    nf = np.linalg.norm(f)
    if nf < 1e-12:
        raise ValueError("eye and target coincide")
    f = f / nf
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(f, up)
    nx = np.linalg.norm(x)
    if nx < 1e-9:  # looking straight along up; pick any stable right vector
        up = np.array([1.0, 0.0, 0.0]) if abs(f[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x = np.cross(f, up)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(f, x)
    pose = np.eye(4)
    pose[:3, 0] = x
    pose[:3, 1] = y
    pose[:3, 2] = f
    pose[:3, 3] = eye
    return pose


# ---------------------------------------------------------------------------
# analytic scene primitives

@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``point`` with unit ``normal``; sdf > 0 on the
    normal side."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        n = np.asarray(self.normal, dtype=np.float64)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))

    def sdf(self, p: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(p) - self.point) @ self.normal

    def ray_depth(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        denom = dirs @ self.normal
        num = (self.point - origin) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        t[~np.isfinite(t)] = np.inf
        t[t <= 1e-6] = np.inf
        return t


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def sdf(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(p) - self.center, axis=-1) - self.radius

    def ray_depth(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origin - self.center
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2.0 * dirs @ oc
        c = oc @ oc - self.radius ** 2
        disc = b * b - 4.0 * a * c
        t = np.full(dirs.shape[0], np.inf)
        hit = disc >= 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
        near = np.where(t0 > 1e-6, t0, np.where(t1 > 1e-6, t1, np.inf))
        t[hit] = near[hit]
        return t


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by center and half extents."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        h = np.asarray(self.half_extents, dtype=np.float64)
        if np.any(h <= 0):
            raise ValueError("box half extents must be positive")
        object.__setattr__(self, "half_extents", h)

    def sdf(self, p: np.ndarray) -> np.ndarray:
        q = np.abs(np.atleast_2d(p) - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def ray_depth(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        lo = self.center - self.half_extents
        hi = self.center + self.half_extents
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (lo - origin) / dirs
            t_hi = (hi - origin) / dirs
        t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=-1)
        t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=-1)
        t = np.where(t_near > 1e-6, t_near, t_far)  # from inside, hit the far wall
        t = np.where((t_far >= t_near) & (t > 1e-6), t, np.inf)
        return t


@dataclass
class SyntheticScene:
    """Union of analytic primitives with exact signed distance and exact
    per-ray depth."""

    primitives: Sequence[object]

    def sdf(self, p: np.ndarray) -> np.ndarray:
        """Signed distance of the union (min over primitives)."""
        p = np.atleast_2d(p)
        return np.min([prim.sdf(p) for prim in self.primitives], axis=0)

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        """Unsigned distance to the nearest primitive surface."""
        p = np.atleast_2d(p)
        return np.min([np.abs(prim.sdf(p)) for prim in self.primitives], axis=0)

    def render_depth(self, pose: np.ndarray, intr: CameraIntrinsics,
                     max_depth: float = 5.0) -> np.ndarray:
        """Exact depth image (camera-frame z of the nearest hit; 0 = miss)."""
        pose = _check_pose(pose)
        u = np.arange(intr.width, dtype=np.float64)
        v = np.arange(intr.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        dirs_cam = np.stack([(uu - intr.cx) / intr.fx,
                             (vv - intr.cy) / intr.fy,
                             np.ones_like(uu)], axis=-1)
        dirs = dirs_cam.reshape(-1, 3) @ pose[:3, :3].T  # z-normalized world dirs
        origin = pose[:3, 3]
        depth = np.full(dirs.shape[0], np.inf)
        for prim in self.primitives:
            depth = np.minimum(depth, prim.ray_depth(origin, dirs))
        depth[~np.isfinite(depth) | (depth > max_depth)] = 0.0
        return depth.reshape(intr.height, intr.width)


def render_synthetic(scene: SyntheticScene, pose: np.ndarray,
                     intr: CameraIntrinsics, noise_model: Optional[NoiseModel] = None,
                     *, gaussian: bool = True, outlier_fraction: float = 0.0,
                     outlier_range: float = 0.3, rng=None,
                     max_depth: float = 5.0, timestamp: float = 0.0):
    """Render one synthetic frame: returns (noisy frame, clean frame).

    Per valid pixel the observed depth is z* + N(0, iota(z*)^2) when
    ``gaussian``; with probability ``outlier_fraction`` the pixel is instead
    replaced by a uniform draw in [z* - outlier_range, z* + outlier_range].
    Deterministic for a given ``rng`` state.
    """
    if not 0.0 <= outlier_fraction <= 1.0:
        raise ValueError("outlier_fraction must be in [0, 1]")
    noise_model = noise_model or NoiseModel()
    if rng is None:
        rng = np.random.default_rng(0)

    z_true = scene.render_depth(pose, intr, max_depth=max_depth)
    valid = z_true > 0
    z_obs = z_true.copy()
    iota_true = noise_model.axial(z_true)
    if gaussian:
        g = rng.standard_normal(z_true.shape)
        z_obs[valid] += (g * iota_true)[valid]
    if outlier_fraction > 0:
        replace = (rng.random(z_true.shape) < outlier_fraction) & valid
        u = rng.uniform(-outlier_range, outlier_range, z_true.shape)
        z_obs[replace] = z_true[replace] + u[replace]
    z_obs[valid] = np.maximum(z_obs[valid], 1e-3)
    z_obs[~valid] = 0.0

    def frame_for(z):
        n = noise_model.axial(z)
        n[z <= 0] = 0.0
        return DepthFrame(z, pose, intr, timestamp=timestamp, noise=n)

    return frame_for(z_obs), frame_for(z_true)


# ---------------------------------------------------------------------------
# scene description files

@dataclass
class SceneConfig:
    """Parsed synthetic-scene description: primitives, trajectory, intrinsics,
    noise settings."""

    scene: SyntheticScene
    intrinsics: CameraIntrinsics
    poses: list  # one 4x4 pose per frame
    gaussian: bool = True
    outlier_fraction: float = 0.0
    outlier_range: float = 0.3
    max_depth: float = 5.0
    noise_model: NoiseModel = field(default_factory=NoiseModel)


def _primitive_from_dict(d: dict):
    kind = d.get("type")
    if kind == "plane":
        return Plane(d["point"], d["normal"])
    if kind == "sphere":
        return Sphere(d["center"], d["radius"])
    if kind == "box":
        return Box(d["center"], d["half_extents"])
    raise ValueError(f"unknown primitive type: {kind!r}")


def load_scene_file(path) -> SceneConfig:
    """Load a JSON scene file: primitives, trajectory waypoints (eye/look_at,
    linearly interpolated over ``frames``), intrinsics, and noise settings."""
    with open(path) as f:
        cfg = json.load(f)
    scene = SyntheticScene([_primitive_from_dict(p) for p in cfg["primitives"]])
    ic = cfg["intrinsics"]
    intr = CameraIntrinsics(ic["fx"], ic["fy"], ic["cx"], ic["cy"],
                            int(ic["width"]), int(ic["height"]))
    frames = int(cfg.get("frames", 1))
    up = cfg.get("up", [0.0, 0.0, 1.0])
    way = cfg["trajectory"]
    if len(way) < 1:
        raise ValueError("trajectory needs at least one waypoint")
    eyes = np.array([w["eye"] for w in way], dtype=np.float64)
    targets = np.array([w["look_at"] for w in way], dtype=np.float64)
    poses = []
    for i in range(frames):
        s = 0.0 if frames == 1 else i / (frames - 1) * (len(way) - 1)
        k = min(int(s), len(way) - 2) if len(way) > 1 else 0
        f = s - k
        if len(way) == 1:
            eye, tgt = eyes[0], targets[0]
        else:
            eye = (1 - f) * eyes[k] + f * eyes[k + 1]
            tgt = (1 - f) * targets[k] + f * targets[k + 1]
        poses.append(look_at_pose(eye, tgt, up))
    noise = cfg.get("noise", {})
    nm = noise.get("model", {})
    return SceneConfig(
        scene=scene, intrinsics=intr, poses=poses,
        gaussian=bool(noise.get("gaussian", True)),
        outlier_fraction=float(noise.get("outlier_fraction", 0.0)),
        outlier_range=float(noise.get("outlier_range", 0.3)),
        max_depth=float(cfg.get("max_depth", 5.0)),
        noise_model=NoiseModel(nm.get("k0", 0.0012), nm.get("k1", 0.0019),
                               nm.get("z0", 0.4)),
    )


# ---------------------------------------------------------------------------
# TUM RGB-D layout

class TumSequence:
    """Lazy, order-preserving stream of DepthFrame from a TUM-layout folder.

    Association and skip counting happen at construction; PNG decode happens
    per frame during iteration.
    """

    def __init__(self, root, entries, intrinsics: CameraIntrinsics,
                 noise_model: NoiseModel, depth_scale: float,
                 skipped_no_pose: int, skipped_malformed: int):
        self.root = root
        self._entries = entries  # (timestamp, png path, 4x4 pose)
        self.intrinsics = intrinsics
        self.noise_model = noise_model
        self.depth_scale = depth_scale
        self.skipped_no_pose = skipped_no_pose
        self.skipped_malformed = skipped_malformed

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[DepthFrame]:
        from PIL import Image

        for ts, rel, pose in self._entries:
            raw = np.asarray(Image.open(os.path.join(self.root, rel)))
            if raw.shape != (self.intrinsics.height, self.intrinsics.width):
                raise ValueError(f"depth image {rel} has shape {raw.shape}, "
                                 f"intrinsics expect "
                                 f"{(self.intrinsics.height, self.intrinsics.width)}")
            depth = raw.astype(np.float64) / self.depth_scale
            noise = self.noise_model.axial(depth)
            noise[depth <= 0] = 0.0
            yield DepthFrame(depth, pose, self.intrinsics, timestamp=ts, noise=noise)


def _parse_list_file(path):
    """Parse a TUM list file into (timestamp, fields) rows, counting malformed
    lines."""
    rows, malformed = [], 0
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                ts = float(parts[0])
            except (ValueError, IndexError):
                malformed += 1
                continue
            rows.append((ts, parts[1:]))
    return rows, malformed


def load_tum_sequence(root, intrinsics: Optional[CameraIntrinsics] = None,
                      noise_model: Optional[NoiseModel] = None,
                      max_dt: float = 0.02,
                      depth_scale: float = TUM_DEPTH_SCALE) -> TumSequence:
    """Open a TUM-layout dataset: depth.txt (timestamp -> 16-bit PNG, units of
    1/depth_scale meters) and groundtruth.txt (timestamp tx ty tz qx qy qz qw,
    world-from-camera). Each depth entry is associated with the nearest pose
    timestamp within ``max_dt`` seconds; unmatched frames are skipped and
    counted. Intrinsics come from intrinsics.json in the root when present,
    else the standard TUM defaults.
    """
    from scipy.spatial.transform import Rotation

    depth_list = os.path.join(root, "depth.txt")
    gt_list = os.path.join(root, "groundtruth.txt")
    if not os.path.isfile(depth_list):
        raise FileNotFoundError(depth_list)
    if not os.path.isfile(gt_list):
        raise FileNotFoundError(gt_list)

    if intrinsics is None:
        intr_path = os.path.join(root, "intrinsics.json")
        if os.path.isfile(intr_path):
            with open(intr_path) as f:
                d = json.load(f)
            intrinsics = CameraIntrinsics(d["fx"], d["fy"], d["cx"], d["cy"],
                                          int(d["width"]), int(d["height"]))
        else:
            intrinsics = DEFAULT_TUM_INTRINSICS
    noise_model = noise_model or NoiseModel()

    depth_rows, bad_d = _parse_list_file(depth_list)
    gt_rows, bad_g = _parse_list_file(gt_list)
    malformed = bad_d + bad_g

    poses, pose_ts = [], []
    for ts, fields in gt_rows:
        if len(fields) < 7:
            malformed += 1
            continue
        try:
            tx, ty, tz, qx, qy, qz, qw = (float(x) for x in fields[:7])
        except ValueError:
            malformed += 1
            continue
        pose = np.eye(4)
        pose[:3, :3] = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        pose[:3, 3] = (tx, ty, tz)
        poses.append(pose)
        pose_ts.append(ts)
    pose_ts = np.asarray(pose_ts)
    order = np.argsort(pose_ts, kind="stable")
    pose_ts = pose_ts[order]
    poses = [poses[i] for i in order]

    entries, skipped = [], 0
    for ts, fields in sorted(depth_rows, key=lambda r: r[0]):
        if not fields:
            malformed += 1
            continue
        if len(pose_ts) == 0:
            skipped += 1
            continue
        j = int(np.searchsorted(pose_ts, ts))
        best, best_dt = None, max_dt
        for k in (j - 1, j):
            if 0 <= k < len(pose_ts) and abs(pose_ts[k] - ts) <= best_dt:
                best, best_dt = k, abs(pose_ts[k] - ts)
        if best is None:
            skipped += 1
            continue
        entries.append((ts, fields[0], poses[best]))

    return TumSequence(root, entries, intrinsics, noise_model, depth_scale,
                       skipped_no_pose=skipped, skipped_malformed=malformed)


def write_tum_sequence(root, frames, intrinsics: CameraIntrinsics,
                       depth_scale: float = TUM_DEPTH_SCALE):
    """Write (timestamp, depth array, pose) triples as a TUM-layout dataset.

    Depth is stored as 16-bit PNG in units of 1/depth_scale meters; poses go
    to groundtruth.txt as tx ty tz qx qy qz qw; intrinsics to intrinsics.json.
    """
    from PIL import Image
    from scipy.spatial.transform import Rotation

    os.makedirs(os.path.join(root, "depth"), exist_ok=True)
    depth_lines, gt_lines = [], []
    for ts, depth, pose in frames:
        raw = np.clip(np.round(np.asarray(depth) * depth_scale), 0, 65535)
        img = Image.fromarray(raw.astype(np.uint16))
        rel = f"depth/{ts:.6f}.png"
        img.save(os.path.join(root, rel))
        depth_lines.append(f"{ts:.6f} {rel}")
        q = Rotation.from_matrix(pose[:3, :3]).as_quat()  # x y z w
        t = pose[:3, 3]
        gt_lines.append(f"{ts:.6f} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
                        f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}")
    with open(os.path.join(root, "depth.txt"), "w") as f:
        f.write("# timestamp filename\n" + "\n".join(depth_lines) + "\n")
    with open(os.path.join(root, "groundtruth.txt"), "w") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n" + "\n".join(gt_lines) + "\n")
    with open(os.path.join(root, "intrinsics.json"), "w") as f:
        json.dump({"fx": intrinsics.fx, "fy": intrinsics.fy,
                   "cx": intrinsics.cx, "cy": intrinsics.cy,
                   "width": intrinsics.width, "height": intrinsics.height},
                  f, indent=2, sort_keys=True)
        f.write("\n")
