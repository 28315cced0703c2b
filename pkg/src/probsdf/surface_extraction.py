"""Confidence-gated surfel generation and per-block marching-cubes meshing.

A surfel is emitted on a voxel edge when the field changes sign across it and
both corner voxels pass the confidence gate; its position and radius linearly
interpolate the corners by absolute field value, its normal is the normalized
field gradient at the crossing. Triangles connect surfels per cell through
the classical 256-case table, skipping any edge whose corner voxels are too
uncertain (sigma above the rejection threshold) or whose surfel was
confidence-rejected.

Vertices are shared by construction: every cell edge resolves to exactly one
(voxel, axis) slot, across block boundaries included. Output ordering is
canonical (block coordinate, then voxel index, then edge axis), so identical
grid state yields an identical mesh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import mc_tables
from ._kernels import impl as _impl
from .volume_grid import (BLOCK, BLOCK_VOL, BlockGrid, VoxelBlock, pack_key,
                          voxel_local)

__all__ = [
    "Surfel", "TriangleMesh", "ExtractionConfig", "SurfelSnapshot",
    "sdf_gradient", "extract_surfel", "extract_block_triangles", "extract_all",
]

GRAD_EPS = 1e-9        # below this gradient magnitude an edge is degenerate
MAX_SURFELS = 3 * BLOCK_VOL
MAX_TRIS = 5 * BLOCK_VOL


@dataclass(frozen=True)
class Surfel:
    """Oriented disk bound to a voxel edge: position on the edge, unit
    normal, radius, and the gating confidence (min of the two corner
    inlier-ratio means) kept for heatmaps."""

    position: np.ndarray
    normal: np.ndarray
    radius: float
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=np.float64))
        n = np.asarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise ValueError("surfel normal must be unit length")
        object.__setattr__(self, "normal", n)
        if self.radius <= 0:
            raise ValueError("surfel radius must be positive")


@dataclass
class TriangleMesh:
    """Shared-vertex triangle mesh; vertices are the extracted surfels in
    canonical order, each carrying a confidence scalar in [0, 1]."""

    positions: np.ndarray
    normals: np.ndarray
    confidence: np.ndarray
    triangles: np.ndarray

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.empty((0, 3)), np.empty((0, 3)), np.empty(0),
                   np.empty((0, 3), dtype=np.int64))

    @property
    def vertex_count(self) -> int:
        return int(self.positions.shape[0])

    @property
    def triangle_count(self) -> int:
        return int(self.triangles.shape[0])


@dataclass(frozen=True)
class ExtractionConfig:
    """Gates: pi_thr on the per-corner inlier-ratio mean, sigma_thr on the
    corner sigmas of any meshed edge. With use_tsdf the baseline field is
    meshed instead, gated only on accumulated weight."""

    pi_thr: float = 0.4
    sigma_thr: float = 0.016
    use_tsdf: bool = False


@dataclass
class SurfelSnapshot:
    """Immutable surfel set from one extraction cycle, in canonical order.

    ``keys`` packs each surfel's owning global voxel coordinates; the sorted
    view serves ray queries (all surfels of a voxel are contiguous there).
    """

    keys: np.ndarray
    axes: np.ndarray
    positions: np.ndarray
    normals: np.ndarray
    radii: np.ndarray
    confidences: np.ndarray
    _sorted: Optional[tuple] = field(default=None, repr=False)

    @classmethod
    def empty(cls) -> "SurfelSnapshot":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int8),
                   np.empty((0, 3)), np.empty((0, 3)), np.empty(0), np.empty(0))

    @property
    def count(self) -> int:
        return int(self.keys.shape[0])

    def ray_query_arrays(self):
        """(sorted keys, positions, normals, radii) permuted to key order."""
        if self._sorted is None:
            order = np.argsort(self.keys, kind="stable")
            self._sorted = (np.ascontiguousarray(self.keys[order]),
                            np.ascontiguousarray(self.positions[order]),
                            np.ascontiguousarray(self.normals[order]),
                            np.ascontiguousarray(self.radii[order]))
        return self._sorted


def _field_names(cfg: ExtractionConfig):
    return ("tsdf_value" if cfg.use_tsdf else "mu")


def sdf_gradient(grid: BlockGrid, gcoords, use_tsdf: bool = False):
    """Central-difference gradient of the field at a voxel corner, one-sided
    where a neighbor is unallocated; None when some axis has no neighbor at
    all. Returned unnormalized."""
    name = "tsdf_value" if use_tsdf else "mu"

    def val(g):
        ref = grid.voxel_ref(g)
        if ref is None:
            return None
        blk, i = ref
        return float(getattr(blk, name)[i])

    g = [int(c) for c in gcoords]
    c = val(g)
    if c is None:
        return None
    h = grid.voxel_size
    out = np.empty(3)
    for axis in range(3):
        gp, gm = list(g), list(g)
        gp[axis] += 1
        gm[axis] -= 1
        right, left = val(gp), val(gm)
        if right is not None and left is not None:
            out[axis] = (right - left) / (2.0 * h)
        elif right is not None:
            out[axis] = (right - c) / h
        elif left is not None:
            out[axis] = (c - left) / h
        else:
            return None
    return out


def extract_surfel(grid: BlockGrid, block_coord, index: int, axis: int,
                   cfg: ExtractionConfig) -> Optional[Surfel]:
    """Surfel on one voxel edge, or None.

    Emits iff the field changes sign across the edge and both corners pass
    the confidence gate; position and radius interpolate the corners by
    absolute field value, the normal is the interpolated field gradient
    normalized (None when degenerate). This is the scalar reference path; the
    extraction kernels implement the same contract.
    """
    pair = grid.edge_corner_pair(block_coord, index, axis)
    if pair is None:
        return None
    v1, v2 = pair
    if cfg.use_tsdf:
        f1, f2 = v1.tsdf_value, v2.tsdf_value
        ok = v1.tsdf_weight > 0 and v2.tsdf_weight > 0
        conf = min(v1.tsdf_weight, v2.tsdf_weight) / 255.0
    else:
        f1, f2 = v1.mu, v2.mu
        ok = v1.confidence > cfg.pi_thr and v2.confidence > cfg.pi_thr
        conf = min(v1.confidence, v2.confidence)
    if not ok or not (f1 * f2 < 0.0):
        return None

    lx, ly, lz = voxel_local(index)
    g1 = [BLOCK * block_coord[0] + lx, BLOCK * block_coord[1] + ly,
          BLOCK * block_coord[2] + lz]
    g2 = list(g1)
    g2[axis] += 1
    w1 = abs(f2) / (abs(f1) + abs(f2))
    w2 = 1.0 - w1
    grad1 = sdf_gradient(grid, g1, cfg.use_tsdf)
    grad2 = sdf_gradient(grid, g2, cfg.use_tsdf)
    if grad1 is None or grad2 is None:
        return None
    grad = w1 * grad1 + w2 * grad2
    norm = np.linalg.norm(grad)
    if norm < GRAD_EPS:
        return None
    h = grid.voxel_size
    pos = w1 * (h * np.array(g1, dtype=np.float64)) + \
        w2 * (h * np.array(g2, dtype=np.float64))
    radius = w1 * v1.sigma + w2 * v2.sigma
    return Surfel(position=pos, normal=grad / norm,
                  radius=max(radius, 1e-12), confidence=conf)


# ---------------------------------------------------------------------------
# padded gathers shared by both kernel backends

def _gather(grid: BlockGrid, coord, names, lo: int, hi: int, out: dict):
    """Fill padded [z,y,x] views of per-voxel fields over local voxel range
    [lo, hi) around ``coord``; missing blocks stay NaN."""
    for arr in out.values():
        arr.fill(np.nan)
    off_lo, off_hi = lo >> 3, (hi - 1) >> 3
    for oz in range(off_lo, off_hi + 1):
        for oy in range(off_lo, off_hi + 1):
            for ox in range(off_lo, off_hi + 1):
                nb = grid.blocks.get((coord[0] + ox, coord[1] + oy,
                                      coord[2] + oz))
                if nb is None:
                    continue
                sl_pad, sl_blk = [], []
                for o in (oz, oy, ox):
                    v_lo, v_hi = max(lo, 8 * o), min(hi, 8 * o + 8)
                    sl_pad.append(slice(v_lo - lo, v_hi - lo))
                    sl_blk.append(slice(v_lo - 8 * o, v_hi - 8 * o))
                for name in names:
                    out[name][tuple(sl_pad)] = nb.field3d(name)[tuple(sl_blk)]
    return out


def _block_may_cross(grid: BlockGrid, coord, name: str) -> bool:
    """Cheap screen: can any edge or cell of this block see a sign change?
    Examines the field over local voxels [0, 8] (own block plus the +1 shell
    from up to 7 neighbors); no sign change there means no owned surfel and
    no owned triangle."""
    blk = grid.blocks[coord]
    lo, hi = np.inf, -np.inf

    def scan(vals):
        nonlocal lo, hi
        lo = min(lo, float(np.min(vals)))
        hi = max(hi, float(np.max(vals)))

    scan(getattr(blk, name))
    if lo < 0.0 < hi:
        return True
    shell = (((1, 0, 0), (slice(None), slice(None), 0)),
             ((0, 1, 0), (slice(None), 0, slice(None))),
             ((0, 0, 1), (0, slice(None), slice(None))),
             ((1, 1, 0), (slice(None), 0, 0)),
             ((1, 0, 1), (0, slice(None), 0)),
             ((0, 1, 1), (0, 0, slice(None))),
             ((1, 1, 1), (0, 0, 0)))
    for off, sl in shell:
        nb = grid.blocks.get((coord[0] + off[0], coord[1] + off[1],
                              coord[2] + off[2]))
        if nb is not None:
            scan(nb.field3d(name)[sl])
            if lo < 0.0 < hi:
                return True
    return False


def _run_surfel_pass(grid: BlockGrid, coord, cfg: ExtractionConfig,
                     pads: dict, bufs: dict) -> None:
    """Recompute one block's surfel slots via the selected kernel backend."""
    blk = grid.blocks[coord]
    if cfg.use_tsdf:
        _gather(grid, coord, ("tsdf_value", "sigma", "tsdf_weight"), -1, 10,
                {"field": pads["field"], "sigma": pads["spread"],
                 "tsdf_weight": pads["gate"]})
        np.multiply(pads["gate"], 1.0 / 255.0, out=pads["conf"])
        np.clip(pads["conf"], 0.0, 1.0, out=pads["conf"])
        gate_thr = 0.0
    else:
        _gather(grid, coord, ("mu", "sigma", "a", "b"), -1, 10,
                {"mu": pads["field"], "sigma": pads["spread"],
                 "a": pads["gate"], "b": pads["conf"]})
        # gate becomes a/(a+b); conf shares it
        np.divide(pads["gate"], pads["gate"] + pads["conf"], out=pads["gate"])
        np.copyto(pads["conf"], pads["gate"])
        gate_thr = cfg.pi_thr

    n = _impl.surfel_pass(
        pads["field"], pads["spread"], pads["gate"], pads["conf"], gate_thr,
        BLOCK * coord[0], BLOCK * coord[1], BLOCK * coord[2],
        grid.voxel_size, GRAD_EPS,
        blk.surfel_index,
        bufs["voxel"], bufs["axis"], bufs["pos"], bufs["nrm"],
        bufs["rad"], bufs["cnf"])
    blk.surfel_pos = bufs["pos"][:n].copy()
    blk.surfel_normal = bufs["nrm"][:n].copy()
    blk.surfel_radius = bufs["rad"][:n].copy()
    blk.surfel_conf = bufs["cnf"][:n].copy()
    blk.surfel_voxel = bufs["voxel"][:n].copy()
    blk.surfel_axis = bufs["axis"][:n].copy()


def _gather_vertex_ids(grid: BlockGrid, coord, idx_pad: np.ndarray) -> None:
    """Global vertex ids over local voxels [0, 9) around ``coord``."""
    idx_pad.fill(-1)
    for oz in (0, 1):
        for oy in (0, 1):
            for ox in (0, 1):
                nb = grid.blocks.get((coord[0] + ox, coord[1] + oy,
                                      coord[2] + oz))
                if nb is None:
                    continue
                rows = nb.surfel_index.reshape(BLOCK, BLOCK, BLOCK, 3)
                sl_pad, sl_blk = [], []
                for o in (oz, oy, ox):
                    v_lo, v_hi = max(0, 8 * o), min(9, 8 * o + 8)
                    sl_pad.append(slice(v_lo, v_hi))
                    sl_blk.append(slice(v_lo - 8 * o, v_hi - 8 * o))
                sub = rows[tuple(sl_blk)]
                idx_pad[tuple(sl_pad)] = np.where(sub >= 0,
                                                  sub + nb.id_base, -1)


def _run_cell_pass(grid: BlockGrid, coord, cfg: ExtractionConfig,
                   pads: dict, idx_pad: np.ndarray,
                   tri_buf: np.ndarray) -> np.ndarray:
    _gather(grid, coord,
            ("tsdf_value", "sigma") if cfg.use_tsdf else ("mu", "sigma"),
            0, 9,
            {("tsdf_value" if cfg.use_tsdf else "mu"): pads["field9"],
             "sigma": pads["spread9"]})
    _gather_vertex_ids(grid, coord, idx_pad)
    sigma_thr = np.inf if cfg.use_tsdf else cfg.sigma_thr
    n = _impl.cell_pass(pads["field9"], pads["spread9"], idx_pad, sigma_thr,
                        mc_tables.TRI_TABLE, mc_tables.EDGE_OWNER, tri_buf)
    return tri_buf[:n].copy()


def _make_buffers():
    pads = {
        "field": np.empty((11, 11, 11)), "spread": np.empty((11, 11, 11)),
        "gate": np.empty((11, 11, 11)), "conf": np.empty((11, 11, 11)),
        "field9": np.empty((9, 9, 9)), "spread9": np.empty((9, 9, 9)),
    }
    bufs = {
        "voxel": np.empty(MAX_SURFELS, dtype=np.int32),
        "axis": np.empty(MAX_SURFELS, dtype=np.int8),
        "pos": np.empty((MAX_SURFELS, 3)), "nrm": np.empty((MAX_SURFELS, 3)),
        "rad": np.empty(MAX_SURFELS), "cnf": np.empty(MAX_SURFELS),
    }
    return pads, bufs


def extract_block_triangles(grid: BlockGrid, coord, cfg: ExtractionConfig) -> np.ndarray:
    """Triangles owned by one block as global-vertex-id triples.

    Requires the surfel pass of the block and its +1 neighbors (and the
    grid-wide id assignment) from the current cycle.
    """
    pads, _ = _make_buffers()
    tri_buf = np.empty((MAX_TRIS, 3), dtype=np.int64)
    idx_pad = np.empty((9, 9, 9, 3), dtype=np.int64)
    return _run_cell_pass(grid, coord, cfg, pads, idx_pad, tri_buf)


def extract_all(grid: BlockGrid, cfg: Optional[ExtractionConfig] = None):
    """Refresh every block's surfel slots, then mesh each block.

    Returns (TriangleMesh, SurfelSnapshot); the snapshot is what the next
    fusion pass scores observations against.
    """
    cfg = cfg or ExtractionConfig()
    name = _field_names(cfg)
    coords = grid.sorted_coords()
    pads, bufs = _make_buffers()
    idx_pad = np.empty((9, 9, 9, 3), dtype=np.int64)
    tri_buf = np.empty((MAX_TRIS, 3), dtype=np.int64)

    active = []
    for coord in coords:
        if _block_may_cross(grid, coord, name):
            active.append(coord)
        else:
            blk = grid.blocks[coord]
            if blk.surfel_count or blk.triangles.shape[0]:
                blk.clear_surfels()

    for coord in active:
        _run_surfel_pass(grid, coord, cfg, pads, bufs)

    base = 0
    for coord in coords:
        blk = grid.blocks[coord]
        blk.id_base = base
        base += blk.surfel_count

    tri_parts = []
    for coord in active:
        tris = _run_cell_pass(grid, coord, cfg, pads, idx_pad, tri_buf)
        grid.blocks[coord].triangles = tris
        if tris.shape[0]:
            tri_parts.append(tris)

    total = base
    positions = np.empty((total, 3))
    normals = np.empty((total, 3))
    radii = np.empty(total)
    confs = np.empty(total)
    keys = np.empty(total, dtype=np.int64)
    axes = np.empty(total, dtype=np.int8)
    for coord in coords:
        blk = grid.blocks[coord]
        n = blk.surfel_count
        if n == 0:
            continue
        sl = slice(blk.id_base, blk.id_base + n)
        positions[sl] = blk.surfel_pos
        normals[sl] = blk.surfel_normal
        radii[sl] = blk.surfel_radius
        confs[sl] = blk.surfel_conf
        axes[sl] = blk.surfel_axis
        lx = blk.surfel_voxel % BLOCK
        ly = (blk.surfel_voxel // BLOCK) % BLOCK
        lz = blk.surfel_voxel // (BLOCK * BLOCK)
        gx = lx.astype(np.int64) + BLOCK * coord[0]
        gy = ly.astype(np.int64) + BLOCK * coord[1]
        gz = lz.astype(np.int64) + BLOCK * coord[2]
        keys[sl] = _pack_keys(gx, gy, gz)

    triangles = (np.concatenate(tri_parts, axis=0) if tri_parts
                 else np.empty((0, 3), dtype=np.int64))
    mesh = TriangleMesh(positions=positions, normals=normals,
                        confidence=confs, triangles=triangles)
    snapshot = SurfelSnapshot(keys=keys, axes=axes, positions=positions,
                              normals=normals, radii=radii, confidences=confs)
    return mesh, snapshot


def _pack_keys(gx, gy, gz):
    off = 1 << 20
    return (((gz + off) << 42) | ((gy + off) << 21) | (gx + off))
