"""Reconstruction accuracy, mesh size, and timing reports.

Accuracy is the point-to-point distance from each mesh vertex to the ground
truth: exact nearest neighbor against a point cloud (KD-tree), or the
analytic surface distance when the ground truth is a synthetic scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .sensor_io import SyntheticScene

__all__ = ["AccuracyReport", "RunStats", "cloud_distance", "vertex_growth",
           "accuracy_table", "brute_force_nn"]


@dataclass
class AccuracyReport:
    """Distance statistics of mesh vertices against ground truth.

    The histogram counts distances in ``bucket_width`` bins starting at 0;
    head/tail split the count at ``head_threshold`` (outlier emphasis).
    """

    mean: float
    std: float
    p99: float
    dmax: float
    count: int
    bucket_width: float
    histogram: np.ndarray
    head_threshold: float
    head_count: int
    tail_count: int

    def summary(self, method: str = "") -> str:
        return (f"{method or 'mesh':12s} mean {self.mean:.6f} m  "
                f"std {self.std:.6f} m  p99 {self.p99:.6f} m  "
                f"max {self.dmax:.6f} m  n {self.count}")


def brute_force_nn(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """All-pairs exact nearest-neighbor distances (oracle-sized inputs only)."""
    diff = queries[:, None, :] - points[None, :, :]
    return np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))


def cloud_distance(mesh, gt, bucket_width: float = 0.001,
                   head_threshold: float = 0.04) -> AccuracyReport:
    """Per-vertex distance report against a ground-truth point cloud
    ((N,3) array) or a SyntheticScene (analytic surface distance).

    Raises ValueError on an empty mesh.
    """
    vertices = np.asarray(getattr(mesh, "positions", mesh), dtype=np.float64)
    if vertices.size == 0:
        raise ValueError("cannot evaluate an empty mesh")
    if isinstance(gt, SyntheticScene):
        d = np.abs(gt.surface_distance(vertices))
    else:
        from scipy.spatial import cKDTree

        pts = np.asarray(gt, dtype=np.float64)
        if pts.size == 0:
            raise ValueError("empty ground-truth point cloud")
        d, _ = cKDTree(pts).query(vertices, k=1)
        d = np.asarray(d, dtype=np.float64)

    nb = max(int(np.ceil((d.max() + 1e-12) / bucket_width)), 1)
    hist, _ = np.histogram(d, bins=nb, range=(0.0, nb * bucket_width))
    return AccuracyReport(
        mean=float(d.mean()), std=float(d.std()),
        p99=float(np.percentile(d, 99.0)), dmax=float(d.max()),
        count=int(d.size), bucket_width=bucket_width, histogram=hist,
        head_threshold=head_threshold,
        head_count=int(np.count_nonzero(d <= head_threshold)),
        tail_count=int(np.count_nonzero(d > head_threshold)))


@dataclass
class RunStats:
    """Per-frame pipeline statistics. Times are wall-clock milliseconds;
    mapping covers allocation plus fusion, meshing covers the surfel and
    triangle passes."""

    frame: int
    vertex_count: int = 0
    triangle_count: int = 0
    mapping_ms: float = 0.0
    meshing_ms: float = 0.0
    blocks: int = 0
    voxels_updated: int = 0
    mean_rho: float = 0.0


def vertex_growth(stats: Sequence[RunStats]) -> np.ndarray:
    """(frame, vertex count) pairs suitable for CSV export / plotting."""
    if not stats:
        raise ValueError("need at least one frame of stats")
    return np.array([(s.frame, s.vertex_count) for s in stats], dtype=np.int64)


def accuracy_table(reports: dict) -> str:
    """METHOD / MEAN / STD summary block for a set of named reports."""
    lines = [f"{'METHOD':10s} {'MEAN (m)':>12s} {'STD (m)':>12s}"]
    for name, rep in reports.items():
        lines.append(f"{name:10s} {rep.mean:>12.6f} {rep.std:>12.6f}")
    return "\n".join(lines)
