"""probsdf: volumetric depth fusion with a per-voxel Beta-Gaussian posterior
over signed distance and inlier ratio, confidence-gated incremental surfel
and mesh extraction, a weighted-average TSDF baseline, and an evaluation
harness for synthetic and TUM-layout data."""

from ._kernels import BACKEND, available_backends
from .evaluation import AccuracyReport, RunStats, cloud_distance, vertex_growth
from .inlier_eval import (InlierConfig, Ray, collect_surfels, inlier_ratio,
                          weight_angle, weight_dist, weight_radius)
from .mesh_io import read_ply, write_ply
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .psdf_fusion import (FusionStats, SdfObservation, fuse_frame,
                          psdf_update, sdf_observation, tsdf_update)
from .sensor_io import (Box, CameraIntrinsics, DepthFrame, NoiseModel, Plane,
                        SceneConfig, Sphere, SyntheticScene, axial_noise,
                        load_scene_file, load_tum_sequence, look_at_pose,
                        project, render_synthetic, unproject,
                        write_tum_sequence)
from .surface_extraction import (ExtractionConfig, Surfel, SurfelSnapshot,
                                 TriangleMesh, extract_all,
                                 extract_block_triangles, extract_surfel,
                                 sdf_gradient)
from .volume_grid import BlockGrid, PsdfVoxel, VoxelBlock, fill_from_sdf

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "available_backends", "__version__",
    "BlockGrid", "PsdfVoxel", "VoxelBlock", "fill_from_sdf",
    "SdfObservation", "sdf_observation", "psdf_update", "tsdf_update",
    "fuse_frame", "FusionStats",
    "InlierConfig", "Ray", "collect_surfels", "inlier_ratio",
    "weight_dist", "weight_angle", "weight_radius",
    "Surfel", "SurfelSnapshot", "TriangleMesh", "ExtractionConfig",
    "extract_all", "extract_block_triangles", "extract_surfel", "sdf_gradient",
    "CameraIntrinsics", "NoiseModel", "DepthFrame", "project", "unproject",
    "axial_noise", "look_at_pose", "Plane", "Sphere", "Box", "SyntheticScene",
    "SceneConfig", "load_scene_file", "render_synthetic",
    "load_tum_sequence", "write_tum_sequence",
    "AccuracyReport", "RunStats", "cloud_distance", "vertex_growth",
    "PipelineConfig", "PipelineResult", "run_pipeline",
    "read_ply", "write_ply",
]
