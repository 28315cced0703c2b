"""Command-line front end.

Subcommands:
  fuse   run the reconstruction pipeline on a scene file or TUM directory
  synth  render a synthetic scene to a TUM-layout dataset on disk
  eval   compare an existing mesh PLY against ground truth
  bench  paired psdf/tsdf runs on the same source with a comparison table
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys

import numpy as np

from .evaluation import accuracy_table, cloud_distance
from .mesh_io import read_ply
from .pipeline import PipelineConfig, run_pipeline
from .sensor_io import SyntheticScene, load_scene_file, render_synthetic, write_tum_sequence

__all__ = ["main"]


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with PipelineConfig fields; "
                                    "flags override it")
    p.add_argument("--voxel-size", type=float, dest="voxel_size")
    p.add_argument("--trunc-scale", type=float, dest="trunc_scale")
    p.add_argument("--pi-thr", type=float, dest="pi_thr")
    p.add_argument("--sigma-thr", type=float, dest="sigma_thr")
    p.add_argument("--theta", type=float, dest="theta")
    p.add_argument("--mode", choices=("psdf", "tsdf"), dest="mode")
    p.add_argument("--mesh-every", type=int, dest="mesh_every")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--max-frames", type=int, dest="max_frames")


def _config_from_args(args) -> PipelineConfig:
    fields = {}
    if args.config:
        with open(args.config) as f:
            fields.update(json.load(f))
    for name in ("voxel_size", "trunc_scale", "pi_thr", "sigma_thr", "theta",
                 "mode", "mesh_every", "seed", "max_frames"):
        val = getattr(args, name, None)
        if val is not None:
            fields[name] = val
    return PipelineConfig(**fields)


def _cmd_fuse(args) -> int:
    cfg = _config_from_args(args)
    result = run_pipeline(cfg, args.source, args.out)
    print(f"wrote {os.path.join(args.out, 'mesh.ply')}: "
          f"{result.mesh.vertex_count} vertices, "
          f"{result.mesh.triangle_count} triangles")
    if result.accuracy is not None:
        print(result.accuracy.summary(cfg.mode))
    return 0


def _cmd_synth(args) -> int:
    sc = load_scene_file(args.scene)
    cfg_seed = args.seed if args.seed is not None else 0
    os.makedirs(args.out, exist_ok=True)

    def frames():
        for i, pose in enumerate(sc.poses):
            rng = np.random.default_rng([cfg_seed, i])
            noisy, _ = render_synthetic(
                sc.scene, pose, sc.intrinsics, sc.noise_model,
                gaussian=sc.gaussian, outlier_fraction=sc.outlier_fraction,
                outlier_range=sc.outlier_range, rng=rng,
                max_depth=sc.max_depth, timestamp=i / 30.0)
            yield i / 30.0, noisy.depth, noisy.pose

    write_tum_sequence(args.out, frames(), sc.intrinsics)
    shutil.copyfile(args.scene, os.path.join(args.out, "scene.json"))
    print(f"wrote {len(sc.poses)} frames to {args.out}")
    return 0


def _load_gt(path):
    if path.endswith(".json"):
        return load_scene_file(path).scene
    data = read_ply(path)
    return data["positions"]


def _cmd_eval(args) -> int:
    mesh = read_ply(args.mesh)
    gt = _load_gt(args.gt)
    report = cloud_distance(mesh["positions"], gt,
                            bucket_width=args.bucket_width)
    print(report.summary(os.path.basename(args.mesh)))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w") as f:
            f.write(report.summary(os.path.basename(args.mesh)) + "\n")
        with open(os.path.join(args.out, "histogram.csv"), "w") as f:
            f.write("bucket_lo,bucket_hi,count\n")
            bw = report.bucket_width
            for i, c in enumerate(report.histogram):
                f.write(f"{i * bw:.6f},{(i + 1) * bw:.6f},{int(c)}\n")
    return 0


def _cmd_bench(args) -> int:
    rows = []
    reports = {}
    for mode in ("psdf", "tsdf"):
        cfg = _config_from_args(args)
        cfg = dataclasses.replace(cfg, mode=mode)
        out = os.path.join(args.out, mode)
        result = run_pipeline(cfg, args.source, out)
        map_ms = float(np.mean([s.mapping_ms for s in result.stats]))
        mesh_ms = float(np.mean([s.meshing_ms for s in result.stats
                                 if s.meshing_ms > 0] or [0.0]))
        rows.append((mode.upper(), result.mesh.vertex_count,
                     result.mesh.triangle_count, map_ms, mesh_ms))
        if result.accuracy is not None:
            reports[mode.upper()] = result.accuracy
    table = [f"{'METHOD':8s} {'VERTICES':>10s} {'TRIANGLES':>10s} "
             f"{'MAP ms':>9s} {'MESH ms':>9s}"]
    for m, vc, tc, a, b in rows:
        table.append(f"{m:8s} {vc:>10d} {tc:>10d} {a:>9.2f} {b:>9.2f}")
    text = "\n".join(table)
    if reports:
        text += "\n\n" + accuracy_table(reports)
    print(text)
    with open(os.path.join(args.out, "comparison.txt"), "w") as f:
        f.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probsdf", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="run the reconstruction pipeline")
    p.add_argument("source", help="scene JSON file or TUM-layout directory")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("synth", help="render a scene to a TUM-layout dataset")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("eval", help="evaluate a mesh PLY against ground truth")
    p.add_argument("--mesh", required=True)
    p.add_argument("--gt", required=True,
                   help="scene JSON (analytic) or point-cloud PLY")
    p.add_argument("--bucket-width", type=float, default=0.001)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="paired psdf/tsdf comparison run")
    p.add_argument("source")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
