"""Command-line entry point tying the pipelines together.

Exit codes: 0 success, 2 validation/usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import evaluation, io_formats, layout as layout_mod, losses, synth
from .errors import PlanekitError
from .extraction import RansacConfig, extract_planes, vote_manhattan
from .geometry import Point3Set
from .gt_pipeline import (MergeConfig, Scene, build_dataset, filter_sample,
                          fit_semantic_planes, merge_planes, rasterize_frame)
from .masks import LabelMap, ProbMaskStack, labels_to_masks, masks_to_labels
from .segmentation import DcrfConfig, MrfConfig, dcrf_refine, mrf_segment, mws_segment


class UsageError(Exception):
    pass


def _load_config(args: argparse.Namespace, parser_defaults: dict) -> None:
    """Merge --config JSON under explicitly given flags."""
    if not getattr(args, "config", None):
        return
    doc = json.loads(Path(args.config).read_text())
    if not isinstance(doc, dict):
        raise UsageError("--config must contain a JSON object")
    known = set(vars(args))
    for key, value in doc.items():
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
        # a flag left at its default is overridden by the config file
        if getattr(args, key) == parser_defaults.get(key):
            setattr(args, key, value)


def _write_masks_npy(path, masks: ProbMaskStack) -> None:
    buf = io.BytesIO()
    np.save(buf, masks.probs)
    io_formats.atomic_write_bytes(path, buf.getvalue())


def _read_masks_npy(path) -> ProbMaskStack:
    return ProbMaskStack(np.load(path))


def _write_sample(outdir: Path, depth, labels, planes, intr,
                  roles=None, intensity=None) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    io_formats.write_depth_png(outdir / "depth.png", depth)
    io_formats.write_label_png(outdir / "labels.png", labels)
    io_formats.write_planes_json(outdir / "planes.json", planes)
    io_formats.write_intrinsics_json(outdir / "intrinsics.json", intr)
    if roles is not None:
        io_formats._atomic_save_image(
            Image.fromarray(roles.astype(np.uint8), mode="L"),
            outdir / "roles.png")
    if intensity is not None:
        io_formats.write_intensity_png(outdir / "intensity.png", intensity)


def cmd_synth(args) -> int:
    spec = synth.random_scene(args.seed, n_cuboids=args.cuboids)
    scene = synth.render_scene(spec)
    out = Path(args.out)
    _write_sample(out, scene.depth, scene.labels, scene.planes,
                  spec.intrinsics, roles=scene.roles, intensity=scene.intensity)
    if args.noise_sigma > 0 or args.dropout > 0 or args.quantize > 0:
        noisy = synth.corrupt(scene.depth,
                              synth.NoiseSpec(args.noise_sigma, args.dropout,
                                              args.quantize), seed=args.seed)
        io_formats.write_depth_png(out / "depth_noisy.png", noisy)
    echo = {"seed": args.seed,
            "room_min": [float(x) for x in spec.room_min],
            "room_max": [float(x) for x in spec.room_max],
            "cuboids": [{"center": [float(x) for x in c.center],
                         "size": [float(x) for x in c.size],
                         "yaw": float(c.yaw)} for c in spec.cuboids],
            "rotation": [float(x) for x in spec.pose.rotation.ravel()],
            "translation": [float(x) for x in spec.pose.translation]}
    io_formats.write_json(out / "scene.json", echo)
    return 0


def cmd_extract(args) -> int:
    indir = Path(args.input)
    depth = io_formats.read_depth_png(indir / (args.depth_name or "depth.png"))
    intr = io_formats.read_intrinsics_json(indir / "intrinsics.json")
    pts = intr.ray_grid() * depth.values[..., None]
    pts = pts[depth.valid][::args.stride]
    cfg = RansacConfig(inlier_threshold=args.threshold,
                       coverage_target=args.coverage,
                       iterations_per_plane=args.iterations,
                       min_inliers=args.min_inliers,
                       rng_seed=args.seed)
    extracted = extract_planes(Point3Set(pts), cfg)
    planes = losses.PlaneSet([e.plane for e in extracted],
                             max(10, len(extracted)))
    io_formats.write_planes_json(args.out, planes)
    return 0


def cmd_segment(args) -> int:
    indir = Path(args.input)
    depth = io_formats.read_depth_png(indir / (args.depth_name or "depth.png"))
    image = io_formats.read_intensity_png(indir / "intensity.png")
    intr = io_formats.read_intrinsics_json(indir / "intrinsics.json")
    planes = io_formats.read_planes_json(args.planes)
    cfg = MrfConfig(unary_truncation=args.truncation,
                    nonplanar_unary=args.nonplanar_unary,
                    pairwise_weight=args.pairwise_weight,
                    edge_sigma=args.edge_sigma,
                    solver=args.solver,
                    max_sweeps=args.max_sweeps,
                    rng_seed=args.seed)
    if args.manhattan:
        frame = vote_manhattan([(p.normal, 1.0) for p in planes.planes])
        labels, snapped = mws_segment(depth, image, planes.planes, intr, frame, cfg)
        io_formats.write_planes_json(Path(args.out).with_suffix(".planes.json"),
                                     losses.PlaneSet(snapped, planes.capacity))
    else:
        labels = mrf_segment(depth, image, planes.planes, intr, cfg)
    io_formats.write_label_png(args.out, labels)
    return 0


def cmd_refine_crf(args) -> int:
    masks = _read_masks_npy(args.masks)
    image = io_formats.read_intensity_png(args.image)
    cfg = DcrfConfig(iterations=args.iterations,
                     spatial_sigma=args.spatial_sigma,
                     bilateral_spatial_sigma=args.bilateral_spatial_sigma,
                     bilateral_color_sigma=args.bilateral_color_sigma,
                     spatial_weight=args.spatial_weight,
                     bilateral_weight=args.bilateral_weight,
                     mode=args.mode)
    _write_masks_npy(args.out, dcrf_refine(masks, image, cfg))
    return 0


def _recall_curve_svg(curve: evaluation.RecallCurve) -> str:
    w, h, pad = 480, 320, 40
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<line x1="{pad}" y1="{h-pad}" x2="{w-pad}" y2="{h-pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h-pad}" stroke="black"/>']
    tmax = float(curve.thresholds[-1]) or 1.0

    def pts(values):
        out = []
        for t, v in zip(curve.thresholds, values):
            x = pad + (w - 2 * pad) * t / tmax
            y = h - pad - (h - 2 * pad) * v
            out.append(f"{x:.2f},{y:.2f}")
        return " ".join(out)

    lines.append(f'<polyline points="{pts(curve.plane_recall)}" fill="none" stroke="blue"/>')
    lines.append(f'<polyline points="{pts(curve.pixel_recall)}" fill="none" stroke="red"/>')
    lines.append(f'<text x="{pad}" y="{pad-10}" font-size="12">'
                 'plane recall (blue), pixel recall (red)</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    intr = io_formats.read_intrinsics_json(gt_dir / "intrinsics.json")
    gt_planes = io_formats.read_planes_json(gt_dir / "planes.json")
    pred_planes = io_formats.read_planes_json(pred_dir / "planes.json")
    gt_labels = io_formats.read_label_png(gt_dir / "labels.png", len(gt_planes))
    pred_labels = io_formats.read_label_png(pred_dir / "labels.png", len(pred_planes))
    gt_depth = io_formats.read_depth_png(gt_dir / "depth.png")
    pred_depth = io_formats.read_depth_png(pred_dir / "depth.png")

    matches = evaluation.match_planes((gt_labels, gt_planes),
                                      (pred_labels, pred_planes), intr,
                                      one_to_one=not args.many_to_one)
    curve = evaluation.recall_curves(matches, len(gt_planes),
                                     int(gt_labels.planar_mask().sum()))
    stats = evaluation.depth_stats(pred_depth, gt_depth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"thresholds": [float(t) for t in curve.thresholds],
           "plane_recall": [float(v) for v in curve.plane_recall],
           "pixel_recall": [float(v) for v in curve.pixel_recall],
           "depth_stats": stats.as_dict()}
    if args.format == "json":
        io_formats.write_json(out / "eval.json", doc)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["threshold", "plane_recall", "pixel_recall"])
        for t, pr, xr in zip(curve.thresholds, curve.plane_recall, curve.pixel_recall):
            writer.writerow([f"{t:g}", repr(float(pr)), repr(float(xr))])
        writer.writerow([])
        writer.writerow(["metric", "value"])
        for k, v in stats.as_dict().items():
            writer.writerow([k, repr(v)])
        io_formats.atomic_write_bytes(out / "eval.csv", buf.getvalue().encode())
    io_formats.atomic_write_bytes(out / "recall.svg",
                                  _recall_curve_svg(curve).encode())
    return 0


def cmd_eval_loss(args) -> int:
    report = {}
    gt_planes = io_formats.read_planes_json(args.gt_planes)
    pred_planes = io_formats.read_planes_json(args.pred_planes)
    chamfer = losses.chamfer_plane_loss(gt_planes, pred_planes)
    report["chamfer"] = chamfer.value
    if args.masks and args.gt_labels is not None:
        masks = _read_masks_npy(args.masks)
        gt_labels = io_formats.read_label_png(args.gt_labels, masks.channels - 1)
        report["segmentation"] = losses.segmentation_loss(masks, gt_labels).value
    if args.masks and args.nonplanar and args.gt_depth and args.intrinsics:
        masks = _read_masks_npy(args.masks)
        intr = io_formats.read_intrinsics_json(args.intrinsics)
        nonplanar = io_formats.read_depth_png(args.nonplanar)
        gt_depth = io_formats.read_depth_png(args.gt_depth)
        rep = losses.weighted_depth_loss(masks, pred_planes, nonplanar,
                                         gt_depth, intr)
        report["weighted_depth"] = rep.value
        report["weighted_depth_mean"] = rep.extras["mean_per_pixel"]
    io_formats.write_json(args.out, report)
    return 0


def cmd_layout(args) -> int:
    planes = io_formats.read_planes_json(args.planes)
    masks = _read_masks_npy(args.masks)
    intr = io_formats.read_intrinsics_json(args.intrinsics)
    if args.roles:
        mapping = json.loads(Path(args.roles).read_text())
        roles = layout_mod.RoleAssignment({k: int(v) for k, v in mapping.items()})
    else:
        roles = layout_mod.propose_roles(planes)
    result = layout_mod.estimate_layout(planes, roles, masks, intr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io_formats._atomic_save_image(
        Image.fromarray(result.role_labels.astype(np.uint8), mode="L"),
        out / "layout.png")
    io_formats.write_json(out / "layout.json",
                          {"configuration": sorted(result.configuration),
                           "score": result.score,
                           "roles": {k: int(v) for k, v in sorted(roles.mapping.items())}})
    return 0


def cmd_gen_gt(args) -> int:
    ransac_cfg = RansacConfig(inlier_threshold=args.threshold,
                              coverage_target=args.coverage,
                              min_inliers=args.min_inliers,
                              rng_seed=args.seed)
    merge_cfg = MergeConfig(max_normal_angle=args.merge_angle,
                            max_mean_distance=args.merge_distance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scenes:
        scene_dirs = sorted(p for p in Path(args.scenes).iterdir() if p.is_dir())
        scenes = [Scene(p.name, io_formats.read_ply(p / "mesh.ply"),
                        io_formats.read_trajectory_json(p / "trajectory.json"))
                  for p in scene_dirs]
        build = build_dataset(scenes, stride=args.stride, split=args.split,
                              seed=args.seed, ransac_cfg=ransac_cfg,
                              merge_cfg=merge_cfg, k_max=args.k_max)
        for split_name, samples in (("train", build.train), ("test", build.test)):
            for name, fi, sample in samples:
                sdir = out / split_name / f"{name}_{fi:06d}"
                _write_sample(sdir, sample.depth_map, sample.label_map,
                              losses.PlaneSet(sample.planes, max(10, len(sample.planes))),
                              sample.frame.intrinsics)
        io_formats.write_json(out / "manifest.json", build.manifest)
        return 0
    if not (args.mesh and args.trajectory):
        raise UsageError("gen-gt needs either --scenes or --mesh + --trajectory")
    mesh = io_formats.read_ply(args.mesh)
    frames = io_formats.read_trajectory_json(args.trajectory)
    fitted = merge_planes(fit_semantic_planes(mesh, ransac_cfg), mesh, merge_cfg)
    manifest = {"frames": []}
    for fi in range(0, len(frames), args.stride):
        label_map, depth_map = rasterize_frame(mesh, fitted, frames[fi])
        cam_planes = [p.to_camera(frames[fi].pose) for p in fitted.planes]
        sample = filter_sample(label_map, depth_map, cam_planes, k_max=args.k_max,
                               frame=frames[fi])
        entry = {"frame": fi, "accepted": sample is not None}
        if sample is None:
            entry["reason"] = "planar coverage below threshold"
        manifest["frames"].append(entry)
        if sample is not None:
            _write_sample(out / f"sample_{fi:06d}", sample.depth_map,
                          sample.label_map,
                          losses.PlaneSet(sample.planes, max(10, len(sample.planes))),
                          frames[fi].intrinsics)
    io_formats.write_json(out / "manifest.json", manifest)
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import run_grad_checks
    worst = run_grad_checks(trials=args.trials, seed=args.seed)
    for name, err in sorted(worst.items()):
        status = "ok" if err < 1e-5 else "FAIL"
        print(f"{name}: max relative error {err:.3e} [{status}]")
    return 0 if all(err < 1e-5 for err in worst.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="planekit")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("PLANEKIT_THREADS", "1")),
                        help="worker thread bound (currently single-threaded)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON config file merged under flags")

    p = sub.add_parser("synth", help="render a seeded synthetic room sample")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--cuboids", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--quantize", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="RANSAC plane extraction from a depth sample")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth-name", default=None)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--coverage", type=float, default=0.90)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--min-inliers", type=int, default=30)
    p.add_argument("--stride", type=int, default=1,
                   help="point subsampling stride before RANSAC")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("segment", help="MRF plane segmentation of a depth sample")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--planes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth-name", default=None)
    p.add_argument("--truncation", type=float, default=0.3)
    p.add_argument("--nonplanar-unary", type=float, default=0.05)
    p.add_argument("--pairwise-weight", type=float, default=5.0)
    p.add_argument("--edge-sigma", type=float, default=10.0)
    p.add_argument("--solver", choices=["icm", "alpha_expansion"], default="icm")
    p.add_argument("--max-sweeps", type=int, default=10)
    p.add_argument("--manhattan", action="store_true",
                   help="snap hypotheses to a voted Manhattan frame")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("refine-crf", help="dense-CRF refinement of mask stacks")
    common(p)
    p.add_argument("--masks", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--spatial-sigma", type=float, default=3.0)
    p.add_argument("--bilateral-spatial-sigma", type=float, default=60.0)
    p.add_argument("--bilateral-color-sigma", type=float, default=10.0)
    p.add_argument("--spatial-weight", type=float, default=3.0)
    p.add_argument("--bilateral-weight", type=float, default=10.0)
    p.add_argument("--mode", choices=["auto", "exact", "truncated"], default="auto")
    p.set_defaults(func=cmd_refine_crf)

    p = sub.add_parser("eval", help="plane recall and depth statistics")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--many-to-one", action="store_true",
                   help="allow one prediction to match several GT planes")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eval-loss", help="training objective values")
    common(p)
    p.add_argument("--gt-planes", required=True)
    p.add_argument("--pred-planes", required=True)
    p.add_argument("--masks")
    p.add_argument("--gt-labels")
    p.add_argument("--nonplanar")
    p.add_argument("--gt-depth")
    p.add_argument("--intrinsics")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_loss)

    p = sub.add_parser("layout", help="room layout estimation from planes + masks")
    common(p)
    p.add_argument("--planes", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--roles", help="JSON file mapping role name to plane index")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_layout)

    p = sub.add_parser("gen-gt", help="ground-truth generation from labeled meshes")
    common(p)
    p.add_argument("--scenes", help="directory of scene subdirs (mesh.ply + trajectory.json)")
    p.add_argument("--mesh")
    p.add_argument("--trajectory")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--coverage", type=float, default=0.90)
    p.add_argument("--min-inliers", type=int, default=30)
    p.add_argument("--merge-angle", type=float, default=20.0)
    p.add_argument("--merge-distance", type=float, default=0.05)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--split", type=float, default=0.9)
    p.add_argument("--k-max", type=int, default=10)
    p.set_defaults(func=cmd_gen_gt)

    p = sub.add_parser("grad-check", help="finite-difference gradient validation")
    common(p)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_grad_check)
    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if getattr(args, "config", None):
            sub_parser = None
            for action in parser._subparsers._group_actions:
                sub_parser = action.choices.get(args.command)
            defaults = {a.dest: a.default for a in sub_parser._actions}
            _load_config(args, defaults)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PlanekitError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
