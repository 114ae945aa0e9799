"""Command-line interface.

Subcommands: synth-gen (write synthetic scenes or stereo pairs),
gradcheck (finite-difference verification of every analytic gradient),
warp-check (end-to-end warp pipeline diagnostics on a stored pair),
train-toy (train the plane head on synthetic pairs), and eval (pooling
plus metrics over prediction directories, with CSV and SVG reports).

Exit codes: 0 success, 1 check failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as pio
from . import metrics as pmetrics
from . import synth
from .errors import EmptyLossError, PlanekitError
from .geometry import (
    PlaneParams,
    RigidTransform,
    induced_depth_map,
    subsample_map,
    transform_plane,
    transform_plane_map,
)
from .losses import (
    CategoryGrid,
    LossWeights,
    dice_loss,
    finite_diff_check,
    focal_loss_positive,
    l_depth,
    l_geom,
    l_plane,
    l_surface,
    total_plane_loss,
)
from .planehead import PlaneHead, head_backward, head_forward
from .pooling import InstancePrediction, assemble_output
from .train import (
    TrainConfig,
    dropped_region_error,
    evaluate_views,
    loss_row,
    loss_row_header,
    train_toy,
)
from .warpguide import WarpGuidanceConfig, guidance_loss, make_features, warp_features

GRAD_TOL = 1e-4
PHOTO_MAE_TOL = 0.02
ORACLE_LP_TOL = 1e-4
EQ9_TOL = 1e-9
IDENTITY_TOL = 1e-12
MIN_COVERAGE = 0.02


def _worker_count() -> int:
    raw = os.environ.get("PLANEKIT_THREADS", "").strip()
    n = int(raw) if raw else 0
    return n if n > 0 else (os.cpu_count() or 1)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError("size must look like 128x96")


def _parse_vec3(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return tuple(float(p) for p in parts)


def _onoff(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


# ---------------------------------------------------------------- synth-gen

def _gen_one(args, index: int):
    scene = synth.generate_scene(args.seed + index, args.boxes)
    camera = synth.default_camera(*args.size)
    pose = synth.sample_pose(scene, np.random.default_rng([args.seed, index, 1]))
    scene_doc = {"seed": args.seed + index, "boxes": args.boxes}
    if not args.pairs:
        view = synth.render_view(scene, camera, pose)
        path = pio.write_view(args.out, f"view_{index:04d}", view)
        return [path]
    sample = synth.make_pair(scene, camera, pose, args.baseline, args.yaw)
    source = sample.source
    dropped: list[int] = []
    if args.drop_prob > 0:
        drop_seed = int(np.random.default_rng([args.seed, index, 2]).integers(2 ** 31))
        before = set(np.unique(source.instances).tolist())
        source = synth.drop_instances(source, args.drop_prob, drop_seed)
        dropped = sorted(before - set(np.unique(source.instances).tolist()))
    src_stem = f"source_{index:04d}"
    nbr_stem = f"neighbour_{index:04d}"
    p1 = pio.write_view(args.out, src_stem, source, neighbour_stem=nbr_stem,
                        t_sn=sample.t_sn, dropped_instances=dropped,
                        scene=scene_doc)
    p2 = pio.write_view(args.out, nbr_stem, sample.neighbour,
                        neighbour_stem=src_stem, t_sn=sample.t_ns,
                        scene=scene_doc)
    return [p1, p2]


def cmd_synth_gen(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".planekit_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc}", file=sys.stderr)
        return 2
    indices = range(args.scenes)
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        results = list(pool.map(lambda i: _gen_one(args, i), indices))
    n_files = sum(len(r) for r in results)
    print(f"wrote {n_files} manifests to {out}")
    return 0


# ---------------------------------------------------------------- gradcheck

def _gradcheck_cases(seed: int, corrupt: str | None):
    """Per-loss finite-difference checks on one random draw."""
    rng = np.random.default_rng(seed)
    cam = synth.default_camera(8, 6)
    shape = (6, 8, 3)
    gt_plane = rng.normal(0.0, 0.6, shape) + np.array([0.0, 0.0, 2.0])
    gt_depth = rng.uniform(1.0, 4.0, shape[:2])
    edge = rng.uniform(0.0, 1.0, shape[:2])

    def draw():
        return rng.normal(0.0, 0.6, shape) + np.array([0.0, 0.0, 2.0])

    def ties(p):
        return float(np.min(np.abs(p - gt_plane))) < 1e-3

    def wrap(fn, name):
        if corrupt == name:
            def bad(x):
                v, g = fn(x)
                g = g.copy()
                g.reshape(-1)[0] += 1e-2
                return v, g
            return bad
        return fn

    cases = {
        "l_plane": lambda p: l_plane(p, gt_plane)[:2],
        "l_surface": lambda p: l_surface(p, gt_plane)[:2],
        "l_geom": lambda p: l_geom(p, gt_depth, cam)[:2],
        "l_depth": lambda p: l_depth(p, gt_depth, cam)[:2],
        "l_geom_weighted": lambda p: l_geom(p, gt_depth, cam, edge_weights=edge)[:2],
        "l_depth_weighted": lambda p: l_depth(p, gt_depth, cam, edge_weights=edge)[:2],
    }
    out = {}
    for name, fn in cases.items():
        rep = finite_diff_check(wrap(fn, name), draw(), tie_detector=ties,
                                resampler=draw)
        out[name] = rep.max_rel_error

    mask_gt = (rng.random(shape[:2]) > 0.5).astype(float)
    rep = finite_diff_check(wrap(lambda m: dice_loss(m, mask_gt), "dice"),
                            rng.uniform(0.05, 0.95, shape[:2]))
    out["dice"] = rep.max_rel_error

    targets = rng.integers(-1, 3, (4, 4))
    if not (targets >= 0).any():
        targets[0, 0] = 0
    rep = finite_diff_check(
        wrap(lambda s: focal_loss_positive(CategoryGrid(s, targets)), "focal"),
        rng.uniform(0.05, 0.95, (4, 4, 3)))
    out["focal"] = rep.max_rel_error

    head = PlaneHead.create(4, 5, seed=seed)
    feats = rng.normal(0.0, 1.0, (4, 4, 4))
    up = rng.normal(0.0, 1.0, (4, 4, 3))
    sizes = [p.size for p in head.params()]
    shapes = [p.shape for p in head.params()]

    def unflatten(vec):
        parts, k = [], 0
        for size, shp in zip(sizes, shapes):
            parts.append(vec[k:k + size].reshape(shp))
            k += size
        return PlaneHead(*parts)

    def head_fn(vec):
        h = unflatten(vec)
        out_map = head_forward(h, feats)
        grads, _ = head_backward(h, feats, up)
        return float((out_map * up).sum()), \
            np.concatenate([a.ravel() for a in grads.params()])

    x0 = np.concatenate([a.ravel() for a in head.params()])
    rep = finite_diff_check(wrap(head_fn, "head"), x0)
    out["head"] = rep.max_rel_error
    return out


def _pipeline_gradcheck(seed: int, corrupt: str | None) -> float:
    scene = synth.generate_scene(seed, n_boxes=1)
    camera = synth.default_camera(32, 24)
    pose = synth.sample_pose(scene, np.random.default_rng([seed, 3]))
    sample = synth.make_pair(scene, camera, pose)
    cfg = WarpGuidanceConfig(stride=4)
    f_nbr = make_features(sample.neighbour, cfg.stride)
    head = PlaneHead.create(8, 5, seed=seed)
    sizes = [p.size for p in head.params()]
    shapes = [p.shape for p in head.params()]

    def run(vec):
        parts, k = [], 0
        for size, shp in zip(sizes, shapes):
            parts.append(vec[k:k + size].reshape(shp))
            k += size
        rep, grads = guidance_loss(sample, f_nbr, PlaneHead(*parts), cfg)
        g = np.concatenate([a.ravel() for a in grads.params()])
        if corrupt == "pipeline":
            g = g.copy()
            g[0] += 1e-2
        return rep.l_p, g

    x0 = np.concatenate([a.ravel() for a in head.params()])
    return finite_diff_check(run, x0).max_rel_error


def cmd_gradcheck(args) -> int:
    worst: dict[str, float] = {}
    for t in range(args.trials):
        for name, err in _gradcheck_cases(args.seed + t, args.corrupt).items():
            worst[name] = max(worst.get(name, 0.0), err)
    worst["pipeline"] = max(
        _pipeline_gradcheck(args.seed + t, args.corrupt)
        for t in range(max(1, args.trials // 4)))
    failed = []
    for name in sorted(worst):
        status = "PASS" if worst[name] < GRAD_TOL else "FAIL"
        print(f"{name}: max_rel_error={worst[name]:.3e} {status}")
        if status == "FAIL":
            failed.append(name)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------- warp-check

def cmd_warp_check(args) -> int:
    sample, _doc = pio.read_pair(args.pair)
    failures = []

    ident = synth.StereoSample(source=sample.source, neighbour=sample.source,
                               t_ns=RigidTransform.identity(),
                               t_sn=RigidTransform.identity())
    warped, mask = warp_features(ident, sample.source.rgb, stride=1)
    ident_err = float(np.max(np.abs(warped - sample.source.rgb)))
    ok = ident_err <= IDENTITY_TOL and bool(mask.all())
    print(f"identity_warp_error={ident_err:.3e} {'PASS' if ok else 'FAIL'}")
    if not ok:
        failures.append("identity")

    warped, mask = warp_features(sample, sample.neighbour.rgb, stride=1,
                                 tau_occ=args.tau_occ)
    coverage = float(mask.mean())
    print(f"outprojection_coverage={coverage:.3f}")
    if coverage < MIN_COVERAGE:
        print("warning: negligible view overlap; skipping photoconsistency "
              "and oracle checks", file=sys.stderr)
        return 1 if failures else 0

    mae = float(np.abs(warped - sample.source.rgb)[mask].mean())
    ok = mae < PHOTO_MAE_TOL
    print(f"photoconsistency_mae={mae:.4f} {'PASS' if ok else 'FAIL'}")
    if not ok:
        failures.append("photoconsistency")

    stride = args.stride
    cam = sample.source.camera.scaled(stride)
    gt_plane = subsample_map(sample.source.plane_map, stride)
    gt_depth = subsample_map(sample.source.depth, stride)
    gt_valid = subsample_map(sample.source.instances, stride) > 0
    planes_nbr, ok_fwd = transform_plane_map(sample.t_sn, gt_plane, gt_valid)
    planes_back, ok_back = transform_plane_map(sample.t_ns, planes_nbr, ok_fwd)
    _, outproj = warp_features(
        sample, subsample_map(sample.neighbour.rgb, stride), stride=stride,
        tau_occ=args.tau_occ)
    loss_mask = outproj & gt_valid & ok_back
    try:
        report, _ = total_plane_loss(planes_back, gt_plane, gt_depth, cam,
                                     loss_mask, LossWeights())
        lp = report.l_p
        ok = lp < ORACLE_LP_TOL
    except EmptyLossError:
        lp, ok = float("nan"), False
    print(f"oracle_plane_loss={lp:.3e} {'PASS' if ok else 'FAIL'}")
    if not ok:
        failures.append("oracle")

    eq9_err = 0.0
    seen = set()
    flat_planes = sample.neighbour.plane_map.reshape(-1, 3)
    flat_inst = sample.neighbour.instances.reshape(-1)
    for k in range(flat_inst.size):
        iid = int(flat_inst[k])
        if iid == 0 or iid in seen:
            continue
        seen.add(iid)
        plane = PlaneParams(flat_planes[k])
        moved = transform_plane(sample.t_ns, plane)
        refit = _three_point_refit(sample.t_ns, plane)
        eq9_err = max(eq9_err, float(np.max(np.abs(moved.p - refit))))
    ok = eq9_err < EQ9_TOL
    print(f"eq9_point_oracle_deviation={eq9_err:.3e} {'PASS' if ok else 'FAIL'}")
    if not ok:
        failures.append("eq9")

    return 1 if failures else 0


def _three_point_refit(transform, plane) -> np.ndarray:
    """Transform three plane points and refit; independent of Eq. 9."""
    n, d = plane.normal, plane.offset
    a = np.array([1.0, 0.0, 0.0])
    if abs(n[0]) > 0.9:
        a = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    pts = np.stack([d * n, d * n + e1, d * n + e2])
    moved = transform.apply(pts)
    normal = np.cross(moved[1] - moved[0], moved[2] - moved[0])
    normal /= np.linalg.norm(normal)
    offset = float(normal @ moved[0])
    if offset < 0:
        normal, offset = -normal, -offset
    return normal * offset


# ---------------------------------------------------------------- train-toy

def cmd_train_toy(args) -> int:
    pairs_dir = Path(args.pairs)
    manifests = sorted(pairs_dir.glob("source_*.json"))
    samples = []
    dropped_lists = []
    for m in manifests:
        sample, doc = pio.read_pair(m)
        samples.append(sample)
        dropped_lists.append(doc.get("dropped_instances", []))
    if not samples:
        print(f"error: no pair manifests (source_*.json) in {pairs_dir}",
              file=sys.stderr)
        return 2
    cfg = TrainConfig(steps=args.steps, lr=args.lr, guidance=args.guidance,
                      grad_weight=args.grad_weight, seed=args.seed,
                      stride=args.stride, hidden=args.hidden,
                      tau_occ=args.tau_occ)
    head, rows = train_toy(samples, cfg)
    pio.write_csv(args.report, loss_row_header(),
                  [loss_row(i, r) for i, r in enumerate(rows)])
    print(f"trained {cfg.steps} steps on {len(samples)} pairs; "
          f"final l_p={rows[-1].l_p:.5f}")

    if args.holdout:
        holdout_views = []
        for m in sorted(Path(args.holdout).glob("*.json")):
            if m.name.endswith(".pred.json"):
                continue
            view, _ = pio.read_view(m)
            holdout_views.append(view)
        if not holdout_views:
            print(f"error: no view manifests in {args.holdout}", file=sys.stderr)
            return 2
        scores = evaluate_views(head, holdout_views, cfg.stride)
        print(f"holdout abs_rel={scores['abs_rel']:.5f} "
              f"l_surface={scores['l_surface']:.5f}")
    return 0


# ---------------------------------------------------------------- eval

def _eval_image(gt_view, planes, instances, args):
    preds = [InstancePrediction(soft_mask=e["soft_mask"], score=e["score"],
                                class_id=e["class_id"])
             for e in sorted(instances, key=lambda e: -e["score"])]
    final, owner = assemble_output(preds, planes, args.theta, args.score_min)
    pred_scores = {}
    pred_classes = {}
    pred_planes = {}
    for idx, inst in enumerate(preds, start=1):
        if inst.pooled_plane is not None and (owner == idx).any():
            pred_scores[idx] = inst.score
            pred_classes[idx] = inst.class_id
            pred_planes[idx] = inst.pooled_plane

    cam = gt_view.camera
    induced, ok = induced_depth_map(cam, final)
    dm = pmetrics.depth_metrics(induced, gt_view.depth, ok)
    det = pmetrics.detection_report(owner, pred_scores, pred_classes,
                                    gt_view.instances, gt_view.classes,
                                    args.iou)
    taus = np.linspace(args.recall_max / args.recall_steps, args.recall_max,
                       args.recall_steps)
    matches = pmetrics.match_instances(owner, pred_scores, gt_view.instances,
                                       args.iou)
    counts = np.zeros(args.recall_steps, dtype=np.int64)
    for m in matches:
        region = gt_view.instances == m.gt_id
        field = np.broadcast_to(pred_planes[m.pred_id].p,
                                gt_view.depth.shape + (3,))
        ind, okp = induced_depth_map(cam, field, region)
        err = np.abs(gt_view.depth - ind)
        usable = region & okp
        for k, tau in enumerate(taus):
            counts[k] += int((usable & (err <= tau)).sum())
    total = int((gt_view.instances != 0).sum())
    return dm, det, counts, total, taus


def cmd_eval(args) -> int:
    gt_dir = Path(args.gt)
    gt_manifests = sorted(p for p in gt_dir.glob("*.json")
                          if not p.name.endswith(".pred.json"))
    if not gt_manifests:
        print(f"error: no ground-truth manifests in {gt_dir}", file=sys.stderr)
        return 2
    stems = [p.name[:-5] for p in gt_manifests]

    models = []
    for pred_dir in args.pred:
        pred_dir = Path(pred_dir)
        have = {p.name[:-10] for p in pred_dir.glob("*.pred.json")}
        want = set(stems)
        if have != want:
            missing = sorted(want - have)
            extra = sorted(have - want)
            print(f"error: prediction set mismatch in {pred_dir}: "
                  f"missing={missing} extra={extra}", file=sys.stderr)
            return 2
        models.append(pred_dir)

    header = ["model", "image", "abs_rel", "sq_rel", "rmse", "log_rmse",
              "delta1", "delta2", "delta3", "ap", "map"]
    rows = []
    curves = {}
    for pred_dir in models:
        label = pred_dir.name
        metric_rows = []
        counts_total = None
        pixels_total = 0
        taus = None
        for stem, manifest in zip(stems, gt_manifests):
            gt_view, _ = pio.read_view(manifest)
            planes, instances = pio.read_prediction(pred_dir / f"{stem}.pred.json")
            dm, det, counts, total, taus = _eval_image(gt_view, planes,
                                                       instances, args)
            metric_rows.append([dm.abs_rel, dm.sq_rel, dm.rmse, dm.log_rmse,
                                dm.delta1, dm.delta2, dm.delta3, det.ap, det.map])
            rows.append([label, stem] + metric_rows[-1])
            counts_total = counts if counts_total is None else counts_total + counts
            pixels_total += total
        means = [float(np.mean([r[k] for r in metric_rows]))
                 for k in range(len(metric_rows[0]))]
        rows.append([label, "mean"] + means)
        curves[label] = (taus, counts_total / max(pixels_total, 1))

    pio.write_csv(args.csv, header, rows)
    pio.write_recall_svg(args.svg, curves)
    print(f"evaluated {len(models)} model(s) on {len(stems)} image(s); "
          f"reports at {args.csv} and {args.svg}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planekit",
        description="Piece-wise planar reconstruction geometry, losses, and metrics")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-gen", help="generate synthetic scenes or pairs")
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int, default=1)
    g.add_argument("--boxes", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--pairs", action="store_true")
    g.add_argument("--baseline", type=_parse_vec3, default=(0.2, 0.0, 0.0))
    g.add_argument("--yaw", type=float, default=5.0)
    g.add_argument("--drop-prob", type=float, default=0.0)
    g.add_argument("--size", type=_parse_size, default=(128, 96))
    g.set_defaults(func=cmd_synth_gen)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=int, default=10)
    g.add_argument("--corrupt", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    g = sub.add_parser("warp-check", help="warp pipeline diagnostics on a pair")
    g.add_argument("--pair", required=True)
    g.add_argument("--stride", type=int, default=4)
    g.add_argument("--tau-occ", type=float, default=0.05)
    g.set_defaults(func=cmd_warp_check)

    g = sub.add_parser("train-toy", help="train the plane head on pairs")
    g.add_argument("--pairs", required=True)
    g.add_argument("--steps", type=int, default=2000)
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--guidance", type=_onoff, default=True)
    g.add_argument("--grad-weight", type=_onoff, default=False)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--report", required=True)
    g.add_argument("--stride", type=int, default=4)
    g.add_argument("--hidden", type=int, default=32)
    g.add_argument("--tau-occ", type=float, default=0.05)
    g.add_argument("--holdout")
    g.set_defaults(func=cmd_train_toy)

    g = sub.add_parser("eval", help="pooling + metrics over prediction dirs")
    g.add_argument("--pred", action="append", required=True)
    g.add_argument("--gt", required=True)
    g.add_argument("--csv", required=True)
    g.add_argument("--svg", required=True)
    g.add_argument("--theta", type=float, default=0.5)
    g.add_argument("--score-min", type=float, default=0.3)
    g.add_argument("--iou", type=float, default=0.5)
    g.add_argument("--recall-max", type=float, default=0.6)
    g.add_argument("--recall-steps", type=int, default=12)
    g.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gradcheck" and args.trials < 1:
        parser.error("--trials must be >= 1")
    if args.command == "train-toy" and args.steps < 0:
        parser.error("--steps must be >= 0")
    try:
        return args.func(args)
    except (PlanekitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
