"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error (bad or missing input),
3 internal invariant violation or unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import assets
from .errors import BadConfig, G4DError, InvalidValue, InvariantViolation
from .report import format_report

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text, n=None):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
    return vals


def _rgb(text):
    return tuple(_floats(text, 3))


def _emit(report, args):
    text = format_report(report, as_json=getattr(args, "json", False))
    path = getattr(args, "report", None)
    if path:
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise assets.IoError(str(exc)) from exc
    else:
        sys.stdout.write(text)


# --- synthetic datasets on disk -----------------------------------------------------------

class SceneDir:
    """Paths inside a directory written by ``g4d synth``."""

    def __init__(self, root):
        self.root = root
        self.manifest = assets.read_manifest(os.path.join(root, "manifest.json"))
        try:
            self.n_timestamps = int(self.manifest["timestamps"])
            self.n_views = int(self.manifest["views"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BadConfig(f"manifest is missing field {exc}") from None

    def path(self, key, **fmt):
        return os.path.join(self.root, self.manifest["files"][key].format(**fmt))

    def check_t(self, t):
        if not 0 <= t < self.n_timestamps:
            raise InvalidValue(f"timestamp {t} outside [0, {self.n_timestamps - 1}]")

    def frame(self, t):
        self.check_t(t)
        return assets.read_gaussian_frame(self.path("frame", t=t))

    def motions(self, t):
        self.check_t(t)
        return [assets.read_raster(self.path("motion", t=t, v=v)) for v in range(self.n_views)]

    def mesh(self, t):
        self.check_t(t)
        return assets.read_mesh(self.path("mesh", t=t))

    def cameras(self, t=0):
        sets = assets.read_cameras(self.path("cameras"))
        return sets[min(t, len(sets) - 1)]


FILES = {
    "cameras": "cameras.txt",
    "frame": "frame_t{t}.g4da",
    "motion": "motion_t{t}_v{v}.g4dr",
    "flow_backward": "flow_t{t}_v{v}_backward.g4dr",
    "flow_forward": "flow_t{t}_v{v}_forward.g4dr",
    "image": "image_t{t}_v{v}.g4di",
    "mesh": "mesh_t{t}.g4dm",
}


def cmd_synth(args):
    from .render import RenderConfig
    from .synth import SynthConfig, bake_gaussians, generate_scene, gt_flow, render_gt_views

    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise assets.ParseError(exc.msg, exc.lineno, exc.colno) from None
        except OSError as exc:
            raise assets.IoError(str(exc)) from exc
        if not isinstance(raw, dict):
            raise BadConfig("config must be a JSON object")
        density = float(raw.pop("density", args.density))
        config = SynthConfig.from_dict(raw)
    else:
        config = SynthConfig()
        density = args.density
    if not density > 0:
        raise BadConfig("density must be positive")
    scene = generate_scene(config, seed=args.seed)
    assets.ensure_dir(args.out)
    size = scene.grid_size(density)
    rcfg = RenderConfig(size, size)
    k, n = scene.n_timestamps, len(scene.cameras)
    cams = [scene.camera(v, density) for v in range(n)]
    assets.write_cameras([cams], os.path.join(args.out, FILES["cameras"]))
    counts = []
    for t in range(k):
        baked = bake_gaussians(scene, t, density)
        assets.write_gaussian_frame(baked.frame, os.path.join(args.out, FILES["frame"].format(t=t)))
        assets.write_mesh(scene.meshes[t], os.path.join(args.out, FILES["mesh"].format(t=t)))
        images = render_gt_views(baked, cams, rcfg)
        for v in range(n):
            fmt = dict(t=t, v=v)
            assets.write_raster(baked.motions[v], os.path.join(args.out, FILES["motion"].format(**fmt)))
            assets.write_image(images[v], os.path.join(args.out, FILES["image"].format(**fmt)))
            if args.png:
                assets.write_png(images[v], os.path.join(args.out, f"image_t{t}_v{v}.png"))
            for direction, ok in (("backward", t > 0), ("forward", t < k - 1)):
                if ok:
                    flow = gt_flow(scene, t, v, direction, density, baked=baked)
                    assets.write_raster(flow, os.path.join(args.out, FILES[f"flow_{direction}"].format(**fmt)))
        counts.append(int(baked.frame.valid.sum()))
    manifest = {
        "format": "g4d-scene",
        "version": 1,
        "seed": int(args.seed),
        "config": config.to_dict(),
        "density": density,
        "timestamps": k,
        "views": n,
        "resolution": size,
        "scale": config.scale,
        "files": FILES,
    }
    assets.write_manifest(manifest, os.path.join(args.out, "manifest.json"))
    _emit({"command": "synth", "out": args.out, "timestamps": k, "views": n,
           "resolution": size, "gaussians_per_timestamp": counts}, args)


def _load_cameras(path, t):
    sets = assets.read_cameras(path)
    if not sets:
        raise InvalidValue("camera file holds no timestamps")
    if not 0 <= t < len(sets):
        raise InvalidValue(f"camera timestamp {t} outside [0, {len(sets) - 1}]")
    return sets[t]


def _save_image(img, path):
    if path.lower().endswith(".png"):
        assets.write_png(img, path)
    else:
        assets.write_image(img, path)


def cmd_render(args):
    from .model import flatten
    from .render import RenderConfig, render, render_reference

    frame = assets.read_gaussian_frame(args.frame)
    cams = _load_cameras(args.cameras, args.t)
    if not 0 <= args.view < len(cams):
        raise InvalidValue(f"view {args.view} outside [0, {len(cams) - 1}]")
    H, W = (args.size[1], args.size[0]) if args.size else frame.shape
    cfg = RenderConfig(int(H), int(W), background=args.bg)
    fn = render_reference if args.reference else render
    img = fn(flatten(frame), cams[args.view], cfg)
    _save_image(img, args.out)
    _emit({"command": "render", "out": args.out, "height": int(H), "width": int(W),
           "gaussians": int(frame.valid.sum()), "mean": float(img.astype(np.float64).mean())}, args)


def _fusion(choice):
    from .fusion import FusionFunction, read_fusion_weights

    if choice == "avg":
        return FusionFunction.average()
    if choice.startswith("mlp:"):
        return read_fusion_weights(choice[4:])
    raise UsageError(f"--fusion must be 'avg' or 'mlp:<path>', got {choice!r}")


def cmd_interp(args):
    from .fusion import interpolate_detailed

    t = args.t if args.t is not None else 1
    if not (t - 1 <= args.t_prime <= t):
        raise UsageError(f"--t-prime {args.t_prime} outside [{t - 1}, {t}]")
    if not args.tau > 0:
        raise UsageError("--tau must be positive")
    if not (args.fusion == "avg" or args.fusion.startswith("mlp:")):
        raise UsageError(f"--fusion must be 'avg' or 'mlp:<path>', got {args.fusion!r}")
    scene = SceneDir(args.frames)
    if not 1 <= t < scene.n_timestamps:
        raise InvalidValue(f"--t must lie in [1, {scene.n_timestamps - 1}]")
    fn = _fusion(args.fusion)
    cams = _load_cameras(args.cameras, 0) if args.cameras else scene.cameras()
    result = interpolate_detailed(scene.frame(t), scene.frame(t - 1), scene.motions(t),
                                  scene.motions(t - 1), args.t_prime, cams, args.tau, fn)
    if args.out.lower().endswith(".ply"):
        assets.export_ply(result.cloud, args.out)
    else:
        assets.write_cloud(result.cloud, args.out)
    _emit({"command": "interp", "t": t, "t_prime": args.t_prime, "tau": args.tau,
           "fusion": fn.variant, **result.as_dict(), "out": args.out}, args)


def cmd_gauge(args):
    from .gauge import camera_loss, metric_gauge, metric_gauge_temporal

    pred = assets.read_cameras(args.pred_cams)
    gt = assets.read_cameras(args.gt_cams)
    temporal = len(pred) > 1 or len(gt) > 1
    if args.pred_gauge is not None:
        rep = camera_loss(pred if temporal else pred[0], gt if temporal else gt[0],
                          args.pred_gauge, temporal=temporal)
    else:
        rep = metric_gauge_temporal(pred, gt) if temporal else metric_gauge(pred[0], gt[0])
    _emit({"command": "gauge", "timestamps": len(pred), **rep.as_dict()}, args)


def cmd_losses(args):
    from .motion import FlowConsistencyParams, LossWeights, flow_loss, retargeting_loss

    weights = LossWeights(args.lambda_ssim, args.lambda_lpips)
    if args.mode == "retarget":
        if not args.frames:
            raise UsageError("--frames is required for --mode retarget")
        scene = SceneDir(args.frames)
        t = args.t if args.t is not None else 1
        if not 1 <= t < scene.n_timestamps:
            raise InvalidValue(f"--t must lie in [1, {scene.n_timestamps - 1}]")
        frame_t = scene.frame(t)
        motions = scene.motions(t)
        if args.motion == "zero":
            motions = np.zeros_like(frame_t.position)
        rep = retargeting_loss(frame_t, scene.frame(t - 1), motions, scene.cameras(), weights)
        out = {"command": "losses", "mode": "retarget", "t": t, "motion": args.motion, **rep.as_dict()}
    elif args.mode == "flow":
        if not (args.pred and args.pseudo_fwd and args.pseudo_bwd):
            raise UsageError("--pred, --pseudo-fwd and --pseudo-bwd are required for --mode flow")
        rasters = [assets.read_raster(p) for p in (args.pred, args.pseudo_fwd, args.pseudo_bwd)]
        if not all(hasattr(r, "flow") for r in rasters):
            raise InvalidValue("flow loss inputs must be flow rasters")
        value = flow_loss(*rasters, FlowConsistencyParams(args.r_a, args.r_b))
        out = {"command": "losses", "mode": "flow", "total": value}
    else:
        from .fusion import fusion_loss

        rendered, gt = _image_lists(args)
        rep = fusion_loss(rendered, gt, weights)
        out = {"command": "losses", "mode": "fusion", **rep.as_dict()}
    _emit(out, args)


def _image_lists(args):
    if not (args.pred and args.gt):
        raise UsageError("--pred and --gt image lists are required")
    pred = [_read_any_image(p) for p in args.pred.split(",")]
    gt = [_read_any_image(p) for p in args.gt.split(",")]
    if len(pred) != len(gt):
        raise InvalidValue(f"{len(pred)} predicted images vs {len(gt)} targets")
    return pred, gt


def _read_any_image(path):
    return assets.read_png(path) if path.lower().endswith(".png") else assets.read_image(path)


def cmd_eval(args):
    from . import metrics
    from .model import flatten

    if args.mode == "nvs":
        pred, gt = _image_lists(args)
        rows = [{"psnr": metrics.psnr(p, g), "ssim": metrics.ssim(p, g)} for p, g in zip(pred, gt)]
        finite = [r["psnr"] for r in rows if np.isfinite(r["psnr"])]
        out = {"command": "eval", "mode": "nvs",
               "mean_psnr": float(np.mean(finite)) if len(finite) == len(rows) else float("inf"),
               "mean_ssim": float(np.mean([r["ssim"] for r in rows])), "per_view": rows}
        _emit(out, args)
        return
    if not args.frames:
        raise UsageError("--frames is required for this mode")
    scene = SceneDir(args.frames)
    t = args.t if args.t is not None else 0
    frame = scene.frame(t)
    cloud = flatten(frame)
    points = cloud.position.astype(np.float64)
    if args.mode == "motion":
        direction = args.direction
        target = t - 1 if direction == "backward" else t + 1
        if not 0 <= target < scene.n_timestamps:
            raise InvalidValue(f"no {direction} motion at t={t}")
        motions = np.stack([m.direction(direction) for m in scene.motions(t)])
        V, _, H, W = motions.shape
        pm = motions.reshape(V, 3, H * W)[cloud.source[:, 0], :, cloud.source[:, 1]].astype(np.float64)
        mesh, mesh_tgt = scene.mesh(t), scene.mesh(target)
        gt_vertex_motion = mesh_tgt.vertices - mesh.vertices
        transform = None
        if args.align == "none":
            transform = metrics.SimilarityTransform.identity()
        ev = metrics.evaluate_motion(points, pm, mesh, gt_vertex_motion, mesh_tgt, transform)
        out = {"command": "eval", "mode": "motion", "t": t, "direction": direction,
               "align": args.align, **ev.as_dict()}
    else:
        if args.pred_gauge is None:
            raise UsageError("--pred-gauge is required for --mode metric")
        pts = points * args.points_scale
        err = metrics.metric_scale_error(pts, args.pred_gauge, scene.mesh(t))
        out = {"command": "eval", "mode": "metric", "t": t, "pred_gauge": args.pred_gauge,
               "points_scale": args.points_scale, "metric_scale_error": err,
               "n_points": int(len(pts))}
    _emit(out, args)


def cmd_selftest(args):
    from .selftest import run_selftest

    results = run_selftest(quick=not args.full)
    out = {"command": "selftest", "passed": all(r["ok"] for r in results.values()), "checks": results}
    _emit(out, args)
    if not out["passed"]:
        raise InvariantViolation("self-test failed")


def build_parser():
    p = _Parser(prog="g4d", description="Feed-forward 4D Gaussian toolkit: synthesis, rendering, "
                "interpolation and evaluation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--report", help="write the report here instead of stdout")
        sp.add_argument("--json", action="store_true", help="emit JSON instead of text")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", help="JSON scene configuration")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--density", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.add_argument("--png", action="store_true", help="also write PNG previews")
    common(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("render", help="render a Gaussian frame from one camera")
    s.add_argument("--frame", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--view", type=int, default=0)
    s.add_argument("--t", type=int, default=0, help="timestamp index in the camera file")
    s.add_argument("--bg", type=_rgb, default=(1.0, 1.0, 1.0))
    s.add_argument("--size", type=lambda x: [int(v) for v in _floats(x, 2)], help="W,H")
    s.add_argument("--reference", action="store_true", help="use the unbinned reference renderer")
    s.add_argument("--out", required=True)
    common(s)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("interp", help="Gaussians at an intermediate time")
    s.add_argument("--frames", required=True, help="directory written by 'synth'")
    s.add_argument("--t", type=int, default=None, help="later frame index (default 1)")
    s.add_argument("--t-prime", type=float, required=True)
    s.add_argument("--tau", type=float, default=0.05)
    s.add_argument("--fusion", default="avg", help="avg or mlp:<weights file>")
    s.add_argument("--cameras", help="override the dataset cameras")
    s.add_argument("--out", required=True, help=".ply export or a binary cloud file")
    common(s)
    s.set_defaults(func=cmd_interp)

    s = sub.add_parser("gauge", help="metric gauge and camera loss")
    s.add_argument("--pred-cams", required=True)
    s.add_argument("--gt-cams", required=True)
    s.add_argument("--pred-gauge", type=float)
    common(s)
    s.set_defaults(func=cmd_gauge)

    s = sub.add_parser("losses", help="self-supervision losses")
    s.add_argument("--mode", choices=("retarget", "flow", "fusion"), required=True)
    s.add_argument("--frames")
    s.add_argument("--t", type=int)
    s.add_argument("--motion", choices=("gt", "zero"), default="gt")
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--pseudo-fwd")
    s.add_argument("--pseudo-bwd")
    s.add_argument("--lambda-ssim", type=float, default=0.25)
    s.add_argument("--lambda-lpips", type=float, default=0.25)
    s.add_argument("--r-a", type=float, default=0.1)
    s.add_argument("--r-b", type=float, default=0.5)
    common(s)
    s.set_defaults(func=cmd_losses)

    s = sub.add_parser("eval", help="evaluation protocols")
    s.add_argument("--mode", choices=("nvs", "motion", "metric"), required=True)
    s.add_argument("--frames")
    s.add_argument("--t", type=int)
    s.add_argument("--direction", choices=("backward", "forward"), default="forward")
    s.add_argument("--align", choices=("icp", "none"), default="icp")
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--pred-gauge", type=float)
    s.add_argument("--points-scale", type=float, default=1.0)
    common(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="oracle-equivalence and invariant checks")
    s.add_argument("--full", action="store_true")
    common(s)
    s.set_defaults(func=cmd_selftest)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return EXIT_OK
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (G4DError, OSError) as exc:
        print(f"g4d: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantViolation as exc:
        print(f"g4d: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"g4d: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main(argv=None):
    sys.exit(run(argv))
