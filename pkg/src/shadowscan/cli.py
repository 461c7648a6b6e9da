"""Command-line interface: ``shadowscan {bake,reconstruct,eval,shadows,gradcheck}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io, metrics, synthetic
from .geometry import CameraModel, GeometryError
from .optimizer import FitConfig, fit
from .renderer import r3_oracle, render_shadow_map_r2

log = logging.getLogger("shadowscan")


def _schedule(text: str, cast=float):
    """Parse ``"0:0.3,0.25:0.1"`` into ((0.0, 0.3), (0.25, 0.1))."""
    try:
        pairs = [p.split(":") for p in text.split(",") if p.strip()]
        return tuple((float(a), cast(b)) for a, b in pairs)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad schedule {text!r}; expected 'frac:value,frac:value'") from None


def _tau_schedule(text):
    return _schedule(text, float)


def _stride_schedule(text):
    return _schedule(text, int)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shadowscan", description="Depth from multi-light binary shadow maps.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    b = sub.add_parser("bake", help="render a synthetic scene to disk")
    b.add_argument("--terrain", choices=synthetic.TERRAINS, default="gaussian_bumps")
    b.add_argument("--size", type=int, default=64)
    b.add_argument("--bumps", type=int, default=2, help="bump count for gaussian_bumps")
    b.add_argument("--lights", type=int, default=16)
    b.add_argument("--pattern", choices=synthetic.PATTERNS, default="ring")
    b.add_argument("--elevation", type=float, default=40.0, help="ring elevation in degrees")
    b.add_argument("--distance", type=float, default=3.0, help="light distance from the scene center")
    b.add_argument("--focal", type=float, default=None, help="focal length in pixels (default: image size)")
    b.add_argument("--supersample", type=int, default=1)
    b.add_argument("--polarity", choices=io.POLARITIES, default="white_lit")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)

    r = sub.add_parser("reconstruct", help="fit a depth field to a scene's shadow maps")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--epochs", type=int, default=None)
    r.add_argument("--lambda", dest="lam", type=float, default=None)
    r.add_argument("--tau-schedule", type=_tau_schedule, default=None)
    r.add_argument("--stride-schedule", type=_stride_schedule, default=None)
    r.add_argument("--lr", type=float, default=None)
    r.add_argument("--supersample", type=int, default=None)
    r.add_argument("--polarity", choices=io.POLARITIES, default=None,
                   help="override the config's shadow image polarity")

    e = sub.add_parser("eval", help="compare a predicted depth map to ground truth")
    e.add_argument("--pred", required=True, help="predicted depth PFM")
    e.add_argument("--truth", default=None, help="ground-truth depth PFM (default: from --config)")
    e.add_argument("--config", default=None, help="scene config (camera for normals, ground truth)")
    e.add_argument("--out", default=None, help="write the JSON report here as well")

    s = sub.add_parser("shadows", help="render shadow maps of a depth map")
    s.add_argument("--config", required=True, help="scene config providing camera and lights")
    s.add_argument("--depth", default=None, help="depth PFM (default: the config's ground truth)")
    s.add_argument("--method", choices=("r2", "r3"), default="r3")
    s.add_argument("--tau", type=float, default=0.01)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--supersample", type=int, default=1)
    s.add_argument("--polarity", choices=io.POLARITIES, default="white_lit")
    s.add_argument("--out", required=True)

    g = sub.add_parser("gradcheck", help="run the finite-difference gradient checks")
    g.add_argument("--seed", type=int, default=0)
    return p


def _scene_without_images(path):
    """Camera, lights and ground truth of a config, skipping shadow-map loading."""
    path = Path(path)
    if not path.is_file():
        raise io.MissingFile(f"config: file not found: {path}")
    cfg = json.loads(path.read_text())
    cam = io.parse_camera(cfg)
    lights = io.parse_lights(cfg, cam, cfg.get("depth_init"))
    gt = (cfg.get("ground_truth") or {}).get("depth")
    gt_path = None if gt is None else io._resolve(path.parent, gt, "ground_truth.depth")
    return cam, lights, gt_path


def cmd_bake(args) -> int:
    H = W = args.size
    cam = CameraModel.simple(H, W, args.focal)
    params = {"count": args.bumps} if args.terrain == "gaussian_bumps" else {}
    hm = synthetic.make_terrain(args.terrain, H, W, seed=args.seed, **params)
    kw = {"elevation": args.elevation} if args.pattern == "ring" else {}
    lights = synthetic.make_light_rig(cam, args.lights, radius=args.distance, pattern=args.pattern,
                                      seed=args.seed, **kw)
    scene = synthetic.bake_scene(hm, cam, lights, seed=args.seed, supersample=args.supersample)
    path = io.save_scene(scene, args.out, args.polarity)
    print(f"wrote {path} ({len(lights)} lights, shadowed fraction {synthetic.shadow_fraction(scene):.3f})")
    return 0


def cmd_reconstruct(args) -> int:
    scene = io.load_scene(args.config, args.polarity)
    cfg = FitConfig()
    overrides = {
        "seed": args.seed if args.seed is not None else scene.seed,
        "max_epochs": args.epochs, "lam": args.lam, "tau_schedule": args.tau_schedule,
        "stride_schedule": args.stride_schedule, "lr": args.lr, "supersample": args.supersample,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if cfg.depth_init is None:
        cfg = replace(cfg, depth_init=scene.depth_init or 1.0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    with open(out / "trace.csv", "w") as trace:
        trace.write(",".join(_trace_columns()) + "\n")

        def on_epoch(row):
            trace.write(row.csv() + "\n")
            if row.epoch % 50 == 0:
                log.info("epoch %d loss %.5f rec %.5f", row.epoch, row.total_loss, row.rec_loss)

        field = fit(scene, cfg, on_epoch=on_epoch)
    depth = field.depth_grid()
    io.write_pfm(out / "depth.pfm", depth)
    io.write_pfm(out / "normals.pfm", metrics.normals_from_depth(depth, scene.camera))
    field.save(out / "field.bin")
    print(f"wrote {out / 'depth.pfm'} in {time.time() - t0:.1f}s")
    return 0


def _trace_columns():
    from .optimizer import TraceRow

    return TraceRow.COLUMNS


def cmd_eval(args) -> int:
    pred = io.read_pfm(args.pred).astype(np.float64)
    cam = None
    truth_path = args.truth
    if args.config:
        cam, _, gt = _scene_without_images(args.config)
        truth_path = truth_path or gt
    if truth_path is None:
        raise io.BadConfig("eval needs --truth or a --config with ground_truth.depth")
    truth = io.read_pfm(truth_path).astype(np.float64)
    report = {"nmze": metrics.nmze(pred, truth)}
    if cam is None:
        cam = CameraModel.simple(*truth.shape)
        report["camera"] = "default"
    report["normal_mae_deg"] = metrics.normal_mae(
        metrics.normals_from_depth(pred, cam), metrics.normals_from_depth(truth, cam)
    )
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_shadows(args) -> int:
    cam, lights, gt = _scene_without_images(args.config)
    depth_path = args.depth or gt
    if depth_path is None:
        raise io.BadConfig("shadows needs --depth or a --config with ground_truth.depth")
    depth = io.read_pfm(depth_path).astype(np.float64)
    if depth.shape != cam.image_size:
        raise io.SizeMismatch(f"depth map {depth.shape} does not match image_size {cam.image_size}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lit = []
    for j, light in enumerate(lights):
        if args.method == "r3":
            values = r3_oracle(depth, cam, light, args.supersample, j).shadow_map.values
        else:
            values = render_shadow_map_r2(depth, cam, light, args.tau, args.stride, args.supersample, j).values
        io.write_shadow_image(out / f"light_{j:02d}.png", values, args.polarity)
        lit.append(float(values.mean()))
    print(f"wrote {len(lights)} {args.method} shadow maps to {out} (mean lit fraction {np.mean(lit):.3f})")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else 1


COMMANDS = {
    "bake": cmd_bake,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "shadows": cmd_shadows,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (io.SceneError, GeometryError, synthetic.InvalidParams, metrics.MetricError, ValueError, OSError) as exc:
        print(f"shadowscan {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
