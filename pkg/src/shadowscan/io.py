"""On-disk formats and scene configuration.

* Depth maps: single-channel PFM (``Pf``), little-endian float32.
* Normal maps: three-channel PFM (``PF``).
* Shadow maps: 8-bit grayscale PNG; with the default ``white_lit`` polarity
  255 means illuminated.
* Scenes: one JSON file, paths relative to it::

    {
      "camera": {"intrinsics": [[fx, 0, cx], [0, fy, cy], [0, 0, 1]],
                 "image_size": [H, W],
                 "extrinsics": [[...], [...], [...]]},        # optional, 3x4
      "lights": [{"position": [x, y, z]},
                 {"direction": [x, y, z], "distance": 3.0}],     # distance optional
      "shadow_maps": ["shadows/light_00.png", ...],
      "polarity": "white_lit",                                # or "black_lit"
      "depth_init": 4.0,                                      # optional
      "ground_truth": {"depth": "depth_gt.pfm", "normals": "normals_gt.pfm"},
      "seed": 0
    }

  A directional light is placed ``distance`` world units from the anchor
  point (``depth_init`` along the optical axis) in the given direction; without
  ``distance`` it goes as far as it can while staying in front of the camera.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraModel, GeometryError, LightSource, directional_light, make_light
from .renderer import ShadowMap

POLARITIES = ("white_lit", "black_lit")


class SceneError(ValueError):
    pass


class MissingFile(SceneError):
    pass


class SizeMismatch(SceneError):
    pass


class BadConfig(SceneError):
    pass


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def write_pfm(path, array):
    a = np.asarray(array)
    if a.ndim == 2:
        tag, (H, W) = b"Pf", a.shape
    elif a.ndim == 3 and a.shape[2] == 3:
        tag, (H, W) = b"PF", a.shape[:2]
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) arrays, got {a.shape}")
    data = np.flipud(a).astype("<f4")
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{W} {H}\n".encode() + b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag = f.readline().strip()
        dims = f.readline().decode("ascii")
        scale = float(f.readline().decode("ascii").strip())
        buf = f.read()
    if tag not in (b"Pf", b"PF"):
        raise ValueError(f"{path}: not a PFM file")
    m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
    if not m:
        raise ValueError(f"{path}: malformed PFM header")
    W, H = int(m.group(1)), int(m.group(2))
    dtype = "<f4" if scale < 0 else ">f4"
    ch = 3 if tag == b"PF" else 1
    a = np.frombuffer(buf, dtype=dtype, count=W * H * ch)
    a = a.reshape((H, W, 3) if ch == 3 else (H, W))
    return np.flipud(a).astype(np.float32)


# ---------------------------------------------------------------------------
# shadow images
# ---------------------------------------------------------------------------


def _check_polarity(polarity):
    if polarity not in POLARITIES:
        raise BadConfig(f"polarity must be one of {POLARITIES}, got {polarity!r}")


def write_shadow_image(path, values, polarity: str = "white_lit"):
    """Quantize shadow values in [0, 1] (1 = lit) to an 8-bit PNG."""
    _check_polarity(polarity)
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    if polarity == "black_lit":
        v = 1.0 - v
    Image.fromarray(np.rint(v * 255).astype(np.uint8), mode="L").save(path)


def read_shadow_image(path, polarity: str = "white_lit") -> np.ndarray:
    """Binary map (1 = lit) from an 8-bit image, thresholded at half range."""
    _check_polarity(polarity)
    with Image.open(path) as im:
        a = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    lit = a >= 0.5
    if polarity == "black_lit":
        lit = ~lit
    return lit.astype(np.float64)


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------


@dataclass
class Scene:
    camera: CameraModel
    lights: list
    shadow_maps: list
    polarity: str = "white_lit"
    depth_init: float | None = None
    ground_truth_depth: np.ndarray | None = None
    ground_truth_normals: np.ndarray | None = None
    seed: int | None = None
    source: Path | None = field(default=None, repr=False)


def _field(cfg, key, where="config"):
    if key not in cfg:
        raise BadConfig(f"{where}: missing required field '{key}'")
    return cfg[key]


def _resolve(base: Path, rel, key) -> Path:
    p = Path(rel)
    p = p if p.is_absolute() else base / p
    if not p.is_file():
        raise MissingFile(f"{key}: file not found: {p}")
    return p


def parse_camera(cfg) -> CameraModel:
    cam = _field(cfg, "camera")
    K = np.asarray(_field(cam, "intrinsics", "camera"), dtype=np.float64)
    size = _field(cam, "image_size", "camera")
    if K.shape != (3, 3):
        raise BadConfig("camera.intrinsics must be a 3x3 array")
    if abs(np.linalg.det(K)) < 1e-12:
        raise BadConfig("camera.intrinsics is not invertible")
    if len(size) != 2:
        raise BadConfig("camera.image_size must be [H, W]")
    try:
        if "extrinsics" in cam:
            return CameraModel(K, tuple(size), np.asarray(cam["extrinsics"], dtype=np.float64))
        return CameraModel(K, tuple(size))
    except GeometryError as exc:
        raise BadConfig(f"camera: {exc}") from None


def parse_lights(cfg, camera: CameraModel, depth_init: float | None) -> list[LightSource]:
    entries = _field(cfg, "lights")
    if not isinstance(entries, list) or len(entries) == 0:
        raise BadConfig("lights: at least one light is required")
    anchor = camera.to_world(np.array([0.0, 0.0, depth_init or 1.0]))
    lights = []
    for j, e in enumerate(entries):
        try:
            if "position" in e:
                lights.append(make_light(camera, e["position"], bool(e.get("directional", False))))
            elif "direction" in e:
                dist = e.get("distance")
                lights.append(directional_light(camera, e["direction"], anchor, None if dist is None else float(dist)))
            else:
                raise BadConfig(f"lights[{j}]: needs 'position' or 'direction'")
        except GeometryError as exc:
            raise BadConfig(f"lights[{j}]: {exc}") from None
    return lights


def load_scene(path, polarity: str | None = None) -> Scene:
    """Parse a scene config; ``polarity`` overrides the file's setting."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config: file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config: invalid JSON ({exc})") from None
    base = path.parent
    camera = parse_camera(cfg)
    depth_init = cfg.get("depth_init")
    lights = parse_lights(cfg, camera, depth_init)
    polarity = polarity or cfg.get("polarity", "white_lit")
    _check_polarity(polarity)
    paths = _field(cfg, "shadow_maps")
    if len(paths) != len(lights):
        raise BadConfig(f"shadow_maps: {len(paths)} maps for {len(lights)} lights")
    maps = []
    for j, rel in enumerate(paths):
        p = _resolve(base, rel, f"shadow_maps[{j}]")
        values = read_shadow_image(p, polarity)
        if values.shape != camera.image_size:
            raise SizeMismatch(f"shadow_maps[{j}]: {values.shape} does not match image_size {camera.image_size}")
        maps.append(ShadowMap(values, j))
    gt_depth = gt_normals = None
    gt = cfg.get("ground_truth") or {}
    if "depth" in gt:
        gt_depth = read_pfm(_resolve(base, gt["depth"], "ground_truth.depth")).astype(np.float64)
        if gt_depth.shape != camera.image_size:
            raise SizeMismatch("ground_truth.depth does not match image_size")
    if "normals" in gt:
        gt_normals = read_pfm(_resolve(base, gt["normals"], "ground_truth.normals")).astype(np.float64)
    return Scene(camera, lights, maps, polarity, depth_init, gt_depth, gt_normals, cfg.get("seed"), path)


def scene_dict(camera: CameraModel, lights, shadow_paths, polarity="white_lit", depth_init=None,
               ground_truth=None, seed=None) -> dict:
    cfg = {
        "camera": {
            "intrinsics": camera.intrinsics.tolist(),
            "image_size": list(camera.image_size),
            "extrinsics": camera.extrinsics.tolist(),
        },
        "lights": [
            {"position": l.position.tolist(), **({"directional": True} if l.is_directional else {})}
            for l in lights
        ],
        "shadow_maps": [str(p) for p in shadow_paths],
        "polarity": polarity,
    }
    if depth_init is not None:
        cfg["depth_init"] = float(depth_init)
    if ground_truth:
        cfg["ground_truth"] = ground_truth
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def save_scene(scene, out_dir, polarity: str = "white_lit", normals=None) -> Path:
    """Write a SyntheticScene (shadows, ground truth, config); returns the config path."""
    from .metrics import normals_from_depth

    out = Path(out_dir)
    (out / "shadows").mkdir(parents=True, exist_ok=True)
    rels = []
    for j, m in enumerate(scene.shadow_maps):
        rel = f"shadows/light_{j:02d}.png"
        write_shadow_image(out / rel, m.values, polarity)
        rels.append(rel)
    write_pfm(out / "depth_gt.pfm", scene.height_map)
    if normals is None:
        normals = normals_from_depth(scene.height_map, scene.camera)
    write_pfm(out / "normals_gt.pfm", normals)
    cfg = scene_dict(
        scene.camera, scene.lights, rels, polarity,
        depth_init=float(np.median(scene.height_map)),
        ground_truth={"depth": "depth_gt.pfm", "normals": "normals_gt.pfm"},
        seed=scene.seed,
    )
    path = out / "scene.json"
    path.write_text(json.dumps(cfg, indent=2) + os.linesep)
    return path
