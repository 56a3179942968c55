"""File formats: PPM/PGM images, raw depth, binary Gaussian scenes, key-value
text files, and the on-disk demonstration dataset layout.

Dataset layout::

    <root>/meta                      cameras, language, image size, background
    <root>/demos/<id>/step_<k>/view_<v>.rgb.ppm
    <root>/demos/<id>/step_<k>/view_<v>.depth.bin
    <root>/demos/<id>/step_<k>/view_<v>.mask.pgm
    <root>/demos/<id>/step_<k>/action.kv

A step's future frames are the next step's RGB images; the final step of an
episode has no successor.
"""

from __future__ import annotations

import os
import re
import struct
from pathlib import Path

import numpy as np

from .actions import ArmAction, BimanualAction
from .cameras import Camera
from .gaussians import GaussianSet
from .observations import DemoStep, DemoTrajectory, Observation, View

SCENE_MAGIC = b"BGS1"
SCENE_FIELDS = 17  # mu(3) color(3) rot(4) scale(3) opacity(1) logits(3)


# ---------------------------------------------------------------------------
# images

def write_ppm(path, rgb: np.ndarray):
    """Write an (H, W, 3) float image in [0, 1] as binary PPM (P6, 8-bit)."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {rgb.shape}")
    data = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into an (H, W, 3) float image in [0, 1]."""
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_pnm_header(f)
        if magic != b"P6":
            raise ValueError(f"not a P6 PPM file: {path}")
        if maxval != 255:
            raise ValueError(f"unsupported PPM maxval {maxval}")
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm(path, labels: np.ndarray):
    """Write an (H, W) uint8 label image as binary PGM (P5)."""
    labels = np.asarray(labels, dtype=np.uint8)
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(labels.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_pnm_header(f)
        if magic != b"P5":
            raise ValueError(f"not a P5 PGM file: {path}")
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return data.reshape(h, w).copy()


def _read_pnm_header(f):
    def token():
        t = b""
        while True:
            c = f.read(1)
            if c in b" \t\r\n":
                if t:
                    return t
                continue
            if c == b"#":  # comment to end of line
                while f.read(1) not in b"\n":
                    pass
                continue
            if not c:
                raise ValueError("truncated PNM header")
            t += c
    magic = token()
    w, h, maxval = int(token()), int(token()), int(token())
    return magic, w, h, maxval


def write_depth(path, depth: np.ndarray):
    """Write an (H, W) depth image as raw little-endian float32."""
    np.asarray(depth, dtype="<f4").tofile(path)


def read_depth(path, height: int, width: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != height * width:
        raise ValueError(f"depth file {path} has {data.size} values, "
                         f"expected {height * width}")
    return data.reshape(height, width).astype(np.float64)


# ---------------------------------------------------------------------------
# binary Gaussian scenes

def write_scene(path, gset: GaussianSet):
    """Binary scene: magic 'BGS1', u32 particle count, then 17 float64 per particle."""
    mu, color, rot, scale, opacity, logits = gset.arrays()
    n = mu.shape[0]
    rows = np.concatenate([mu, color, rot, scale, opacity[:, None], logits], axis=1)
    assert rows.shape == (n, SCENE_FIELDS)
    with open(path, "wb") as f:
        f.write(SCENE_MAGIC)
        f.write(struct.pack("<I", n))
        f.write(rows.astype("<f8").tobytes())


def read_scene(path) -> GaussianSet:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != SCENE_MAGIC:
            raise ValueError(f"bad scene magic {magic!r} in {path}")
        (n,) = struct.unpack("<I", f.read(4))
        rows = np.frombuffer(f.read(n * SCENE_FIELDS * 8), dtype="<f8")
    rows = rows.reshape(n, SCENE_FIELDS).astype(np.float64)
    return GaussianSet(mu=rows[:, 0:3], color=rows[:, 3:6], rot=rows[:, 6:10],
                       scale=rows[:, 10:13], opacity=rows[:, 13], logits=rows[:, 14:17])


# ---------------------------------------------------------------------------
# flat key = value text files

def write_keyvalues(path, items: dict):
    lines = []
    for key, value in items.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            value = " ".join(repr(float(v)) for v in np.asarray(value).reshape(-1))
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalues(path) -> dict:
    items = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed key=value line in {path}: {line!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def kv_floats(items: dict, key: str) -> np.ndarray:
    return np.array([float(v) for v in items[key].split()])


# ---------------------------------------------------------------------------
# actions

def write_action(path, action: BimanualAction):
    write_keyvalues(path, {
        "role": action.role_assignment,
        "left.trans_bin": " ".join(str(b) for b in action.left.trans_bin),
        "left.rot_bins": " ".join(str(b) for b in action.left.rot_bins),
        "left.open": action.left.open,
        "left.collide": action.left.collide,
        "right.trans_bin": " ".join(str(b) for b in action.right.trans_bin),
        "right.rot_bins": " ".join(str(b) for b in action.right.rot_bins),
        "right.open": action.right.open,
        "right.collide": action.right.collide,
    })


def read_action(path) -> BimanualAction:
    kv = read_keyvalues(path)

    def arm(prefix):
        return ArmAction(
            trans_bin=tuple(int(v) for v in kv[f"{prefix}.trans_bin"].split()),
            rot_bins=tuple(int(v) for v in kv[f"{prefix}.rot_bins"].split()),
            open=int(kv[f"{prefix}.open"]),
            collide=int(kv[f"{prefix}.collide"]),
        )

    return BimanualAction.from_left_right(arm("left"), arm("right"), kv["role"])


# ---------------------------------------------------------------------------
# cameras / dataset meta

def camera_to_kv(cam: Camera, prefix: str) -> dict:
    return {
        f"{prefix}.fx": cam.fx, f"{prefix}.fy": cam.fy,
        f"{prefix}.cx": cam.cx, f"{prefix}.cy": cam.cy,
        f"{prefix}.width": cam.width, f"{prefix}.height": cam.height,
        f"{prefix}.rotation": cam.rotation.reshape(-1),
        f"{prefix}.translation": cam.translation,
    }


def camera_from_kv(kv: dict, prefix: str) -> Camera:
    return Camera(
        fx=float(kv[f"{prefix}.fx"]), fy=float(kv[f"{prefix}.fy"]),
        cx=float(kv[f"{prefix}.cx"]), cy=float(kv[f"{prefix}.cy"]),
        rotation=kv_floats(kv, f"{prefix}.rotation").reshape(3, 3),
        translation=kv_floats(kv, f"{prefix}.translation"),
        width=int(kv[f"{prefix}.width"]), height=int(kv[f"{prefix}.height"]),
    )


def write_dataset_meta(root, cameras, language: str, workspace_bounds, background=(0, 0, 0)):
    items = {
        "language": language,
        "num_views": len(cameras),
        "background": np.asarray(background, dtype=np.float64),
        "workspace_lo": np.asarray(workspace_bounds[0], dtype=np.float64),
        "workspace_hi": np.asarray(workspace_bounds[1], dtype=np.float64),
    }
    for v, cam in enumerate(cameras):
        items.update(camera_to_kv(cam, f"view_{v}"))
    write_keyvalues(Path(root) / "meta", items)


def read_dataset_meta(root):
    kv = read_keyvalues(Path(root) / "meta")
    n = int(kv["num_views"])
    cameras = [camera_from_kv(kv, f"view_{v}") for v in range(n)]
    bounds = np.stack([kv_floats(kv, "workspace_lo"), kv_floats(kv, "workspace_hi")])
    return {
        "language": kv["language"],
        "cameras": cameras,
        "background": kv_floats(kv, "background"),
        "workspace_bounds": bounds,
    }


# ---------------------------------------------------------------------------
# demonstrations

def write_demo_step(step_dir, views, masks, action: BimanualAction):
    """views: list of (rgb, depth) per camera; masks: list of label images."""
    step_dir = Path(step_dir)
    step_dir.mkdir(parents=True, exist_ok=True)
    for v, (rgb, depth) in enumerate(views):
        write_ppm(step_dir / f"view_{v}.rgb.ppm", rgb)
        write_depth(step_dir / f"view_{v}.depth.bin", depth)
        write_pgm(step_dir / f"view_{v}.mask.pgm", masks[v])
    write_action(step_dir / "action.kv", action)


def list_demo_dirs(root):
    demos_dir = Path(root) / "demos"
    if not demos_dir.is_dir():
        raise FileNotFoundError(f"no demos directory under {root}")
    return sorted(d for d in demos_dir.iterdir() if d.is_dir())


def _step_dirs(demo_dir):
    pat = re.compile(r"step_(\d+)$")
    steps = []
    for d in Path(demo_dir).iterdir():
        m = pat.match(d.name)
        if m and d.is_dir():
            steps.append((int(m.group(1)), d))
    return [d for _, d in sorted(steps)]


def read_demo(demo_dir, meta, time_denom: float = 10.0) -> DemoTrajectory:
    """Load one episode directory into a DemoTrajectory.

    Proprioception is (step / time_denom, left open, right open) where the
    gripper states come from the step's recorded action.
    """
    cameras = meta["cameras"]
    step_dirs = _step_dirs(demo_dir)
    raw = []
    for d in step_dirs:
        views = []
        masks = []
        for v, cam in enumerate(cameras):
            rgb = read_ppm(d / f"view_{v}.rgb.ppm")
            depth = read_depth(d / f"view_{v}.depth.bin", cam.height, cam.width)
            views.append(View(camera=cam, rgb=rgb, depth=depth))
            masks.append(read_pgm(d / f"view_{v}.mask.pgm"))
        action = read_action(d / "action.kv")
        raw.append((views, masks, action))
    steps = []
    for k, (views, masks, action) in enumerate(raw):
        proprio = np.array([k / time_denom, float(action.left.open), float(action.right.open)])
        obs = Observation(views=tuple(views), proprio=proprio)
        future = None
        if k + 1 < len(raw):
            future = tuple(v.rgb for v in raw[k + 1][0])
        steps.append(DemoStep(observation=obs, action=action,
                              future_rgb=future, masks=tuple(masks)))
    return DemoTrajectory(steps=tuple(steps), language=meta["language"])


def load_dataset(root):
    """Load every demo under `root`; returns (meta dict, list of DemoTrajectory)."""
    meta = read_dataset_meta(root)
    return meta, [read_demo(d, meta) for d in list_demo_dirs(root)]
