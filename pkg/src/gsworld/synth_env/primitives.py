"""Synthetic scene construction: primitives are converted to fixed lattices
of ground-truth Gaussians with one-hot instance logits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core.cameras import Camera
from ..core.gaussians import GaussianSet
from ..core.quat import quat_mul, quat_to_rot
from ..errors import SceneSpecError

CLASS_STABILIZING_ARM = 0
CLASS_ACTING_ARM = 1
CLASS_TARGET_OBJECT = 2

LOGIT_SCALE = 10.0
BOX_LATTICE = 4
SPHERE_SAMPLES = 64
DEFAULT_OPACITY = 0.95


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    kind: str                 # "box" or "sphere"
    size: tuple               # box: full extents (3,); sphere: (radius,)
    position: tuple
    rotation: tuple = (1.0, 0.0, 0.0, 0.0)
    color: tuple = (0.8, 0.2, 0.2)
    instance: int = CLASS_TARGET_OBJECT


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple            # of ObjectSpec (instance must be CLASS_TARGET_OBJECT)
    left_base: tuple          # initial (home) gripper position of the left arm
    right_base: tuple
    cameras: tuple            # of Camera
    seed: int
    role_assignment: str      # which physical arm stabilizes (class 0)
    workspace_bounds: np.ndarray = field(
        default_factory=lambda: np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]))

    def __post_init__(self):
        lo, hi = np.asarray(self.workspace_bounds, dtype=np.float64)
        if np.linalg.norm(np.asarray(self.left_base) - np.asarray(self.right_base)) < 0.05:
            raise SceneSpecError("arm bases overlap")
        for obj in self.objects:
            if obj.instance not in (CLASS_STABILIZING_ARM, CLASS_ACTING_ARM,
                                    CLASS_TARGET_OBJECT):
                raise SceneSpecError(f"object {obj.name} has invalid instance {obj.instance}")
            p = np.asarray(obj.position)
            if np.any(p < lo) or np.any(p > hi):
                raise SceneSpecError(f"object {obj.name} outside workspace")


def box_gaussians(size, color, instance_class, opacity=DEFAULT_OPACITY):
    """A BOX_LATTICE^3 lattice of Gaussians filling an axis-aligned box (local frame)."""
    size = np.asarray(size, dtype=np.float64).reshape(3)
    k = BOX_LATTICE
    spacing = size / k
    side = (np.arange(k) + 0.5) / k - 0.5
    gx, gy, gz = np.meshgrid(side * size[0], side * size[1], side * size[2], indexing="ij")
    mu = np.stack([gx.reshape(-1), gy.reshape(-1), gz.reshape(-1)], axis=1)
    n = mu.shape[0]
    scale = np.tile(spacing / 2.0, (n, 1))
    return _bundle(mu, scale, color, instance_class, opacity, n)


def sphere_gaussians(radius, color, instance_class, opacity=DEFAULT_OPACITY):
    """Fibonacci-spiral surface samples of a sphere (local frame)."""
    n = SPHERE_SAMPLES
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    golden = np.pi * (1 + np.sqrt(5.0))
    theta = golden * i
    mu = radius * np.stack([np.cos(theta) * np.sin(phi),
                            np.sin(theta) * np.sin(phi),
                            np.cos(phi)], axis=1)
    scale = np.full((n, 3), radius / 4.0)
    return _bundle(mu, scale, color, instance_class, opacity, n)


def _bundle(mu, scale, color, instance_class, opacity, n):
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    colors = np.tile(np.asarray(color, dtype=np.float64), (n, 1))
    logits = np.full((n, 3), 0.0)
    logits[:, instance_class] = LOGIT_SCALE
    return {
        "mu": mu, "color": colors, "rot": rot, "scale": scale,
        "opacity": np.full(n, opacity), "logits": logits,
    }


def arm_proxy_gaussians(instance_class, color):
    """A rigid stick-arm proxy in the gripper frame.

    A gripper cube sits at the frame origin; a thin stick extends backward
    (local -z) toward where the arm's base would be.
    """
    grip = box_gaussians((0.07, 0.07, 0.07), color, instance_class)
    stick = box_gaussians((0.035, 0.035, 0.28), tuple(0.75 * c for c in color), instance_class)
    stick["mu"] = stick["mu"] + np.array([0.0, 0.0, -0.21])
    return {k: np.concatenate([grip[k], stick[k]]) for k in grip}


def transform_gaussians(fields: dict, position, rotation) -> dict:
    """Apply a rigid transform (position, unit quaternion) to local-frame fields."""
    rmat = quat_to_rot(np.asarray(rotation, dtype=np.float64))
    out = dict(fields)
    out["mu"] = fields["mu"] @ rmat.T + np.asarray(position, dtype=np.float64)
    out["rot"] = quat_mul(np.asarray(rotation, dtype=np.float64)[None, :], fields["rot"])
    return out


def fields_to_set(fields: dict, timestamp: int = 0) -> GaussianSet:
    return GaussianSet(mu=fields["mu"], color=fields["color"], rot=fields["rot"],
                       scale=fields["scale"], opacity=fields["opacity"],
                       logits=fields["logits"], timestamp=timestamp)
