"""Observations (multi-view RGB-D + proprioception) and demonstration records."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actions import BimanualAction
from .cameras import Camera

IGNORE_LABEL = 255


@dataclass(frozen=True)
class View:
    camera: Camera
    rgb: np.ndarray    # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W), meters, >= 0

    def __post_init__(self):
        object.__setattr__(self, "rgb", np.asarray(self.rgb, dtype=np.float64))
        object.__setattr__(self, "depth", np.asarray(self.depth, dtype=np.float64))
        h, w = self.camera.height, self.camera.width
        if self.rgb.shape != (h, w, 3):
            raise ValueError(f"rgb shape {self.rgb.shape} does not match camera ({h}, {w}, 3)")
        if self.depth.shape != (h, w):
            raise ValueError(f"depth shape {self.depth.shape} does not match camera ({h}, {w})")
        if np.any(self.depth < 0):
            raise ValueError("depth values must be non-negative")


@dataclass(frozen=True)
class Observation:
    views: tuple  # of View
    proprio: np.ndarray  # (time index, left gripper open, right gripper open)

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "proprio", np.asarray(self.proprio, dtype=np.float64).reshape(-1))
        if len(self.views) == 0:
            raise ValueError("observation needs at least one view")


@dataclass(frozen=True)
class DemoStep:
    observation: Observation
    action: BimanualAction
    future_rgb: tuple | None  # per-view (H, W, 3) images at t+1; None on the last step
    masks: tuple              # per-view (H, W) uint8 label images, IGNORE_LABEL = background


@dataclass(frozen=True)
class DemoTrajectory:
    steps: tuple  # of DemoStep
    language: str

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        for k, step in enumerate(self.steps[:-1]):
            if step.future_rgb is None:
                raise ValueError(f"step {k} missing next-step images")
            if len(step.future_rgb) != len(step.observation.views):
                raise ValueError(f"step {k} future view count mismatch")
