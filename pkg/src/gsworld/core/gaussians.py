"""Gaussian particle types: the per-particle parameter tuple and particle sets.

Each particle carries position, RGB color, orientation (unit quaternion),
per-axis scale, opacity, and a 3-vector of unnormalized instance scores over
{0: stabilizing arm, 1: acting arm, 2: target object}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quat import normalize_quat

QUAT_NORM_TOL = 1e-6
NUM_INSTANCE_CLASSES = 3


def _as_array(field) -> np.ndarray:
    """Underlying float array of a field that may be a plain array or a Tensor."""
    data = getattr(field, "data", field)
    return np.asarray(data, dtype=np.float64)


@dataclass(frozen=True)
class Gaussian:
    """A single particle. The quaternion is normalized at construction."""

    mu: np.ndarray
    color: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity: float
    logits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64).reshape(3))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rot", normalize_quat(np.asarray(self.rot, dtype=np.float64).reshape(4)))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64).reshape(3))
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "logits", np.asarray(self.logits, dtype=np.float64).reshape(3))
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("non-finite position")
        if np.any(self.color < 0.0) or np.any(self.color > 1.0):
            raise ValueError(f"color components must lie in [0, 1], got {self.color}")
        if np.any(self.scale <= 0.0):
            raise ValueError(f"scale components must be positive, got {self.scale}")
        if not (0.0 < self.opacity <= 1.0):
            raise ValueError(f"opacity must lie in (0, 1], got {self.opacity}")


class GaussianSet:
    """An ordered collection of particles stored as per-field arrays.

    Fields may be numpy arrays or autodiff tensors; geometry consumers read
    numpy views via :meth:`arrays`. ``rot_pre_norm`` optionally carries the
    unnormalized quaternion accumulator threaded through the deformation
    chain so successive rotation deltas sum before a single normalization.
    """

    __slots__ = ("mu", "color", "rot", "scale", "opacity", "logits", "timestamp", "rot_pre_norm")

    def __init__(self, mu, color, rot, scale, opacity, logits, timestamp: int = 0,
                 rot_pre_norm=None, validate: bool = True):
        self.mu = mu
        self.color = color
        self.rot = rot
        self.scale = scale
        self.opacity = opacity
        self.logits = logits
        self.timestamp = int(timestamp)
        self.rot_pre_norm = rot_pre_norm
        if validate:
            self._validate()

    def _validate(self):
        mu, color, rot, scale, opacity, logits = self.arrays()
        n = mu.shape[0]
        shapes = {
            "mu": (mu, (n, 3)),
            "color": (color, (n, 3)),
            "rot": (rot, (n, 4)),
            "scale": (scale, (n, 3)),
            "opacity": (opacity, (n,)),
            "logits": (logits, (n, NUM_INSTANCE_CLASSES)),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")
        if n == 0:
            return
        norms = np.linalg.norm(rot, axis=1)
        if np.any(np.abs(norms - 1.0) > QUAT_NORM_TOL):
            raise ValueError("rotation quaternions must be unit norm")
        if np.any(scale <= 0.0):
            raise ValueError("scale components must be positive")
        if np.any(opacity <= 0.0) or np.any(opacity > 1.0):
            raise ValueError("opacity must lie in (0, 1]")
        if np.any(color < 0.0) or np.any(color > 1.0):
            raise ValueError("color components must lie in [0, 1]")

    @classmethod
    def from_gaussians(cls, gaussians, timestamp: int = 0) -> "GaussianSet":
        gaussians = list(gaussians)
        if gaussians:
            mu = np.stack([g.mu for g in gaussians])
            color = np.stack([g.color for g in gaussians])
            rot = np.stack([g.rot for g in gaussians])
            scale = np.stack([g.scale for g in gaussians])
            opacity = np.array([g.opacity for g in gaussians])
            logits = np.stack([g.logits for g in gaussians])
        else:
            mu = np.zeros((0, 3))
            color = np.zeros((0, 3))
            rot = np.zeros((0, 4))
            scale = np.zeros((0, 3))
            opacity = np.zeros((0,))
            logits = np.zeros((0, NUM_INSTANCE_CLASSES))
        return cls(mu, color, rot, scale, opacity, logits, timestamp)

    def arrays(self):
        """(mu, color, rot, scale, opacity, logits) as numpy float64 arrays."""
        return (
            _as_array(self.mu),
            _as_array(self.color),
            _as_array(self.rot),
            _as_array(self.scale),
            _as_array(self.opacity).reshape(-1),
            _as_array(self.logits),
        )

    def detached(self) -> "GaussianSet":
        """Copy with plain numpy fields (drops any autodiff linkage)."""
        mu, color, rot, scale, opacity, logits = self.arrays()
        return GaussianSet(mu.copy(), color.copy(), rot.copy(), scale.copy(),
                           opacity.copy(), logits.copy(), self.timestamp)

    def __len__(self) -> int:
        return _as_array(self.mu).shape[0]

    def __getitem__(self, i: int) -> Gaussian:
        mu, color, rot, scale, opacity, logits = self.arrays()
        return Gaussian(mu[i], color[i], rot[i], scale[i], opacity[i], logits[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))
