"""Discretized per-arm actions and the bimanual action pair.

An arm action is a keyframe end-effector target: 100 position bins per axis
over the workspace box, 72 rotation bins per Euler axis (5 degree steps, ZYX
composition), and binary openness / collision-avoidance flags.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import OutOfWorkspaceError

NUM_TRANS_BINS = 100
NUM_ROT_BINS = 72  # 360 / 5
ROT_BIN_DEG = 360.0 / NUM_ROT_BINS

LEFT_STABILIZES = "left-stabilizes"
RIGHT_STABILIZES = "right-stabilizes"
ROLE_VALUES = (LEFT_STABILIZES, RIGHT_STABILIZES)

DEFAULT_WORKSPACE = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])


@dataclass(frozen=True)
class ArmAction:
    trans_bin: tuple  # 3 ints in [0, 100)
    rot_bins: tuple   # 3 ints in [0, 72)
    open: int         # {0, 1}
    collide: int      # {0, 1}

    def __post_init__(self):
        object.__setattr__(self, "trans_bin", tuple(int(v) for v in self.trans_bin))
        object.__setattr__(self, "rot_bins", tuple(int(v) for v in self.rot_bins))
        object.__setattr__(self, "open", int(self.open))
        object.__setattr__(self, "collide", int(self.collide))
        if len(self.trans_bin) != 3 or any(not 0 <= b < NUM_TRANS_BINS for b in self.trans_bin):
            raise ValueError(f"translation bins out of range: {self.trans_bin}")
        if len(self.rot_bins) != 3 or any(not 0 <= b < NUM_ROT_BINS for b in self.rot_bins):
            raise ValueError(f"rotation bins out of range: {self.rot_bins}")
        if self.open not in (0, 1) or self.collide not in (0, 1):
            raise ValueError("open/collide flags must be binary")


@dataclass(frozen=True)
class BimanualAction:
    stabilizing: ArmAction
    acting: ArmAction
    role_assignment: str  # which physical arm is stabilizing this step

    def __post_init__(self):
        if self.role_assignment not in ROLE_VALUES:
            raise ValueError(f"role_assignment must be one of {ROLE_VALUES}, "
                             f"got {self.role_assignment!r}")

    @classmethod
    def from_left_right(cls, left: ArmAction, right: ArmAction, role_assignment: str):
        if role_assignment == LEFT_STABILIZES:
            return cls(stabilizing=left, acting=right, role_assignment=role_assignment)
        return cls(stabilizing=right, acting=left, role_assignment=role_assignment)

    @property
    def left(self) -> ArmAction:
        return self.stabilizing if self.role_assignment == LEFT_STABILIZES else self.acting

    @property
    def right(self) -> ArmAction:
        return self.acting if self.role_assignment == LEFT_STABILIZES else self.stabilizing


def discretize_action(continuous_pose, workspace_bounds=DEFAULT_WORKSPACE) -> ArmAction:
    """Bin a continuous (pos3, euler3 degrees, open, collide) 8-vector.

    Position maps to floor(100 * (p - lo) / (hi - lo)) per axis, clamped to
    [0, 99]; Euler angles (in [0, 360)) to floor(angle / 5); flags threshold
    at 0.5. Raises OutOfWorkspaceError for positions outside the box.
    """
    pose = np.asarray(continuous_pose, dtype=np.float64).reshape(8)
    lo, hi = np.asarray(workspace_bounds, dtype=np.float64)
    pos, euler = pose[:3], pose[3:6]
    if np.any(pos < lo) or np.any(pos > hi):
        raise OutOfWorkspaceError(f"position {pos} outside workspace [{lo}, {hi}]")
    if np.any(euler < 0.0) or np.any(euler >= 360.0):
        raise ValueError(f"Euler angles must lie in [0, 360), got {euler}")
    tb = np.floor(NUM_TRANS_BINS * (pos - lo) / (hi - lo)).astype(int)
    tb = np.clip(tb, 0, NUM_TRANS_BINS - 1)
    rb = np.floor(euler / ROT_BIN_DEG).astype(int)
    return ArmAction(trans_bin=tuple(tb), rot_bins=tuple(rb),
                     open=int(pose[6] > 0.5), collide=int(pose[7] > 0.5))


def undiscretize_action(action: ArmAction, workspace_bounds=DEFAULT_WORKSPACE) -> np.ndarray:
    """Bin centers as a continuous 8-vector (pos3, euler3 degrees, open, collide)."""
    lo, hi = np.asarray(workspace_bounds, dtype=np.float64)
    pos = lo + (np.asarray(action.trans_bin) + 0.5) * (hi - lo) / NUM_TRANS_BINS
    euler = (np.asarray(action.rot_bins) + 0.5) * ROT_BIN_DEG
    return np.concatenate([pos, euler, [float(action.open)], [float(action.collide)]])


def action_feature_vector(action: ArmAction, workspace_bounds=DEFAULT_WORKSPACE) -> np.ndarray:
    """Network-input encoding: bin-center pose with angles rescaled to [-1, 1)."""
    v = undiscretize_action(action, workspace_bounds)
    v[3:6] = v[3:6] / 180.0 - 1.0
    return v


def wrap_angle_deg(angle) -> np.ndarray:
    """Wrap angle(s) into [0, 360)."""
    return np.mod(np.asarray(angle, dtype=np.float64), 360.0)
