"""Deterministic two-arm world: rigid instances, proximity grasping, exact
SE(3) propagation, and rendering-backed observations."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..core.actions import (
    BimanualAction,
    LEFT_STABILIZES,
    undiscretize_action,
)
from ..core.gaussians import GaussianSet
from ..core.quat import euler_zyx_deg_to_quat, quat_mul, quat_to_rot
from .primitives import (
    CLASS_ACTING_ARM,
    CLASS_STABILIZING_ARM,
    SceneSpec,
    arm_proxy_gaussians,
    box_gaussians,
    fields_to_set,
    sphere_gaussians,
    transform_gaussians,
)

GRASP_RADIUS = 0.03  # meters from gripper frame to object center
ARM_COLORS = {"left": (0.2, 0.4, 0.9), "right": (0.9, 0.7, 0.1)}
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    rotation: np.ndarray  # unit quaternion

    def compose(self, other: "Pose") -> "Pose":
        rmat = quat_to_rot(self.rotation)
        return Pose(position=self.position + rmat @ other.position,
                    rotation=quat_mul(self.rotation, other.rotation))

    def inverse(self) -> "Pose":
        conj = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        rinv = quat_to_rot(conj)
        return Pose(position=-(rinv @ self.position), rotation=conj)


@dataclass(frozen=True)
class EnvState:
    spec: SceneSpec
    canonical: dict          # name -> local-frame field dict
    poses: dict              # name -> Pose
    attachments: dict        # object name -> ("left"|"right", relative Pose)
    gripper_open: dict       # "left"/"right" -> int
    timestamp: int

    def instance_names(self):
        return list(self.canonical)

    def gaussians(self) -> GaussianSet:
        parts = {k: [] for k in ("mu", "color", "rot", "scale", "opacity", "logits")}
        for name in self.canonical:
            pose = self.poses[name]
            fields = transform_gaussians(self.canonical[name], pose.position, pose.rotation)
            for k in parts:
                parts[k].append(fields[k])
        merged = {k: np.concatenate(v) for k, v in parts.items()}
        return fields_to_set(merged, timestamp=self.timestamp)


def build_scene(spec: SceneSpec) -> GaussianSet:
    """Ground-truth Gaussians of the initial scene (arms at their bases)."""
    return init_state(spec).gaussians()


def init_state(spec: SceneSpec) -> EnvState:
    canonical = {}
    poses = {}
    arm_classes = {
        "left": CLASS_STABILIZING_ARM if spec.role_assignment == LEFT_STABILIZES
        else CLASS_ACTING_ARM,
    }
    arm_classes["right"] = CLASS_ACTING_ARM if arm_classes["left"] == CLASS_STABILIZING_ARM \
        else CLASS_STABILIZING_ARM
    for arm in ("left", "right"):
        canonical[f"arm_{arm}"] = arm_proxy_gaussians(arm_classes[arm], ARM_COLORS[arm])
        base = np.asarray(spec.left_base if arm == "left" else spec.right_base,
                          dtype=np.float64)
        poses[f"arm_{arm}"] = Pose(position=base, rotation=IDENTITY.copy())
    for obj in spec.objects:
        if obj.kind == "box":
            canonical[obj.name] = box_gaussians(obj.size, obj.color, obj.instance)
        elif obj.kind == "sphere":
            canonical[obj.name] = sphere_gaussians(obj.size[0], obj.color, obj.instance)
        else:
            raise ValueError(f"unknown primitive kind {obj.kind!r}")
        poses[obj.name] = Pose(position=np.asarray(obj.position, dtype=np.float64),
                               rotation=np.asarray(obj.rotation, dtype=np.float64))
    return EnvState(spec=spec, canonical=canonical, poses=poses, attachments={},
                    gripper_open={"left": 1, "right": 1}, timestamp=0)


def _arm_target(action, workspace_bounds) -> Pose:
    vec = undiscretize_action(action, workspace_bounds)
    return Pose(position=vec[:3], rotation=euler_zyx_deg_to_quat(vec[3:6]))


def step_env(state: EnvState, action: BimanualAction) -> EnvState:
    """Teleport arms to the action poses and propagate attachments.

    Grasping: an open->closed transition with the new gripper frame within
    GRASP_RADIUS of an unattached object's center attaches that object; the
    object then follows its gripper rigidly. Opening the gripper releases.
    """
    bounds = state.spec.workspace_bounds
    arm_actions = {"left": action.left, "right": action.right}
    new_poses = dict(state.poses)
    for arm, act in arm_actions.items():
        new_poses[f"arm_{arm}"] = _arm_target(act, bounds)

    attachments = dict(state.attachments)
    gripper_open = dict(state.gripper_open)
    # releases first so a same-step handover can re-grasp deterministically
    for arm, act in arm_actions.items():
        if act.open == 1:
            attachments = {obj: (holder, rel) for obj, (holder, rel) in attachments.items()
                           if holder != arm}
    for arm in ("left", "right"):
        act = arm_actions[arm]
        closed_now = act.open == 0
        was_open = state.gripper_open[arm] == 1
        if closed_now and was_open:
            grip = new_poses[f"arm_{arm}"]
            for obj in state.spec.objects:
                if obj.name in attachments:
                    continue
                dist = np.linalg.norm(state.poses[obj.name].position - grip.position)
                if dist <= GRASP_RADIUS:
                    rel = grip.inverse().compose(state.poses[obj.name])
                    attachments[obj.name] = (arm, rel)
        gripper_open[arm] = act.open

    for obj_name, (arm, rel) in attachments.items():
        new_poses[obj_name] = new_poses[f"arm_{arm}"].compose(rel)

    return EnvState(spec=state.spec, canonical=state.canonical, poses=new_poses,
                    attachments=attachments, gripper_open=gripper_open,
                    timestamp=state.timestamp + 1)
