"""Scripted expert tasks: miniature push-box, two-handed tray lift, and
item handover.

Waypoints are absolute keyframe poses. Because the environment executes
bin centers, grasp-critical waypoints are planned on the quantized lattice
(so the gripper provably lands within the grasp radius of the object), and
a carrying arm keeps its yaw constant so attached objects track their
planned positions exactly. Collision flags mark transit moves; fine moves
near objects clear them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.actions import (
    DEFAULT_WORKSPACE,
    LEFT_STABILIZES,
    RIGHT_STABILIZES,
    discretize_action,
    undiscretize_action,
    wrap_angle_deg,
)
from ..core.cameras import ring_cameras
from ..errors import TaskScriptError
from .env import Pose
from .primitives import CLASS_TARGET_OBJECT, ObjectSpec, SceneSpec

TASK_IDS = ("push-box", "lift-tray-two-handed", "handover-item")

PALETTE = (
    (0.85, 0.15, 0.15),
    (0.15, 0.75, 0.25),
    (0.85, 0.55, 0.1),
    (0.6, 0.2, 0.8),
)


@dataclass(frozen=True)
class Episode:
    spec: SceneSpec
    waypoints: tuple  # of {"left": 8-vec, "right": 8-vec}
    success_object: str
    success_fn_name: str
    success_args: tuple


@dataclass(frozen=True)
class TaskScript:
    task_id: str
    language: str
    role_assignment: str

    def make_episode(self, rng: np.random.Generator, cameras, workspace_bounds) -> Episode:
        return _MAKERS[self.task_id](self, rng, cameras, workspace_bounds)

    def check_success(self, episode: Episode, final_poses: dict) -> bool:
        pose: Pose = final_poses[episode.success_object]
        kind = episode.success_fn_name
        args = episode.success_args
        if kind == "min_x_displacement":
            return pose.position[0] - args[0] >= args[1]
        if kind == "min_height":
            return pose.position[2] >= args[0]
        if kind == "near_point":
            return np.linalg.norm(pose.position - np.asarray(args[0])) <= args[1]
        raise ValueError(f"unknown success predicate {kind}")


def get_script(task_id: str) -> TaskScript:
    if task_id not in TASK_IDS:
        raise TaskScriptError(f"unknown task {task_id!r}; available: {TASK_IDS}")
    language = {
        "push-box": "push the box to the right side",
        "lift-tray-two-handed": "lift the tray with both arms",
        "handover-item": "hand over the item to the left arm",
    }[task_id]
    role = {
        "push-box": LEFT_STABILIZES,
        "lift-tray-two-handed": RIGHT_STABILIZES,
        "handover-item": LEFT_STABILIZES,
    }[task_id]
    return TaskScript(task_id=task_id, language=language, role_assignment=role)


def default_cameras(image_size: int, n_cameras: int = 3):
    f = 1.1 * image_size
    return tuple(ring_cameras(n_cameras, radius=1.5, height=0.85,
                              target=(0.0, 0.0, 0.05), fx=f, fy=f,
                              width=image_size, img_height=image_size,
                              start_angle=0.35))


def _quantize(pos, bounds=DEFAULT_WORKSPACE):
    """Snap a position to its translation-bin center."""
    probe = np.concatenate([np.asarray(pos, dtype=np.float64), [0, 0, 0, 1, 0]])
    return undiscretize_action(discretize_action(probe, bounds), bounds)[:3]


def _pose8(pos, yaw_deg, open_flag, collide, rng=None, jitter=0.0):
    p = np.asarray(pos, dtype=np.float64).copy()
    if rng is not None and jitter > 0:
        p = p + rng.uniform(-jitter, jitter, 3)
    p = np.clip(p, -0.9, 0.9)
    return np.concatenate([p, [wrap_angle_deg(yaw_deg), 0.0, 0.0],
                           [float(open_flag), float(collide)]])


def _yaw(rng):
    return float(rng.integers(0, 72) * 5.0)


def _make_push_box(script, rng, cameras, bounds) -> Episode:
    x0 = rng.uniform(-0.28, -0.02)
    y0 = rng.uniform(-0.16, 0.16)
    z0 = rng.uniform(-0.05, 0.12)
    color = PALETTE[int(rng.integers(0, len(PALETTE)))]
    box = ObjectSpec(name="box", kind="box", size=(0.16, 0.16, 0.16),
                     position=(x0, y0, z0), color=color, instance=CLASS_TARGET_OBJECT)
    spec = SceneSpec(objects=(box,), left_base=(-0.5, 0.3, 0.3), right_base=(0.5, 0.3, 0.3),
                     cameras=tuple(cameras), seed=int(rng.integers(0, 2**31)),
                     role_assignment=script.role_assignment, workspace_bounds=bounds)
    ry = _yaw(rng)
    ly = _yaw(rng)
    grasp = _quantize((x0, y0, z0), bounds)
    hold = (x0 + 0.45, y0 + 0.06, z0 + 0.05)
    waypoints = (
        {"left": _pose8((-0.45, 0.28, 0.25), ly, 1, 1, rng, 0.012),
         "right": _pose8((x0 - 0.2, y0, z0), ry, 1, 1, rng, 0.012)},
        {"left": _pose8(hold, ly, 1, 0, rng, 0.012),
         "right": _pose8(grasp, ry, 0, 0)},
        {"left": _pose8(hold, ly + 5, 0, 0),
         "right": _pose8(grasp + np.array([0.15, 0, 0]), ry, 0, 0)},
        {"left": _pose8(hold, ly + 5, 0, 1),
         "right": _pose8(grasp + np.array([0.28, 0, 0]), ry, 0, 1)},
        {"left": _pose8(hold, ly + 10, 1, 0),
         "right": _pose8(grasp + np.array([0.28, 0, 0]), ry, 1, 0)},
        {"left": _pose8((-0.45, 0.28, 0.25), ly + 10, 1, 1, rng, 0.012),
         "right": _pose8((x0 + 0.1, y0, z0 + 0.2), ry + 10, 1, 1, rng, 0.012)},
    )
    return Episode(spec=spec, waypoints=waypoints, success_object="box",
                   success_fn_name="min_x_displacement", success_args=(x0, 0.2))


def _make_lift_tray(script, rng, cameras, bounds) -> Episode:
    x0 = rng.uniform(-0.1, 0.1)
    y0 = rng.uniform(-0.15, 0.1)
    z0 = rng.uniform(-0.1, 0.0)
    color = PALETTE[int(rng.integers(0, len(PALETTE)))]
    tray = ObjectSpec(name="tray", kind="box", size=(0.3, 0.18, 0.04),
                      position=(x0, y0, z0), color=color, instance=CLASS_TARGET_OBJECT)
    spec = SceneSpec(objects=(tray,), left_base=(-0.5, 0.3, 0.3), right_base=(0.5, 0.3, 0.3),
                     cameras=tuple(cameras), seed=int(rng.integers(0, 2**31)),
                     role_assignment=script.role_assignment, workspace_bounds=bounds)
    ly, ry = _yaw(rng), _yaw(rng)
    center = _quantize((x0, y0, z0), bounds)
    # offsets stay inside the center's translation bin so both grips execute
    # at the quantized center, keeping the grasp-radius bound provable
    lg = center + np.array([-0.005, 0.0, 0.0])
    rg = center + np.array([0.005, 0.0, 0.0])
    waypoints = (
        {"left": _pose8(lg + [0, 0, 0.18], ly, 1, 1, rng, 0.012),
         "right": _pose8(rg + [0, 0, 0.18], ry, 1, 1, rng, 0.012)},
        {"left": _pose8(lg, ly, 1, 0),
         "right": _pose8(rg, ry, 1, 0)},
        {"left": _pose8(lg, ly, 0, 0),
         "right": _pose8(rg, ry, 0, 0)},
        {"left": _pose8(lg + [0, 0, 0.16], ly, 0, 0),
         "right": _pose8(rg + [0, 0, 0.16], ry, 0, 0)},
        {"left": _pose8(lg + [0, 0, 0.3], ly, 0, 1),
         "right": _pose8(rg + [0, 0, 0.3], ry, 0, 1)},
    )
    return Episode(spec=spec, waypoints=waypoints, success_object="tray",
                   success_fn_name="min_height", success_args=(z0 + 0.22,))


def _make_handover(script, rng, cameras, bounds) -> Episode:
    x0 = rng.uniform(0.15, 0.32)
    y0 = rng.uniform(-0.2, 0.1)
    z0 = rng.uniform(0.0, 0.14)
    color = PALETTE[int(rng.integers(0, len(PALETTE)))]
    item = ObjectSpec(name="item", kind="box", size=(0.09, 0.09, 0.09),
                      position=(x0, y0, z0), color=color, instance=CLASS_TARGET_OBJECT)
    spec = SceneSpec(objects=(item,), left_base=(-0.5, 0.3, 0.3), right_base=(0.5, 0.3, 0.3),
                     cameras=tuple(cameras), seed=int(rng.integers(0, 2**31)),
                     role_assignment=script.role_assignment, workspace_bounds=bounds)
    ly, ry = _yaw(rng), _yaw(rng)
    grasp = _quantize((x0, y0, z0), bounds)
    rel = np.array([x0, y0, z0]) - grasp      # residual carried by the attachment
    meet = _quantize((rng.uniform(-0.06, 0.06), rng.uniform(-0.1, 0.1), 0.26), bounds)
    item_at_meet = meet + rel                 # yaw constant while carrying
    receive = _quantize(item_at_meet, bounds)
    goal = _quantize(np.array([-0.36, -0.12, 0.12]) + rng.uniform(-0.02, 0.02, 3), bounds)
    waypoints = (
        {"left": _pose8((-0.42, 0.22, 0.3), ly, 1, 1, rng, 0.012),
         "right": _pose8((x0, y0, z0 + 0.14), ry, 1, 1, rng, 0.012)},
        {"left": _pose8((meet[0] - 0.18, meet[1], meet[2]), ly, 1, 1, rng, 0.012),
         "right": _pose8(grasp, ry, 0, 0)},
        {"left": _pose8((meet[0] - 0.07, meet[1], meet[2]), ly + 5, 1, 0),
         "right": _pose8(meet, ry, 0, 1)},
        {"left": _pose8(receive, ly + 5, 0, 0),
         "right": _pose8(meet, ry, 1, 0)},
        {"left": _pose8(goal, ly, 0, 1),
         "right": _pose8((x0, y0 + 0.15, z0 + 0.2), ry + 10, 1, 1, rng, 0.012)},
        {"left": _pose8(goal, ly, 0, 0),
         "right": _pose8((0.45, 0.25, 0.3), ry + 15, 1, 1, rng, 0.012)},
    )
    return Episode(spec=spec, waypoints=waypoints, success_object="item",
                   success_fn_name="near_point", success_args=(tuple(goal), 0.1))


_MAKERS = {
    "push-box": _make_push_box,
    "lift-tray-two-handed": _make_lift_tray,
    "handover-item": _make_handover,
}
