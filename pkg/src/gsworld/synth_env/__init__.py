"""Deterministic synthetic two-arm environment and scripted demo generation."""

from .env import EnvState, GRASP_RADIUS, Pose, build_scene, init_state, step_env
from .generate import generate_demos, render_views, run_episode
from .primitives import (
    CLASS_ACTING_ARM,
    CLASS_STABILIZING_ARM,
    CLASS_TARGET_OBJECT,
    ObjectSpec,
    SceneSpec,
)
from .tasks import TASK_IDS, TaskScript, default_cameras, get_script
