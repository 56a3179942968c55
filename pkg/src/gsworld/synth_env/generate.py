"""Episode generation: scripted execution, multi-view rendering, and the
on-disk dataset layout. Ground-truth future frames are exactly the renders
of the ground-truth next state, and label maps come from the rendered
instance logits, so the learning problem is well posed by construction."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..core.actions import BimanualAction, discretize_action
from ..core.gaussians import GaussianSet
from ..core.io import write_dataset_meta, write_demo_step, write_scene
from ..core.observations import IGNORE_LABEL
from ..errors import TaskScriptError
from ..rasterizer import render
from .env import EnvState, init_state, step_env
from .tasks import TaskScript, default_cameras

COVERAGE_THRESHOLD = 0.5  # minimum alpha coverage for depth / labels
MAX_CONSECUTIVE_REJECTIONS = 20


def render_views(gset: GaussianSet, cameras):
    """Render (rgb, depth, label) per camera.

    Depth is the coverage-normalized expected splat depth (zero where the
    pixel is mostly background); labels are the argmax of rendered instance
    logits with IGNORE_LABEL on background.
    """
    views = []
    masks = []
    for cam in cameras:
        out = render(gset, cam)
        coverage = 1.0 - out.transmittance
        covered = coverage > COVERAGE_THRESHOLD
        depth = np.where(covered, out.depth_map / np.maximum(coverage, 1e-12), 0.0)
        labels = np.where(covered, np.argmax(out.logit_map, axis=2), IGNORE_LABEL)
        views.append((out.rgb, depth))
        masks.append(labels.astype(np.uint8))
    return views, masks


def run_episode(script: TaskScript, episode, workspace_bounds):
    """Execute the waypoint schedule; returns (states, actions, success)."""
    state = init_state(episode.spec)
    states = [state]
    actions = []
    for wp in episode.waypoints:
        left = discretize_action(wp["left"], workspace_bounds)
        right = discretize_action(wp["right"], workspace_bounds)
        action = BimanualAction.from_left_right(left, right, script.role_assignment)
        actions.append(action)
        state = step_env(state, action)
        states.append(state)
    # terminal hold: the last step repeats the final keyframe and has no future
    actions.append(actions[-1])
    success = script.check_success(episode, state.poses)
    return states, actions, success


def generate_demos(script: TaskScript, n: int, out_dir, seed: int = 0,
                   image_size: int = 64, n_cameras: int = 3,
                   workspace_bounds=None) -> list:
    """Write `n` successful scripted episodes under `out_dir`.

    Episodes failing their success predicate are rejected and resampled;
    more than MAX_CONSECUTIVE_REJECTIONS rejections in a row aborts.
    Returns the episode lengths (step counts) written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cameras = default_cameras(image_size, n_cameras)
    if workspace_bounds is None:
        workspace_bounds = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    write_dataset_meta(out_dir, cameras, script.language, workspace_bounds)
    lengths = []
    attempt = 0
    for idx in range(n):
        rejections = 0
        while True:
            rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
            attempt += 1
            episode = script.make_episode(rng, cameras, workspace_bounds)
            states, actions, success = run_episode(script, episode, workspace_bounds)
            if success:
                break
            rejections += 1
            if rejections > MAX_CONSECUTIVE_REJECTIONS:
                raise TaskScriptError(
                    f"{script.task_id}: {rejections} consecutive failed episodes")
        demo_dir = out_dir / "demos" / f"{idx:04d}"
        for k, (state, action) in enumerate(zip(states, actions)):
            gset = state.gaussians()
            views, masks = render_views(gset, cameras)
            step_dir = demo_dir / f"step_{k}"
            write_demo_step(step_dir, views, masks, action)
            write_scene(step_dir / "scene.bgs", gset)
        lengths.append(len(states))
    return lengths
