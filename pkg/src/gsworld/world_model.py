"""Single-step future prediction composing the full pipeline:

representation -> Gaussian regression -> leader deformation (stabilizing
arm) -> follower deformation (acting arm) -> rendering of the current and
predicted scenes. `rollout` re-applies the learned transition to the evolving
particle set while reusing the original volumetric features (the scene is
never re-observed from predicted states).
"""

from __future__ import annotations

from dataclasses import dataclass

from .core.actions import BimanualAction
from .core.gaussians import GaussianSet
from .core.observations import Observation
from .models import ModelParams, VolumetricFeature, follower_deform, leader_deform, represent, regress_gaussians
from .rasterizer.diffop import render_diff
from .rasterizer.projection import DEFAULT_RASTER_CONFIG
from .rasterizer.rasterize import RenderOutput


@dataclass
class RenderHandle:
    """A render plus the tape tensors for its differentiable channels."""
    output: RenderOutput
    rgb: object      # autodiff.Tensor
    logit: object    # autodiff.Tensor


@dataclass
class PredictionBundle:
    current: list          # per-camera RenderHandle at t
    future: list           # per-camera RenderHandle at t+1
    theta_t: GaussianSet
    theta_t1: GaussianSet
    volumetric: VolumetricFeature

    @property
    def current_render(self):
        return [h.output for h in self.current]

    @property
    def future_render(self):
        return [h.output for h in self.future]


def _render_all(theta: GaussianSet, cams, raster_config):
    handles = []
    for cam in cams:
        out, rgb_t, logit_t = render_diff(theta, cam, raster_config)
        handles.append(RenderHandle(output=out, rgb=rgb_t, logit=logit_t))
    return handles


def predict_step(obs: Observation, action: BimanualAction, cams,
                 params: ModelParams, raster_config=DEFAULT_RASTER_CONFIG,
                 leader_override=None, follower_override=None,
                 pooled_cache=None) -> PredictionBundle:
    """Run one world-model transition and render both scene states.

    The stabilizing/acting actions are taken from the BimanualAction's role
    routing. The `*_override` hooks force constant deltas in the deformation
    heads (testing aid).
    """
    v = represent(obs, params, pooled_cache=pooled_cache)
    theta_t = regress_gaussians(v, params)
    theta_s = leader_deform(theta_t, action.stabilizing, v, params,
                            delta_override=leader_override)
    theta_t1 = follower_deform(theta_s, action.stabilizing, action.acting, v, params,
                               delta_override=follower_override)
    if len(theta_t1) != len(theta_t):
        raise AssertionError("propagation changed the particle count")
    return PredictionBundle(
        current=_render_all(theta_t, cams, raster_config),
        future=_render_all(theta_t1, cams, raster_config),
        theta_t=theta_t,
        theta_t1=theta_t1,
        volumetric=v,
    )


def propagate(theta: GaussianSet, action: BimanualAction, v: VolumetricFeature,
              params: ModelParams, leader_override=None, follower_override=None) -> GaussianSet:
    """One leader+follower transition without rendering."""
    theta_s = leader_deform(theta, action.stabilizing, v, params,
                            delta_override=leader_override)
    return follower_deform(theta_s, action.stabilizing, action.acting, v, params,
                           delta_override=follower_override)


def rollout(obs: Observation, actions, cams, params: ModelParams,
            raster_config=DEFAULT_RASTER_CONFIG,
            leader_override=None, follower_override=None):
    """Apply the transition repeatedly from one observation.

    Returns one PredictionBundle per action; bundle k predicts the state
    after actions[0..k]. Volumetric features are computed once from the
    real observation and reused.
    """
    actions = list(actions)
    if not actions:
        raise ValueError("rollout requires at least one action")
    v = represent(obs, params)
    theta = regress_gaussians(v, params)
    theta_renders = _render_all(theta, cams, raster_config)
    bundles = []
    current = theta
    current_renders = theta_renders
    for action in actions:
        nxt = propagate(current, action, v, params,
                        leader_override=leader_override,
                        follower_override=follower_override)
        nxt_renders = _render_all(nxt, cams, raster_config)
        bundles.append(PredictionBundle(current=current_renders, future=nxt_renders,
                                        theta_t=current, theta_t1=nxt, volumetric=v))
        current = nxt
        current_renders = nxt_renders
    return bundles
