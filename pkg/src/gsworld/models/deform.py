"""Leader and follower deformation models.

Both are shared-weight per-particle perceptrons that predict SE(3)-style
deltas (position shift, additive quaternion delta) while color, scale,
opacity, and instance logits pass through untouched. The leader is
conditioned on the stabilizing arm's action; the follower on both actions
and the leader's output state.

Rotation deltas accumulate before a single normalization: the leader stows
the unnormalized sum on `rot_pre_norm`, which the follower extends, so the
composed update equals one normalization of rot + dr_s + dr_a. The
"compose" mode instead applies identity-biased delta quaternions by Hamilton
product.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..core.actions import ArmAction, action_feature_vector
from ..core.gaussians import GaussianSet
from .encoder import VolumetricFeature
from .params import ModelParams

IDENTITY_QUAT_ROW = np.array([1.0, 0.0, 0.0, 0.0])


def _quat_mul_fwd(a, b):
    aw, ax, ay, az = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bw, bx, by, bz = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=1)


def _quat_mul_bwd(inputs, outputs, upstream):
    a, b = inputs
    (g,) = (upstream[0],)
    gw, gx, gy, gz = g[:, 0], g[:, 1], g[:, 2], g[:, 3]
    aw, ax, ay, az = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bw, bx, by, bz = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    ga = np.stack([
        gw * bw + gx * bx + gy * by + gz * bz,
        -gw * bx + gx * bw - gy * bz + gz * by,
        -gw * by + gx * bz + gy * bw - gz * bx,
        -gw * bz - gx * by + gy * bx + gz * bw,
    ], axis=1)
    gb = np.stack([
        gw * aw + gx * ax + gy * ay + gz * az,
        -gw * ax + gx * aw + gy * az - gz * ay,
        -gw * ay - gx * az + gy * aw + gz * ax,
        -gw * az + gx * ay - gy * ax + gz * aw,
    ], axis=1)
    return ga, gb


quat_mul_rows = ad.register_custom(_quat_mul_fwd, _quat_mul_bwd)


def _as_field_tensor(field) -> ad.Tensor:
    return field if isinstance(field, ad.Tensor) else ad.constant(field)


def _deform_mlp(prefix: str, x: ad.Tensor, params: ModelParams) -> ad.Tensor:
    h = ad.relu(ad.add_rowvec(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    h = ad.relu(ad.add_rowvec(ad.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"]))
    return ad.add_rowvec(ad.matmul(h, params[f"{prefix}.w3"]), params[f"{prefix}.b3"])


def _propagate(prefix: str, theta: GaussianSet, actions, v: VolumetricFeature,
               params: ModelParams, is_follower: bool, delta_override=None) -> GaussianSet:
    config = params.config
    n = len(theta)
    mu = _as_field_tensor(theta.mu)
    rot = _as_field_tensor(theta.rot)
    logits = _as_field_tensor(theta.logits)

    if delta_override is not None:
        dmu_arr, drot_arr = delta_override
        dmu = ad.constant(np.broadcast_to(np.asarray(dmu_arr, dtype=np.float64), (n, 3)).copy())
        drot = ad.constant(np.broadcast_to(np.asarray(drot_arr, dtype=np.float64), (n, 4)).copy())
    else:
        act = np.concatenate([action_feature_vector(a, config.workspace_bounds)
                              for a in actions])
        act_tile = ad.constant(np.tile(act, (n, 1)))
        feat = ad.trilinear(v.grid, v.world_to_grid(mu))
        x = ad.concat([mu, rot, logits, act_tile, feat], axis=1)
        out = _deform_mlp(prefix, x, params)
        dmu = ad.slice_axis(out, 0, 3, axis=1)
        drot = ad.slice_axis(out, 3, 7, axis=1)

    mu_new = ad.add(mu, dmu)
    if config.rot_update == "compose":
        q_delta = ad.normalize_rows(ad.add_rowvec(drot, ad.constant(IDENTITY_QUAT_ROW)))
        rot_new = ad.normalize_rows(quat_mul_rows(q_delta, rot))
        accum = None
    else:
        base = theta.rot_pre_norm if (is_follower and theta.rot_pre_norm is not None) else rot
        accum = ad.add(_as_field_tensor(base), drot)
        rot_new = ad.normalize_rows(accum)

    out_set = GaussianSet(mu=mu_new, color=theta.color, rot=rot_new, scale=theta.scale,
                          opacity=theta.opacity, logits=theta.logits,
                          timestamp=theta.timestamp + (0 if is_follower else 1),
                          rot_pre_norm=None if is_follower else accum,
                          validate=False)
    if len(out_set) != n:
        raise AssertionError("deformation changed the particle count")
    return out_set


def leader_deform(theta: GaussianSet, a_s: ArmAction, v: VolumetricFeature,
                  params: ModelParams, delta_override=None) -> GaussianSet:
    """Apply the stabilizing arm's predicted deltas; starts a fresh rotation
    accumulator on the output."""
    return _propagate("leader", theta, (a_s,), v, params,
                      is_follower=False, delta_override=delta_override)


def follower_deform(theta_s: GaussianSet, a_s: ArmAction, a_a: ArmAction,
                    v: VolumetricFeature, params: ModelParams,
                    delta_override=None) -> GaussianSet:
    """Apply the acting arm's consequences on top of the leader output."""
    return _propagate("follower", theta_s, (a_s, a_a), v, params,
                      is_follower=True, delta_override=delta_override)
