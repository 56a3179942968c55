"""Composed transition: prediction bundles, rollouts, conservation laws."""

import numpy as np
import pytest

from gsworld.core import ArmAction, BimanualAction, LEFT_STABILIZES, RIGHT_STABILIZES
from gsworld.core.io import load_dataset
from gsworld.models import ModelConfig, ModelParams
from gsworld.rasterizer import render
from gsworld.synth_env import generate_demos, get_script
from gsworld.world_model import predict_step, rollout

CONFIG = ModelConfig(grid_size=10, feature_width=8, conv_hidden=4,
                     regressor_hidden=16, deform_hidden=16,
                     policy_latents=2, policy_dim=8, policy_layers=1)


@pytest.fixture(scope="module")
def demo_env(tmp_path_factory):
    td = tmp_path_factory.mktemp("wm_ds")
    generate_demos(get_script("push-box"), 1, td, seed=8, image_size=24)
    meta, demos = load_dataset(td)
    params = ModelParams.init(CONFIG, np.random.default_rng(0))
    return meta, demos[0], params


def test_zero_weight_dynamics_future_equals_current(demo_env):
    meta, demo, params = demo_env
    step = demo.steps[1]
    bundle = predict_step(step.observation, step.action, meta["cameras"], params)
    for cur, fut in zip(bundle.current, bundle.future):
        assert np.abs(cur.output.rgb - fut.output.rgb).max() < 1e-12
        assert np.abs(cur.output.logit_map - fut.output.logit_map).max() < 1e-12


def test_forced_shift_matches_pre_shifted_render(demo_env):
    meta, demo, params = demo_env
    step = demo.steps[1]
    shift = np.array([0.05, 0.0, 0.0])
    bundle = predict_step(step.observation, step.action, meta["cameras"], params,
                          leader_override=(shift, np.zeros(4)),
                          follower_override=(np.zeros(3), np.zeros(4)))
    theta_shifted = bundle.theta_t.detached()
    theta_shifted.mu = theta_shifted.mu + shift
    for v, cam in enumerate(meta["cameras"]):
        direct = render(theta_shifted, cam)
        assert np.abs(bundle.future[v].output.rgb - direct.rgb).max() < 1e-9


def test_role_assignment_routes_actions(demo_env):
    meta, demo, params = demo_env
    # couple the leader output to its action inputs so routing is observable
    params2 = params.copy()
    rng = np.random.default_rng(5)
    params2["leader.w3"].data[:] = rng.standard_normal(
        params2["leader.w3"].data.shape) * 0.1
    step = demo.steps[1]
    left = ArmAction(trans_bin=(10, 20, 30), rot_bins=(1, 2, 3), open=1, collide=0)
    right = ArmAction(trans_bin=(90, 80, 70), rot_bins=(60, 50, 40), open=0, collide=1)
    a1 = BimanualAction.from_left_right(left, right, LEFT_STABILIZES)
    a2 = BimanualAction.from_left_right(left, right, RIGHT_STABILIZES)
    b1 = predict_step(step.observation, a1, meta["cameras"][:1], params2,
                      follower_override=(np.zeros(3), np.zeros(4)))
    b2 = predict_step(step.observation, a2, meta["cameras"][:1], params2,
                      follower_override=(np.zeros(3), np.zeros(4)))
    # stabilizing action differs between the two routings, so the leader output must
    d1 = b1.theta_t1.arrays()[0]
    d2 = b2.theta_t1.arrays()[0]
    assert np.abs(d1 - d2).max() > 1e-9


def test_rollout_single_action_equals_predict_step(demo_env):
    meta, demo, params = demo_env
    step = demo.steps[1]
    cams = meta["cameras"][:2]
    bundles = rollout(step.observation, [step.action], cams, params)
    assert len(bundles) == 1
    direct = predict_step(step.observation, step.action, cams, params)
    np.testing.assert_allclose(bundles[0].future[0].output.rgb,
                               direct.future[0].output.rgb, atol=1e-12)


def test_rollout_two_zero_delta_steps_identical(demo_env):
    meta, demo, params = demo_env
    step = demo.steps[1]
    cams = meta["cameras"][:1]
    bundles = rollout(step.observation, [step.action, step.action], cams, params)
    assert np.abs(bundles[0].current[0].output.rgb
                  - bundles[1].future[0].output.rgb).max() < 1e-12


def test_rollout_forced_shifts_compose_additively(demo_env):
    meta, demo, params = demo_env
    step = demo.steps[1]
    cams = meta["cameras"][:1]
    shift = (np.array([0.05, 0.0, 0.0]), np.zeros(4))
    zero = (np.zeros(3), np.zeros(4))
    two = rollout(step.observation, [step.action] * 2, cams, params,
                  leader_override=shift, follower_override=zero)
    one = rollout(step.observation, [step.action], cams, params,
                  leader_override=(np.array([0.1, 0.0, 0.0]), np.zeros(4)),
                  follower_override=zero)
    # (x + 0.05) + 0.05 vs x + 0.1: equal up to one rounding of the sum
    np.testing.assert_allclose(two[1].theta_t1.arrays()[0],
                               one[0].theta_t1.arrays()[0], atol=1e-15)


def test_rollout_conserves_counts_and_inherent_fields(demo_env):
    meta, demo, params = demo_env
    params2 = params.copy()
    rng = np.random.default_rng(6)
    for name in ("leader.w3", "follower.w3"):
        params2[name].data[:] = rng.standard_normal(params2[name].data.shape) * 0.05
    step = demo.steps[1]
    bundles = rollout(step.observation, [step.action] * 4, meta["cameras"][:1], params2)
    base = bundles[0].theta_t.arrays()
    for bundle in bundles:
        out = bundle.theta_t1.arrays()
        assert out[0].shape == base[0].shape
        for field in (1, 3, 4, 5):  # color, scale, opacity, logits bit-exact
            np.testing.assert_array_equal(out[field], base[field])


def test_leader_before_follower_ordering_observable(demo_env):
    # couple only the follower to the acting action: perturbing it changes
    # theta_t1 but not the leader output theta_s
    meta, demo, params = demo_env
    params2 = params.copy()
    rng = np.random.default_rng(7)
    params2["follower.w3"].data[:] = rng.standard_normal(
        params2["follower.w3"].data.shape) * 0.1
    step = demo.steps[1]
    from gsworld.models import leader_deform, follower_deform, represent, regress_gaussians
    v = represent(step.observation, params2)
    theta = regress_gaussians(v, params2)
    a_s = step.action.stabilizing
    a1 = ArmAction(trans_bin=(10, 10, 10), rot_bins=(0, 0, 0), open=1, collide=0)
    a2 = ArmAction(trans_bin=(80, 80, 80), rot_bins=(30, 30, 30), open=0, collide=1)
    mid1 = leader_deform(theta, a_s, v, params2)
    mid2 = leader_deform(theta, a_s, v, params2)
    np.testing.assert_array_equal(mid1.arrays()[0], mid2.arrays()[0])
    out1 = follower_deform(mid1, a_s, a1, v, params2)
    out2 = follower_deform(mid2, a_s, a2, v, params2)
    assert np.abs(out1.arrays()[0] - out2.arrays()[0]).max() > 1e-9


def test_rollout_requires_actions(demo_env):
    meta, demo, params = demo_env
    with pytest.raises(ValueError):
        rollout(demo.steps[0].observation, [], meta["cameras"], params)
