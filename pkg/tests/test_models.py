"""Encoder, Gaussian regressor, leader/follower deformation, policy head."""

import numpy as np
import pytest

from gsworld import autodiff as ad
from gsworld.core import ArmAction, GaussianSet, look_at_camera, normalize_quat
from gsworld.core.cameras import unproject_depth
from gsworld.core.observations import Observation, View
from gsworld.errors import DegenerateObservationError, EmptySceneError
from gsworld.models import (
    ModelConfig,
    ModelParams,
    decode_actions,
    follower_deform,
    leader_deform,
    pool_observation,
    regress_gaussians,
    represent,
)
from gsworld.models.encoder import VolumetricFeature
from gsworld.models.regressor import occupied_cells

SMALL = ModelConfig(grid_size=8, feature_width=8, conv_hidden=4,
                    regressor_hidden=16, deform_hidden=16,
                    policy_latents=4, policy_dim=16, policy_layers=2)


def small_params(seed=0, config=SMALL):
    return ModelParams.init(config, np.random.default_rng(seed))


def camera(size=24, eye=(0, 0, -1.6)):
    return look_at_camera(eye, [0, 0, 0.4], [0, 1, 0], 1.2 * size, 1.2 * size, size, size)


def observation_with_point(world_depth=1.6, rgb_value=(1.0, 0.2, 0.2), size=24,
                           pixel=(12, 12), n_views=1, proprio=(0.0, 1.0, 1.0)):
    views = []
    for v in range(n_views):
        cam = camera(size, eye=(0.1 * v, 0, -1.6))
        rgb = np.zeros((size, size, 3))
        depth = np.zeros((size, size))
        rgb[pixel] = rgb_value
        depth[pixel] = world_depth
        views.append(View(camera=cam, rgb=rgb, depth=depth))
    return Observation(views=tuple(views), proprio=np.array(proprio))


def empty_observation(size=16):
    cam = camera(size)
    return Observation(views=(View(camera=cam, rgb=np.zeros((size, size, 3)),
                                   depth=np.zeros((size, size))),),
                       proprio=np.array([0.0, 1.0, 1.0]))


def random_theta(rng, n, as_tensors=False):
    fields = dict(
        mu=rng.uniform(-0.5, 0.5, (n, 3)),
        color=rng.uniform(0, 1, (n, 3)),
        rot=normalize_quat(rng.standard_normal((n, 4))),
        scale=rng.uniform(0.01, 0.1, (n, 3)),
        opacity=rng.uniform(0.1, 1.0, n),
        logits=rng.standard_normal((n, 3)),
    )
    if as_tensors:
        fields = {k: ad.constant(v) for k, v in fields.items()}
    return GaussianSet(**fields, validate=False)


def random_volumetric(rng, config=SMALL):
    g = config.grid_size
    occupancy = (rng.uniform(size=(g, g, g)) < 0.05).astype(float) * 3.0
    grid = ad.constant(rng.standard_normal((g, g, g, config.feature_width)))
    return VolumetricFeature(grid=grid, occupancy=occupancy,
                             workspace_bounds=config.workspace_bounds)


def arm_action(rng=None, bins=(50, 50, 50)):
    if rng is None:
        return ArmAction(trans_bin=tuple(bins), rot_bins=(0, 0, 0), open=1, collide=0)
    return ArmAction(trans_bin=tuple(rng.integers(0, 100, 3)),
                     rot_bins=tuple(rng.integers(0, 72, 3)),
                     open=int(rng.integers(0, 2)), collide=int(rng.integers(0, 2)))


class TestRepresent:
    def test_empty_depth_zero_occupancy_when_allowed(self):
        params = small_params()
        v = represent(empty_observation(), params, allow_empty=True)
        assert np.all(v.occupancy == 0.0)

    def test_degenerate_observation_raises(self):
        params = small_params()
        with pytest.raises(DegenerateObservationError):
            represent(empty_observation(), params)

    def test_single_point_locality(self):
        # one colored pixel unprojects to one cell; two 3x3x3 convs give a
        # support radius of 2 cells. Zero proprioception isolates the
        # occupancy-driven component (proprio channels broadcast everywhere).
        params = small_params()
        obs = observation_with_point(proprio=(0.0, 0.0, 0.0))
        pooled, counts = pool_observation(obs, SMALL)
        assert counts.sum() == 1.0
        occupied = np.argwhere(counts > 0)[0]
        v = represent(obs, params)
        energy = np.abs(v.grid.data).sum(axis=3)
        active = np.argwhere(energy > 1e-12)
        assert len(active) > 0
        dist = np.abs(active - occupied).max()
        assert dist <= 2

    def test_view_permutation_invariance(self):
        params = small_params()
        obs = observation_with_point(n_views=3)
        v1 = represent(obs, params)
        obs2 = Observation(views=tuple(reversed(obs.views)), proprio=obs.proprio)
        v2 = represent(obs2, params)
        np.testing.assert_allclose(v1.grid.data, v2.grid.data, atol=1e-12)
        np.testing.assert_allclose(v1.occupancy, v2.occupancy, atol=0)

    def test_proprio_changes_features(self):
        params = small_params()
        obs1 = observation_with_point(proprio=(0.0, 1.0, 1.0))
        obs2 = observation_with_point(proprio=(0.5, 0.0, 1.0))
        v1 = represent(obs1, params)
        v2 = represent(obs2, params)
        assert np.abs(v1.grid.data - v2.grid.data).max() > 1e-9


class TestRegressor:
    def test_zero_final_layer_gives_activation_defaults(self):
        params = small_params()
        params["reg.w2"].data[:] = 0.0
        params["reg.b2"].data[:] = 0.0
        rng = np.random.default_rng(1)
        v = random_volumetric(rng)
        theta = regress_gaussians(v, params)
        occ = occupied_cells(v)
        centers = v.cell_centers(occ)
        mu, color, rot, scale, opacity, logits = theta.arrays()
        np.testing.assert_allclose(mu, centers, atol=1e-12)
        np.testing.assert_allclose(color, 0.5, atol=1e-12)
        np.testing.assert_allclose(opacity, 0.5, atol=1e-12)
        np.testing.assert_allclose(rot, np.tile([1, 0, 0, 0], (len(theta), 1)), atol=1e-12)
        np.testing.assert_allclose(logits, 0.0, atol=1e-12)

    def test_single_occupied_cell_gives_one_gaussian(self):
        params = small_params()
        g = SMALL.grid_size
        occupancy = np.zeros((g, g, g))
        occupancy[3, 4, 5] = 2.0
        v = VolumetricFeature(grid=ad.constant(np.zeros((g, g, g, SMALL.feature_width))),
                              occupancy=occupancy, workspace_bounds=SMALL.workspace_bounds)
        theta = regress_gaussians(v, params)
        assert len(theta) == 1

    def test_empty_scene_raises(self):
        params = small_params()
        g = SMALL.grid_size
        v = VolumetricFeature(grid=ad.constant(np.zeros((g, g, g, SMALL.feature_width))),
                              occupancy=np.zeros((g, g, g)),
                              workspace_bounds=SMALL.workspace_bounds)
        with pytest.raises(EmptySceneError):
            regress_gaussians(v, params)

    def test_output_satisfies_invariants_random_sweep(self):
        # 1000 random parameter draws; outputs must always construct validly
        rng = np.random.default_rng(2)
        v = random_volumetric(rng)
        for trial in range(1000):
            params = ModelParams.init(SMALL, np.random.default_rng(trial))
            theta = regress_gaussians(v, params)
            mu, color, rot, scale, opacity, logits = theta.arrays()
            GaussianSet(mu, color, rot, scale, opacity, logits)  # validates
            assert np.all(scale >= SMALL.scale_floor)


class TestDeform:
    def test_zero_weight_head_is_identity(self):
        params = small_params()
        rng = np.random.default_rng(3)
        theta = random_theta(rng, 20)
        v = random_volumetric(rng)
        out = leader_deform(theta, arm_action(), v, params)
        np.testing.assert_array_equal(out.arrays()[0], theta.arrays()[0])  # mu
        # rot renormalized from an already-unit quaternion: 1 ulp
        np.testing.assert_allclose(out.arrays()[2], theta.arrays()[2], atol=1e-15)

    def test_forced_delta_shifts_all_particles(self):
        params = small_params()
        rng = np.random.default_rng(4)
        theta = random_theta(rng, 15)
        v = random_volumetric(rng)
        out = leader_deform(theta, arm_action(), v, params,
                            delta_override=(np.array([0.1, 0.0, 0.0]), np.zeros(4)))
        np.testing.assert_allclose(out.arrays()[0], theta.arrays()[0] + [0.1, 0, 0],
                                   atol=1e-15)

    def test_inherent_fields_bit_identical_sweep(self):
        rng = np.random.default_rng(5)
        params = small_params(seed=9)
        # give the deformation heads nonzero output weights
        params["leader.w3"].data[:] = rng.standard_normal(
            params["leader.w3"].data.shape) * 0.1
        params["follower.w3"].data[:] = rng.standard_normal(
            params["follower.w3"].data.shape) * 0.1
        for trial in range(1000):
            trng = np.random.default_rng(trial + 10_000)
            theta = random_theta(trng, 8)
            v = random_volumetric(trng)
            a_s, a_a = arm_action(trng), arm_action(trng)
            mid = leader_deform(theta, a_s, v, params)
            out = follower_deform(mid, a_s, a_a, v, params)
            assert len(out) == len(theta)
            for field in (1, 3, 4, 5):  # color, scale, opacity, logits
                np.testing.assert_array_equal(out.arrays()[field], theta.arrays()[field])

    def test_follower_zero_weight_equals_leader(self):
        rng = np.random.default_rng(6)
        params = small_params(seed=11)
        params["leader.w3"].data[:] = rng.standard_normal(
            params["leader.w3"].data.shape) * 0.1
        theta = random_theta(rng, 10)
        v = random_volumetric(rng)
        a_s, a_a = arm_action(rng), arm_action(rng)
        mid = leader_deform(theta, a_s, v, params)
        out = follower_deform(mid, a_s, a_a, v, params)
        np.testing.assert_array_equal(out.arrays()[0], mid.arrays()[0])
        np.testing.assert_allclose(out.arrays()[2], mid.arrays()[2], atol=1e-15)

    def test_eq4_composition_position_exact_rotation_single_normalization(self):
        params = small_params()
        rng = np.random.default_rng(7)
        theta = random_theta(rng, 25)
        v = random_volumetric(rng)
        d_mu_s = np.array([0.1, 0.0, 0.0])
        d_mu_a = np.array([0.0, 0.2, 0.0])
        d_rot_s = np.array([0.05, 0.1, 0.0, -0.04])
        d_rot_a = np.array([-0.02, 0.0, 0.08, 0.05])
        mid = leader_deform(theta, arm_action(), v, params,
                            delta_override=(d_mu_s, d_rot_s))
        out = follower_deform(mid, arm_action(), arm_action(), v, params,
                              delta_override=(d_mu_a, d_rot_a))
        np.testing.assert_array_equal(out.arrays()[0],
                                      theta.arrays()[0] + d_mu_s + d_mu_a)
        summed = theta.arrays()[2] + d_rot_s + d_rot_a
        summed /= np.linalg.norm(summed, axis=1, keepdims=True)
        assert np.abs(out.arrays()[2] - summed).max() < 1e-9

    def test_leader_three_two_on_position_example(self):
        params = small_params()
        theta = GaussianSet(mu=np.array([[1.0, 2.0, 3.0]]), color=np.full((1, 3), 0.5),
                            rot=np.array([[1.0, 0, 0, 0]]), scale=np.full((1, 3), 0.1),
                            opacity=np.array([0.5]), logits=np.zeros((1, 3)))
        v = random_volumetric(np.random.default_rng(8))
        mid = leader_deform(theta, arm_action(), v, params,
                            delta_override=(np.array([0.1, 0, 0]), np.zeros(4)))
        out = follower_deform(mid, arm_action(), arm_action(), v, params,
                              delta_override=(np.array([0.0, 0.2, 0]), np.zeros(4)))
        np.testing.assert_allclose(out.arrays()[0], [[1.1, 2.2, 3.0]], atol=1e-15)

    def test_action_sensitivity_with_random_weights(self):
        rng = np.random.default_rng(9)
        params = small_params(seed=13)
        for name in ("follower.w3", "follower.b3"):
            params[name].data[:] = rng.standard_normal(params[name].data.shape) * 0.2
        theta = random_theta(rng, 12)
        v = random_volumetric(rng)
        a_s1 = ArmAction(trans_bin=(10, 10, 10), rot_bins=(0, 0, 0), open=1, collide=0)
        a_s2 = ArmAction(trans_bin=(90, 90, 90), rot_bins=(35, 35, 35), open=0, collide=1)
        a_a = arm_action(rng)
        mid = leader_deform(theta, a_s1, v, params)
        out1 = follower_deform(mid, a_s1, a_a, v, params)
        out2 = follower_deform(mid, a_s2, a_a, v, params)
        diff = np.abs(out1.arrays()[0] - out2.arrays()[0]).max()
        assert diff > 1e-9

    def test_compose_rotation_mode(self):
        config = ModelConfig(grid_size=8, feature_width=8, conv_hidden=4,
                             regressor_hidden=16, deform_hidden=16,
                             policy_latents=4, policy_dim=16, policy_layers=2,
                             rot_update="compose")
        params = ModelParams.init(config, np.random.default_rng(0))
        rng = np.random.default_rng(10)
        theta = random_theta(rng, 6)
        v = random_volumetric(rng, config)
        out = leader_deform(theta, arm_action(), v, params)
        np.testing.assert_allclose(out.arrays()[2], theta.arrays()[2], atol=1e-12)
        # a forced delta composes as a Hamilton product
        from gsworld.core.quat import quat_mul, normalize_quat as nq
        d = np.array([0.0, 0.2, 0.0, 0.0])
        out2 = leader_deform(theta, arm_action(), v, params,
                             delta_override=(np.zeros(3), d))
        qd = nq(np.array([1.0, 0.2, 0.0, 0.0]))
        expect = quat_mul(np.tile(qd, (6, 1)), theta.arrays()[2])
        np.testing.assert_allclose(out2.arrays()[2], expect, atol=1e-12)


class TestPolicy:
    def test_head_shapes(self):
        params = small_params()
        v = random_volumetric(np.random.default_rng(11))
        pl = decode_actions(v, "push the box", params)
        for arm in (pl.left, pl.right):
            assert arm.trans.shape == (3, 100)
            assert arm.rot.shape == (3, 72)
            assert arm.open.shape == (1, 2)
            assert arm.collide.shape == (1, 2)

    def test_argmax_yields_valid_actions_random_sweep(self):
        rng = np.random.default_rng(12)
        v = random_volumetric(rng)
        for trial in range(1000):
            params = ModelParams.init(SMALL, np.random.default_rng(trial + 50_000))
            pl = decode_actions(v, "lift the tray", params)
            left = pl.left.argmax_action()
            right = pl.right.argmax_action()
            for a in (left, right):
                assert all(0 <= b < 100 for b in a.trans_bin)
                assert all(0 <= b < 72 for b in a.rot_bins)
                assert a.open in (0, 1) and a.collide in (0, 1)

    def test_deterministic(self):
        params = small_params()
        rng = np.random.default_rng(13)
        v = random_volumetric(rng)
        a = decode_actions(v, "hand over the item", params)
        b = decode_actions(v, "hand over the item", params)
        np.testing.assert_array_equal(a.left.trans.data, b.left.trans.data)
        np.testing.assert_array_equal(a.right.collide.data, b.right.collide.data)

    def test_instruction_hash_separation(self):
        rng = np.random.default_rng(14)
        params = small_params(seed=21)
        v = random_volumetric(rng)
        distinct = 0
        for k in range(100):
            a = decode_actions(v, f"instruction variant {k}", params)
            b = decode_actions(v, f"instruction variant {k + 100}", params)
            if np.abs(a.left.trans.data - b.left.trans.data).max() > 1e-12:
                distinct += 1
        assert distinct == 100

    def test_empty_instruction_uses_null_embedding(self):
        params = small_params()
        v = random_volumetric(np.random.default_rng(15))
        pl = decode_actions(v, "", params)  # must not raise
        assert np.all(np.isfinite(pl.left.trans.data))

    def test_policy_handles_empty_grid(self):
        params = small_params()
        g = SMALL.grid_size
        v = VolumetricFeature(grid=ad.constant(np.zeros((g, g, g, SMALL.feature_width))),
                              occupancy=np.zeros((g, g, g)),
                              workspace_bounds=SMALL.workspace_bounds)
        pl = decode_actions(v, "anything", params)
        assert np.all(np.isfinite(pl.right.rot.data))


class TestEndToEndGradients:
    def test_pipeline_fd_on_parameter_subset(self):
        # recon + task + pred losses through the full pipeline vs central FD
        from gsworld import losses as L
        from gsworld.world_model import predict_step
        from gsworld.core import BimanualAction, RIGHT_STABILIZES
        from gsworld.synth_env import get_script, generate_demos
        from gsworld.core.io import load_dataset
        import tempfile

        with tempfile.TemporaryDirectory() as td:
            generate_demos(get_script("push-box"), 1, td, seed=5, image_size=16)
            meta, demos = load_dataset(td)
        step = demos[0].steps[1]
        cams = meta["cameras"]
        config = ModelConfig(grid_size=8, feature_width=8, conv_hidden=4,
                             regressor_hidden=12, deform_hidden=12,
                             policy_latents=2, policy_dim=8, policy_layers=1)
        params = ModelParams.init(config, np.random.default_rng(3))
        for name in ("leader.w3", "follower.w3"):
            params[name].data[:] = np.random.default_rng(4).standard_normal(
                params[name].data.shape) * 0.02

        def loss_value():
            bundle = predict_step(step.observation, step.action, cams, params)
            recon = L.loss_recon(bundle.current[0].rgb, step.observation.views[0].rgb)
            task = L.loss_task(bundle.current[0].logit, step.masks[0])
            pred = L.loss_pred([h.rgb for h in bundle.future], list(step.future_rgb))
            return ad.add(ad.add(recon, task), pred)

        with ad.Tape():
            loss = loss_value()
            ad.backward(loss)
        rng = np.random.default_rng(6)
        h = 1e-5
        checked = 0
        for name in ("conv1.w", "conv2.w", "reg.w2", "leader.w3", "follower.w3"):
            tensor = params[name]
            grad = tensor.grad
            assert grad is not None, name
            flat = tensor.data.reshape(-1)
            gflat = grad.reshape(-1)
            for j in rng.choice(flat.size, size=4, replace=False):
                orig = flat[j]
                flat[j] = orig + h
                lp = float(loss_value())
                flat[j] = orig - h
                lm = float(loss_value())
                flat[j] = orig
                fd = (lp - lm) / (2 * h)
                an = gflat[j]
                assert abs(an - fd) <= 1e-4 + 1e-3 * max(abs(an), abs(fd)), \
                    f"{name}[{j}]: analytic {an} vs fd {fd}"
                checked += 1
        assert checked == 20
