"""Tape, built-in op adjoints (all checked against central finite
differences), custom ops, and the named-tensor archive."""

import numpy as np
import pytest

from gsworld import autodiff as ad
from gsworld.autodiff import AutodiffUsageError
from gsworld.errors import ShapeError

H = 1e-5
RTOL = 1e-5


def fd_check(build, params, rtol=RTOL, atol=1e-8):
    """Compare analytic grads of scalar build(*tensors) against central FD."""
    tensors = [ad.param(p.copy()) for p in params]
    with ad.Tape():
        loss = build(*tensors)
        ad.backward(loss)
    for k, base in enumerate(params):
        grad = tensors[k].grad
        assert grad is not None, f"missing grad for input {k}"
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = base[idx]
            base[idx] = orig + H
            lp = float(build(*[ad.constant(p) for p in params]))
            base[idx] = orig - H
            lm = float(build(*[ad.constant(p) for p in params]))
            base[idx] = orig
            fd = (lp - lm) / (2 * H)
            an = grad[idx]
            assert abs(an - fd) <= atol + rtol * max(abs(an), abs(fd)), \
                f"input {k} index {idx}: analytic {an} vs fd {fd}"


class TestForwardOps:
    def test_matmul_identity(self):
        v = ad.constant(np.array([[1.0], [2.0], [3.0]]))
        eye = ad.constant(np.eye(3))
        np.testing.assert_array_equal(ad.matmul(eye, v).data, v.data)

    def test_softmax_uniform(self):
        s = ad.softmax(ad.constant(np.zeros(3)))
        np.testing.assert_allclose(s.data, np.full(3, 1 / 3))

    def test_relu_backward_piecewise(self):
        with ad.Tape():
            x = ad.param(np.array([-1.0, 2.0]))
            y = ad.relu(x)
            ad.backward(ad.tsum(y))  # upstream (1, 1)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_shape_mismatch_names_both_shapes(self):
        a = ad.constant(np.zeros((2, 3)))
        b = ad.constant(np.zeros((4, 3)))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 3\)"):
            ad.add(a, b)
        with pytest.raises(ShapeError, match="matmul"):
            ad.matmul(a, b)


class TestBackward:
    def test_sum_of_squares(self):
        with ad.Tape():
            x = ad.param(np.array([1.0, 2.0]))
            ad.backward(ad.sum_sq(x))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_fanout_doubles_upstream(self):
        with ad.Tape():
            x = ad.param(np.array([3.0, -1.0]))
            y = ad.add(x, x)
            ad.backward(ad.tsum(y))
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_three_layer_perceptron_fd(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (4, 5))
        w1 = rng.uniform(-1, 1, (5, 6))
        b1 = rng.uniform(-1, 1, 6)
        w2 = rng.uniform(-1, 1, (6, 6))
        b2 = rng.uniform(-1, 1, 6)
        w3 = rng.uniform(-1, 1, (6, 2))

        def net(xt, w1t, b1t, w2t, b2t, w3t):
            h = ad.tanh(ad.add_rowvec(ad.matmul(xt, w1t), b1t))
            h = ad.sigmoid(ad.add_rowvec(ad.matmul(h, w2t), b2t))
            return ad.sum_sq(ad.matmul(h, w3t))

        fd_check(net, [x, w1, b1, w2, b2, w3])

    def test_backward_on_detached_tensor_raises(self):
        t = ad.constant(np.array(1.0))
        with pytest.raises(AutodiffUsageError):
            ad.backward(t)

    def test_backward_requires_scalar(self):
        with ad.Tape():
            x = ad.param(np.array([1.0, 2.0]))
            y = ad.relu(x)
            with pytest.raises(AutodiffUsageError):
                ad.backward(y)

    def test_backward_twice_doubles_grads(self):
        with ad.Tape():
            x = ad.param(np.array([1.0, 2.0]))
            loss = ad.sum_sq(x)
            ad.backward(loss)
            first = x.grad.copy()
            ad.backward(loss)
        np.testing.assert_array_equal(x.grad, 2 * first)

    def test_branch_order_independence(self):
        rng = np.random.default_rng(1)
        xv = rng.uniform(-1, 1, 4)
        yv = rng.uniform(-1, 1, 4)

        def run(order):
            with ad.Tape():
                x = ad.param(xv.copy())
                y = ad.param(yv.copy())
                if order == 0:
                    a = ad.sum_sq(ad.tanh(x))
                    b = ad.sum_sq(ad.sigmoid(y))
                else:
                    b = ad.sum_sq(ad.sigmoid(y))
                    a = ad.sum_sq(ad.tanh(x))
                ad.backward(ad.add(a, b))
                return x.grad.copy(), y.grad.copy()

        gx0, gy0 = run(0)
        gx1, gy1 = run(1)
        assert np.abs(gx0 - gx1).max() < 1e-12
        assert np.abs(gy0 - gy1).max() < 1e-12


class TestOpGradientSweep:
    """Every built-in op against central finite differences on random inputs."""

    def test_elementwise_and_reductions(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, (3, 4))
        y = rng.uniform(-1, 1, (3, 4))
        cases = [
            (lambda a, b: ad.sum_sq(ad.add(a, b)), [x, y]),
            (lambda a, b: ad.sum_sq(ad.sub(a, b)), [x, y]),
            (lambda a, b: ad.sum_sq(ad.mul(a, b)), [x, y]),
            (lambda a: ad.sum_sq(ad.neg(a)), [x]),
            (lambda a: ad.sum_sq(ad.scale(a, 1.7)), [x]),
            (lambda a: ad.sum_sq(ad.relu(a)), [x + 0.05]),  # keep off the kink
            (lambda a: ad.sum_sq(ad.sigmoid(a)), [x]),
            (lambda a: ad.sum_sq(ad.tanh(a)), [x]),
            (lambda a: ad.sum_sq(ad.softplus(a)), [x]),
            (lambda a: ad.sum_sq(ad.exp(a)), [x]),
            (lambda a: ad.sum_sq(ad.softmax(a)), [x]),
            (lambda a: ad.sum_sq(ad.logsumexp(a)), [x]),
            (lambda a: ad.tsum(ad.mul(a, a)), [x]),
            (lambda a: ad.tmean(ad.mul(a, a)), [x]),
            (lambda a: ad.sum_sq(ad.reshape(a, (4, 3))), [x]),
            (lambda a: ad.sum_sq(ad.slice_axis(a, 1, 3, axis=1)), [x]),
            (lambda a: ad.sum_sq(ad.normalize_rows(a)), [x + 2.0]),
        ]
        for build, inputs in cases:
            fd_check(build, [p.copy() for p in inputs])

    def test_matmul_and_bias(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(-1, 1, (3, 4))
        b = rng.uniform(-1, 1, (4, 2))
        bt = rng.uniform(-1, 1, (2, 4))
        v = rng.uniform(-1, 1, 4)
        fd_check(lambda p, q: ad.sum_sq(ad.matmul(p, q)), [a.copy(), b.copy()])
        fd_check(lambda p, q: ad.sum_sq(ad.matmul(p, q, transpose_b=True)),
                 [a.copy(), bt.copy()])
        fd_check(lambda p, q: ad.sum_sq(ad.add_rowvec(p, q)), [a.copy(), v.copy()])

    def test_layer_norm(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, (3, 5))
        g = rng.uniform(0.5, 1.5, 5)
        b = rng.uniform(-0.5, 0.5, 5)
        fd_check(lambda xt, gt, bt: ad.sum_sq(ad.layer_norm(xt, gt, bt)),
                 [x.copy(), g.copy(), b.copy()], rtol=1e-4)

    def test_concat_gather(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-1, 1, (3, 2))
        b = rng.uniform(-1, 1, (3, 4))
        idx = np.array([2, 0, 2])
        cols = np.array([1, 3, 0])
        fd_check(lambda p, q: ad.sum_sq(ad.concat([p, q], axis=1)), [a.copy(), b.copy()])
        fd_check(lambda p: ad.sum_sq(ad.gather_rows(p, idx)), [b.copy()])
        fd_check(lambda p: ad.sum_sq(ad.gather_elements(p, cols)), [b.copy()])

    def test_conv3d(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, (4, 4, 4, 2))
        w = rng.uniform(-1, 1, (27 * 2, 3)) * 0.2
        b = rng.uniform(-0.1, 0.1, 3)
        fd_check(lambda xt, wt, bt: ad.sum_sq(ad.conv3d(xt, wt, bt)),
                 [x.copy(), w.copy(), b.copy()], rtol=1e-4)

    def test_trilinear(self):
        rng = np.random.default_rng(7)
        grid = rng.uniform(-1, 1, (5, 5, 5, 3))
        pos = rng.uniform(0.6, 3.4, (6, 3))

        def build(gt, pt):
            return ad.sum_sq(ad.trilinear(gt, pt))

        fd_check(build, [grid.copy(), pos.copy()], rtol=1e-4)


class TestCustomOps:
    def test_square_matches_builtin(self):
        sq = ad.register_custom(lambda x: x * x,
                                lambda ins, outs, ups: (2.0 * ins[0] * ups[0],))
        xv = np.array([1.5, -2.0, 0.5])
        with ad.Tape():
            x = ad.param(xv.copy())
            ad.backward(ad.tsum(sq(x)))
        g_custom = x.grad.copy()
        with ad.Tape():
            x2 = ad.param(xv.copy())
            ad.backward(ad.tsum(ad.mul(x2, x2)))
        np.testing.assert_allclose(g_custom, x2.grad, atol=1e-14)

    def test_zero_adjoint_annihilates(self):
        zop = ad.register_custom(lambda x: x + 1.0,
                                 lambda ins, outs, ups: (np.zeros_like(ins[0]),))
        with ad.Tape():
            x = ad.param(np.array([1.0, 2.0]))
            ad.backward(ad.tsum(zop(x)))
        np.testing.assert_array_equal(x.grad, np.zeros(2))

    def test_adjoint_shape_mismatch_detected_at_first_backward(self):
        bad = ad.register_custom(lambda x: x * 2.0,
                                 lambda ins, outs, ups: (np.zeros(99),))
        with ad.Tape():
            x = ad.param(np.array([1.0, 2.0]))
            y = bad(x)
            with pytest.raises(ShapeError):
                ad.backward(ad.tsum(y))

    def test_multi_output_custom_op(self):
        def fwd(x):
            return x * 2.0, x * 3.0

        def bwd(ins, outs, ups):
            return (2.0 * ups[0] + 3.0 * ups[1],)

        op = ad.register_custom(fwd, bwd)
        with ad.Tape():
            x = ad.param(np.array([1.0, 1.0]))
            a, b = op(x)
            ad.backward(ad.add(ad.tsum(a), ad.tsum(b)))
        np.testing.assert_array_equal(x.grad, [5.0, 5.0])


class TestArchive:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        tensors = {"a.w": rng.standard_normal((3, 4)),
                   "b": rng.standard_normal(7),
                   "scalar": np.array(3.5)}
        meta = {"model.grid": "20", "note": "hello world"}
        path = tmp_path / "ckpt.nta"
        ad.save_archive(path, tensors, meta)
        back, meta2 = ad.load_archive(path)
        assert meta2 == meta
        assert set(back) == set(tensors)
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.nta"
        p.write_bytes(b"JUNKxxxx")
        with pytest.raises(ValueError):
            ad.load_archive(p)

    def test_nested_tape_rejected(self):
        with ad.Tape():
            with pytest.raises(AutodiffUsageError):
                with ad.Tape():
                    pass
