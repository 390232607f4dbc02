import numpy as np
import pytest

from gradcheck import fd_max_rel_error
from skelefusion.autodiff import Tensor, concat, layer_norm, where_mask

TOL = 1e-6


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def check(loss_fn, params, tol=TOL, h=1e-5):
    assert fd_max_rel_error(loss_fn, params, h=h) < tol


class TestElementwiseOps:
    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(0)
        a, b = leaf(rng, 3, 4), leaf(rng, 4)
        check(lambda: ((a + b) * (a * 0.5 + 2.0)).sum(), {"a": a, "b": b})

    def test_sub_div_neg(self):
        rng = np.random.default_rng(1)
        a, b = leaf(rng, 5), leaf(rng, 5)
        b.data = np.abs(b.data) + 1.0
        check(lambda: ((a - b) / b - (-a)).sum(), {"a": a, "b": b})

    def test_pow_exp_log_tanh(self):
        rng = np.random.default_rng(2)
        a = leaf(rng, 6)
        a.data = np.abs(a.data) + 0.5
        check(lambda: ((a**1.5).log() + a.tanh().exp()).sum(), {"a": a})

    def test_abs(self):
        rng = np.random.default_rng(3)
        a = leaf(rng, 8)
        check(lambda: (a.abs() * 2.0).sum(), {"a": a})

    def test_gelu(self):
        rng = np.random.default_rng(4)
        a = leaf(rng, 7)
        check(lambda: a.gelu().sum(), {"a": a})

    def test_clip_interior_and_blocked(self):
        a = Tensor(np.array([-2.0, 0.3, 2.0]), requires_grad=True)
        (a.clip(-1.0, 1.0) * np.array([1.0, 1.0, 1.0])).sum().backward()
        assert a.grad.tolist() == [0.0, 1.0, 0.0]


class TestMatmul:
    def test_2d(self):
        rng = np.random.default_rng(5)
        a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
        check(lambda: ((a @ b) ** 2).sum(), {"a": a, "b": b})

    def test_batched_times_2d(self):
        rng = np.random.default_rng(6)
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        check(lambda: ((a @ b) ** 2).sum(), {"a": a, "b": b})

    def test_batched_times_batched(self):
        rng = np.random.default_rng(7)
        a, b = leaf(rng, 2, 2, 3, 4), leaf(rng, 2, 2, 4, 3)
        check(lambda: ((a @ b) ** 2).sum(), {"a": a, "b": b})

    def test_vector_cases(self):
        rng = np.random.default_rng(8)
        a, b = leaf(rng, 4), leaf(rng, 4)
        check(lambda: (a @ b) * 1.0, {"a": a, "b": b})
        m = leaf(rng, 3, 4)
        v = leaf(rng, 4)
        check(lambda: ((m @ v) ** 2).sum(), {"m": m, "v": v})
        check(lambda: ((v @ m.swapaxes(0, 1)) ** 2).sum(), {"m": m, "v": v})


class TestShapeOps:
    def test_reshape_swapaxes(self):
        rng = np.random.default_rng(9)
        a = leaf(rng, 2, 3, 4)
        check(lambda: (a.swapaxes(1, 2).reshape(2, 12) ** 2).sum(), {"a": a})

    def test_getitem_slice_and_fancy(self):
        rng = np.random.default_rng(10)
        a = leaf(rng, 6, 3)
        check(lambda: (a[:4] ** 2).sum(), {"a": a})
        idx = np.array([0, 2, 2, 5])  # repeated index must accumulate
        check(lambda: (a[idx] ** 2).sum(), {"a": a})

    def test_concat(self):
        rng = np.random.default_rng(11)
        a, b = leaf(rng, 3, 2), leaf(rng, 3, 5)
        check(lambda: (concat([a, b], axis=-1) ** 2).sum(), {"a": a, "b": b})

    def test_sum_mean_axes(self):
        rng = np.random.default_rng(12)
        a = leaf(rng, 3, 4, 5)
        check(lambda: (a.sum(axis=1) ** 2).sum(), {"a": a})
        check(lambda: (a.mean(axis=(0, 2)) ** 2).sum(), {"a": a})
        check(lambda: (a.mean(axis=-1, keepdims=True) * a).sum(), {"a": a})


class TestFusedOps:
    def test_softmax(self):
        rng = np.random.default_rng(13)
        a = leaf(rng, 4, 6)
        w = rng.normal(size=(4, 6))
        check(lambda: (a.softmax(axis=-1) * w).sum(), {"a": a})

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(14)
        a = Tensor(rng.normal(size=(5, 7)) * 30)
        assert np.allclose(a.softmax(axis=-1).data.sum(axis=1), 1.0)

    def test_softmax_neg_inf_bias_gives_exact_zero(self):
        a = Tensor(np.array([[1.0, 2.0, -1e30]]))
        out = a.softmax(axis=-1)
        assert out.data[0, 2] == 0.0

    def test_layer_norm(self):
        rng = np.random.default_rng(15)
        x, g, b = leaf(rng, 3, 4, 8), leaf(rng, 8), leaf(rng, 8)
        w = rng.normal(size=(3, 4, 8))
        check(lambda: (layer_norm(x, g, b) * w).sum(), {"x": x, "g": g, "b": b})

    def test_layer_norm_normalizes(self):
        rng = np.random.default_rng(16)
        x = Tensor(rng.normal(size=(10, 32)) * 5 + 3)
        out = layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32)))
        assert np.abs(out.data.mean(axis=-1)).max() < 1e-12
        assert np.abs(out.data.std(axis=-1) - 1.0).max() < 1e-4

    def test_where_mask_selects_and_blocks_grads(self):
        rng = np.random.default_rng(17)
        a, b = leaf(rng, 4, 3), leaf(rng, 3)
        cond = np.array([[1.0], [0.0], [1.0], [0.0]])
        out = where_mask(cond, a, b)
        assert np.array_equal(out.data[0], a.data[0])
        assert np.array_equal(out.data[1], b.data)
        out.sum().backward()
        assert np.all(a.grad[1] == 0.0)
        assert np.all(a.grad[0] == 1.0)
        assert np.all(b.grad == 2.0)


class TestEngine:
    def test_backward_requires_scalar(self):
        a = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ValueError):
            (a * 2.0).backward()

    def test_deep_chain_no_recursion_error(self):
        a = Tensor(np.array(1.0), requires_grad=True)
        x = a
        for _ in range(3000):
            x = x * 1.0001
        x.backward()
        assert np.isfinite(a.grad)

    def test_reused_node_accumulates(self):
        a = Tensor(np.array(3.0), requires_grad=True)
        (a * a).backward()
        assert a.grad == pytest.approx(6.0)

    def test_constants_collect_no_grad(self):
        a = Tensor(np.ones(4), requires_grad=True)
        c = Tensor(np.ones(4))
        (a * c).sum().backward()
        assert c.grad is None
        assert np.all(a.grad == 1.0)

    def test_determinism(self):
        rng = np.random.default_rng(18)
        a = leaf(rng, 5, 5)

        def run():
            a.zero_grad()
            ((a @ a.swapaxes(0, 1)).softmax(-1).gelu() ** 2).sum().backward()
            return a.grad.copy()

        assert np.array_equal(run(), run())
