from __future__ import annotations

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from memorymamba import autodiff as ad
from memorymamba.autodiff import Tape, Tensor, backward, finite_diff_check
from memorymamba.errors import CheckpointError, ContractError, DimensionError, NumericError

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def leaf(x, dtype=np.float64):
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=True)


def conv_loops(x, w, stride, padding):
    b, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((b, cout, ho, wo))
    for n in range(b):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                out[n, o, i, j] += xp[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
    return out


class TestTensor:
    def test_rejects_unsupported_dtype(self):
        with pytest.raises(ContractError):
            Tensor([1, 2, 3], dtype=np.int64)

    def test_other_inputs_become_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_plain_tensor_never_accumulates(self):
        x = Tensor([1.0, 2.0])
        w = leaf([3.0, 4.0])
        backward(ad.sum(ad.mul(x, w)))
        assert x.grad is None
        np.testing.assert_array_equal(w.grad, [1.0, 2.0])

    def test_backward_requires_scalar(self):
        with pytest.raises(ContractError):
            backward(leaf([1.0, 2.0]) * 2.0)

    def test_backward_requires_tape(self):
        with pytest.raises(ContractError):
            backward(Tensor(1.0))

    def test_sum_gradient_is_ones(self):
        x = leaf(np.arange(6.0).reshape(2, 3))
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_gradient(self):
        x = leaf(3.0)
        backward(x * x)
        assert x.grad == pytest.approx(6.0)

    def test_shared_subexpression_accumulates(self):
        x = leaf(2.0)
        y = x * x
        backward(y + y * x)  # d/dx (x^2 + x^3) = 2x + 3x^2
        assert x.grad == pytest.approx(4.0 + 12.0)

    def test_gradients_accumulate_across_calls(self):
        x = leaf([1.0, 1.0])
        backward(x.sum())
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_tape_is_topological(self):
        x = leaf([1.0, 2.0])
        y = ad.exp(x)
        z = ad.mul(y, x)
        root = ad.sum(z)
        tape = Tape(root)
        pos = {id(t): i for i, t in enumerate(tape.nodes)}
        for t in tape.nodes:
            if t._node is not None:
                for p in t._node.parents:
                    if p.requires_grad:
                        assert pos[id(p)] < pos[id(t)]
        assert tape.leaves() == [x]

    def test_one_gradient_per_leaf(self):
        a, b = leaf([1.0]), leaf([2.0])
        grads = backward(ad.sum(a * b + a))
        assert set(map(id, grads)) == {id(a), id(b)}

    def test_deep_chain_does_not_recurse(self):
        x = leaf(1.0)
        y = x
        for _ in range(5000):
            y = y + 0.0
        backward(y)
        assert x.grad == 1.0

    def test_mixed_dtypes_rejected(self):
        with pytest.raises(ContractError):
            ad.add(Tensor(np.ones(2, np.float32)), Tensor(np.ones(2, np.float64)))

    def test_forward_is_deterministic(self, rng):
        a = rng.normal(size=(7, 9)).astype(np.float32)
        b = rng.normal(size=(9, 5)).astype(np.float32)
        r1 = ad.softmax(ad.matmul(Tensor(a), Tensor(b))).data
        r2 = ad.softmax(ad.matmul(Tensor(a), Tensor(b))).data
        assert r1.tobytes() == r2.tobytes()


class TestOps:
    def test_matmul_identity_and_zero(self):
        v = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(v)).data, v)
        out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.zeros((2, 2)))).data
        np.testing.assert_array_equal(out, np.zeros((2, 2)))

    def test_matmul_dimension_error(self):
        with pytest.raises(DimensionError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_matmul_gradient(self, rng):
        b = rng.normal(size=(4, 2))
        w = rng.normal(size=(3, 2))
        err = finite_diff_check(lambda a: ad.sum(ad.mul(ad.matmul(a, Tensor(b)), Tensor(w))), Tensor(rng.normal(size=(3, 4))))
        assert err <= 1e-6

    def test_conv_unit_kernel_is_identity(self, rng):
        x = rng.normal(size=(2, 1, 5, 4))
        out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1)))).data
        np.testing.assert_array_equal(out, x)

    def test_conv_ones(self):
        out = ad.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3)))).data
        np.testing.assert_array_equal(out, np.full((1, 1, 3, 3), 9.0))

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (4, 0)])
    def test_conv_matches_loops(self, rng, stride, padding):
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3)) if stride != 4 else rng.normal(size=(4, 3, 4, 4))
        out = ad.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding).data
        assert np.max(np.abs(out - conv_loops(x, w, stride, padding))) <= 1e-6

    def test_conv_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_softmax_examples(self):
        np.testing.assert_allclose(ad.softmax(Tensor(np.zeros(4))).data, [0.25] * 4)
        np.testing.assert_allclose(ad.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
        np.testing.assert_allclose(ad.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-12)

    def test_softmax_rejects_nonfinite(self):
        with pytest.raises(NumericError):
            ad.softmax(Tensor([0.0, np.inf]))

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=st.floats(-700, 700)))
    def test_softmax_rows_sum_to_one(self, x):
        out = ad.softmax(Tensor(x), axis=-1).data
        assert np.all(np.abs(out.sum(axis=-1) - 1.0) <= 1e-6)
        assert np.all(out >= 0)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (3, 5), elements=finite))
    def test_log_softmax_matches_log_of_softmax(self, x):
        a = ad.log_softmax(Tensor(x)).data
        b = np.log(ad.softmax(Tensor(x)).data)
        mask = np.isfinite(b)
        np.testing.assert_allclose(a[mask], b[mask], atol=1e-9)

    def test_layernorm_examples(self, rng):
        one, zero = Tensor(np.ones(6)), Tensor(np.zeros(6))
        np.testing.assert_allclose(ad.layernorm(Tensor(np.full(6, 3.0)), one, zero).data, np.zeros(6))
        b = Tensor(np.full(6, 0.7))
        np.testing.assert_allclose(ad.layernorm(Tensor(rng.normal(size=6)), zero, b).data, np.full(6, 0.7))
        out = ad.layernorm(Tensor(rng.normal(size=64)), Tensor(np.ones(64)), Tensor(np.zeros(64)), eps=1e-5).data
        assert abs(out.mean()) <= 1e-6
        assert abs(out.var() - 1.0) <= 1e-4

    def test_elementwise_examples(self, rng):
        x = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(ad.add(Tensor(x), Tensor(np.zeros(4))).data, x)
        assert ad.silu(Tensor(0.0)).item() == 0.0
        pos = rng.uniform(0.01, 20.0, size=50)
        back = ad.log(ad.exp(Tensor(pos))).data
        assert np.max(np.abs(back - pos) / pos) <= 1e-7
        np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
        np.testing.assert_allclose(ad.scale(Tensor(x), 2.5).data, 2.5 * x)

    def test_global_avg_pool(self, rng):
        np.testing.assert_allclose(ad.global_avg_pool(Tensor(np.full((2, 3, 3, 4), 1.5))).data, np.full((2, 4), 1.5))
        single = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 2, 2, 1)
        assert ad.global_avg_pool(Tensor(single)).data[0, 0] == 2.5
        x = rng.normal(size=(2, 3, 5, 4))
        loop = np.zeros((2, 4))
        for b in range(2):
            for c in range(4):
                loop[b, c] = sum(x[b, i, j, c] for i in range(3) for j in range(5)) / 15
        assert np.max(np.abs(ad.global_avg_pool(Tensor(x)).data - loop)) <= 1e-6

    def test_cosine_examples(self):
        v = Tensor([0.3, -2.0, 1.0])
        assert ad.cosine_sim(v, v).item() == pytest.approx(1.0)
        assert ad.cosine_sim(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
        assert ad.cosine_sim(Tensor([1.0, 1.0]), Tensor([1.0, 0.0])).item() == pytest.approx(0.70711, abs=5e-6)

    def test_cosine_zero_norm(self):
        with pytest.raises(NumericError):
            ad.cosine_sim(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))

    def test_take_and_getitem_scatter_back(self):
        x = leaf(np.arange(4.0))
        backward(ad.sum(ad.take(x, np.array([0, 0, 3]), axis=0)))
        np.testing.assert_array_equal(x.grad, [2.0, 0.0, 0.0, 1.0])
        y = leaf(np.arange(4.0))
        backward(ad.sum(y[np.array([1, 1, 2])]))
        np.testing.assert_array_equal(y.grad, [0.0, 2.0, 1.0, 0.0])

    def test_broadcast_gradient_is_reduced(self):
        a = leaf(np.ones((3, 4)))
        b = leaf(np.ones(4))
        backward(ad.sum(a * b))
        assert b.grad.shape == (4,)
        np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


class TestFiniteDifferences:
    def test_linear_is_exact(self, rng):
        w = rng.normal(size=(4, 3))
        assert finite_diff_check(lambda x: ad.sum(ad.mul(x, Tensor(w))), Tensor(rng.normal(size=(4, 3)))) <= 1e-9

    def test_softmax_cross_entropy_composite(self, rng):
        y = np.array([0, 2, 1])

        def f(x):
            return ad.neg(ad.mean(ad.log_softmax(x)[np.arange(3), y]))

        assert finite_diff_check(f, Tensor(rng.normal(size=(3, 4)))) <= 1e-6

    def test_requires_float64(self):
        with pytest.raises(ContractError):
            finite_diff_check(lambda x: ad.sum(x), Tensor(np.ones(2, np.float32)))

    def test_detects_wrong_gradient(self, rng, monkeypatch):
        from memorymamba.autodiff import ops

        real = ops.exp

        def bad_exp(x):
            out = real(x)
            if out._node is None:
                return out
            fn = out._node.backward_fn
            out._node.backward_fn = lambda g: tuple(-v for v in fn(g))
            return out

        monkeypatch.setattr(ops, "exp", bad_exp)
        assert finite_diff_check(lambda x: ad.sum(ops.exp(x)), Tensor(rng.normal(size=3))) > 0.5


class TestSerialize:
    @settings(max_examples=40, deadline=None)
    @given(
        hnp.arrays(
            st.sampled_from([np.float32, np.float64]),
            hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
            elements=st.floats(-1e6, 1e6, width=32),
        )
    )
    def test_round_trip_bit_exact(self, arr):
        out, end = ad.tensor_from_bytes(ad.tensor_to_bytes(arr))
        assert out.dtype == arr.dtype and out.shape == arr.shape
        assert out.tobytes() == arr.tobytes()
        assert end == len(ad.tensor_to_bytes(arr))

    def test_stream_round_trip(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=4).astype(np.float32)
        buf = io.BytesIO()
        ad.write_tensor(buf, a)
        ad.write_tensor(buf, b)
        buf.seek(0)
        np.testing.assert_array_equal(ad.read_tensor(buf), a)
        np.testing.assert_array_equal(ad.read_tensor(buf), b)

    def test_truncated_payload(self):
        blob = ad.tensor_to_bytes(np.ones((4, 4)))
        with pytest.raises(CheckpointError):
            ad.tensor_from_bytes(blob[:-3])

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            ad.tensor_from_bytes(b"XXXX" + ad.tensor_to_bytes(np.ones(2))[4:])
