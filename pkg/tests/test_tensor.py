import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import seds.tensor as T
from seds.gradsuite import primitive_cases
from seds.tensor import io as tio


def t64(x, grad=True):
    return T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        out = T.matmul(t64(np.eye(2)), t64([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_selection_row(self):
        out = T.matmul(t64([[1, 0]]), t64([[2], [3]]))
        np.testing.assert_array_equal(out.data, [[2]])

    def test_shape_error_reports_both_shapes(self):
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(t64(np.zeros((2, 3))), t64(np.zeros((2, 3))))

    def test_gradcheck_random(self):
        rng = np.random.default_rng(7)
        a, b = t64(rng.normal(size=(3, 4))), t64(rng.normal(size=(4, 2)))
        res = T.gradcheck(lambda: T.matmul(a, b).sum(), [a, b], tol=1e-6)
        assert res.passed, res

    def test_backward_formula(self):
        rng = np.random.default_rng(1)
        a, b = t64(rng.normal(size=(3, 4))), t64(rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        (T.matmul(a, b) * w).sum().backward()
        np.testing.assert_allclose(a.grad, w @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ w)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(t64([0, 0, 0])).data, [1 / 3] * 3)

    def test_two_point(self):
        e = math.e
        np.testing.assert_allclose(T.softmax(t64([1, 0])).data, [e / (e + 1), 1 / (e + 1)], rtol=0, atol=1e-15)
        np.testing.assert_allclose(T.softmax(t64([1, 0])).data, [0.73106, 0.26894], atol=5e-6)

    @settings(max_examples=50, deadline=None)
    @given(
        hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(-30, 30)),
        st.floats(-100, 100),
    )
    def test_shift_invariance(self, x, c):
        a = T.softmax(t64(x, grad=False)).data
        b = T.softmax(t64(x + c, grad=False)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, (4, 5), elements=st.floats(-50, 50)), st.integers(0, 1))
    def test_sums_to_one(self, x, axis):
        out = T.softmax(t64(x, grad=False), axis=axis).data
        np.testing.assert_allclose(out.sum(axis=axis), 1.0, atol=1e-9)
        assert np.all(out >= 0)

    def test_mask_excludes_entries(self):
        out = T.softmax(t64([[1.0, 5.0, 1.0]]), mask=[[True, False, True]]).data
        np.testing.assert_allclose(out, [[0.5, 0.0, 0.5]])

    def test_all_masked_slice_errors(self):
        with pytest.raises(ValueError, match="masked"):
            T.softmax(t64([[1.0, 2.0], [3.0, 4.0]]), mask=[[True, True], [False, False]])

    def test_all_masked_allowed_gives_zeros(self):
        out = T.softmax(t64([[1.0, 2.0], [3.0, 4.0]]), mask=[[True, True], [False, False]], allow_empty=True)
        np.testing.assert_array_equal(out.data[1], [0.0, 0.0])


class TestInterpGather:
    def test_exact_integer_is_bit_identical(self):
        rng = np.random.default_rng(3)
        seq = rng.normal(size=(6, 4))
        idx = rng.integers(0, 6, size=(6, 3))
        out = T.interp_gather(t64(seq), t64(idx.astype(float))).data
        assert np.array_equal(out, seq[idx])

    def test_midpoint(self):
        seq = np.arange(12.0).reshape(4, 3)
        pos = np.full((4, 1), 1.5)
        out = T.interp_gather(t64(seq), t64(pos)).data
        np.testing.assert_allclose(out[0, 0], 0.5 * seq[1] + 0.5 * seq[2])

    def test_circular_wrap(self):
        seq = np.arange(12.0).reshape(4, 3)
        pos = np.full((4, 1), 3.5)
        out = T.interp_gather(t64(seq), t64(pos)).data
        np.testing.assert_allclose(out[2, 0], 0.5 * seq[3] + 0.5 * seq[0])

    def test_ring_length_shorter_than_sequence(self):
        seq = np.arange(12.0).reshape(4, 3)
        out = T.interp_gather(t64(seq), t64(np.full((4, 1), 1.25)), length=2).data
        np.testing.assert_allclose(out[0, 0], 0.75 * seq[1] + 0.25 * seq[0])

    @pytest.mark.parametrize("bad", [-0.1, 4.0, np.nan])
    def test_range_error(self, bad):
        with pytest.raises(ValueError, match="positions"):
            T.interp_gather(t64(np.zeros((4, 2))), t64(np.full((4, 1), bad)))

    def test_gradcheck_seq_and_pos(self):
        rng = np.random.default_rng(11)
        seq = t64(rng.normal(size=(2, 5, 3)))
        pos = t64(rng.uniform(0.05, 0.95, size=(2, 5, 4)) + rng.integers(0, 4, size=(2, 5, 4)))
        w = rng.normal(size=(2, 5, 4, 3))
        res = T.gradcheck(lambda: (T.interp_gather(seq, pos, length=np.array([5, 4])) * w).sum(), [seq, pos])
        assert res.passed, res


class TestNormalisation:
    def test_layer_norm_constant_is_zero(self):
        out = T.layer_norm(t64([[2.5, 2.5, 2.5, 2.5]]))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_l2_normalize(self):
        np.testing.assert_allclose(T.l2_normalize(t64([3.0, 4.0])).data, [0.6, 0.8])

    def test_l2_normalize_zero_vector(self):
        out = T.l2_normalize(t64([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0])

    def test_layer_norm_gelu_gradcheck(self):
        rng = np.random.default_rng(5)
        x = t64(rng.normal(size=(4, 6)))
        g, b = t64(rng.normal(size=6)), t64(rng.normal(size=6))
        w = rng.normal(size=(4, 6))
        res = T.gradcheck(lambda: (T.gelu(T.layer_norm(x, g, b)) * w).sum(), [x, g, b], tol=1e-5)
        assert res.passed, res


class TestTape:
    def test_non_scalar_root(self):
        with pytest.raises(T.ShapeError, match="scalar"):
            T.backward(t64([1.0, 2.0]) * 2.0)

    def test_two_consumers_accumulate(self):
        # y = x*x + 3x  ->  dy/dx = 2x + 3
        x = t64(2.0)
        y = x * x + x * 3.0
        y.backward()
        assert x.grad == pytest.approx(7.0)

    def test_leaf_grads_accumulate_across_calls(self):
        x = t64([1.0, 2.0])
        (x * 2.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [5.0, 5.0])

    def test_no_grad_records_nothing(self):
        x = t64([1.0])
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_elementwise_rejects_non_suffix_broadcast(self):
        with pytest.raises(T.ShapeError):
            t64(np.zeros((3, 1))) + t64(np.zeros((3, 4)))

    def test_leading_batch_broadcast_allowed(self):
        out = t64(np.zeros((2, 3, 4))) + t64(np.ones(4))
        assert out.shape == (2, 3, 4)


@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradchecks(seed):
    rng = np.random.default_rng(seed)
    for name, build in primitive_cases(rng):
        fn, inputs = build()
        res = T.gradcheck(fn, inputs, tol=1e-5)
        assert res.passed, (name, res)
        assert res.n_checked >= 100, name


class TestSedt:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64, np.int32, np.int64, np.uint8])
    def test_round_trip(self, tmp_path, dtype):
        arr = (np.random.default_rng(0).normal(size=(3, 4, 2)) * 100).astype(dtype)
        tio.save(tmp_path / "x.sedt", arr)
        back = tio.load(tmp_path / "x.sedt")
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_header_layout(self):
        raw = tio.to_bytes(np.zeros((2, 3), dtype=np.float64))
        assert raw[:4] == b"SEDT"
        assert raw[4] == 1 and raw[5] == 2
        assert int.from_bytes(raw[6:14], "little") == 2
        assert int.from_bytes(raw[14:22], "little") == 3
        assert len(raw) == 22 + 6 * 8

    def test_scalar(self):
        assert tio.from_bytes(tio.to_bytes(np.float64(2.5))) == 2.5

    def test_bad_magic(self):
        with pytest.raises(tio.TensorFormatError):
            tio.from_bytes(b"XXXX\x00\x00")

    def test_truncated_payload(self):
        raw = tio.to_bytes(np.zeros(4))
        with pytest.raises(tio.TensorFormatError):
            tio.from_bytes(raw[:-1])

    def test_archive_is_byte_stable(self, tmp_path):
        tensors = {"a.w": np.arange(6.0).reshape(2, 3), "b": np.ones(2, dtype=np.float32)}
        tio.save_archive(tmp_path / "one.ckpt", tensors, {"config": {"k": 1}})
        tio.save_archive(tmp_path / "two.ckpt", tensors, {"config": {"k": 1}})
        assert (tmp_path / "one.ckpt").read_bytes() == (tmp_path / "two.ckpt").read_bytes()
        back, extras = tio.load_archive(tmp_path / "one.ckpt")
        assert extras == {"config": {"k": 1}}
        np.testing.assert_array_equal(back["a.w"], tensors["a.w"])
