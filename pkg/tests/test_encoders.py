import numpy as np
import pytest

from seds import tensor as T
from seds.data.pose import plan_clips
from seds.data.topology import N_KEYPOINTS
from seds.encoders import (
    GcnLayer,
    InteractionTransformer,
    PoseEncoder,
    RgbAdapter,
    TemporalConv,
    TextEncoder,
    anchor_normalize,
    encode_pose,
)
from seds.tensor import Tensor


@pytest.fixture(autouse=True)
def f64():
    with T.default_dtype(np.float64):
        yield


def keypoints(rng, b, f):
    kp = rng.uniform(0.2, 0.8, size=(b, f, N_KEYPOINTS, 3))
    kp[..., 2] = rng.uniform(0.5, 1.0, size=(b, f, N_KEYPOINTS))
    return kp


def windows_for(f, t, b=1):
    return np.stack([plan_clips(f, t).frame_windows()] * b)


class TestGcn:
    def path_layer(self, activation="identity"):
        layer = GcnLayer(np.array([[0, 1], [1, 0]]), 1, 1, np.random.default_rng(0), activation)
        layer.weight.data = np.eye(1)
        return layer

    def test_two_node_path(self):
        layer = self.path_layer()
        np.testing.assert_allclose(layer.a_hat, [[0.5, 0.5], [0.5, 0.5]])
        np.testing.assert_allclose(layer(Tensor([[2.0], [0.0]])).data, [[1.0], [1.0]])
        np.testing.assert_allclose(layer(Tensor([[3.0], [3.0]])).data, [[3.0], [3.0]])

    def test_zero_input(self):
        layer = GcnLayer(np.array([[0, 1], [1, 0]]), 3, 4, np.random.default_rng(0))
        assert not layer(Tensor(np.zeros((2, 3)))).data.any()

    def test_size_mismatch(self):
        with pytest.raises(T.ShapeError):
            self.path_layer()(Tensor(np.zeros((3, 1))))


def test_temporal_conv_reduces_16_to_4():
    conv = TemporalConv(3, 5, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(2, 16, 3)))
    h = conv(x)
    assert h.shape == (2, 8, 5)
    assert conv(Tensor(np.zeros((2, 8, 3)))).shape == (2, 4, 5)
    # direct evaluation at one output step
    w = conv.weight.data.reshape(5, 3, 5)
    xp = np.pad(x.data, [(0, 0), (2, 2), (0, 0)])
    want = np.einsum("kc,kco->o", xp[0, 6:11], w) + conv.bias.data
    np.testing.assert_allclose(h.data[0, 3], want, atol=1e-12)


class TestPoseEncoder:
    def test_shapes_and_determinism(self):
        rng = np.random.default_rng(0)
        enc = PoseEncoder(16, 8, np.random.default_rng(1))
        kp = keypoints(rng, 2, 30)
        kp[1] = kp[0]
        out = enc(kp, windows_for(30, 6, 2))
        assert out.shape == (2, 6, 16)
        np.testing.assert_array_equal(out.data[0], out.data[1])

    def test_anchor_invariance_to_signer_offset(self):
        rng = np.random.default_rng(2)
        enc = PoseEncoder(16, 8, np.random.default_rng(3))
        kp = keypoints(rng, 1, 20)
        moved = kp.copy()
        moved[..., :2] += np.array([0.13, -0.07])
        w = windows_for(20, 3)
        np.testing.assert_allclose(enc(kp, w).data, enc(moved, w).data, atol=1e-12)
        np.testing.assert_allclose(anchor_normalize(kp)[..., :2], anchor_normalize(moved)[..., :2], atol=1e-12)

    def test_hand_weights_are_shared(self):
        enc = PoseEncoder(16, 8, np.random.default_rng(4))
        names = [n for n, _ in enc.named_parameters()]
        assert not any("left" in n or "right" in n for n in names)
        kp = keypoints(np.random.default_rng(5), 1, 16)
        w = windows_for(16, 1)
        before = enc.frame_features(kp).data[..., 8:16].copy()
        # a loss on the left-hand features alone moves the right-hand path
        loss = T.sum_(enc.frame_features(kp)[..., :8])
        loss.backward()
        g = enc.hand.layers[0].weight.grad
        assert g is not None and np.abs(g).sum() > 0
        enc.hand.layers[0].weight.data -= 0.1 * g
        assert not np.allclose(enc.frame_features(kp).data[..., 8:16], before)
        assert enc(kp, w).shape == (1, 1, 16)

    def test_padded_clips_do_not_change_valid_outputs(self):
        rng = np.random.default_rng(6)
        enc = PoseEncoder(16, 8, np.random.default_rng(7))
        kp = keypoints(rng, 1, 18)
        w = windows_for(18, 5)  # 3 valid clips, 2 padded
        a = enc(kp, w).data
        w2 = w.copy()
        w2[0, 3:] = rng.integers(0, 18 - 15, size=(2, 1)) + np.arange(16)
        b = enc(kp, w2).data
        np.testing.assert_array_equal(a[0, :3], b[0, :3])

    def test_gradcheck_tiny_config(self):
        rng = np.random.default_rng(8)
        enc = PoseEncoder(16, 8, np.random.default_rng(9))
        kp = keypoints(rng, 1, 20)
        w = windows_for(20, 3)
        probe = rng.normal(size=(1, 3, 16))
        params = [enc.hand.layers[0].weight, enc.body.layers[1].weight, enc.conv1.weight, enc.proj.weight]
        res = T.gradcheck(lambda: T.sum_(encode_pose(enc, kp, w) * probe), params, tol=1e-4,
                          max_entries=40, rng=np.random.default_rng(0))
        assert res.passed, res

    def test_window_width_checked(self):
        enc = PoseEncoder(16, 8, np.random.default_rng(0))
        with pytest.raises(T.ShapeError):
            enc(keypoints(np.random.default_rng(0), 1, 20), np.zeros((1, 2, 8), dtype=np.int64))


class TestOtherEncoders:
    def test_rgb_adapter_leaves_input_untouched(self):
        feats = np.random.default_rng(0).normal(size=(2, 4, 1024))
        copy = feats.copy()
        out = RgbAdapter(16, np.random.default_rng(1))(feats)
        assert out.shape == (2, 4, 16)
        assert np.array_equal(feats, copy)

    def test_interaction_depth_zero_is_positional_add(self):
        tr = InteractionTransformer(8, 0, 2, 10, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(1, 6, 8))
        np.testing.assert_allclose(tr(Tensor(x), np.ones((1, 6), bool)).data, x + tr.pos.data[:6])

    def test_padding_permutation_is_inert(self):
        tr = InteractionTransformer(8, 2, 2, 10, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(1, 6, 8))
        mask = np.array([[1, 1, 1, 1, 0, 0]], bool)
        y = x.copy()
        y[0, [4, 5]] = y[0, [5, 4]]
        a, b = tr(Tensor(x), mask).data, tr(Tensor(y), mask).data
        np.testing.assert_allclose(a[0, :4], b[0, :4], atol=1e-12)

    def test_mask_length_mismatch(self):
        tr = InteractionTransformer(8, 1, 2, 10, np.random.default_rng(0))
        with pytest.raises(T.ShapeError):
            tr(Tensor(np.zeros((1, 6, 8))), np.ones((1, 5), bool))
        te = TextEncoder(10, 8, 1, 2, np.random.default_rng(0))
        with pytest.raises(T.ShapeError):
            te(np.zeros((1, 3), int), np.ones((1, 4), bool))

    def test_text_single_token(self):
        te = TextEncoder(10, 8, 1, 2, np.random.default_rng(0))
        out = te(np.array([[4]]), np.array([[True]]))
        assert out.shape == (1, 1, 8)

    def test_text_gradcheck(self):
        te = TextEncoder(10, 4, 1, 2, np.random.default_rng(0), max_len=4)
        tokens = np.array([[2, 3, 0]])
        mask = np.array([[1, 1, 0]], bool)
        probe = np.random.default_rng(1).normal(size=(1, 3, 4))
        res = T.gradcheck(lambda: T.sum_(te(tokens, mask) * probe), te.parameters()[:3], tol=1e-4)
        assert res.passed, res
