import math

import numpy as np
import pytest

from seds import tensor as T
from seds.fusion import (
    FusionVariant,
    GlossAttentionLayer,
    CrossGlossAttentionFusion,
    build_fusion,
    constant_positions,
    fuse_variant,
    gloss_attention_raw,
    valid_lengths,
)
from seds.tensor import Tensor


@pytest.fixture(autouse=True)
def f64():
    with T.default_dtype(np.float64):
        yield


def dense_local_attention(q, k, v, lengths, n, scaled):
    """Brute-force gather over the integer window, no interpolation."""
    b, h, t, dh = q.shape
    out = np.zeros_like(q)
    for bi in range(b):
        ln = lengths[bi]
        for hi in range(h):
            for ti in range(t):
                idx = [(ti - n // 2 + i) % ln for i in range(n)]
                logits = np.array([q[bi, hi, ti] @ k[bi, hi, j] for j in idx])
                if scaled:
                    logits = logits / math.sqrt(dh)
                w = np.exp(logits - logits.max())
                w /= w.sum()
                out[bi, hi, ti] = sum(w[i] * v[bi, hi, j] for i, j in enumerate(idx))
    return out


def test_constant_positions_centered():
    p = constant_positions(5, 3)
    assert p[2].tolist() == [1, 2, 3]
    assert constant_positions(6, 4)[3].tolist() == [1, 2, 3, 4]


def test_valid_lengths_checks_prefix():
    assert valid_lengths(np.array([[1, 1, 0], [1, 1, 1]], bool)).tolist() == [2, 3]
    with pytest.raises(ValueError):
        valid_lengths(np.array([[1, 0, 1]], bool))
    with pytest.raises(ValueError):
        valid_lengths(np.array([[0, 0, 0]], bool))


@pytest.mark.parametrize("scaled", [True, False])
@pytest.mark.parametrize("seed", range(5))
def test_zero_offsets_match_dense_oracle(seed, scaled):
    rng = np.random.default_rng(seed)
    b, h, t, dh, n = 2, 2, 6, 3, 3
    q, k, v = (rng.normal(size=(b, h, t, dh)) for _ in range(3))
    lengths = np.array([6, 4])
    off = Tensor(np.zeros((b, h, t, n)))
    got = gloss_attention_raw(Tensor(q), Tensor(k), Tensor(v), off, lengths, scaled=scaled)
    want = dense_local_attention(q, k, v, lengths, n, scaled)
    np.testing.assert_allclose(got.data[0], want[0], atol=1e-9, rtol=0)
    # only the valid prefix is meaningful for the padded sample
    np.testing.assert_allclose(got.data[1, :, :4], want[1, :, :4], atol=1e-9, rtol=0)


def test_integer_offsets_match_shifted_oracle():
    rng = np.random.default_rng(3)
    b, h, t, dh, n = 1, 1, 7, 4, 3
    q, k, v = (rng.normal(size=(b, h, t, dh)) for _ in range(3))
    off = np.full((b, h, t, n), 2.0)
    got = gloss_attention_raw(Tensor(q), Tensor(k), Tensor(v), Tensor(off), np.array([t]))
    # shifting every position by 2 equals rolling k and v by -2
    want = dense_local_attention(q, np.roll(k, -2, axis=2), np.roll(v, -2, axis=2), [t], n, True)
    np.testing.assert_allclose(got.data, want, atol=1e-9, rtol=0)


def test_single_neighbor_passthrough():
    rng = np.random.default_rng(0)
    q, k, v = (Tensor(rng.normal(size=(2, 1, 5, 4))) for _ in range(3))
    out = gloss_attention_raw(q, k, v, Tensor(np.zeros((2, 1, 5, 1))), np.array([5, 5]))
    np.testing.assert_array_equal(out.data, v.data)


def test_identical_keys_give_uniform_average():
    rng = np.random.default_rng(1)
    b, t, dh, n = 1, 6, 3, 4
    q = Tensor(rng.normal(size=(b, 1, t, dh)))
    k = Tensor(np.tile(rng.normal(size=dh), (b, 1, t, 1)))
    v = rng.normal(size=(b, 1, t, dh))
    off = rng.uniform(-2, 2, size=(b, 1, t, n))
    out, w, pos = gloss_attention_raw(q, k, Tensor(v), Tensor(off), np.array([t]), return_weights=True)
    np.testing.assert_allclose(w.data, 1.0 / n, atol=1e-12)
    v_hat = T.interp_gather(Tensor(v), pos, length=np.array([[t]])).data
    np.testing.assert_allclose(out.data, v_hat.mean(axis=-2), atol=1e-12)


def test_wrap_property_random_offsets():
    rng = np.random.default_rng(7)
    t, n = 8, 7
    q, k, v = (Tensor(rng.normal(size=(1, 1, t, 2))) for _ in range(3))
    for _ in range(1000):
        ln = int(rng.integers(1, t + 1))
        off = rng.normal(scale=rng.choice([0.5, 5.0, 50.0]), size=(1, 1, t, n))
        _, w, pos = gloss_attention_raw(q, k, v, Tensor(off), np.array([ln]), return_weights=True)
        assert pos.data.min() >= 0 and pos.data.max() < ln
        np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-9)


def test_offset_clip_enforces_locality():
    rng = np.random.default_rng(2)
    d, t, n = 8, 16, 3
    layer = GlossAttentionLayer(d, rng, n_neighbors=n, offset_clip=1.0)
    layer.offset.data = rng.normal(scale=100.0, size=layer.offset.shape)
    x = Tensor(rng.normal(size=(1, t, d)))
    _, _, pos = layer.attend(x, x, np.ones((1, t), bool), return_weights=True)
    c = 1.0
    for ti in range(t):
        lo, hi = ti - n // 2 - c, ti + math.ceil(n / 2) + c
        allowed = {j % t for j in range(math.floor(lo), math.ceil(hi) + 1)}
        touched = set(np.floor(pos.data[0, 0, ti]).astype(int) % t) | set(np.ceil(pos.data[0, 0, ti]).astype(int) % t)
        assert touched <= allowed


def test_layer_errors():
    rng = np.random.default_rng(0)
    layer = GlossAttentionLayer(4, rng, n_neighbors=7)
    x = Tensor(rng.normal(size=(1, 5, 4)))
    with pytest.raises(ValueError):
        layer(x, x, np.ones((1, 5), bool))
    layer = GlossAttentionLayer(4, rng, n_neighbors=3)
    with pytest.raises(ValueError):
        layer(x, x, np.zeros((1, 5), bool))
    with pytest.raises(T.ShapeError):
        layer(x, Tensor(rng.normal(size=(1, 6, 4))), np.ones((1, 5), bool))


def test_zero_mlp_gives_residual_sum():
    rng = np.random.default_rng(4)
    fusion = CrossGlossAttentionFusion(8, rng, n_neighbors=3)
    last = fusion.head.mlp.layers[-1]
    last.weight.data[:] = 0
    last.bias.data[:] = 0
    fp, fr = (Tensor(rng.normal(size=(2, 6, 8))) for _ in range(2))
    mask = np.ones((2, 6), bool)
    p_hat, r_hat = fusion.stage1(fp, fr, mask)
    np.testing.assert_array_equal(fusion(fp, fr, mask).data, (p_hat + r_hat).data)


def test_tied_weights_symmetry():
    rng = np.random.default_rng(5)
    fusion = CrossGlossAttentionFusion(8, rng, n_neighbors=3)
    for lp, lr in zip(fusion.pose_layers, fusion.rgb_layers):
        lr.load_state_dict(lp.state_dict())
        lp.offset.data = rng.normal(scale=0.3, size=lp.offset.shape)
        lr.offset.data = lp.offset.data.copy()
    x = rng.normal(size=(1, 8, 8))
    p_hat, r_hat = fusion.stage1(Tensor(x), Tensor(x), np.ones((1, 8), bool))
    np.testing.assert_array_equal(p_hat.data, r_hat.data)


def test_gradients_reach_both_streams():
    rng = np.random.default_rng(6)
    fusion = CrossGlossAttentionFusion(8, rng, n_neighbors=3)
    fp, fr = (Tensor(rng.normal(size=(1, 6, 8)), requires_grad=True) for _ in range(2))
    out = fusion(fp, fr, np.ones((1, 6), bool))
    T.sum_(out * Tensor(rng.normal(size=out.shape))).backward()
    assert np.abs(fp.grad).sum() > 0 and np.abs(fr.grad).sum() > 0
    offs = [l.offset.grad for l in fusion.pose_layers + fusion.rgb_layers]
    assert all(g is not None and np.abs(g).sum() > 0 for g in offs)


def test_cgaf_gradcheck():
    rng = np.random.default_rng(8)
    fusion = CrossGlossAttentionFusion(4, rng, n_neighbors=3)
    for layer in fusion.pose_layers + fusion.rgb_layers:
        layer.offset.data = rng.normal(scale=0.4, size=layer.offset.shape)
    fp, fr = (Tensor(rng.normal(size=(1, 5, 4)), requires_grad=True) for _ in range(2))
    probe = rng.normal(size=(1, 5, 4))
    mask = np.array([[1, 1, 1, 1, 0]], bool)
    params = [fp, fr] + [l.offset for l in fusion.pose_layers]
    res = T.gradcheck(lambda: T.sum_(fusion(fp, fr, mask) * probe), params, tol=1e-4)
    assert res.passed, res


@pytest.mark.parametrize("variant", list(FusionVariant))
def test_variant_shape_contract(variant):
    rng = np.random.default_rng(9)
    fusion = build_fusion(variant, 8, rng, n_neighbors=3, tr_heads=2, max_len=8)
    fp, fr = (Tensor(rng.normal(size=(3, 8, 8))) for _ in range(2))
    mask = np.ones((3, 8), bool)
    mask[1, 5:] = False
    assert fuse_variant(fusion, fp, fr, mask).shape == (3, 8, 8)


def test_add_mlp_identity_config():
    from seds.fusion import AddMlpFusion

    rng = np.random.default_rng(0)
    fusion = AddMlpFusion(4, rng, dims=[4])
    fp, fr = (Tensor(rng.normal(size=(1, 3, 4))) for _ in range(2))
    np.testing.assert_array_equal(fusion(fp, fr, None).data, fp.data + fr.data)


def test_unknown_variant():
    with pytest.raises(ValueError):
        build_fusion("sum", 4, np.random.default_rng(0))
