"""Pose/RGB fusion: cross gloss attention (CGAF) and baseline fusers.

Gloss attention lets query clip t look at N sampling positions around t,
shifted by offsets predicted from the query and wrapped around the valid
part of the sequence. Keys and values at fractional positions come from
circular linear interpolation. Wrapping is modulo the number of valid
clips, so padded clips never feed real ones.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Mlp, Module, MultiHeadAttention, TransformerEncoder, merge_heads, split_heads
from .tensor import Parameter, Tensor


class FusionVariant(str, enum.Enum):
    CGAF = "cgaf"
    ADD_MLP = "add_mlp"
    CONCATE_MLP = "concate_mlp"
    CONCATE_TRANS = "concate_trans"
    CROSS_ATTEN = "cross_atten"


def valid_lengths(mask: np.ndarray) -> np.ndarray:
    """Per-row count of valid clips; masks must be a valid prefix followed by padding."""
    m = np.asarray(mask, bool)
    n = m.sum(axis=-1)
    if np.any(n == 0):
        raise ValueError("clip mask has a row with no valid clips")
    prefix = np.arange(m.shape[-1]) < n[..., None]
    if not np.array_equal(prefix, m):
        raise ValueError("clip mask must be a contiguous valid prefix")
    return n


def constant_positions(t: int, n: int) -> np.ndarray:
    """[T, N] window {t - N//2, ..., t + ceil(N/2) - 1} for each query t."""
    return (np.arange(t)[:, None] - n // 2 + np.arange(n)[None, :]).astype(np.float64)


def gloss_attention_raw(q: Tensor, k: Tensor, v: Tensor, offsets: Tensor, lengths: np.ndarray,
                        scaled: bool = True, return_weights: bool = False):
    """Attention over interpolated neighbours, before any output projection.

    q, k, v are [B, H, T, dh]; offsets [B, H, T, N]; lengths [B].
    Returns h [B, H, T, dh] (and the [B, H, T, N] weights if asked).
    """
    b, h, t, dh = q.shape
    n = offsets.shape[-1]
    lengths = np.asarray(lengths, dtype=np.int64)
    base = constant_positions(t, n)
    T.check_finite(offsets, "gloss attention offsets")
    pos = T.remainder(offsets + base, lengths.reshape(b, 1, 1, 1))
    ring = np.broadcast_to(lengths[:, None], (b, h))
    k_hat = T.interp_gather(k, pos, length=ring)  # [B, H, T, N, dh]
    v_hat = T.interp_gather(v, pos, length=ring)
    logits = T.matmul(k_hat, q.reshape(b, h, t, dh, 1)).reshape(b, h, t, n)
    if scaled:
        logits = logits * (1.0 / math.sqrt(dh))
    weights = T.softmax(logits, axis=-1)
    out = T.matmul(weights.reshape(b, h, t, 1, n), v_hat).reshape(b, h, t, dh)
    return (out, weights, pos) if return_weights else out


class GlossAttentionLayer(Module):
    """Pre-norm cross gloss attention block: x_q + Attn(LN x_q, LN x_kv), then FFN.

    The offset projection starts at zero so training begins from the plain
    local window.
    """

    def __init__(self, d: int, rng: np.random.Generator, n_neighbors: int = 7, heads: int = 1,
                 offset_clip: float | None = None, scaled_dot: bool = True, d_ff: int | None = None):
        if d % heads:
            raise ValueError(f"width {d} is not divisible by {heads} heads")
        self.n_neighbors = n_neighbors
        self.heads = heads
        self.offset_clip = float(n_neighbors if offset_clip is None else offset_clip)
        self.scaled_dot = scaled_dot
        self.ln_q = LayerNorm(d)
        self.ln_kv = LayerNorm(d)
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.offset = Parameter(np.zeros((d, heads * n_neighbors)), dtype=T.get_default_dtype())
        self.out = Linear(d, d, rng)
        self.ln_ff = LayerNorm(d)
        self.ff = Mlp([d, d_ff or 2 * d, d], rng)

    def attend(self, x_q: Tensor, x_kv: Tensor, mask: np.ndarray, return_weights: bool = False):
        b, t, d = x_q.shape
        if x_kv.shape != x_q.shape:
            raise T.ShapeError(f"gloss attention streams differ: {x_q.shape} vs {x_kv.shape}")
        if self.n_neighbors > t:
            raise ValueError(f"n_neighbors={self.n_neighbors} exceeds sequence length {t}")
        lengths = valid_lengths(mask)
        a, c = self.ln_q(x_q), self.ln_kv(x_kv)
        q = self.q(a)
        off = T.matmul(q, self.offset).reshape(b, t, self.heads, self.n_neighbors).transpose(0, 2, 1, 3)
        off = T.clip(off, -self.offset_clip, self.offset_clip)
        res = gloss_attention_raw(
            split_heads(q, self.heads), split_heads(self.k(c), self.heads), split_heads(self.v(c), self.heads),
            off, lengths, scaled=self.scaled_dot, return_weights=return_weights,
        )
        if return_weights:
            h, w, pos = res
            return self.out(merge_heads(h)), w, pos
        return self.out(merge_heads(res))

    def forward(self, x_q: Tensor, x_kv: Tensor, mask: np.ndarray) -> Tensor:
        x = x_q + self.attend(x_q, x_kv, mask)
        return x + self.ff(self.ln_ff(x))


def gloss_attention(layer: GlossAttentionLayer, f_q: Tensor, f_kv: Tensor, mask) -> Tensor:
    return layer(f_q, f_kv, mask)


class FusionHead(Module):
    """f_v = MLP([f_p, f_r]) + f_p + f_r."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.mlp = Mlp([2 * d, 2 * d, d], rng)

    def forward(self, fp_hat: Tensor, fr_hat: Tensor) -> Tensor:
        return self.mlp(T.concat([fp_hat, fr_hat], axis=-1)) + fp_hat + fr_hat


class CrossGlossAttentionFusion(Module):
    def __init__(self, d: int, rng: np.random.Generator, n_layers: int = 2, **attn_kw):
        self.pose_layers = [GlossAttentionLayer(d, rng, **attn_kw) for _ in range(n_layers)]
        self.rgb_layers = [GlossAttentionLayer(d, rng, **attn_kw) for _ in range(n_layers)]
        self.head = FusionHead(d, rng)

    def stage1(self, f_p: Tensor, f_r: Tensor, mask) -> tuple[Tensor, Tensor]:
        """Groups {q_p, k_r, v_r} and {q_r, k_p, v_p} through every layer."""
        p, r = f_p, f_r
        for lp, lr in zip(self.pose_layers, self.rgb_layers):
            p, r = lp(p, r, mask), lr(r, p, mask)
        return p, r

    def forward(self, f_p: Tensor, f_r: Tensor, mask) -> Tensor:
        return self.head(*self.stage1(f_p, f_r, mask))


def cgaf_fuse(fusion: CrossGlossAttentionFusion, f_p: Tensor, f_r: Tensor, mask) -> Tensor:
    return fusion(f_p, f_r, mask)


class AddMlpFusion(Module):
    def __init__(self, d: int, rng: np.random.Generator, dims=None):
        self.mlp = Mlp(dims or [d, 2 * d, d], rng)

    def forward(self, f_p, f_r, mask):
        return self.mlp(f_p + f_r)


class ConcateMlpFusion(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.mlp = Mlp([2 * d, 2 * d, d], rng)

    def forward(self, f_p, f_r, mask):
        return self.mlp(T.concat([f_p, f_r], axis=-1))


class ConcateTransFusion(Module):
    """Concatenate along time, one shared transformer layer, split and add."""

    def __init__(self, d: int, rng: np.random.Generator, heads: int = 4, max_len: int = 64, depth: int = 1):
        self.encoder = TransformerEncoder(d, depth, heads, 2 * max_len, rng)

    def forward(self, f_p, f_r, mask):
        t = f_p.shape[1]
        m = np.asarray(mask, bool)
        x = self.encoder(T.concat([f_p, f_r], axis=1), np.concatenate([m, m], axis=1))
        return x[:, :t] + x[:, t:]


class CrossAttenFusion(Module):
    """Bidirectional global cross attention (pre-norm residual), then add."""

    def __init__(self, d: int, rng: np.random.Generator, heads: int = 4):
        self.ln_p = LayerNorm(d)
        self.ln_r = LayerNorm(d)
        self.p_from_r = MultiHeadAttention(d, heads, rng)
        self.r_from_p = MultiHeadAttention(d, heads, rng)

    def forward(self, f_p, f_r, mask):
        a, c = self.ln_p(f_p), self.ln_r(f_r)
        p = f_p + self.p_from_r(a, c, mask)
        r = f_r + self.r_from_p(c, a, mask)
        return p + r


def build_fusion(variant, d: int, rng: np.random.Generator, n_neighbors: int = 7, offset_clip=None,
                 scaled_dot: bool = True, heads: int = 1, max_len: int = 64, tr_heads: int = 4) -> Module:
    try:
        v = FusionVariant(variant)
    except ValueError as exc:
        raise ValueError(f"unknown fusion variant {variant!r}") from exc
    if v is FusionVariant.CGAF:
        return CrossGlossAttentionFusion(d, rng, n_neighbors=n_neighbors, heads=heads,
                                         offset_clip=offset_clip, scaled_dot=scaled_dot)
    if v is FusionVariant.ADD_MLP:
        return AddMlpFusion(d, rng)
    if v is FusionVariant.CONCATE_MLP:
        return ConcateMlpFusion(d, rng)
    if v is FusionVariant.CONCATE_TRANS:
        return ConcateTransFusion(d, rng, heads=tr_heads, max_len=max_len)
    return CrossAttenFusion(d, rng, heads=tr_heads)


def fuse_variant(fusion: Module, f_p: Tensor, f_r: Tensor, mask) -> Tensor:
    if f_p.shape != f_r.shape:
        raise T.ShapeError(f"fusion inputs differ: {f_p.shape} vs {f_r.shape}")
    return fusion(f_p, f_r, mask)
