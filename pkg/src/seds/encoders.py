"""Pose, RGB and text encoders.

Pose path, per video: keypoints [F, 49, 3] -> per-group GCN stacks (one
shared by both hands, one for the body) -> per-frame features [F, 3 Dg] ->
16-frame windows per clip [T, 16, 3 Dg] -> two stride-2 temporal
convolutions and a mean over the remaining 4 steps -> projection to D.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data.pose import CLIP_LEN
from .data.topology import BODY, BODY_ANCHOR, HAND_ANCHOR, LEFT_HAND, RIGHT_HAND, SkeletonTopology, normalized_adjacency
from .nn import Embedding, Linear, Module, TransformerEncoder, uniform_init, zeros
from .tensor import Tensor

RGB_DIM = 1024


class GcnLayer(Module):
    """One graph convolution sigma(A_hat f W) over a fixed keypoint graph."""

    def __init__(self, adjacency: np.ndarray, d_in: int, d_out: int, rng: np.random.Generator,
                 activation: str = "relu"):
        self.a_hat = normalized_adjacency(adjacency)
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.activation = activation

    def forward(self, f: Tensor) -> Tensor:
        """``f`` is [..., K, D_in] with K the group's keypoint count."""
        k = self.a_hat.shape[0]
        if f.shape[-2] != k:
            raise T.ShapeError(f"gcn: {f.shape[-2]} keypoints but adjacency is {k}x{k}")
        a = T.Tensor(self.a_hat, dtype=f.dtype)
        h = T.matmul(a, T.matmul(f, self.weight))
        if self.activation == "relu":
            return T.relu(h)
        if self.activation == "identity":
            return h
        raise ValueError(f"unknown activation {self.activation}")


def gcn_forward(layer: GcnLayer, f: Tensor) -> Tensor:
    return layer(f)


class GcnStack(Module):
    """GCN layers followed by a flatten-and-project readout to one vector per frame."""

    def __init__(self, adjacency: np.ndarray, d_hidden: int, d_out: int, depth: int, rng: np.random.Generator):
        dims = [3] + [d_hidden] * depth
        self.layers = [GcnLayer(adjacency, a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        k = adjacency.shape[0]
        self.readout = Linear(k * dims[-1], d_out, rng)

    def forward(self, f: Tensor) -> Tensor:
        for layer in self.layers:
            f = layer(f)
        lead = f.shape[:-2]
        return self.readout(f.reshape(lead + (f.shape[-2] * f.shape[-1],)))


def anchor_normalize(keypoints: np.ndarray) -> np.ndarray:
    """Make (x, y) relative to the wrist (hands) and nose (body); keep confidence."""
    kp = np.array(keypoints, copy=True)
    for sl, anchor in ((LEFT_HAND, HAND_ANCHOR), (RIGHT_HAND, HAND_ANCHOR), (BODY, BODY_ANCHOR)):
        group = kp[..., sl, :2]
        group -= group[..., anchor:anchor + 1, :]
    return kp


class TemporalConv(Module):
    """1-D convolution over time, kernel 5, stride 2, padding 2."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, kernel: int = 5, stride: int = 2):
        self.kernel, self.stride = kernel, stride
        self.weight = uniform_init(rng, (kernel * d_in, d_out), kernel * d_in)
        self.bias = zeros(d_out)

    def forward(self, x: Tensor) -> Tensor:
        """[N, L, C] -> [N, L_out, C_out]."""
        n, length, c = x.shape
        p = self.kernel // 2
        xp = T.pad(x, [(0, 0), (p, p), (0, 0)])
        l_out = (length + 2 * p - self.kernel) // self.stride + 1
        idx = np.arange(l_out)[:, None] * self.stride + np.arange(self.kernel)[None, :]
        win = T.take(xp, idx, axis=1)  # [N, L_out, K, C]
        win = win.reshape(n, l_out, self.kernel * c)
        return T.matmul(win, self.weight) + self.bias


class PoseEncoder(Module):
    def __init__(self, d_model: int, d_group: int, rng: np.random.Generator, gcn_depth: int = 2,
                 anchor_norm: bool = True, topology: SkeletonTopology | None = None, coord_scale: float = 10.0):
        topo = topology or SkeletonTopology()
        self.anchor_norm = anchor_norm
        self.coord_scale = coord_scale
        self.hand = GcnStack(topo.hand_adj, d_group, d_group, gcn_depth, rng)
        self.body = GcnStack(topo.body_adj, d_group, d_group, gcn_depth, rng)
        c = 3 * d_group
        self.conv1 = TemporalConv(c, c, rng)
        self.conv2 = TemporalConv(c, c, rng)
        self.proj = Linear(c, d_model, rng)

    def frame_features(self, keypoints: np.ndarray, dtype=None) -> Tensor:
        """[B, F, 49, 3] -> [B, F, 3 Dg]."""
        kp = anchor_normalize(keypoints) if self.anchor_norm else np.array(keypoints, copy=True)
        kp[..., :2] *= self.coord_scale
        x = T.Tensor(kp, dtype=dtype or self.proj.weight.dtype)
        left = self.hand(x[..., LEFT_HAND, :])
        right = self.hand(x[..., RIGHT_HAND, :])
        body = self.body(x[..., BODY, :])
        return T.concat([left, right, body], axis=-1)

    def forward(self, keypoints: np.ndarray, windows: np.ndarray) -> Tensor:
        """Keypoints [B, F, 49, 3] and clip windows [B, T, 16] -> f^p' [B, T, D]."""
        frames = self.frame_features(keypoints)
        b, t, w = windows.shape
        if w != CLIP_LEN:
            raise T.ShapeError(f"clip windows must span {CLIP_LEN} frames, got {w}")
        clips = T.take_along(frames, windows.reshape(b, t * w), axis=1)  # [B, T*16, C]
        c = clips.shape[-1]
        x = clips.reshape(b * t, w, c)
        x = T.gelu(self.conv1(x))
        x = T.gelu(self.conv2(x))
        x = T.mean(x, axis=1)
        return self.proj(x).reshape(b, t, self.proj.weight.shape[1])


def encode_pose(enc: PoseEncoder, keypoints: np.ndarray, windows: np.ndarray) -> Tensor:
    return enc(keypoints, windows)


class RgbAdapter(Module):
    """Trainable projection of frozen 1024-d clip features to D."""

    def __init__(self, d_model: int, rng: np.random.Generator, d_in: int = RGB_DIM):
        self.proj = Linear(d_in, d_model, rng)

    def forward(self, feats: np.ndarray) -> Tensor:
        x = T.Tensor(np.asarray(feats), dtype=self.proj.weight.dtype)
        return self.proj(x)


def adapt_rgb(a: RgbAdapter, feats: np.ndarray) -> Tensor:
    return a(feats)


class InteractionTransformer(TransformerEncoder):
    """Self-attention over one modality's clip sequence."""


def interact(tr: InteractionTransformer, x: Tensor, mask: np.ndarray) -> Tensor:
    return tr(x, mask)


class TextEncoder(Module):
    def __init__(self, vocab_size: int, d_model: int, depth: int, heads: int, rng: np.random.Generator,
                 max_len: int = 32):
        self.embed = Embedding(vocab_size, d_model, rng)
        self.encoder = TransformerEncoder(d_model, depth, heads, max_len, rng)
        self.proj = Linear(d_model, d_model, rng)

    def forward(self, tokens: np.ndarray, mask: np.ndarray) -> Tensor:
        tokens = np.asarray(tokens)
        mask = np.asarray(mask, bool)
        if tokens.shape != mask.shape:
            raise T.ShapeError(f"tokens {tokens.shape} and mask {mask.shape} differ")
        return self.proj(self.encoder(self.embed(tokens), mask))


def encode_text(te: TextEncoder, tokens: np.ndarray, mask: np.ndarray) -> Tensor:
    return te(tokens, mask)
