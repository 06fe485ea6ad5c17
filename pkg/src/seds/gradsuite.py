"""Finite-difference checks for primitives and composed model paths.

Everything runs in float64. Each case builder returns ``(scalar_fn, inputs)``
so the same registry drives the test suite and ``seds gradcheck``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import objectives as O
from . import tensor as T
from .data.pose import plan_clips
from .data.topology import N_KEYPOINTS
from .encoders import PoseEncoder, TextEncoder
from .fusion import CrossGlossAttentionFusion, GlossAttentionLayer

PRIMITIVE_TOL = 1e-5
COMPOSED_TOL = 1e-4
MODULES = ("tensor", "encoders", "fusion", "objectives")


def t64(x, grad=True):
    return T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def primitive_cases(rng: np.random.Generator) -> list:
    """(name, fn builder) pairs; each builder returns (scalar_fn, inputs)."""

    def unary(op, lo=-2.0, hi=2.0, shape=(10, 12)):
        def build():
            x = t64(rng.uniform(lo, hi, size=shape))
            w = rng.normal(size=shape)
            return (lambda: (op(x) * w).sum()), [x]
        return build

    def binary(op, shape_a=(10, 12), shape_b=(10, 12), pos_b=False):
        def build():
            a = t64(rng.normal(size=shape_a))
            braw = rng.normal(size=shape_b)
            b = t64(np.abs(braw) + 0.5 if pos_b else braw)
            w = rng.normal(size=np.broadcast_shapes(shape_a, shape_b))
            return (lambda: (op(a, b) * w).sum()), [a, b]
        return build

    def matmul_build():
        a, b = t64(rng.normal(size=(2, 10, 6))), t64(rng.normal(size=(6, 11)))
        w = rng.normal(size=(2, 10, 11))
        return (lambda: (T.matmul(a, b) * w).sum()), [a, b]

    def softmax_build():
        x = t64(rng.normal(size=(10, 12)))
        mask = rng.uniform(size=(10, 12)) < 0.8
        mask[:, 0] = True
        w = rng.normal(size=(10, 12))
        return (lambda: (T.softmax(x, axis=-1, mask=mask) * w).sum()), [x]

    def take_build():
        x = t64(rng.normal(size=(12, 9)))
        idx = rng.integers(0, 12, size=(5, 4))
        w = rng.normal(size=(5, 4, 9))
        return (lambda: (T.take(x, idx, axis=0) * w).sum()), [x]

    def take_along_build():
        x = t64(rng.normal(size=(3, 12, 5)))
        idx = rng.integers(0, 12, size=(3, 10))
        w = rng.normal(size=(3, 10, 5))
        return (lambda: (T.take_along(x, idx, axis=1) * w).sum()), [x]

    def concat_build():
        a, b = t64(rng.normal(size=(6, 10))), t64(rng.normal(size=(6, 8)))
        w = rng.normal(size=(6, 18))
        return (lambda: (T.concat([a, b], axis=1) * w).sum()), [a, b]

    def pad_diag_build():
        x = t64(rng.normal(size=(4, 6, 6)))
        w = rng.normal(size=(4, 8))
        return (lambda: (T.pad(T.diagonal(x), [(0, 0), (1, 1)]) * w).sum()), [x]

    def reduce_build():
        x = t64(rng.normal(size=(4, 5, 6)))
        w = rng.normal(size=(4, 6))
        return (lambda: (T.mean(x, axis=1) * w).sum() + T.sum_(x * x)), [x]

    def logsm_build():
        x = t64(rng.normal(size=(10, 12)))
        w = rng.normal(size=(10, 12))
        return (lambda: (T.log_softmax(x, axis=0) * w).sum()), [x]

    def l2_build():
        x = t64(rng.normal(size=(10, 12)))
        w = rng.normal(size=(10, 12))
        return (lambda: (T.l2_normalize(x, axis=-1) * w).sum()), [x]

    def fine_grained_build():
        x = t64(rng.normal(size=(3, 4, 5, 6)))
        cm = rng.uniform(size=(3, 4, 5)) < 0.7
        wm = rng.uniform(size=(3, 4, 6)) < 0.7
        cm[..., 0] = True
        wm[..., 0] = True
        w = rng.normal(size=(3, 4, 2))
        return (lambda: (T.fine_grained_scores(x, cm, wm) * w).sum()), [x]

    def interp_build():
        seq = t64(rng.normal(size=(2, 8, 5)))
        pos = t64(rng.uniform(0.05, 0.95, size=(2, 8, 7)) + rng.integers(0, 7, size=(2, 8, 7)))
        w = rng.normal(size=(2, 8, 7, 5))
        return (lambda: (T.interp_gather(seq, pos, length=np.array([8, 8])) * w).sum()), [seq, pos]

    return [
        ("add", binary(T.add, shape_b=(12,))),
        ("sub", binary(T.sub)),
        ("mul", binary(T.mul)),
        ("div", binary(T.div, pos_b=True)),
        ("exp", unary(T.exp)),
        ("log", unary(T.log, 0.5, 3.0)),
        ("tanh", unary(T.tanh)),
        ("gelu", unary(T.gelu)),
        ("relu", unary(lambda x: T.relu(x) * x)),
        ("power", unary(lambda x: x**3.0)),
        ("matmul", matmul_build),
        ("softmax", softmax_build),
        ("log_softmax", logsm_build),
        ("layer_norm", unary(T.layer_norm)),
        ("l2_normalize", l2_build),
        ("take", take_build),
        ("take_along", take_along_build),
        ("concat", concat_build),
        ("pad_diagonal", pad_diag_build),
        ("reduce", reduce_build),
        ("interp_gather", interp_build),
        ("fine_grained_scores", fine_grained_build),
    ]


def _keypoints(rng, b, f):
    kp = rng.uniform(0.2, 0.8, size=(b, f, N_KEYPOINTS, 3))
    kp[..., 2] = rng.uniform(0.5, 1.0, size=(b, f, N_KEYPOINTS))
    return kp


def _jitter_offsets(layers, rng, scale=0.4):
    # zero-initialised offsets would leave the offset path untested
    for layer in layers:
        layer.offset.data = rng.normal(scale=scale, size=layer.offset.shape)


def encoder_cases(rng: np.random.Generator) -> list:
    def pose_build():
        enc = PoseEncoder(16, 8, rng)
        kp = _keypoints(rng, 1, 20)
        win = plan_clips(20, 3).frame_windows()[None]
        w = rng.normal(size=(1, 3, 16))
        params = [enc.hand.layers[0].weight, enc.hand.readout.weight, enc.body.layers[1].weight,
                  enc.conv1.weight, enc.conv2.bias, enc.proj.weight]
        return (lambda: (enc(kp, win) * w).sum()), params

    def text_build():
        te = TextEncoder(12, 8, 1, 2, rng, max_len=5)
        tokens = rng.integers(2, 12, size=(2, 4))
        mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], bool)
        w = rng.normal(size=(2, 4, 8))
        return (lambda: (te(tokens, mask) * w).sum()), te.parameters()[:4]

    return [("pose_encoder", pose_build), ("text_encoder", text_build)]


def fusion_cases(rng: np.random.Generator) -> list:
    def layer_build():
        layer = GlossAttentionLayer(6, rng, n_neighbors=3, heads=2)
        _jitter_offsets([layer], rng)
        xq, xkv = t64(rng.normal(size=(2, 5, 6))), t64(rng.normal(size=(2, 5, 6)))
        mask = np.array([[1] * 5, [1, 1, 1, 1, 0]], bool)
        w = rng.normal(size=(2, 5, 6))
        return (lambda: (layer(xq, xkv, mask) * w).sum()), [xq, xkv, layer.offset, layer.q.weight]

    def cgaf_build():
        fusion = CrossGlossAttentionFusion(4, rng, n_neighbors=3)
        _jitter_offsets(fusion.pose_layers + fusion.rgb_layers, rng)
        fp, fr = t64(rng.normal(size=(1, 5, 4))), t64(rng.normal(size=(1, 5, 4)))
        mask = np.array([[1, 1, 1, 1, 0]], bool)
        w = rng.normal(size=(1, 5, 4))
        return (lambda: (fusion(fp, fr, mask) * w).sum()), [fp, fr, fusion.rgb_layers[0].offset]

    return [("gloss_attention", layer_build), ("cgaf", cgaf_build)]


def objective_cases(rng: np.random.Generator) -> list:
    b, t, l, d = 3, 4, 3, 5
    cm = np.array([[1, 1, 1, 1], [1, 1, 1, 0], [1, 1, 0, 0]], bool)
    wm = np.array([[1, 1, 1], [1, 1, 0], [1, 0, 0]], bool)

    def tv_build():
        fv, fw = t64(rng.normal(size=(b, t, d))), t64(rng.normal(size=(b, l, d)))
        tau = t64(np.float64(2.5))
        return (lambda: O.symmetric_infonce(*O.batch_similarity(fv, cm, fw, wm), tau)), [fv, fw, tau]

    def pr_build():
        fp, fr = t64(rng.normal(size=(b, t, d))), t64(rng.normal(size=(b, t, d)))
        tau = t64(np.float64(2.5))
        return (lambda: O.pose_rgb_loss(*O.batch_pose_rgb_similarity(fp, fr, cm), tau)), [fp, fr, tau]

    def single_build():
        fk, fw = t64(rng.normal(size=(t, d))), t64(rng.normal(size=(l, d)))
        fp, fr = t64(rng.normal(size=(t, d))), t64(rng.normal(size=(t, d)))

        def fn():
            s = O.fine_grained_similarity(fk, fw, cm[1], wm[1])
            r = O.pose_rgb_similarity(fp, fr, cm[1])
            return s.t2k + s.k2t * 0.7 + r.s_p2r * 1.3 - r.s_r2p
        return fn, [fk, fw, fp, fr]

    return [("text_video_loss", tv_build), ("pose_rgb_loss", pr_build), ("single_pair_scores", single_build)]


def joint_path_cases(rng: np.random.Generator) -> list:
    """Pose encoder -> CGAF -> joint loss, end to end."""

    def build():
        b, f, t, d = 2, 18, 3, 8
        enc = PoseEncoder(d, 4, rng)
        fusion = CrossGlossAttentionFusion(d, rng, n_neighbors=3)
        _jitter_offsets(fusion.pose_layers + fusion.rgb_layers, rng)
        kp = _keypoints(rng, b, f)
        win = np.stack([plan_clips(f, t).frame_windows()] * b)
        cm = np.array([[1, 1, 1], [1, 1, 0]], bool)
        wm = np.array([[1, 1], [1, 0]], bool)
        fr = t64(rng.normal(size=(b, t, d)))
        fw = t64(rng.normal(size=(b, 2, d)))
        tau = t64(np.float64(3.0))

        def fn():
            fp = enc(kp, win)
            fv = fusion(fp, fr, cm)
            pairs = {k: O.batch_similarity(x, cm, fw, wm) for k, x in (("v", fv), ("p", fp), ("r", fr))}
            tva = O.tva_loss(pairs, 0.8, tau)["loss_tva"]
            return O.joint_loss(tva, O.pose_rgb_loss(*O.batch_pose_rgb_similarity(fp, fr, cm), tau), 0.4)

        params = [enc.hand.layers[0].weight, enc.conv1.weight, enc.proj.weight,
                  fusion.pose_layers[0].offset, fusion.head.mlp.layers[0].weight, fr, fw, tau]
        return fn, params

    return [("pose_cgaf_joint_loss", build)]


SUITES = {
    "tensor": (primitive_cases, PRIMITIVE_TOL, None),
    "encoders": (encoder_cases, COMPOSED_TOL, 60),
    "fusion": (fusion_cases, COMPOSED_TOL, 60),
    "objectives": (objective_cases, COMPOSED_TOL, None),
    "joint": (joint_path_cases, COMPOSED_TOL, 40),
}


@dataclass
class CheckRecord:
    module: str
    name: str
    seed: int
    max_rel_err: float
    n_checked: int
    tol: float
    passed: bool
    n_refined: int = 0


def run_suite(modules=("all",), seeds=range(10)) -> list[CheckRecord]:
    names = list(SUITES) if "all" in modules else list(modules)
    unknown = set(names) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown gradcheck module(s): {sorted(unknown)}")
    records = []
    with T.default_dtype(np.float64):
        for mod in names:
            builder, tol, max_entries = SUITES[mod]
            for seed in seeds:
                rng = np.random.default_rng([seed, 7])
                for name, build in builder(rng):
                    fn, inputs = build()
                    res = T.gradcheck(fn, inputs, tol=tol, max_entries=max_entries,
                                      rng=np.random.default_rng(seed))
                    records.append(CheckRecord(mod, name, seed, res.max_rel_err, res.n_checked, tol, res.passed,
                                               res.n_refined))
    return records
