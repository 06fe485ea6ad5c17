"""Fine-grained text/video and pose/RGB similarity, and the contrastive losses.

Similarity matrices use the convention ``M[i, j]`` = text i vs video j (and
``S[m, n]`` = pose of video m vs RGB of video n). The "t2k" InfoNCE direction
normalises over a row, the "k2t" direction over a column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

INIT_TEMPERATURE = 1.0 / 0.07
MAX_TEMPERATURE = 100.0


@dataclass
class LossConfig:
    alpha: float = 0.8
    beta: float = 0.4
    init_temperature: float = INIT_TEMPERATURE
    max_temperature: float = MAX_TEMPERATURE
    normalize: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0 < self.init_temperature <= self.max_temperature:
            raise ValueError("init_temperature must lie in (0, max_temperature]")


@dataclass
class FineGrainedScore:
    sim: Tensor       # E [T, L]
    col: Tensor       # softmax over clips, per word
    row: Tensor       # softmax over words, per clip
    per_word: Tensor  # E'_t2k [L]
    per_clip: Tensor  # E'_k2t [T]
    t2k: Tensor       # scalar M_t2k
    k2t: Tensor       # scalar M_k2t


@dataclass
class PoseRgbScore:
    sim: Tensor       # V [T, T]
    p2r: Tensor       # V * colsoftmax(V)
    r2p: Tensor       # V * rowsoftmax(V)
    s_p2r: Tensor
    s_r2p: Tensor


def _mask(mask, n) -> np.ndarray:
    return np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)


def _maybe_normalize(x: Tensor, normalize: bool) -> Tensor:
    return T.l2_normalize(x, axis=-1) if normalize else x


def fine_grained_similarity(f_k: Tensor, f_w: Tensor, clip_mask=None, word_mask=None,
                            normalize: bool = True) -> FineGrainedScore:
    """Clip/word similarity for one video and one text, built from primitives."""
    cm = _mask(clip_mask, f_k.shape[0])
    wm = _mask(word_mask, f_w.shape[0])
    if not cm.any() or not wm.any():
        raise ValueError("need at least one valid clip and one valid word")
    f_k, f_w = _maybe_normalize(f_k, normalize), _maybe_normalize(f_w, normalize)
    e = T.matmul(f_k, f_w.swapaxes(0, 1))
    valid = cm[:, None] & wm[None, :]
    col = T.softmax(e, axis=0, mask=valid, allow_empty=True)
    row = T.softmax(e, axis=1, mask=valid, allow_empty=True)
    per_word = T.sum_(e * col, axis=0)
    per_clip = T.sum_(e * row, axis=1)
    t2k = T.sum_(per_word * wm.astype(float)) * (1.0 / wm.sum())
    k2t = T.sum_(per_clip * cm.astype(float)) * (1.0 / cm.sum())
    return FineGrainedScore(e, col, row, per_word, per_clip, t2k, k2t)


def batch_similarity(videos: Tensor, clip_mask, texts: Tensor, word_mask,
                     normalize: bool = True) -> tuple[Tensor, Tensor]:
    """All-pairs fine-grained scores.

    ``videos`` [Bv, T, D], ``texts`` [Bt, L, D]. Returns (M_t2k, M_k2t), each
    [Bt, Bv] with entry (i, j) scoring text i against video j.
    """
    bv, t, d = videos.shape
    bt, length, d2 = texts.shape
    if d != d2:
        raise T.ShapeError(f"feature widths differ: videos {videos.shape}, texts {texts.shape}")
    if bv < 1 or bt < 1:
        raise ValueError("batch_similarity needs at least one video and one text")
    v = _maybe_normalize(videos, normalize).reshape(1, bv, t, d)
    w = _maybe_normalize(texts, normalize).reshape(bt, 1, length, d)
    e = T.matmul(v, w.swapaxes(-1, -2))  # [Bt, Bv, T, L]
    cm = np.asarray(clip_mask, bool)[None, :, :]
    wm = np.asarray(word_mask, bool)[:, None, :]
    scores = T.fine_grained_scores(e, cm, wm)
    return scores[..., 0], scores[..., 1]


def pose_rgb_similarity(f_p: Tensor, f_r: Tensor, mask=None, normalize: bool = True) -> PoseRgbScore:
    """Diagonal-weighted clip/clip similarity for one video's two streams."""
    if f_p.shape != f_r.shape:
        raise T.ShapeError(f"pose {f_p.shape} and rgb {f_r.shape} differ")
    m = _mask(mask, f_p.shape[0])
    if not m.any():
        raise ValueError("need at least one valid clip")
    s = _batch_pose_rgb(
        _maybe_normalize(f_p, normalize).reshape((1,) + f_p.shape), m[None],
        _maybe_normalize(f_r, normalize).reshape((1,) + f_r.shape), m[None],
    )
    return PoseRgbScore(
        s["sim"][0, 0], s["p2r"][0, 0], s["r2p"][0, 0], s["s_p2r"][0, 0], s["s_r2p"][0, 0]
    )


def _batch_pose_rgb(fp: Tensor, pmask, fr: Tensor, rmask) -> dict:
    b1, t, d = fp.shape
    b2 = fr.shape[0]
    v = T.matmul(fp.reshape(b1, 1, t, d), fr.reshape(1, b2, t, d).swapaxes(-1, -2))  # [B, B, T, T]
    valid = np.asarray(pmask, bool)[:, None, :, None] & np.asarray(rmask, bool)[None, :, None, :]
    p2r = v * T.softmax(v, axis=-2, mask=valid, allow_empty=True)
    r2p = v * T.softmax(v, axis=-1, mask=valid, allow_empty=True)
    # S_p2r: diag term i weighted by a softmax over row i; S_r2p: over column i
    w_p2r = T.softmax(p2r, axis=-1, mask=valid, allow_empty=True)
    w_r2p = T.softmax(r2p, axis=-2, mask=valid, allow_empty=True)
    s_p2r = T.sum_(T.diagonal(p2r * w_p2r), axis=-1)
    s_r2p = T.sum_(T.diagonal(r2p * w_r2p), axis=-1)
    return {"sim": v, "p2r": p2r, "r2p": r2p, "s_p2r": s_p2r, "s_r2p": s_r2p}


def batch_pose_rgb_similarity(f_p: Tensor, f_r: Tensor, mask, normalize: bool = True) -> tuple[Tensor, Tensor]:
    """(S_p2r, S_r2p), each [B, B] with entry (m, n) = pose of m vs RGB of n."""
    m = np.asarray(mask, bool)
    if np.any(m.sum(axis=-1) == 0):
        raise ValueError("a video has no valid clips")
    s = _batch_pose_rgb(_maybe_normalize(f_p, normalize), m, _maybe_normalize(f_r, normalize), m)
    return s["s_p2r"], s["s_r2p"]


def _as_scale(tau) -> Tensor:
    return tau if isinstance(tau, Tensor) else T.Tensor(np.float64(tau))


def infonce(m: Tensor, tau, direction: str = "t2k") -> Tensor:
    """-(1/B) sum_i log softmax(tau M)[i, i], over row i ("t2k") or column i ("k2t")."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise T.ShapeError(f"infonce needs a square matrix, got {m.shape}")
    tau = _as_scale(tau)
    if float(tau.data) <= 0:
        raise ValueError("temperature scale must be > 0")
    logits = m * tau
    if direction == "t2k":
        lp = T.log_softmax(logits, axis=1)
    elif direction == "k2t":
        lp = T.log_softmax(logits, axis=0)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return -T.mean(T.diagonal(lp))


def symmetric_infonce(m_t2k: Tensor, m_k2t: Tensor, tau) -> Tensor:
    return (infonce(m_t2k, tau, "t2k") + infonce(m_k2t, tau, "k2t")) * 0.5


def tva_loss(pairs: dict, alpha: float, tau) -> dict:
    """L_tva = L_t-v + alpha (L_t-p + L_t-r).

    ``pairs`` maps "v", "p", "r" to (M_t2k, M_k2t) tuples.
    """
    parts = {k: symmetric_infonce(*pairs[k], tau) for k in ("v", "p", "r")}
    total = parts["v"] + (parts["p"] + parts["r"]) * alpha
    return {"loss_tva": total, "loss_tv": parts["v"], "loss_tp": parts["p"], "loss_tr": parts["r"]}


def pose_rgb_loss(s_p2r: Tensor, s_r2p: Tensor, tau) -> Tensor:
    """L_p-r = (L_p2r + L_r2p) / 2; pose queries rank RGB rows, RGB queries rank pose columns."""
    return (infonce(s_p2r, tau, "t2k") + infonce(s_r2p, tau, "k2t")) * 0.5


def joint_loss(l_tva: Tensor, l_pr: Tensor, beta: float) -> Tensor:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return l_tva + l_pr * beta if beta else l_tva


def temperature_from_log(log_scale: float, max_temperature: float = MAX_TEMPERATURE) -> float:
    return min(math.exp(log_scale), max_temperature)
