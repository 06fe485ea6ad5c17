"""Pure-numpy reference kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same results (up to float summation order).
"""

import numpy as np


def _flat_positions(pos, length):
    """Split positions into (lower index, upper index, weight), all [M, T, N]."""
    lead = pos.shape[:-2]
    t, n = pos.shape[-2:]
    m = int(np.prod(lead, dtype=np.int64)) if lead else 1
    p = pos.reshape(m, t, n)
    lo = np.floor(p)
    w = p - lo
    lo = lo.astype(np.int64)
    ln = np.broadcast_to(np.asarray(length, dtype=np.int64), lead).reshape(m, 1, 1)
    hi = lo + 1
    hi = np.where(hi >= ln, hi - ln, hi)
    return lo, hi, w


def interp_gather_forward(seq, pos, length):
    """out[..., t, i, :] = (1-w) seq[lo] + w seq[hi] with circular upper index."""
    lead = seq.shape[:-2]
    t, d = seq.shape[-2:]
    n = pos.shape[-1]
    lo, hi, w = _flat_positions(pos, length)
    s = seq.reshape(-1, t, d)
    rows = np.arange(s.shape[0])[:, None, None]
    w = w[..., None]
    out = (1.0 - w) * s[rows, lo] + w * s[rows, hi]
    return out.reshape(lead + (t, n, d)).astype(seq.dtype, copy=False)


def interp_gather_backward(seq, pos, length, grad_out):
    """Return (grad_seq, grad_pos) for ``interp_gather_forward``."""
    lead = seq.shape[:-2]
    t, d = seq.shape[-2:]
    n = pos.shape[-1]
    lo, hi, w = _flat_positions(pos, length)
    s = seq.reshape(-1, t, d)
    m = s.shape[0]
    g = grad_out.reshape(m, t, n, d)
    rows = np.arange(m)[:, None, None]
    grad_pos = np.einsum("mtnd,mtnd->mtn", g, s[rows, hi] - s[rows, lo])

    base = (np.arange(m) * t)[:, None, None]
    grad_seq = np.zeros((m * t, d), dtype=np.result_type(seq.dtype, grad_out.dtype))
    wv = w[..., None]
    np.add.at(grad_seq, (base + lo).ravel(), ((1.0 - wv) * g).reshape(-1, d))
    np.add.at(grad_seq, (base + hi).ravel(), (wv * g).reshape(-1, d))
    return (
        grad_seq.reshape(lead + (t, d)).astype(seq.dtype, copy=False),
        grad_pos.reshape(pos.shape).astype(pos.dtype, copy=False),
    )


def _masked_softmax(x, valid, axis):
    neg = np.where(valid, x, -np.inf)
    mx = np.max(neg, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(valid, np.exp(neg - mx), 0.0)
    z = e.sum(axis=axis, keepdims=True)
    return e / np.where(z > 0, z, 1.0)


def fine_grained_forward(sim, clip_mask, word_mask):
    """Softmax-weighted clip/word reduction of a batch of similarity matrices.

    ``sim`` is [..., T, L]; masks are boolean [..., T] and [..., L].
    Returns ``(scores[..., 2], cache)`` where ``scores[..., 0]`` is the
    word-side (t2k) score and ``scores[..., 1]`` the clip-side (k2t) score.
    """
    cm = clip_mask[..., :, None]
    wm = word_mask[..., None, :]
    valid = cm & wm
    p_col = _masked_softmax(sim, valid, axis=-2)
    p_row = _masked_softmax(sim, valid, axis=-1)
    per_word = (sim * p_col).sum(axis=-2)
    per_clip = (sim * p_row).sum(axis=-1)
    n_word = word_mask.sum(axis=-1)
    n_clip = clip_mask.sum(axis=-1)
    if np.any(n_word == 0) or np.any(n_clip == 0):
        raise ValueError("fine-grained score needs at least one valid clip and word")
    t2k = np.where(word_mask, per_word, 0.0).sum(axis=-1) / n_word
    k2t = np.where(clip_mask, per_clip, 0.0).sum(axis=-1) / n_clip
    scores = np.stack([t2k, k2t], axis=-1).astype(sim.dtype, copy=False)
    return scores, (p_col, p_row, per_word, per_clip)


def fine_grained_backward(sim, clip_mask, word_mask, cache, grad_scores):
    """Gradient of ``fine_grained_forward`` scores w.r.t. ``sim``.

    For s = sum_i x_i softmax(x)_i the derivative is p_k (1 + x_k - s).
    """
    p_col, p_row, per_word, per_clip = cache
    n_word = word_mask.sum(axis=-1)[..., None, None]
    n_clip = clip_mask.sum(axis=-1)[..., None, None]
    g_t2k = grad_scores[..., 0][..., None, None]
    g_k2t = grad_scores[..., 1][..., None, None]
    d_col = p_col * (1.0 + sim - per_word[..., None, :]) * word_mask[..., None, :]
    d_row = p_row * (1.0 + sim - per_clip[..., :, None]) * clip_mask[..., :, None]
    grad = g_t2k * d_col / n_word + g_k2t * d_row / n_clip
    return grad.astype(sim.dtype, copy=False)
