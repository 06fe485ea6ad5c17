# cython: boundscheck=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_fallback.py``."""

import numpy as np
cimport cython
from cython cimport floating
from libc.math cimport exp, floor, INFINITY


@cython.wraparound(False)
cdef void _gather_fwd(floating[:, :, ::1] seq, floating[:, :, ::1] pos,
                      const long long[::1] length, floating[:, :, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t m, t, i, d, lo, hi
    cdef Py_ssize_t M = seq.shape[0], T = seq.shape[1], D = seq.shape[2], N = pos.shape[2]
    cdef floating p, w, fl
    for m in range(M):
        for t in range(T):
            for i in range(N):
                p = pos[m, t, i]
                fl = floor(p)
                lo = <Py_ssize_t>fl
                w = p - fl
                hi = lo + 1
                if hi >= length[m]:
                    hi -= length[m]
                for d in range(D):
                    out[m, t, i, d] = (1.0 - w) * seq[m, lo, d] + w * seq[m, hi, d]


@cython.wraparound(False)
cdef void _gather_bwd(floating[:, :, ::1] seq, floating[:, :, ::1] pos,
                      const long long[::1] length, floating[:, :, :, ::1] g,
                      floating[:, :, ::1] gseq, floating[:, :, ::1] gpos) noexcept nogil:
    cdef Py_ssize_t m, t, i, d, lo, hi
    cdef Py_ssize_t M = seq.shape[0], T = seq.shape[1], D = seq.shape[2], N = pos.shape[2]
    cdef floating p, w, fl, acc, gv
    for m in range(M):
        for t in range(T):
            for i in range(N):
                p = pos[m, t, i]
                fl = floor(p)
                lo = <Py_ssize_t>fl
                w = p - fl
                hi = lo + 1
                if hi >= length[m]:
                    hi -= length[m]
                acc = 0.0
                for d in range(D):
                    gv = g[m, t, i, d]
                    acc = acc + gv * (seq[m, hi, d] - seq[m, lo, d])
                    gseq[m, lo, d] += (1.0 - w) * gv
                    gseq[m, hi, d] += w * gv
                gpos[m, t, i] = acc


def interp_gather_forward(seq, pos, length):
    lead = seq.shape[:-2]
    T, D = seq.shape[-2:]
    N = pos.shape[-1]
    s = np.ascontiguousarray(seq).reshape(-1, T, D)
    p = np.ascontiguousarray(pos, dtype=s.dtype).reshape(-1, T, N)
    ln = np.ascontiguousarray(np.broadcast_to(np.asarray(length, dtype=np.int64), lead).reshape(-1))
    out = np.empty((s.shape[0], T, N, D), dtype=s.dtype)
    if s.dtype == np.float64:
        _gather_fwd[double](s, p, ln, out)
    else:
        _gather_fwd[float](s, p, ln, out)
    return out.reshape(lead + (T, N, D))


def interp_gather_backward(seq, pos, length, grad_out):
    lead = seq.shape[:-2]
    T, D = seq.shape[-2:]
    N = pos.shape[-1]
    s = np.ascontiguousarray(seq).reshape(-1, T, D)
    p = np.ascontiguousarray(pos, dtype=s.dtype).reshape(-1, T, N)
    g = np.ascontiguousarray(grad_out, dtype=s.dtype).reshape(-1, T, N, D)
    ln = np.ascontiguousarray(np.broadcast_to(np.asarray(length, dtype=np.int64), lead).reshape(-1))
    gseq = np.zeros_like(s)
    gpos = np.empty_like(p)
    if s.dtype == np.float64:
        _gather_bwd[double](s, p, ln, g, gseq, gpos)
    else:
        _gather_bwd[float](s, p, ln, g, gseq, gpos)
    return gseq.reshape(lead + (T, D)), gpos.reshape(pos.shape).astype(pos.dtype, copy=False)


@cython.wraparound(False)
cdef int _fg_fwd(floating[:, :, ::1] sim, const unsigned char[:, ::1] cm, const unsigned char[:, ::1] wm,
                 floating[:, :, ::1] pcol, floating[:, :, ::1] prow,
                 floating[:, ::1] per_word, floating[:, ::1] per_clip,
                 floating[:, ::1] scores) noexcept nogil:
    cdef Py_ssize_t m, i, j
    cdef Py_ssize_t M = sim.shape[0], T = sim.shape[1], L = sim.shape[2]
    cdef double mx, z, acc, tot
    cdef Py_ssize_t nw, nc
    for m in range(M):
        nw = 0
        nc = 0
        for j in range(L):
            nw += wm[m, j]
        for i in range(T):
            nc += cm[m, i]
        if nw == 0 or nc == 0:
            return -1
        # column softmax: over clips for each word
        tot = 0.0
        for j in range(L):
            per_word[m, j] = 0.0
            for i in range(T):
                pcol[m, i, j] = 0.0
            if not wm[m, j]:
                continue
            mx = -INFINITY
            for i in range(T):
                if cm[m, i] and sim[m, i, j] > mx:
                    mx = sim[m, i, j]
            z = 0.0
            for i in range(T):
                if cm[m, i]:
                    pcol[m, i, j] = exp(sim[m, i, j] - mx)
                    z += pcol[m, i, j]
            acc = 0.0
            for i in range(T):
                if cm[m, i]:
                    pcol[m, i, j] = pcol[m, i, j] / z
                    acc += sim[m, i, j] * pcol[m, i, j]
            per_word[m, j] = acc
            tot += acc
        scores[m, 0] = tot / nw
        # row softmax: over words for each clip
        tot = 0.0
        for i in range(T):
            per_clip[m, i] = 0.0
            for j in range(L):
                prow[m, i, j] = 0.0
            if not cm[m, i]:
                continue
            mx = -INFINITY
            for j in range(L):
                if wm[m, j] and sim[m, i, j] > mx:
                    mx = sim[m, i, j]
            z = 0.0
            for j in range(L):
                if wm[m, j]:
                    prow[m, i, j] = exp(sim[m, i, j] - mx)
                    z += prow[m, i, j]
            acc = 0.0
            for j in range(L):
                if wm[m, j]:
                    prow[m, i, j] = prow[m, i, j] / z
                    acc += sim[m, i, j] * prow[m, i, j]
            per_clip[m, i] = acc
            tot += acc
        scores[m, 1] = tot / nc
    return 0


@cython.wraparound(False)
cdef void _fg_bwd(floating[:, :, ::1] sim, const unsigned char[:, ::1] cm, const unsigned char[:, ::1] wm,
                  floating[:, :, ::1] pcol, floating[:, :, ::1] prow,
                  floating[:, ::1] per_word, floating[:, ::1] per_clip,
                  floating[:, ::1] gs, floating[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t m, i, j
    cdef Py_ssize_t M = sim.shape[0], T = sim.shape[1], L = sim.shape[2]
    cdef double a, b
    cdef Py_ssize_t nw, nc
    for m in range(M):
        nw = 0
        nc = 0
        for j in range(L):
            nw += wm[m, j]
        for i in range(T):
            nc += cm[m, i]
        a = gs[m, 0] / nw
        b = gs[m, 1] / nc
        for i in range(T):
            for j in range(L):
                if cm[m, i] and wm[m, j]:
                    out[m, i, j] = (a * pcol[m, i, j] * (1.0 + sim[m, i, j] - per_word[m, j])
                                    + b * prow[m, i, j] * (1.0 + sim[m, i, j] - per_clip[m, i]))
                else:
                    out[m, i, j] = 0.0


def fine_grained_forward(sim, clip_mask, word_mask):
    lead = sim.shape[:-2]
    T, L = sim.shape[-2:]
    x = np.ascontiguousarray(sim).reshape(-1, T, L)
    M = x.shape[0]
    cm = np.ascontiguousarray(clip_mask, dtype=np.bool_).reshape(M, T).view(np.uint8)
    wm = np.ascontiguousarray(word_mask, dtype=np.bool_).reshape(M, L).view(np.uint8)
    pcol = np.empty_like(x)
    prow = np.empty_like(x)
    per_word = np.empty((M, L), dtype=x.dtype)
    per_clip = np.empty((M, T), dtype=x.dtype)
    scores = np.empty((M, 2), dtype=x.dtype)
    if x.dtype == np.float64:
        rc = _fg_fwd[double](x, cm, wm, pcol, prow, per_word, per_clip, scores)
    else:
        rc = _fg_fwd[float](x, cm, wm, pcol, prow, per_word, per_clip, scores)
    if rc != 0:
        raise ValueError("fine-grained score needs at least one valid clip and word")
    return scores.reshape(lead + (2,)), (pcol, prow, per_word, per_clip)


def fine_grained_backward(sim, clip_mask, word_mask, cache, grad_scores):
    lead = sim.shape[:-2]
    T, L = sim.shape[-2:]
    x = np.ascontiguousarray(sim).reshape(-1, T, L)
    M = x.shape[0]
    cm = np.ascontiguousarray(clip_mask, dtype=np.bool_).reshape(M, T).view(np.uint8)
    wm = np.ascontiguousarray(word_mask, dtype=np.bool_).reshape(M, L).view(np.uint8)
    pcol, prow, per_word, per_clip = cache
    gs = np.ascontiguousarray(grad_scores, dtype=x.dtype).reshape(M, 2)
    out = np.empty_like(x)
    if x.dtype == np.float64:
        _fg_bwd[double](x, cm, wm, pcol, prow, per_word, per_clip, gs, out)
    else:
        _fg_bwd[float](x, cm, wm, pcol, prow, per_word, per_clip, gs, out)
    return out.reshape(lead + (T, L))
