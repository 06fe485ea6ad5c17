"""Retrieval metrics, split evaluation, and similarity export."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import objectives as O
from . import tensor as T
from .data.batch import Manifest, load_batch
from .model import MODALITIES
from .tensor import io as tio
from .train import PRECISIONS, load_checkpoint

DIRECTIONS = ("t2v", "v2t")


@dataclass
class RetrievalReport:
    direction: str
    r1: float
    r5: float
    r10: float
    medr: float
    ranks: list

    def to_dict(self) -> dict:
        return asdict(self)


def rank_queries(m: np.ndarray, direction: str = "t2v") -> np.ndarray:
    """1-based rank of each query's ground truth.

    ``m`` is indexed [text, video]. "t2v" queries are rows, "v2t" queries are
    columns. A candidate outranks the ground truth if it scores higher, or
    scores equal and has a lower index.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"rank_queries needs a square matrix, got {m.shape}")
    if direction == "v2t":
        m = m.T
    elif direction != "t2v":
        raise ValueError(f"unknown direction {direction!r}")
    gt = np.diag(m)[:, None]
    idx = np.arange(m.shape[0])
    ahead = (m > gt) | ((m == gt) & (idx[None, :] < idx[:, None]))
    return 1 + ahead.sum(axis=1)


def report(ranks, direction: str = "t2v") -> RetrievalReport:
    r = np.asarray(ranks)
    if r.size == 0:
        raise ValueError("no ranks to report")
    recall = {k: 100.0 * int(np.count_nonzero(r <= k)) / r.size for k in (1, 5, 10)}
    return RetrievalReport(direction, recall[1], recall[5], recall[10], float(np.median(r)),
                           [int(x) for x in r])


def retrieval_reports(m_t2k: np.ndarray, m_k2t: np.ndarray) -> tuple[RetrievalReport, RetrievalReport]:
    """T2V from the text-side scores, V2T from the video-side scores."""
    return (report(rank_queries(m_t2k, "t2v"), "t2v"), report(rank_queries(m_k2t, "v2t"), "v2t"))


def _pair_matrix(e: np.ndarray, cm, wm) -> np.ndarray:
    return e[np.ix_(np.flatnonzero(cm), np.flatnonzero(wm))]


def evaluate(ckpt, data, split: str = "test", modality: str = "fused", export_ids=None,
             out_dir=None, chunk: int = 64) -> tuple[RetrievalReport, RetrievalReport]:
    """Score every text of ``split`` against every video and report both directions."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    model, cfg, _ = load_checkpoint(ckpt)
    manifest = data if isinstance(data, Manifest) else Manifest(data)
    if len(manifest.vocab) != cfg.model.text_vocab:
        raise ValueError(
            f"checkpoint text vocabulary {cfg.model.text_vocab} does not match dataset {len(manifest.vocab)}"
        )
    idx = manifest.split(split)
    if not idx:
        raise ValueError(f"split {split!r} is empty")
    dtype = PRECISIONS[cfg.precision]
    stream = {"fused": "v", "pose": "p", "rgb": "r"}
    feats = {"p": [], "r": [], "v": []}
    words, cms, wms = [], [], []
    with T.default_dtype(dtype), T.no_grad():
        for s in range(0, len(idx), chunk):
            b = load_batch(manifest, idx[s:s + chunk], cfg.n_clips, cfg.max_words, cfg.min_conf, dtype)
            for k, f in model.encode_video(b).items():
                feats[k].append(f.data)
            w = model.encode_text(b).data
            pad = cfg.max_words - w.shape[1]
            words.append(np.pad(w, [(0, 0), (0, pad), (0, 0)]))
            wms.append(np.pad(b.word_mask, [(0, 0), (0, pad)]))
            cms.append(b.clip_mask)
        feats = {k: np.concatenate(v) for k, v in feats.items()}
        words, cm, wm = np.concatenate(words), np.concatenate(cms), np.concatenate(wms)
        video = T.Tensor(feats[stream[modality]])
        rows_t2k, rows_k2t = [], []
        for s in range(0, len(idx), chunk):
            a, c = O.batch_similarity(video, cm, T.Tensor(words[s:s + chunk]), wm[s:s + chunk], cfg.normalize)
            rows_t2k.append(a.data)
            rows_k2t.append(c.data)
        m_t2k, m_k2t = np.concatenate(rows_t2k), np.concatenate(rows_k2t)
        reports = retrieval_reports(m_t2k, m_k2t)
        if export_ids:
            ids = [manifest.samples[i]["id"] for i in idx]
            _export(Path(out_dir or Path(ckpt).parent) / "sim", ids, export_ids, feats, words, cm, wm,
                    m_t2k, m_k2t, cfg.normalize)
    return reports


def _export(out: Path, ids, export_ids, feats, words, cm, wm, m_t2k, m_k2t, normalize) -> None:
    out.mkdir(parents=True, exist_ok=True)
    unknown = [e for e in export_ids if e not in ids]
    if unknown:
        raise ValueError(f"unknown sample ids for export: {unknown}")
    norm = (lambda x: x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)) if normalize else (lambda x: x)
    s_p2r, s_r2p = O.batch_pose_rgb_similarity(T.Tensor(feats["p"]), T.Tensor(feats["r"]), cm, normalize)
    files = {"M_t2k": "M_t2k.sedt", "M_k2t": "M_k2t.sedt", "S_p2r": "S_p2r.sedt", "S_r2p": "S_r2p.sedt"}
    tio.save(out / files["M_t2k"], m_t2k)
    tio.save(out / files["M_k2t"], m_k2t)
    tio.save(out / files["S_p2r"], s_p2r.data)
    tio.save(out / files["S_r2p"], s_r2p.data)
    per_sample = {}
    for sid in export_ids:
        i = ids.index(sid)
        entry = {}
        for k in ("p", "r", "v"):
            e = norm(feats[k][i]) @ norm(words[i]).T
            name = f"{sid}_E{k}.sedt"
            tio.save(out / name, _pair_matrix(e, cm[i], wm[i]))
            entry[f"E_{k}"] = name
        per_sample[sid] = entry
    sidecar = {"ids": ids, "matrices": files, "samples": per_sample,
               "layout": "M[i, j] = text i vs video j; S[m, n] = pose of m vs rgb of n; E = [clips, words]"}
    (out / "index.json").write_text(json.dumps(sidecar, indent=1))


def write_reports(path, reports, ckpt, split: str, modality: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [{**r.to_dict(), "checkpoint": str(ckpt), "split": split, "modality": modality} for r in reports]
    path.write_text(json.dumps(payload, indent=1))
    return path
