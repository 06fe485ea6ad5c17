"""Manifest reading and batch assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..tensor import io as tio
from .pose import CLIP_LEN, PoseSequence, TooShortError, filter_frames, plan_clips

PAD_ID = 0
UNK_ID = 1
MAX_WORDS = 32
MAX_CLIPS = 64


class IngestionError(RuntimeError):
    """A sample's files are missing or malformed."""


class Manifest:
    def __init__(self, path):
        self.path = Path(path)
        if self.path.is_dir():
            self.path = self.path / "manifest.json"
        try:
            raw = json.loads(self.path.read_text())
        except FileNotFoundError as exc:
            raise IngestionError(f"manifest not found: {self.path}") from exc
        except json.JSONDecodeError as exc:
            raise IngestionError(f"manifest is not valid JSON: {self.path}") from exc
        self.root = self.path.parent
        self.samples: list[dict] = raw["samples"]
        self.vocab: list[str] = raw["vocab"]
        self.spec: dict = raw.get("spec", {})
        self.seed = raw.get("seed")
        self.token_ids = {w: i for i, w in enumerate(self.vocab)}

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, name: str) -> list[int]:
        return [i for i, s in enumerate(self.samples) if s.get("split") == name]

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self.token_ids.get(w, UNK_ID) for w in words]


@dataclass
class Batch:
    """B aligned text/video pairs; position i of every field is pair i."""

    ids: list
    keypoints: np.ndarray     # [B, F_max, 49, 3] kept frames, zero padded
    frame_mask: np.ndarray    # [B, F_max]
    windows: np.ndarray       # [B, T, 16] indices into the kept frames
    clip_mask: np.ndarray     # [B, T]
    rgb: np.ndarray           # [B, T, 1024]
    tokens: np.ndarray        # [B, L] int64
    word_mask: np.ndarray     # [B, L]

    @property
    def size(self) -> int:
        return len(self.ids)


def _load_tensor(manifest: Manifest, sample: dict, key: str) -> np.ndarray:
    path = manifest.root / sample[key]
    try:
        return tio.load(path)
    except FileNotFoundError as exc:
        raise IngestionError(f"sample {sample['id']}: missing {key} {path}") from exc
    except tio.TensorFormatError as exc:
        raise IngestionError(f"sample {sample['id']}: corrupt {key} {path}: {exc}") from exc


def load_sample(manifest: Manifest, index: int, n_clips: int = MAX_CLIPS, max_words: int = MAX_WORDS,
                min_conf: float = 0.3):
    """Load one sample: (kept PoseSequence, plan, rgb [T, D], token ids)."""
    s = manifest.samples[index]
    kp = _load_tensor(manifest, s, "pose_file")
    rgb_all = _load_tensor(manifest, s, "rgb_file")
    try:
        pose = PoseSequence(kp.astype(np.float64), fps=s.get("fps", 24.0))
    except ValueError as exc:
        raise IngestionError(f"sample {s['id']}: {exc}") from exc
    if pose.n_frames < CLIP_LEN:
        raise IngestionError(f"sample {s['id']}: {pose.n_frames} frames is shorter than one clip")
    if rgb_all.ndim != 2 or rgb_all.shape[0] != pose.n_frames - CLIP_LEN + 1:
        raise IngestionError(
            f"sample {s['id']}: rgb features {rgb_all.shape} do not match {pose.n_frames} frames"
        )
    try:
        kept = filter_frames(pose, min_conf)
    except TooShortError:
        kept = pose
    plan = plan_clips(kept.n_frames, n_clips)
    # a kept-frame window starting at kept index k maps to the original window
    # starting at frame_index[k]
    orig_start = np.minimum(kept.frame_index[plan.selected], rgb_all.shape[0] - 1)
    rgb = rgb_all[orig_start]
    tokens = manifest.encode(s["text"])[:max_words]
    if not tokens:
        raise IngestionError(f"sample {s['id']}: empty text")
    return kept, plan, rgb, tokens


def load_batch(manifest: Manifest, indices: Sequence[int], n_clips: int = MAX_CLIPS,
               max_words: int = MAX_WORDS, min_conf: float = 0.3, dtype=np.float32) -> Batch:
    if not len(indices):
        raise ValueError("empty batch")
    loaded = [load_sample(manifest, i, n_clips, max_words, min_conf) for i in indices]
    b = len(loaded)
    f_max = max(p.n_frames for p, *_ in loaded)
    l_max = max(len(t) for *_, t in loaded)
    d_rgb = loaded[0][2].shape[1]
    keypoints = np.zeros((b, f_max, loaded[0][0].keypoints.shape[1], 3), dtype=dtype)
    frame_mask = np.zeros((b, f_max), dtype=bool)
    windows = np.zeros((b, n_clips, CLIP_LEN), dtype=np.int64)
    clip_mask = np.zeros((b, n_clips), dtype=bool)
    rgb = np.zeros((b, n_clips, d_rgb), dtype=dtype)
    tokens = np.full((b, l_max), PAD_ID, dtype=np.int64)
    word_mask = np.zeros((b, l_max), dtype=bool)
    for i, (pose, plan, r, toks) in enumerate(loaded):
        keypoints[i, :pose.n_frames] = pose.keypoints
        frame_mask[i, :pose.n_frames] = True
        windows[i] = plan.frame_windows()
        clip_mask[i] = plan.mask
        if r.shape[1] != d_rgb:
            raise IngestionError(f"sample {manifest.samples[indices[i]]['id']}: rgb dim {r.shape[1]} != {d_rgb}")
        rgb[i] = r
        tokens[i, :len(toks)] = toks
        word_mask[i, :len(toks)] = True
    ids = [manifest.samples[i]["id"] for i in indices]
    return Batch(ids, keypoints, frame_mask, windows, clip_mask, rgb, tokens, word_mask)
