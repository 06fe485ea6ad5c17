"""Pose sequences, quality filtering and clip planning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import LEFT_HAND, N_KEYPOINTS, RIGHT_HAND

CLIP_LEN = 16


class TooShortError(ValueError):
    """A video has fewer than ``CLIP_LEN`` usable frames."""


@dataclass
class PoseSequence:
    """Keypoints [F, 49, 3] as (x, y, confidence) plus the source frame ids."""

    keypoints: np.ndarray
    fps: float = 24.0
    frame_index: np.ndarray = field(default=None)

    def __post_init__(self):
        kp = np.asarray(self.keypoints)
        if kp.ndim != 3 or kp.shape[1:] != (N_KEYPOINTS, 3) or kp.shape[0] < 1:
            raise ValueError(f"keypoints must be [F>=1, {N_KEYPOINTS}, 3], got {kp.shape}")
        if not np.all(np.isfinite(kp)):
            raise ValueError("keypoints contain NaN or Inf")
        conf = kp[..., 2]
        if np.any(conf < 0) or np.any(conf > 1):
            raise ValueError("confidence outside [0, 1]")
        self.keypoints = kp
        if self.frame_index is None:
            self.frame_index = np.arange(kp.shape[0])

    @property
    def n_frames(self) -> int:
        return self.keypoints.shape[0]


def hand_confidence(p: PoseSequence) -> np.ndarray:
    """Per-frame mean confidence of the (left, right) hand groups, [F, 2]."""
    conf = p.keypoints[..., 2]
    return np.stack([conf[:, LEFT_HAND].mean(axis=1), conf[:, RIGHT_HAND].mean(axis=1)], axis=1)


def filter_frames(p: PoseSequence, min_conf: float = 0.3) -> PoseSequence:
    """Drop frames where either hand's mean confidence is below ``min_conf``.

    The result keeps frame order; ``frame_index`` maps kept frames back to
    the original sequence.
    """
    if not 0.0 <= min_conf <= 1.0:
        raise ValueError(f"min_conf must be in [0, 1], got {min_conf}")
    keep = np.all(hand_confidence(p) >= min_conf, axis=1)
    if keep.sum() < CLIP_LEN:
        raise TooShortError(f"only {int(keep.sum())} frames pass the quality filter, need {CLIP_LEN}")
    return PoseSequence(p.keypoints[keep], p.fps, p.frame_index[keep])


@dataclass(frozen=True)
class ClipPlan:
    """Which 16-frame windows of the kept frames become the T clips."""

    n_candidates: int
    selected: np.ndarray
    mask: np.ndarray

    @property
    def n_clips(self) -> int:
        return len(self.selected)

    def frame_windows(self) -> np.ndarray:
        """[T, 16] indices into the kept frames."""
        return self.selected[:, None] + np.arange(CLIP_LEN)[None, :]


def plan_clips(n_frames: int, n_clips: int) -> ClipPlan:
    """Pick ``n_clips`` stride-1 windows at equal spacing.

    With C = n_frames - 15 candidate starts, clip i starts at
    round(i (C-1) / (T-1)) (halves round up). When C < T every candidate is
    used and the tail repeats the last start with mask 0.
    """
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    if n_frames < CLIP_LEN:
        raise TooShortError(f"{n_frames} frames, need at least {CLIP_LEN}")
    c = n_frames - CLIP_LEN + 1
    mask = np.ones(n_clips, dtype=bool)
    if c < n_clips:
        sel = np.concatenate([np.arange(c), np.full(n_clips - c, c - 1)])
        mask[c:] = False
    elif n_clips == 1:
        sel = np.array([(c - 1) // 2])
    else:
        i = np.arange(n_clips)
        sel = (2 * i * (c - 1) + (n_clips - 1)) // (2 * (n_clips - 1))
    return ClipPlan(c, sel.astype(np.int64), mask)
