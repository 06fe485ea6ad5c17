"""Synthetic paired sign-video/text corpora.

Each gloss owns a keypoint trajectory prototype (wrist paths plus evolving
hand shapes) and an appearance prototype in RGB-feature space. A sample
strings a few glosses together, renders them with signer offset/scale,
tempo and jitter, and produces:

* a pose file, [F, 49, 3] keypoints;
* an RGB feature file, one 1024-d row per stride-1 16-frame window of the
  original frames (F - 15 rows): the overlap-weighted gloss appearance
  prototypes, a sample-constant nuisance vector and noise;
* a token sequence, one word per gloss with optional filler words and
  local reordering.

Glosses can be made partially ambiguous per modality: ``rgb_confusion``
blends appearance prototypes inside pairs (2k, 2k+1) and ``pose_confusion``
blends motion prototypes between g and g + G/2, so neither stream alone
separates every gloss.

Generation is a pure function of (spec, sample index).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..tensor import io as tio
from .pose import CLIP_LEN
from .topology import N_BODY, N_HAND, N_KEYPOINTS

RGB_DIM = 1024
SPECIALS = ("<pad>", "<unk>")


@dataclass
class SyntheticSpec:
    n_glosses: int = 20
    glosses_per_sample: tuple = (3, 5)
    gloss_frames: tuple = (16, 24)
    pose_noise: float = 0.01
    signer_offset: float = 0.08
    signer_scale: float = 0.1
    tempo_jitter: float = 0.1
    low_conf_prob: float = 0.03
    pose_confusion: float = 0.0
    rgb_dim: int = RGB_DIM
    rgb_nuisance: float = 0.5
    rgb_noise: float = 0.3
    rgb_confusion: float = 0.0
    n_fillers: int = 4
    filler_prob: float = 0.0
    permute_prob: float = 0.0
    fps: float = 24.0
    seed: int = 0

    def __post_init__(self):
        self.glosses_per_sample = tuple(self.glosses_per_sample)
        self.gloss_frames = tuple(self.gloss_frames)
        self.validate()

    def validate(self) -> None:
        if self.n_glosses < 2:
            raise ValueError("n_glosses must be >= 2")
        lo, hi = self.glosses_per_sample
        if not 1 <= lo <= hi:
            raise ValueError(f"bad glosses_per_sample {self.glosses_per_sample}")
        flo, fhi = self.gloss_frames
        if not 1 <= flo <= fhi:
            raise ValueError(f"bad gloss_frames {self.gloss_frames}")
        if flo * lo < CLIP_LEN:
            raise ValueError("shortest possible sample is below one clip")
        for name in ("pose_noise", "signer_offset", "signer_scale", "tempo_jitter", "rgb_nuisance", "rgb_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("low_conf_prob", "pose_confusion", "rgb_confusion", "filler_prob", "permute_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.tempo_jitter >= 1:
            raise ValueError("tempo_jitter must be < 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["glosses_per_sample"] = list(self.glosses_per_sample)
        d["gloss_frames"] = list(self.gloss_frames)
        return d


def vocabulary(spec: SyntheticSpec) -> list[str]:
    return list(SPECIALS) + [f"g{g:03d}" for g in range(spec.n_glosses)] + [f"f{k}" for k in range(spec.n_fillers)]


# --- prototypes -----------------------------------------------------------

_FINGER_ANGLES = np.deg2rad([-50.0, -20.0, 0.0, 20.0, 40.0])
_JOINT_LEN = np.array([0.30, 0.25, 0.2, 0.17])
_PALM = 0.4
_HAND_SIZE = 0.09

_BODY_REST = np.array([
    [0.50, 0.22],  # nose
    [0.62, 0.38],  # left shoulder (image right)
    [0.38, 0.38],  # right shoulder
    [0.68, 0.58],
    [0.32, 0.58],
    [0.66, 0.80],
    [0.34, 0.80],
])


def hand_points(curl: np.ndarray, rotation: float) -> np.ndarray:
    """21 hand keypoints relative to the wrist for five finger curls in [0, 1]."""
    pts = np.zeros((N_HAND, 2))
    for f in range(5):
        ang = _FINGER_ANGLES[f] * (1.6 if f == 0 else 1.0)
        direction = np.array([np.sin(ang), -np.cos(ang)])
        base = direction * (_PALM if f else _PALM * 0.5)
        pos = base.copy()
        heading = ang
        for j in range(4):
            idx = 1 + 4 * f + j
            if j == 0:
                pts[idx] = base
                continue
            heading = heading + curl[f] * 1.1 * (1 if f else -1)
            step = np.array([np.sin(heading), -np.cos(heading)]) * _JOINT_LEN[j]
            pos = pos + step
            pts[idx] = pos
    c, s = np.cos(rotation), np.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    return (pts @ rot.T) * _HAND_SIZE


@dataclass
class GlossPrototype:
    n_frames: int
    # per hand: wrist start/end, arc amplitude, frequency, curl start/end, rotation start/end
    motion: np.ndarray
    appearance: np.ndarray


def _motion_params(rng: np.random.Generator) -> np.ndarray:
    """Flat parameter vector describing both hands' motion over a gloss."""
    out = []
    for hand in range(2):
        cx = 0.42 if hand == 0 else 0.58
        start = rng.uniform([cx - 0.12, 0.45], [cx + 0.12, 0.75])
        end = rng.uniform([cx - 0.12, 0.45], [cx + 0.12, 0.75])
        amp = rng.uniform(-0.08, 0.08)
        freq = rng.uniform(0.5, 2.0)
        curl0 = rng.uniform(0, 1, size=5)
        curl1 = rng.uniform(0, 1, size=5)
        rot = rng.uniform(-0.8, 0.8, size=2)
        out.append(np.concatenate([start, end, [amp, freq], curl0, curl1, rot]))
    return np.concatenate(out)


def render_motion(motion: np.ndarray, n_frames: int) -> np.ndarray:
    """Keypoints [n_frames, 49, 2] for a gloss motion parameter vector."""
    per = len(motion) // 2
    s = np.linspace(0.0, 1.0, n_frames)
    ease = 0.5 - 0.5 * np.cos(np.pi * s)
    out = np.zeros((n_frames, N_KEYPOINTS, 2))
    wrists = []
    for hand in range(2):
        p = motion[hand * per:(hand + 1) * per]
        start, end, amp, freq = p[0:2], p[2:4], p[4], p[5]
        curl0, curl1, rot = p[6:11], p[11:16], p[16:18]
        d = end - start
        perp = np.array([-d[1], d[0]]) / (np.linalg.norm(d) + 1e-9)
        wrist = start + ease[:, None] * d + (amp * np.sin(np.pi * freq * s))[:, None] * perp
        wrists.append(wrist)
        sl = slice(hand * N_HAND, (hand + 1) * N_HAND)
        for k in range(n_frames):
            curl = (1 - ease[k]) * curl0 + ease[k] * curl1
            r = (1 - ease[k]) * rot[0] + ease[k] * rot[1]
            shape = hand_points(curl, r)
            if hand == 0:
                shape[:, 0] = -shape[:, 0]
            out[k, sl] = wrist[k] + shape
    body = np.broadcast_to(_BODY_REST, (n_frames, N_BODY, 2)).copy()
    # image-left hand (group 0) is the signer's right; wire wrists and elbows
    body[:, 6] = wrists[0]
    body[:, 5] = wrists[1]
    body[:, 4] = 0.5 * (body[:, 2] + wrists[0]) + np.array([-0.04, 0.02])
    body[:, 3] = 0.5 * (body[:, 1] + wrists[1]) + np.array([0.04, 0.02])
    out[:, 2 * N_HAND:] = body
    return out


def gloss_prototypes(spec: SyntheticSpec) -> list[GlossPrototype]:
    rng = np.random.default_rng([spec.seed, 0])
    g = spec.n_glosses
    lengths = rng.integers(spec.gloss_frames[0], spec.gloss_frames[1] + 1, size=g)
    own_motion = np.stack([_motion_params(rng) for _ in range(g)])
    own_app = rng.normal(size=(g, spec.rgb_dim))
    group_app = rng.normal(size=((g + 1) // 2, spec.rgb_dim))

    half = g // 2
    protos = []
    for k in range(g):
        partner = (k + half) % g if half else k
        lo, hi = min(k, partner), max(k, partner)
        shared = 0.5 * (own_motion[lo] + own_motion[hi])
        motion = (1 - spec.pose_confusion) * own_motion[k] + spec.pose_confusion * shared
        c = spec.rgb_confusion
        app = np.sqrt(1 - c) * own_app[k] + np.sqrt(c) * group_app[k // 2]
        app = app / np.linalg.norm(app)
        protos.append(GlossPrototype(int(lengths[k]), motion, app))
    return protos


# --- samples --------------------------------------------------------------

@dataclass
class SyntheticSample:
    gloss_ids: list
    tokens: list
    keypoints: np.ndarray
    rgb: np.ndarray
    gloss_spans: list = field(default_factory=list)


def _retime(traj: np.ndarray, n_out: int) -> np.ndarray:
    n_in = traj.shape[0]
    if n_out == n_in:
        return traj
    src = np.linspace(0, n_in - 1, n_out)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    w = (src - lo)[:, None, None]
    return (1 - w) * traj[lo] + w * traj[hi]


def text_for(gloss_ids, spec: SyntheticSpec, rng: np.random.Generator) -> list[str]:
    words = [f"g{g:03d}" for g in gloss_ids]
    if spec.permute_prob > 0:
        i = 0
        while i < len(words) - 1:
            if rng.random() < spec.permute_prob:
                words[i], words[i + 1] = words[i + 1], words[i]
                i += 2
            else:
                i += 1
    if spec.filler_prob > 0 and spec.n_fillers > 0:
        out = []
        for w in words:
            out.append(w)
            if rng.random() < spec.filler_prob:
                out.append(f"f{int(rng.integers(spec.n_fillers))}")
        words = out
    return words


def render_sample(spec: SyntheticSpec, protos, gloss_ids, rng: np.random.Generator) -> SyntheticSample:
    """Render one video + text for a given gloss sequence."""
    pieces, spans, t0 = [], [], 0
    for g in gloss_ids:
        p = protos[g]
        traj = render_motion(p.motion, p.n_frames)
        n = p.n_frames
        if spec.tempo_jitter > 0:
            n = max(2, int(round(n * rng.uniform(1 - spec.tempo_jitter, 1 + spec.tempo_jitter))))
            traj = _retime(traj, n)
        pieces.append(traj)
        spans.append((t0, t0 + n))
        t0 += n
    xy = np.concatenate(pieces, axis=0)
    f = xy.shape[0]
    if f < CLIP_LEN:
        raise ValueError("rendered sample is shorter than one clip")

    scale = 1.0 + rng.uniform(-spec.signer_scale, spec.signer_scale)
    offset = rng.uniform(-spec.signer_offset, spec.signer_offset, size=2)
    xy = (xy - 0.5) * scale + 0.5 + offset
    if spec.pose_noise > 0:
        xy = xy + rng.normal(0.0, spec.pose_noise, size=xy.shape)

    conf = rng.uniform(0.85, 1.0, size=(f, N_KEYPOINTS))
    if spec.low_conf_prob > 0:
        bad = rng.random(size=(f, 2)) < spec.low_conf_prob
        for hand in range(2):
            rows = np.flatnonzero(bad[:, hand])
            sl = slice(hand * N_HAND, (hand + 1) * N_HAND)
            conf[rows, sl] = rng.uniform(0.0, 0.2, size=(len(rows), N_HAND))
            xy[rows, sl] += rng.normal(0.0, 0.05, size=(len(rows), N_HAND, 2))
    keypoints = np.concatenate([xy, conf[..., None]], axis=-1)

    # RGB rows: one per 16-frame window of the original frames
    n_win = f - CLIP_LEN + 1
    overlap = np.zeros((n_win, len(gloss_ids)))
    for k, (a, b) in enumerate(spans):
        starts = np.arange(n_win)
        overlap[:, k] = np.clip(np.minimum(starts + CLIP_LEN, b) - np.maximum(starts, a), 0, None)
    overlap /= CLIP_LEN
    app = np.stack([protos[g].appearance for g in gloss_ids])
    d = spec.rgb_dim
    nuisance = rng.normal(size=d) / np.sqrt(d) * spec.rgb_nuisance
    rgb = overlap @ app + nuisance
    if spec.rgb_noise > 0:
        rgb = rgb + rng.normal(size=(n_win, d)) / np.sqrt(d) * spec.rgb_noise

    tokens = text_for(gloss_ids, spec, rng)
    return SyntheticSample(list(map(int, gloss_ids)), tokens, keypoints, rgb, spans)


def sample_glosses(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    n = int(rng.integers(spec.glosses_per_sample[0], spec.glosses_per_sample[1] + 1))
    ids = rng.integers(spec.n_glosses, size=n)
    # no immediate repeats: a repeated gloss would be indistinguishable from a longer one
    for i in range(1, n):
        while ids[i] == ids[i - 1]:
            ids[i] = rng.integers(spec.n_glosses)
    return ids


def make_sample(spec: SyntheticSpec, index: int, protos=None) -> SyntheticSample:
    protos = protos if protos is not None else gloss_prototypes(spec)
    rng = np.random.default_rng([spec.seed, 1, index])
    return render_sample(spec, protos, sample_glosses(spec, rng), rng)


def synth_dataset(spec: SyntheticSpec, out_dir, n_train: int, n_val: int, n_test: int) -> Path:
    """Write a manifest plus per-sample SEDT files; returns the manifest path."""
    spec.validate()
    for n in (n_train, n_val, n_test):
        if n < 1:
            raise ValueError("split sizes must be >= 1")
    out = Path(out_dir)
    (out / "poses").mkdir(parents=True, exist_ok=True)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    protos = gloss_prototypes(spec)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    samples = []
    for i, split in enumerate(splits):
        s = make_sample(spec, i, protos)
        sid = f"{split}_{i:05d}"
        pose_file = f"poses/{sid}.sedt"
        rgb_file = f"rgb/{sid}.sedt"
        tio.save(out / pose_file, s.keypoints.astype(np.float32))
        tio.save(out / rgb_file, s.rgb.astype(np.float32))
        samples.append({
            "id": sid,
            "split": split,
            "pose_file": pose_file,
            "rgb_file": rgb_file,
            "text": s.tokens,
            "gloss_ids": s.gloss_ids,
            "n_frames": int(s.keypoints.shape[0]),
            "fps": spec.fps,
        })
    manifest = {
        "samples": samples,
        "vocab": vocabulary(spec),
        "spec": spec.to_dict(),
        "seed": spec.seed,
    }
    path = out / "manifest.json"
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp, path)
    return path
