"""Full text/video retrieval model: encoders, fusion, and the joint loss."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import objectives as O
from . import tensor as T
from .data.batch import Batch
from .encoders import InteractionTransformer, PoseEncoder, RgbAdapter, TextEncoder
from .fusion import FusionVariant, build_fusion
from .nn import Module
from .tensor import Parameter, Tensor

MODALITIES = ("fused", "pose", "rgb")
_STREAM = {"fused": "v", "pose": "p", "rgb": "r"}

# parameter-group membership by top-level attribute
ENCODER_GROUP = ("pose_encoder", "fusion", "log_scale")
TRANSFORMER_GROUP = ("rgb_adapter", "pose_tr", "rgb_tr", "text_encoder")


@dataclass
class FusionConfig:
    variant: str = "cgaf"
    n_neighbors: int = 7
    offset_clip: float | None = None
    scaled_dot: bool = True
    heads: int = 1

    def __post_init__(self):
        self.variant = FusionVariant(self.variant).value
        if self.n_neighbors < 1 or self.heads < 1:
            raise ValueError("fusion.n_neighbors and fusion.heads must be >= 1")


@dataclass
class ModelConfig:
    d_model: int = 64
    d_group: int = 16
    gcn_depth: int = 2
    tr_depth: int = 2
    tr_heads: int = 4
    anchor_norm: bool = True
    text_vocab: int = 32
    text_depth: int = 2
    n_clips: int = 16
    max_words: int = 32
    coord_scale: float = 10.0
    rgb_dim: int = 1024
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if isinstance(self.fusion, dict):
            self.fusion = FusionConfig(**self.fusion)
        if self.d_model % self.tr_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by tr_heads {self.tr_heads}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class SEDSModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, init_temperature: float = O.INIT_TEMPERATURE):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 2])
        d = cfg.d_model
        self.pose_encoder = PoseEncoder(d, cfg.d_group, rng, gcn_depth=cfg.gcn_depth,
                                        anchor_norm=cfg.anchor_norm, coord_scale=cfg.coord_scale)
        self.rgb_adapter = RgbAdapter(d, rng, d_in=cfg.rgb_dim)
        self.pose_tr = InteractionTransformer(d, cfg.tr_depth, cfg.tr_heads, cfg.n_clips, rng)
        self.rgb_tr = InteractionTransformer(d, cfg.tr_depth, cfg.tr_heads, cfg.n_clips, rng)
        f = cfg.fusion
        self.fusion = build_fusion(f.variant, d, rng, n_neighbors=f.n_neighbors, offset_clip=f.offset_clip,
                                   scaled_dot=f.scaled_dot, heads=f.heads, max_len=cfg.n_clips,
                                   tr_heads=cfg.tr_heads)
        self.text_encoder = TextEncoder(cfg.text_vocab, d, cfg.text_depth, cfg.tr_heads, rng, max_len=cfg.max_words)
        self.log_scale = Parameter(np.array(math.log(init_temperature)), dtype=T.get_default_dtype())

    def param_group(self, name: str) -> str:
        top = name.split(".", 1)[0]
        if top in ENCODER_GROUP:
            return "encoder"
        if top in TRANSFORMER_GROUP:
            return "transformer"
        raise KeyError(f"parameter {name} belongs to no group")

    def temperature(self) -> Tensor:
        return T.exp(self.log_scale)

    def clamp_temperature(self, max_temperature: float = O.MAX_TEMPERATURE) -> None:
        cap = math.log(max_temperature)
        if self.log_scale.data > cap:
            self.log_scale.data = np.array(cap, dtype=self.log_scale.dtype)

    def encode_video(self, batch: Batch) -> dict:
        """f^p, f^r, f^v, each [B, T, D]."""
        mask = batch.clip_mask
        fp = self.pose_tr(self.pose_encoder(batch.keypoints, batch.windows), mask)
        fr = self.rgb_tr(self.rgb_adapter(batch.rgb), mask)
        fv = self.fusion(fp, fr, mask)
        return {"p": fp, "r": fr, "v": fv}

    def encode_text(self, batch: Batch) -> Tensor:
        return self.text_encoder(batch.tokens, batch.word_mask)

    def losses(self, batch: Batch, cfg: O.LossConfig) -> dict:
        video = self.encode_video(batch)
        words = self.encode_text(batch)
        tau = self.temperature()
        pairs = {k: O.batch_similarity(video[k], batch.clip_mask, words, batch.word_mask, cfg.normalize)
                 for k in ("v", "p", "r")}
        out = O.tva_loss(pairs, cfg.alpha, tau)
        out["loss_pr"] = O.pose_rgb_loss(
            *O.batch_pose_rgb_similarity(video["p"], video["r"], batch.clip_mask, cfg.normalize), tau
        )
        out["loss_total"] = O.joint_loss(out["loss_tva"], out["loss_pr"], cfg.beta)
        out["scores"] = pairs["v"][0]
        return out

    def score(self, batch_video: Batch, batch_text: Batch, modality: str = "fused",
              normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """(M_t2k, M_k2t) between every text and every video, using one stream."""
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        with T.no_grad():
            v = self.encode_video(batch_video)[_STREAM[modality]]
            w = self.encode_text(batch_text)
            m_t2k, m_k2t = O.batch_similarity(v, batch_video.clip_mask, w, batch_text.word_mask, normalize)
        return m_t2k.data, m_k2t.data
