"""Adam with grouped learning rates, cosine warmup, and the training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import objectives as O
from . import tensor as T
from .data.batch import Manifest, load_batch
from .model import ModelConfig, SEDSModel
from .tensor import io as tio

log = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}

# the published full-scale regime (CLIP-sized towers), kept for reference configs
REFERENCE_SCALE = {
    "batch_size": 128,
    "epochs": 200,
    "lr_encoder": 1e-4,
    "lr_transformer": 1e-5,
    "alpha": 0.8,
    "beta": 0.4,
    "n_clips": 64,
    "model": {"d_model": 768, "d_group": 512, "tr_depth": 12, "tr_heads": 12, "text_depth": 12, "rgb_dim": 1024},
}


class TrainingDiverged(RuntimeError):
    pass


def lr_at(base: float, step: int, warmup: int, total: int) -> float:
    """Linear ramp to ``base`` over ``warmup`` steps, then half-cosine to 0 at ``total``."""
    if step < 0 or step > total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if warmup > 0 and step < warmup:
        return base * step / warmup
    if total == warmup:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / (total - warmup)))


@dataclass
class Schedule:
    base: dict
    warmup: int
    total: int

    def __post_init__(self):
        if not 0 <= self.warmup <= self.total:
            raise ValueError("need 0 <= warmup <= total")

    def lrs(self, step: int) -> dict:
        return {g: lr_at(b, step, self.warmup, self.total) for g, b in self.base.items()}


class Adam:
    """Bias-corrected Adam over named parameters, each assigned to an lr group."""

    def __init__(self, named_params, groups: dict, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(named_params)
        self.groups = dict(groups)
        missing = set(self.params) - set(self.groups)
        if missing:
            raise KeyError(f"parameters without an lr group: {sorted(missing)[:5]}")
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lrs: dict) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise T.NonFiniteError(f"non-finite gradient in {name}")
        self.step_count += 1
        t = self.step_count
        c1, c2 = 1.0 - self.b1 ** t, 1.0 - self.b2 ** t
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            lr = lrs[self.groups[name]]
            p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def adam_step(opt: Adam, lrs: dict) -> None:
    opt.step(lrs)


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    lr_encoder: float = 1e-3
    lr_transformer: float = 5e-4
    warmup_frac: float = 0.1
    alpha: float = 0.8
    beta: float = 0.4
    init_temperature: float = O.INIT_TEMPERATURE
    max_temperature: float = O.MAX_TEMPERATURE
    normalize: bool = True
    precision: str = "float32"
    n_clips: int = 16
    max_words: int = 32
    min_conf: float = 0.3
    train_split: str = "train"
    val_split: str = "val"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must be in [0, 1)")
        self.model.n_clips = self.n_clips
        self.model.max_words = self.max_words

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def loss_config(self) -> O.LossConfig:
        return O.LossConfig(self.alpha, self.beta, self.init_temperature, self.max_temperature, self.normalize)


@dataclass
class TrainResult:
    out_dir: Path
    best: Path
    last: Path
    best_val_r1: float
    history: list


def build_model(cfg: TrainConfig, vocab_size: int | None = None) -> SEDSModel:
    if vocab_size is not None:
        cfg.model.text_vocab = vocab_size
    with T.default_dtype(PRECISIONS[cfg.precision]):
        return SEDSModel(cfg.model, seed=cfg.seed, init_temperature=cfg.init_temperature)


def save_checkpoint(path, model: SEDSModel, cfg: TrainConfig, extras: dict | None = None) -> Path:
    meta = {"config": cfg.to_dict(), **(extras or {})}
    tio.save_archive(path, model.state_dict(), meta)
    return Path(path)


def load_checkpoint(path) -> tuple[SEDSModel, TrainConfig, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    tensors, meta = tio.load_archive(path)
    cfg = TrainConfig.from_dict(meta["config"])
    model = build_model(cfg)
    model.load_state_dict(tensors)
    return model, cfg, meta


def _batches(manifest: Manifest, idx: list, cfg: TrainConfig):
    dtype = PRECISIONS[cfg.precision]
    for s in range(0, len(idx), cfg.batch_size):
        yield load_batch(manifest, idx[s:s + cfg.batch_size], cfg.n_clips, cfg.max_words, cfg.min_conf, dtype)


def train(cfg: TrainConfig, manifest, out_dir, max_steps: int | None = None, indices=None) -> TrainResult:
    """Run the full schedule; writes best.ckpt, last.ckpt and metrics.jsonl into ``out_dir``.

    ``indices`` overrides the training split (used for one-batch overfitting);
    ``max_steps`` truncates the run without changing the schedule.
    """
    from .evaluate import retrieval_reports  # local import: evaluate depends on train

    manifest = manifest if isinstance(manifest, Manifest) else Manifest(manifest)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_idx = list(indices) if indices is not None else manifest.split(cfg.train_split)
    val_idx = manifest.split(cfg.val_split)
    if not train_idx:
        raise ValueError(f"split {cfg.train_split!r} is empty")
    model = build_model(cfg, len(manifest.vocab))
    groups = {n: model.param_group(n) for n, _ in model.named_parameters()}
    opt = Adam(model.named_parameters(), groups)
    steps_per_epoch = math.ceil(len(train_idx) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    sched = Schedule({"encoder": cfg.lr_encoder, "transformer": cfg.lr_transformer},
                     int(round(cfg.warmup_frac * total)), total)
    loss_cfg = cfg.loss_config()
    rng = np.random.default_rng([cfg.seed, 3])
    dtype = PRECISIONS[cfg.precision]
    val_batch = load_batch(manifest, val_idx, cfg.n_clips, cfg.max_words, cfg.min_conf, dtype) if val_idx else None

    metrics = open(out / "metrics.jsonl", "w")
    best_path, last_path = out / "best.ckpt", out / "last.ckpt"
    best_r1, history, step = -1.0, [], 0
    t0 = time.time()
    try:
        with T.default_dtype(dtype):
            for epoch in range(cfg.epochs):
                order = list(np.asarray(train_idx)[rng.permutation(len(train_idx))])
                batches = list(_batches(manifest, order, cfg))
                for bi, batch in enumerate(batches):
                    lrs = sched.lrs(step + 1)
                    model.zero_grad()
                    parts = model.losses(batch, loss_cfg)
                    total_loss = parts["loss_total"]
                    if not np.isfinite(total_loss.data):
                        raise TrainingDiverged(
                            f"loss became {float(total_loss.data)} at step {step + 1}; "
                            f"last good checkpoint: {last_path if last_path.exists() else 'none'}"
                        )
                    total_loss.backward()
                    opt.step(lrs)
                    model.clamp_temperature(cfg.max_temperature)
                    step += 1
                    rec = {"epoch": epoch, "step": step}
                    rec.update({k: float(v.data) for k, v in parts.items() if k.startswith("loss_")})
                    rec["lr_groups"] = lrs
                    rec["temperature"] = float(np.exp(model.log_scale.data))
                    rec["val_r1"] = None
                    done = max_steps is not None and step >= max_steps
                    if bi == len(batches) - 1 or done:
                        rec["val_r1"] = _val_r1(model, val_batch, retrieval_reports, loss_cfg.normalize)
                    metrics.write(json.dumps(rec) + "\n")
                    history.append(rec)
                    if rec["val_r1"] is not None:
                        extras = {"epoch": epoch, "step": step, "val_r1": rec["val_r1"],
                                  "rng_state": rng.bit_generator.state}
                        save_checkpoint(last_path, model, cfg, extras)
                        if rec["val_r1"] > best_r1:
                            best_r1 = rec["val_r1"]
                            save_checkpoint(best_path, model, cfg, extras)
                        log.info("epoch %d step %d loss %.4f val_r1 %.1f (%.0fs)", epoch, step,
                                 rec["loss_total"], rec["val_r1"], time.time() - t0)
                    if done:
                        break
                if max_steps is not None and step >= max_steps:
                    break
    except T.NonFiniteError as exc:
        raise TrainingDiverged(f"{exc}; last good checkpoint: {last_path if last_path.exists() else 'none'}") from exc
    finally:
        metrics.close()
    return TrainResult(out, best_path, last_path, best_r1, history)


def _val_r1(model, batch, retrieval_reports, normalize) -> float:
    if batch is None:
        return 0.0
    m_t2k, m_k2t = model.score(batch, batch, "fused", normalize)
    t2v, _ = retrieval_reports(m_t2k, m_k2t)
    return t2v.r1
