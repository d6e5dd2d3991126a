"""MPJPE loss, step learning-rate schedule, Adam, the training loop, checkpoints."""
from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autodiff import Tape, Tensor, backward, matmul, mean, mul, reshape, sqrt, sub, sum_, add, scale
from .data import Dataset, augment_reverse, to_pose_matrix
from .errors import (CheckpointShapeError, ConfigError, MagicError, NumericError, ShapeError,
                     TruncationError, VersionError)
from .network import Model, NetworkConfig, init_parameters

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12


# -- loss -----------------------------------------------------------------------


def mpjpe_loss(pred: Tensor, target) -> Tensor:
    """Mean per-joint Euclidean error for pose matrices ``(..., 3J, T_f)``."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    n, tf = pred.shape[-2], pred.shape[-1]
    if n % 3:
        raise ShapeError(f"pose matrix rows must be a multiple of 3, got {n}")
    lead = int(np.prod(pred.shape[:-2], dtype=int))
    diff = reshape(sub(pred, target), (lead * n // 3, 3, tf))
    dist = sqrt(sum_(mul(diff, diff), axis=1), NORM_EPS)
    return mean(dist)


def velocity_loss(pred: Tensor, target) -> Tensor:
    """MPJPE between frame-to-frame differences."""
    tf = pred.shape[-1]
    if tf < 2:
        raise ShapeError("velocity loss needs at least two output frames")
    d = Tensor(np.eye(tf, tf - 1, k=-1) - np.eye(tf, tf - 1))
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    return mpjpe_loss(matmul(pred, d), target @ d.data)


def mpjpe(pred, target) -> float:
    """Plain-array MPJPE for sequences shaped ``(..., T_f, J, 3)``."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    return float(np.linalg.norm(pred - target, axis=-1).mean())


# -- config, schedule -------------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 32
    lr_initial: float = 5e-4
    lr_final: float = 5e-6
    lr_drop_iteration: Optional[int] = None
    seed: int = 0
    augment_prob: float = 0.5
    log_every: int = 100
    velocity_loss: bool = False

    def __post_init__(self):
        if self.lr_drop_iteration is None:
            self.lr_drop_iteration = round(self.iterations * 11 / 12)
        self.validate()

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.lr_initial > 0):
            raise ConfigError(f"lr_initial must be > 0, got {self.lr_initial}")
        if not (self.lr_final > 0):
            raise ConfigError(f"lr_final must be > 0, got {self.lr_final}")
        if not 0 <= self.lr_drop_iteration <= self.iterations:
            raise ConfigError(f"lr_drop_iteration must be in [0, iterations], got {self.lr_drop_iteration}")
        if not 0 <= self.augment_prob <= 1:
            raise ConfigError(f"augment_prob must be in [0, 1], got {self.augment_prob}")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")

    @classmethod
    def full_scale(cls) -> "TrainConfig":
        """Full-scale schedule: 60k iterations, batch 256, drop after 55k."""
        return cls(iterations=60_000, batch_size=256, lr_initial=5e-4, lr_final=5e-6,
                   lr_drop_iteration=55_000)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**doc)


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    return cfg.lr_initial if iteration < cfg.lr_drop_iteration else cfg.lr_final


# -- Adam -------------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params`` (name -> Tensor)."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    history: list
    iteration: int
    seconds: float = 0.0


def sample_batch(dataset: Dataset, cfg: TrainConfig, rng: np.random.Generator):
    idx = rng.integers(0, len(dataset), size=cfg.batch_size)
    xs, ys = [], []
    for i in idx:
        x, y = augment_reverse(dataset.inputs[i], dataset.targets[i], cfg.augment_prob, rng)
        xs.append(x)
        ys.append(y)
    return to_pose_matrix(np.stack(xs)), to_pose_matrix(np.stack(ys))


def training_loss(model: Model, x, y, cfg: TrainConfig) -> Tensor:
    pred = model.forward_matrix(x)
    loss = mpjpe_loss(pred, y)
    if cfg.velocity_loss:
        loss = add(loss, velocity_loss(pred, y))
    return loss


def train(model: Model, dataset: Dataset, cfg: TrainConfig,
          callback: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Iteration-based training with batches sampled with replacement."""
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params = model.named_parameters()
    state = AdamState()
    history = []
    start = time.perf_counter()
    for it in range(cfg.iterations):
        x, y = sample_batch(dataset, cfg, rng)
        lr = lr_schedule(it, cfg)
        model.zero_grad()
        with Tape() as tape:
            loss = training_loss(model, x, y, cfg)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss {value} at iteration {it} (lr={lr})")
        backward(tape, loss)
        adam_step(params, {k: p.grad for k, p in params.items()}, state, lr)
        history.append(value)
        if (it + 1) % cfg.log_every == 0:
            logger.info("iter %d  lr %.2e  loss %.4f", it + 1, lr, value)
        if callback is not None:
            callback(it, value)
    return TrainResult(model, history, cfg.iterations, time.perf_counter() - start)


# -- checkpoints ------------------------------------------------------------------

CKPT_MAGIC = b"GGMX"
CKPT_VERSION = 1
CONFIG_TENSOR = "__config__"


def save_checkpoint(path, model: Model, iteration: int = 0) -> None:
    """Write all parameters as f32; the network config rides along as a byte tensor."""
    tensors = dict(model.named_parameters())
    cfg_bytes = np.frombuffer(json.dumps(model.config.to_json()).encode(), dtype=np.uint8)
    entries = [(CONFIG_TENSOR, cfg_bytes.astype(np.float64))]
    entries += [(name, t.data) for name, t in tensors.items()]
    chunks = [CKPT_MAGIC, struct.pack("<IQI", CKPT_VERSION, int(iteration), len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.asarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncationError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def read_checkpoint(path):
    """Return ``(tensors, iteration)`` with tensors as float32 arrays keyed by name."""
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise MagicError(f"{path}: not a checkpoint (bad magic)")
    r = _Reader(raw, path)
    r.take(4)
    version, iteration, count = r.unpack("<IQI")
    if version != CKPT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims)
    return tensors, iteration


def checkpoint_config(tensors: dict) -> NetworkConfig:
    if CONFIG_TENSOR not in tensors:
        raise ConfigError("checkpoint carries no network config")
    doc = json.loads(tensors[CONFIG_TENSOR].astype(np.uint8).tobytes().decode())
    return NetworkConfig.from_json(doc)


def load_checkpoint(path, model: Optional[Model] = None):
    """Restore ``(model, iteration)``; builds the model from the stored config if none given."""
    tensors, iteration = read_checkpoint(path)
    if model is None:
        model = init_parameters(checkpoint_config(tensors))
    params = model.named_parameters()
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointShapeError(f"checkpoint has no tensor {name!r}")
        if tensors[name].shape != p.shape:
            raise CheckpointShapeError(
                f"tensor {name!r}: checkpoint shape {tensors[name].shape}, model shape {p.shape}")
    extra = set(tensors) - set(params) - {CONFIG_TENSOR}
    if extra:
        raise CheckpointShapeError(f"checkpoint tensor {sorted(extra)[0]!r} has no place in the model")
    for name, p in params.items():
        p.data = tensors[name].astype(np.float64)
    return model, iteration
