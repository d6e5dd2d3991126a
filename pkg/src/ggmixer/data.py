"""Motion sequences: synthetic generation, layout conversion, windowing, file I/O."""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (ConfigError, DimensionError, MagicError, TruncationError, VersionError)
from .graph import SkeletonTopology, chain

MOTION_MAGIC = b"GGMS"
MOTION_VERSION = 1
_HEADER = struct.Struct("<4sIfII")
_MAX_VALUES = 2**31


@dataclass
class MotionSequence:
    frames: np.ndarray
    frame_rate: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[-1] != 3 or self.frames.shape[0] < 1:
            raise ConfigError(f"motion frames must have shape (T>=1, J, 3), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ConfigError("motion frames must be finite")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]


# -- layout -------------------------------------------------------------------


def to_pose_matrix(seq) -> np.ndarray:
    """``(..., T, J, 3)`` -> ``(..., 3J, T)``; row ``3j + c`` is coordinate c of joint j."""
    a = seq.frames if isinstance(seq, MotionSequence) else np.asarray(seq, dtype=np.float64)
    t, j = a.shape[-3], a.shape[-2]
    return np.swapaxes(a.reshape(a.shape[:-3] + (t, 3 * j)), -1, -2)


def from_pose_matrix(x) -> np.ndarray:
    x = np.asarray(x)
    n, t = x.shape[-2], x.shape[-1]
    return np.swapaxes(x, -1, -2).reshape(x.shape[:-2] + (t, n // 3, 3))


# -- synthetic motion ---------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Forward-kinematics generator settings.

    Every bone carries an azimuth and an elevation angle; each is a rest angle
    plus ``num_harmonics`` sinusoids whose amplitudes sum to a value drawn
    from ``amplitude_range``. Harmonic frequencies are shared by the whole
    skeleton and phases lag with depth, so neighbouring bones move together.
    """

    skeleton: SkeletonTopology = field(default_factory=lambda: chain(8, 100.0))
    num_harmonics: int = 3
    amplitude_range: tuple = (0.1, 0.5)
    frequency_range: tuple = (0.2, 1.5)
    frames: int = 400
    frame_rate: float = 25.0
    seed: int = 0
    root_amplitude: float = 50.0
    phase_lag: float = 0.5

    def validate(self) -> None:
        sk = self.skeleton
        if sk.bone_lengths is None and sk.edges:
            raise ConfigError("synthetic skeleton needs bone lengths")
        if self.num_harmonics < 0:
            raise ConfigError("num_harmonics must be >= 0")
        a_lo, a_hi = self.amplitude_range
        f_lo, f_hi = self.frequency_range
        if not 0 <= a_lo <= a_hi:
            raise ConfigError(f"bad amplitude range {self.amplitude_range}")
        if not 0 < f_lo <= f_hi:
            raise ConfigError(f"bad frequency range {self.frequency_range}")
        if not f_hi < self.frame_rate / 2:
            raise ConfigError(f"max frequency {f_hi} Hz aliases at {self.frame_rate} fps")
        if self.frames < 1 or self.frame_rate <= 0:
            raise ConfigError("frames and frame_rate must be positive")
        if self.root_amplitude < 0:
            raise ConfigError("root_amplitude must be >= 0")

    def chain_length(self) -> float:
        """Longest root-to-joint bone path, in mm."""
        _, _, _, depth_len = _tree(self.skeleton)
        return max(depth_len.values(), default=0.0)


def _tree(sk: SkeletonTopology):
    """BFS spanning forest: (order, parent, bone length, path length) keyed by joint."""
    nbrs = {j: [] for j in range(sk.joint_count)}
    lengths = sk.bone_lengths or (0.0,) * len(sk.edges)
    for (a, b), length in zip(sk.edges, lengths):
        nbrs[a].append((b, length))
        nbrs[b].append((a, length))
    parent, bone, path = {}, {}, {}
    order = []
    for root in range(sk.joint_count):
        if root in parent:
            continue
        parent[root], bone[root], path[root] = -1, 0.0, 0.0
        queue = deque([root])
        while queue:
            j = queue.popleft()
            order.append(j)
            for k, length in nbrs[j]:
                if k not in parent:
                    parent[k], bone[k], path[k] = j, length, path[j] + length
                    queue.append(k)
    return order, parent, bone, path


def _signal(rng, t, freqs, total, lag):
    """Sum of sinusoids with amplitudes summing to ``total``."""
    if len(freqs) == 0:
        return np.zeros_like(t)
    weights = rng.dirichlet(np.ones(len(freqs)))
    phases = rng.uniform(0, 2 * np.pi, size=len(freqs))
    out = np.zeros_like(t)
    for w, f, ph in zip(weights, freqs, phases):
        out += total * w * np.sin(2 * np.pi * f * t + ph + lag)
    return out


def generate_synthetic(spec: SyntheticSpec) -> MotionSequence:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    sk = spec.skeleton
    t = np.arange(spec.frames) / spec.frame_rate
    freqs = rng.uniform(*spec.frequency_range, size=spec.num_harmonics)
    order, parent, bone, _ = _tree(sk)

    root_traj = np.stack(
        [_signal(rng, t, freqs, spec.root_amplitude, 0.0) for _ in range(3)], axis=-1)
    pos = np.zeros((spec.frames, sk.joint_count, 3))
    depth = {}
    offset = 0
    for j in order:
        p = parent[j]
        if p < 0:
            depth[j] = 0
            pos[:, j] = root_traj + np.array([300.0 * offset, 0.0, 0.0])
            offset += 1
            continue
        depth[j] = depth[p] + 1
        lag = spec.phase_lag * depth[j]
        az = rng.uniform(0, 2 * np.pi) + _signal(rng, t, freqs, rng.uniform(*spec.amplitude_range), lag)
        el = rng.uniform(-1.2, -0.3) + _signal(rng, t, freqs, rng.uniform(*spec.amplitude_range), lag)
        direction = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
        pos[:, j] = pos[:, p] + bone[j] * direction
    return MotionSequence(pos, spec.frame_rate)


# -- windowing ----------------------------------------------------------------


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: str = "train"
    starts: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.inputs)

    @classmethod
    def concat(cls, parts: list, split: Optional[str] = None) -> "Dataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ConfigError("cannot concatenate empty datasets")
        return cls(np.concatenate([p.inputs for p in parts]),
                   np.concatenate([p.targets for p in parts]),
                   split or parts[0].split)


def window(seq, t: int, t_f: int, stride: int = 1, split: str = "train") -> Dataset:
    """Sliding (input, target) windows; a too-short sequence gives an empty dataset."""
    frames = seq.frames if isinstance(seq, MotionSequence) else np.asarray(seq, dtype=np.float64)
    if t < 1 or t_f < 1 or stride < 1:
        raise ConfigError("window sizes and stride must be >= 1")
    length, j = frames.shape[0], frames.shape[1]
    starts = np.arange(0, length - t - t_f + 1, stride)
    inputs = np.stack([frames[k:k + t] for k in starts]) if len(starts) else np.zeros((0, t, j, 3))
    targets = (np.stack([frames[k + t:k + t + t_f] for k in starts]) if len(starts)
               else np.zeros((0, t_f, j, 3)))
    return Dataset(inputs, targets, split, starts)


def reverse_window(inputs: np.ndarray, targets: np.ndarray):
    t = inputs.shape[0]
    full = np.concatenate([inputs, targets])[::-1]
    return full[:t].copy(), full[t:].copy()


def augment_reverse(inputs: np.ndarray, targets: np.ndarray, p: float, rng: np.random.Generator):
    """With probability ``p`` time-reverse the joined window and split it again."""
    if not 0 <= p <= 1:
        raise ConfigError(f"augmentation probability must be in [0, 1], got {p}")
    if p > 0 and rng.random() < p:
        return reverse_window(inputs, targets)
    return inputs, targets


# -- file I/O -----------------------------------------------------------------


def write_motion(path, seq: MotionSequence) -> None:
    t, j, _ = seq.frames.shape
    header = _HEADER.pack(MOTION_MAGIC, MOTION_VERSION, seq.frame_rate, t, j)
    Path(path).write_bytes(header + seq.frames.astype("<f4").tobytes())


def read_motion(path) -> MotionSequence:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MOTION_MAGIC:
        raise MagicError(f"{path}: not a motion file (bad magic)")
    if len(raw) < _HEADER.size:
        raise TruncationError(f"{path}: truncated header")
    _, version, frame_rate, t, j = _HEADER.unpack_from(raw)
    if version != MOTION_VERSION:
        raise VersionError(f"{path}: unsupported motion version {version}")
    count = t * j * 3
    if t == 0 or j == 0 or count > _MAX_VALUES:
        raise DimensionError(f"{path}: invalid dimensions T={t}, J={j}")
    payload = raw[_HEADER.size:]
    if len(payload) < 4 * count:
        raise TruncationError(f"{path}: payload has {len(payload)} bytes, expected {4 * count}")
    if len(payload) > 4 * count:
        raise DimensionError(f"{path}: {len(payload) - 4 * count} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(t, j, 3)
    return MotionSequence(values, float(frame_rate))
