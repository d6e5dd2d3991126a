"""Two-branch network assembly, DCT along time, and the global residual."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .autodiff import Tensor, add, matmul
from .blocks import GUIDED, STREAM, Block, BlockKind, fusion, init_block
from .errors import ConfigError, ShapeError
from .graph import (COUPLING_MODES, SkeletonTopology, build_spatial_adjacency,
                    build_temporal_adjacency, default_topology, normalize_adjacency)

# Ablation settings, in the order they are usually reported.
SETTINGS = ("baseline", "a", "ab", "c", "cd", "abcd", "abcde", "abcdef")
LAYOUTS = ("default", "no-interleave", "full-fuse", "all-SM", "all-TM")
LN_AFFINES = ("elementwise", "row")


@dataclass
class NetworkConfig:
    joints: int = 8
    input_frames: int = 16
    output_frames: int = 8
    middle_blocks: int = 2
    coupling_mode: str = "axis-identity"
    self_loops: bool = True
    trainable_mask: bool = False
    branch_a_start: str = "spatial"
    seed: int = 0
    edges: Optional[list] = None
    variant: str = "abcdef"
    layout: str = "default"
    ln_affine: str = "elementwise"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("joints", "input_frames", "output_frames"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if not isinstance(self.middle_blocks, (int, np.integer)) or self.middle_blocks < 0:
            raise ConfigError(f"middle_blocks must be an integer >= 0, got {self.middle_blocks!r}")
        if self.coupling_mode not in COUPLING_MODES:
            raise ConfigError(f"coupling_mode must be one of {COUPLING_MODES}")
        if self.branch_a_start not in ("spatial", "temporal"):
            raise ConfigError("branch_a_start must be 'spatial' or 'temporal'")
        if self.variant not in SETTINGS:
            raise ConfigError(f"unknown ablation setting {self.variant!r}; expected one of {SETTINGS}")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if self.layout != "default" and self.variant != "abcdef":
            raise ConfigError("architecture layouts apply to the full 'abcdef' variant only")
        if self.ln_affine not in LN_AFFINES:
            raise ConfigError(f"ln_affine must be one of {LN_AFFINES}")

    @property
    def features(self) -> frozenset:
        """Ablation letters switched on; the baseline has none."""
        return frozenset() if self.variant == "baseline" else frozenset(self.variant)

    @property
    def n_coords(self) -> int:
        return 3 * self.joints

    def topology(self) -> SkeletonTopology:
        if self.edges is None:
            return default_topology(self.joints)
        return SkeletonTopology(self.joints, tuple(tuple(e) for e in self.edges))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown network config fields: {sorted(unknown)}")
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "NetworkConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


def dct_matrix(t: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row k is frequency k."""
    k = np.arange(t)[:, None]
    n = np.arange(t)[None, :]
    c = np.sqrt(2.0 / t) * np.cos(np.pi * (2 * n + 1) * k / (2 * t))
    c[0] /= np.sqrt(2.0)
    return c


def dct_forward(x: Tensor, basis: np.ndarray) -> Tensor:
    if x.shape[-1] != basis.shape[0]:
        raise ShapeError(f"DCT basis of size {basis.shape[0]} does not fit time width {x.shape[-1]}")
    return matmul(x, Tensor(basis.T))


def dct_inverse(y: Tensor, basis: np.ndarray) -> Tensor:
    if y.shape[-1] != basis.shape[0]:
        raise ShapeError(f"DCT basis of size {basis.shape[0]} does not fit time width {y.shape[-1]}")
    return matmul(y, Tensor(basis))


@dataclass
class FusionParams:
    mask_s: Optional[Tensor] = None
    mask_t: Optional[Tensor] = None


def branch_layouts(config: NetworkConfig) -> list:
    """Block kinds per branch, including the plain first and last blocks."""
    n = config.middle_blocks
    S, T, P = BlockKind.SPATIAL, BlockKind.TEMPORAL, BlockKind.PLAIN
    first, second = (S, T) if config.branch_a_start == "spatial" else (T, S)

    def alternating(a, b):
        return [a if i % 2 == 0 else b for i in range(n)]

    if config.layout == "no-interleave":
        middles = [[first] * n, [second] * n]
    elif config.layout == "all-SM":
        middles = [[S] * n, [S] * n]
    elif config.layout == "all-TM":
        middles = [[T] * n, [T] * n]
    else:
        middles = [alternating(first, second), alternating(second, first)]
    if "e" not in config.features:
        middles = middles[:1]
    return [[P] + m + [P] for m in middles]


def fusion_sites(config: NetworkConfig) -> list:
    """Block indices after which the branches exchange features."""
    if "f" not in config.features:
        return []
    n = config.middle_blocks
    if config.layout == "full-fuse" and n > 0:
        return list(range(n + 1))
    return [0, n]


def _guidance(kind: BlockKind, features: frozenset):
    if kind is BlockKind.SPATIAL:
        return (GUIDED, True) if "b" in features else (STREAM, "a" in features)
    if kind is BlockKind.TEMPORAL:
        return (GUIDED, True) if "d" in features else (STREAM, "c" in features)
    return GUIDED, False


class Model:
    """The assembled network: branches of blocks, fusion sites, DCT bases."""

    def __init__(self, config: NetworkConfig, branches: list, fusions: list,
                 a_s: np.ndarray, a_t: np.ndarray):
        self.config = config
        self.branches = branches
        self.fusions = fusions
        self.fusion_sites = fusion_sites(config)
        self.a_s = a_s
        self.a_t = a_t
        self.dct_in = dct_matrix(config.input_frames)
        self.dct_out = dct_matrix(config.output_frames)

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> dict:
        out = {}
        for b, blocks in enumerate(self.branches):
            for i, block in enumerate(blocks):
                for k, t in block.params.tensors().items():
                    out[f"branch{b}.block{i}.{k}"] = t
        for i, fp in enumerate(self.fusions):
            for k in ("mask_s", "mask_t"):
                t = getattr(fp, k)
                if t is not None:
                    out[f"fusion{i}.{k}"] = t
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.named_parameters().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    # -- forward ------------------------------------------------------------

    def forward_matrix(self, x, normalize: bool = True) -> Tensor:
        """Map pose matrices ``(..., N, T)`` to predictions ``(..., N, T_f)``."""
        cfg = self.config
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-2:] != (cfg.n_coords, cfg.input_frames):
            raise ShapeError(f"expected pose matrices of shape (N={cfg.n_coords}, T={cfg.input_frames}), "
                             f"got {x.shape}")
        h = dct_forward(x, self.dct_in)
        states = [h for _ in self.branches]
        depth = len(self.branches[0])
        fused = 0
        for i in range(depth):
            states = [blocks[i](s, normalize) for blocks, s in zip(self.branches, states)]
            while fused < len(self.fusion_sites) and self.fusion_sites[fused] == i:
                fp = self.fusions[fused]
                states = list(fusion(states[0], states[1], self.a_s, self.a_t, fp.mask_s, fp.mask_t))
                fused += 1
        out = states[0]
        for s in states[1:]:
            out = add(out, s)
        out = dct_inverse(out, self.dct_out)
        last = np.repeat(x.data[..., -1:], cfg.output_frames, axis=-1)
        return add(out, Tensor(last))

    def predict(self, seq: np.ndarray) -> np.ndarray:
        """Predict future frames from ``(T, J, 3)`` or ``(B, T, J, 3)`` sequences."""
        from .data import from_pose_matrix, to_pose_matrix
        seq = np.asarray(seq, dtype=np.float64)
        cfg = self.config
        if seq.shape[-3:] != (cfg.input_frames, cfg.joints, 3):
            raise ShapeError(f"expected sequences of shape (T={cfg.input_frames}, J={cfg.joints}, 3), "
                             f"got {seq.shape}")
        out = self.forward_matrix(to_pose_matrix(seq)).data
        return from_pose_matrix(out)

    def zero_guidance(self) -> "Model":
        """Shallow copy sharing parameters, with every adjacency set to zero."""
        clone = copy.copy(self)
        clone.a_s = np.zeros_like(self.a_s)
        clone.a_t = np.zeros_like(self.a_t)
        clone.branches = [
            [Block(b.kind, b.params, None if b.adjacency is None else np.zeros_like(b.adjacency),
                   b.guidance, b.tie) for b in blocks]
            for blocks in self.branches
        ]
        return clone


def forward(model: Model, seq: np.ndarray) -> np.ndarray:
    return model.predict(seq)


def build_adjacencies(config: NetworkConfig):
    a_s = normalize_adjacency(build_spatial_adjacency(config.topology(), config.coupling_mode,
                                                      config.self_loops))
    a_t = normalize_adjacency(build_temporal_adjacency(config.input_frames, config.self_loops))
    return a_s, a_t


def init_parameters(config: NetworkConfig, seed: Optional[int] = None) -> Model:
    """Deterministically construct a model; ``seed`` defaults to ``config.seed``."""
    if not isinstance(config, NetworkConfig):
        raise ConfigError("init_parameters needs a NetworkConfig")
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    a_s, a_t = build_adjacencies(config)
    n, t, tf = config.n_coords, config.input_frames, config.output_frames
    branches = []
    for kinds in branch_layouts(config):
        blocks = []
        last = len(kinds) - 1
        for i, kind in enumerate(kinds):
            t_out = tf if i == last else t
            adj = a_s if kind is BlockKind.SPATIAL else a_t if kind is BlockKind.TEMPORAL else None
            guidance, tie = _guidance(kind, config.features)
            blocks.append(init_block(kind, n, t, t_out, rng, adj, config.trainable_mask,
                                     config.ln_affine, guidance, tie, output_norm=i != last))
        branches.append(blocks)
    fusions = []
    for _ in fusion_sites(config):
        fp = FusionParams()
        if config.trainable_mask:
            fp.mask_s = Tensor((a_s != 0).astype(np.float64), requires_grad=True, name="mask_s")
            fp.mask_t = Tensor((a_t != 0).astype(np.float64), requires_grad=True, name="mask_t")
        fusions.append(fp)
    return Model(config, branches, fusions, a_s, a_t)


def count_parameters(model: Model) -> int:
    """Trainable scalars; adjacency masks count only their support entries."""
    a_s, a_t = build_adjacencies(model.config)
    sup = {BlockKind.SPATIAL: int(np.count_nonzero(a_s)), BlockKind.TEMPORAL: int(np.count_nonzero(a_t))}
    total = 0
    for blocks in model.branches:
        for block in blocks:
            for k, t in block.params.tensors().items():
                total += sup[block.kind] if k == "adjacency_mask" else t.size
    for fp in model.fusions:
        if fp.mask_s is not None:
            total += sup[BlockKind.SPATIAL]
        if fp.mask_t is not None:
            total += sup[BlockKind.TEMPORAL]
    return total
