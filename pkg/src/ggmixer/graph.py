"""Skeleton topology and the spatial/temporal adjacency matrices."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ContractError, ParameterError, TopologyError

AXIS_IDENTITY = "axis-identity"
FULL_BLOCK = "full-block"
COUPLING_MODES = (AXIS_IDENTITY, FULL_BLOCK)


@dataclass(frozen=True)
class SkeletonTopology:
    joint_count: int
    edges: tuple = ()
    bone_lengths: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if int(self.joint_count) < 1:
            raise TopologyError(f"joint_count must be >= 1, got {self.joint_count}")
        seen = set()
        norm = []
        for e in self.edges:
            i, j = (int(v) for v in e)
            if not (0 <= i < self.joint_count and 0 <= j < self.joint_count):
                raise TopologyError(f"edge ({i}, {j}) out of range for {self.joint_count} joints")
            if i == j:
                raise TopologyError(f"self-edge on joint {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise TopologyError(f"duplicate edge {key}")
            seen.add(key)
            norm.append((i, j))
        object.__setattr__(self, "joint_count", int(self.joint_count))
        object.__setattr__(self, "edges", tuple(norm))
        if self.bone_lengths is not None:
            lengths = tuple(float(v) for v in self.bone_lengths)
            if len(lengths) != len(norm):
                raise TopologyError("bone_lengths must have one entry per edge")
            if any(not v > 0 for v in lengths):
                raise TopologyError("bone lengths must be > 0")
            object.__setattr__(self, "bone_lengths", lengths)

    def joint_adjacency(self, self_loops: bool = True) -> np.ndarray:
        a = np.zeros((self.joint_count, self.joint_count))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        if self_loops:
            np.fill_diagonal(a, 1.0)
        return a

    def to_json(self) -> dict:
        out = {"joint_count": self.joint_count, "edges": [list(e) for e in self.edges]}
        if self.bone_lengths is not None:
            out["bone_lengths"] = list(self.bone_lengths)
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "SkeletonTopology":
        try:
            return cls(int(doc["joint_count"]), tuple(tuple(e) for e in doc["edges"]),
                       doc.get("bone_lengths"))
        except (KeyError, TypeError) as exc:
            raise TopologyError(f"malformed topology document: {exc}") from exc


def chain(joint_count: int, bone_length: float = 100.0) -> SkeletonTopology:
    edges = tuple((j, j + 1) for j in range(joint_count - 1))
    return SkeletonTopology(joint_count, edges, (bone_length,) * len(edges))


# Parents of the 32-joint H3.6M skeleton and the 22 joints kept for prediction.
_H36M_PARENTS = [-1, 0, 1, 2, 3, 4, 0, 6, 7, 8, 9, 0, 11, 12, 13, 14, 12,
                 16, 17, 18, 19, 20, 19, 22, 12, 24, 25, 26, 27, 28, 27, 30]
_H36M_KEPT = [2, 3, 4, 5, 7, 8, 9, 10, 12, 13, 14, 15, 17, 18, 19, 21, 22, 25, 26, 27, 29, 30]


def h36m_22() -> SkeletonTopology:
    """22-joint kinematic tree; the dropped hip joints are bridged to the spine root."""
    pos = {j: k for k, j in enumerate(_H36M_KEPT)}
    edges = []
    for j in _H36M_KEPT:
        p = _H36M_PARENTS[j]
        while p >= 0 and p not in pos:
            p = _H36M_PARENTS[p]
        if p >= 0:
            edges.append((pos[p], pos[j]))
    spine = pos[12]
    for root in (2, 7):
        edges.append((spine, pos[root]))
    return SkeletonTopology(22, tuple(edges))


def default_topology(joint_count: int) -> SkeletonTopology:
    return h36m_22() if joint_count == 22 else chain(joint_count)


def load_topology(path) -> SkeletonTopology:
    return SkeletonTopology.from_json(json.loads(Path(path).read_text()))


def save_topology(topo: SkeletonTopology, path) -> None:
    Path(path).write_text(json.dumps(topo.to_json(), indent=2))


def build_spatial_adjacency(
    topo: SkeletonTopology, coupling: str = AXIS_IDENTITY, self_loops: bool = True
) -> np.ndarray:
    """Expand the joint graph to the N x N coordinate graph, N = 3J.

    Row ``3j + c`` is coordinate ``c`` of joint ``j``. Axis-identity coupling
    links only same-axis coordinates (``A_joint kron I3``); full-block links
    every coordinate pair of adjacent joints (``A_joint kron ones(3, 3)``).
    """
    if coupling not in COUPLING_MODES:
        raise ParameterError(f"unknown coupling mode {coupling!r}")
    a_joint = topo.joint_adjacency(self_loops)
    block = np.eye(3) if coupling == AXIS_IDENTITY else np.ones((3, 3))
    n = 3 * topo.joint_count
    out = np.zeros((n, n))
    for p in range(topo.joint_count):
        for q in range(topo.joint_count):
            if a_joint[p, q]:
                out[3 * p:3 * p + 3, 3 * q:3 * q + 3] = a_joint[p, q] * block
    return out


def build_temporal_adjacency(frames: int, self_loops: bool = True) -> np.ndarray:
    if int(frames) < 1:
        raise ParameterError(f"temporal adjacency needs T >= 1, got {frames}")
    t = int(frames)
    a = np.eye(t, k=1) + np.eye(t, k=-1)
    if self_loops:
        a += np.eye(t)
    return a


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric normalization ``D^-1/2 A D^-1/2``; zero-degree rows stay zero."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"adjacency must be square, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ContractError("adjacency must be symmetric")
    if np.any(a < 0):
        raise ContractError("adjacency must be nonnegative")
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    return inv[:, None] * a * inv[None, :]


def support(a: np.ndarray) -> np.ndarray:
    return (np.asarray(a) != 0).astype(np.float64)


def bandwidth(a: np.ndarray) -> int:
    rows, cols = np.nonzero(a)
    return int(np.abs(rows - cols).max()) if rows.size else 0


def coordinate_permutation(joint_perm: Iterable[int]) -> np.ndarray:
    """Row permutation on coordinates induced by a joint relabeling."""
    return np.array([3 * j + c for j in joint_perm for c in range(3)])
