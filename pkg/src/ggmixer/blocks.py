"""Spatial/temporal mixing, graph aggregation, and the graph-guided blocks.

All functions take pose matrices of shape ``(N, T)`` or batches ``(B, N, T)``.
The spatial block is ``Y = LN(T(LN(S(X) + Z_s(X))))`` and the temporal block
``Y = LN(T(U) + Z_t(U))`` with ``U = LN(S(X))``, where ``S`` left-mixes
coordinates, ``T`` right-mixes time and ``Z`` aggregates over an adjacency.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from .autodiff import Tensor, add, layer_norm, matmul, mul, transpose
from .errors import ShapeError

LN_EPS = 1e-5

GUIDED = "guided"
STREAM = "stream"


class BlockKind(str, Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    PLAIN = "plain"


def _const(a) -> Tensor:
    return a if isinstance(a, Tensor) else Tensor(a)


def spatial_mix(x: Tensor, w: Tensor) -> Tensor:
    """``(X^T W)^T``, i.e. ``W^T X``: mixes the coordinate rows."""
    if w.ndim != 2 or w.shape[0] != x.shape[-2]:
        raise ShapeError(f"spatial weight {w.shape} does not fit input {x.shape}")
    return transpose(matmul(transpose(x), w))


def temporal_mix(x: Tensor, w: Tensor) -> Tensor:
    if w.ndim != 2 or w.shape[0] != x.shape[-1]:
        raise ShapeError(f"temporal weight {w.shape} does not fit input {x.shape}")
    return matmul(x, w)


def aggregate(adj, x: Tensor, side: str = "left", mask: Optional[Tensor] = None) -> Tensor:
    """Graph aggregation ``(A * M) X`` (left, spatial) or ``X (A * M)`` (right, temporal)."""
    a = _const(adj)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    if mask is not None:
        a = mul(a, mask)
    if side == "left":
        if a.shape[1] != x.shape[-2]:
            raise ShapeError(f"left aggregation: adjacency {a.shape} vs input {x.shape}")
        return matmul(a, x)
    if side == "right":
        if a.shape[0] != x.shape[-1]:
            raise ShapeError(f"right aggregation: adjacency {a.shape} vs input {x.shape}")
        return matmul(x, a)
    raise ShapeError(f"side must be 'left' or 'right', got {side!r}")


@dataclass
class BlockParams:
    w_spatial: Tensor
    w_temporal: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Optional[Tensor]
    ln2_beta: Optional[Tensor]
    adjacency_mask: Optional[Tensor] = None
    # only used by the two-stream ablation baseline
    w_update: Optional[Tensor] = None
    lng_gamma: Optional[Tensor] = None
    lng_beta: Optional[Tensor] = None

    def tensors(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if isinstance(v, Tensor)}


def _ln(x, gamma, beta, normalize):
    return layer_norm(x, gamma, beta, LN_EPS) if normalize else x


def plain_block(x: Tensor, p: BlockParams, normalize: bool = True) -> Tensor:
    u = _ln(spatial_mix(x, p.w_spatial), p.ln1_gamma, p.ln1_beta, normalize)
    y = temporal_mix(u, p.w_temporal)
    if p.ln2_gamma is None:
        return y
    return _ln(y, p.ln2_gamma, p.ln2_beta, normalize)


def spatial_block(x: Tensor, p: BlockParams, a_s, normalize: bool = True) -> Tensor:
    s = add(spatial_mix(x, p.w_spatial), aggregate(a_s, x, "left", p.adjacency_mask))
    u = _ln(s, p.ln1_gamma, p.ln1_beta, normalize)
    return _ln(temporal_mix(u, p.w_temporal), p.ln2_gamma, p.ln2_beta, normalize)


def temporal_block(x: Tensor, p: BlockParams, a_t, normalize: bool = True) -> Tensor:
    if p.w_temporal.shape[0] != p.w_temporal.shape[1]:
        raise ShapeError(f"temporal block needs a square temporal weight, got {p.w_temporal.shape}")
    u = _ln(spatial_mix(x, p.w_spatial), p.ln1_gamma, p.ln1_beta, normalize)
    y = add(temporal_mix(u, p.w_temporal), aggregate(a_t, u, "right", p.adjacency_mask))
    return _ln(y, p.ln2_gamma, p.ln2_beta, normalize)


def stream_block(x: Tensor, p: BlockParams, kind: BlockKind, adj, tie: bool,
                 normalize: bool = True) -> Tensor:
    """Mixer layer plus an independent graph-convolution stream, summed at the output.

    Spatial kind uses ``A_s X W``; temporal kind uses ``W^T X A_t``. With
    ``tie`` the update weight is the block's own temporal (resp. spatial)
    mixing weight instead of a separate ``w_update``.
    """
    mixed = plain_block(x, p, normalize)
    if kind is BlockKind.SPATIAL:
        w = p.w_temporal if tie else p.w_update
        g = temporal_mix(aggregate(adj, x, "left", p.adjacency_mask), w)
    elif kind is BlockKind.TEMPORAL:
        w = p.w_spatial if tie else p.w_update
        g = spatial_mix(aggregate(adj, x, "right", p.adjacency_mask), w)
    else:
        return mixed
    return add(mixed, _ln(g, p.lng_gamma, p.lng_beta, normalize))


def fusion(x_a: Tensor, x_b: Tensor, a_s, a_t,
           mask_s: Optional[Tensor] = None, mask_t: Optional[Tensor] = None):
    """Exchange features between branches through aggregation.

    ``x_a' = x_a + A_s x_b`` and ``x_b' = x_b + x_a A_t``, both from the
    pre-exchange values.
    """
    if x_a.shape != x_b.shape:
        raise ShapeError(f"fusion needs equal branch shapes, got {x_a.shape} and {x_b.shape}")
    new_a = add(x_a, aggregate(a_s, x_b, "left", mask_s))
    new_b = add(x_b, aggregate(a_t, x_a, "right", mask_t))
    return new_a, new_b


@dataclass
class Block:
    """One block of a branch: parameters plus its fixed adjacency buffer."""

    kind: BlockKind
    params: BlockParams
    adjacency: Optional[np.ndarray] = None
    guidance: str = GUIDED
    tie: bool = False

    def __call__(self, x: Tensor, normalize: bool = True) -> Tensor:
        if self.kind is BlockKind.PLAIN:
            return plain_block(x, self.params, normalize)
        if self.guidance == STREAM:
            return stream_block(x, self.params, self.kind, self.adjacency, self.tie, normalize)
        if self.kind is BlockKind.SPATIAL:
            return spatial_block(x, self.params, self.adjacency, normalize)
        return temporal_block(x, self.params, self.adjacency, normalize)

    @property
    def guided(self) -> bool:
        return self.kind is not BlockKind.PLAIN

    def mask_support(self) -> int:
        if self.params.adjacency_mask is None or self.adjacency is None:
            return 0
        return int(np.count_nonzero(self.adjacency))


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def _ln_params(shape: tuple, name: str):
    return (Tensor(np.ones(shape), requires_grad=True, name=f"{name}_gamma"),
            Tensor(np.zeros(shape), requires_grad=True, name=f"{name}_beta"))


def init_block(
    kind: Union[BlockKind, str],
    n: int,
    t_in: int,
    t_out: int,
    rng: np.random.Generator,
    adjacency: Optional[np.ndarray] = None,
    trainable_mask: bool = False,
    ln_affine: str = "elementwise",
    guidance: str = GUIDED,
    tie: bool = False,
    output_norm: bool = True,
) -> Block:
    kind = BlockKind(kind)
    if kind is BlockKind.TEMPORAL and t_in != t_out:
        raise ShapeError(f"temporal blocks keep the time width, got {t_in} -> {t_out}")
    w_s = _uniform(rng, (n, n), n, "w_spatial")
    w_t = _uniform(rng, (t_in, t_out), t_in, "w_temporal")

    def ln_shape(t):
        return (n, t) if ln_affine == "elementwise" else (t,)

    g1, b1 = _ln_params(ln_shape(t_in), "ln1")
    g2, b2 = _ln_params(ln_shape(t_out), "ln2") if output_norm else (None, None)
    params = BlockParams(w_s, w_t, g1, b1, g2, b2)
    if kind is BlockKind.PLAIN:
        return Block(kind, params, None, guidance, tie)
    if adjacency is None:
        raise ShapeError(f"{kind.value} block needs an adjacency")
    if trainable_mask:
        params.adjacency_mask = Tensor((adjacency != 0).astype(np.float64), requires_grad=True,
                                       name="adjacency_mask")
    if guidance == STREAM:
        if not tie:
            side = t_in if kind is BlockKind.SPATIAL else n
            params.w_update = _uniform(rng, (side, side), side, "w_update")
        params.lng_gamma, params.lng_beta = _ln_params(ln_shape(t_out), "lng")
    return Block(kind, params, adjacency, guidance, tie)
