"""Finite-difference gradient suite over every differentiable operation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor, grad_check
from .blocks import (BlockKind, aggregate, fusion, init_block, plain_block, spatial_block,
                     spatial_mix, stream_block, temporal_block, temporal_mix, STREAM)
from .graph import build_temporal_adjacency, chain, build_spatial_adjacency, normalize_adjacency
from .network import NetworkConfig, init_parameters
from .training import mpjpe_loss, velocity_loss

OP_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class GradCase:
    name: str
    report: GradCheckReport


def _rand(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _probe(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _weighted(out: Tensor, probe: Tensor) -> Tensor:
    """Random projection of a tensor output to a scalar."""
    return ad.sum_(ad.mul(out, probe))


def op_cases(rng: np.random.Generator):
    """Yield (name, f, inputs) for every op on three shapes each."""
    for k, (m, n, p) in enumerate([(2, 3, 4), (5, 1, 3), (4, 4, 2)]):
        a, b = _rand(rng, m, n), _rand(rng, n, p)
        r = _probe(rng, (m, p))
        yield f"matmul[{k}]", lambda a, b, r=r: _weighted(ad.matmul(a, b), r), [a, b]
    for k, (bt, m, n, p) in enumerate([(2, 3, 4, 2), (3, 2, 2, 5), (1, 4, 3, 3)]):
        a, b = _rand(rng, bt, m, n), _rand(rng, n, p)
        r = _probe(rng, (bt, m, p))
        yield f"matmul_batched_left[{k}]", lambda a, b, r=r: _weighted(ad.matmul(a, b), r), [a, b]
        a2, b2 = _rand(rng, m, n), _rand(rng, bt, n, p)
        yield f"matmul_batched_right[{k}]", lambda a, b, r=r: _weighted(ad.matmul(a, b), r), [a2, b2]
    for k, shape in enumerate([(2, 3), (4, 1), (2, 3, 5)]):
        x = _rand(rng, *shape)
        rt = _probe(rng, shape[:-2] + (shape[-1], shape[-2]))
        yield f"transpose[{k}]", lambda x, r=rt: _weighted(ad.transpose(x), r), [x]
        y = _rand(rng, *shape)
        r = _probe(rng, shape)
        yield f"add[{k}]", lambda x, y, r=r: _weighted(ad.add(x, y), r), [x, y]
        yield f"sub[{k}]", lambda x, y, r=r: _weighted(ad.sub(x, y), r), [x, y]
        yield f"mul[{k}]", lambda x, y, r=r: _weighted(ad.mul(x, y), r), [x, y]
        yield f"scale[{k}]", lambda x, r=r: _weighted(ad.scale(x, -2.5), r), [x]
        flat = (int(np.prod(shape)),)
        rf = _probe(rng, flat)
        yield f"reshape[{k}]", lambda x, r=rf, s=flat: _weighted(ad.reshape(x, s), r), [x]
        rs = _probe(rng, shape[:-1])
        yield f"sum_axis[{k}]", lambda x, r=rs: _weighted(ad.sum_(x, axis=-1), r), [x]
        yield f"mean[{k}]", lambda x: ad.mean(ad.mul(x, x)), [x]
        pos = Tensor(rng.uniform(0.5, 2.0, size=shape), requires_grad=True)
        yield f"sqrt[{k}]", lambda x, r=r: _weighted(ad.sqrt(x, 1e-12), r), [pos]
    for k, (lead, m, n) in enumerate([((), 3, 5), ((2,), 4, 3), ((), 6, 4)]):
        x = _rand(rng, *lead, m, n, scale=3.0)
        r = _probe(rng, lead + (m, n))
        g, b = _rand(rng, n), _rand(rng, n)
        yield f"layer_norm_row[{k}]", lambda x, g, b, r=r: _weighted(ad.layer_norm(x, g, b), r), [x, g, b]
        ge, be = _rand(rng, m, n), _rand(rng, m, n)
        yield (f"layer_norm_elementwise[{k}]",
               lambda x, g, b, r=r: _weighted(ad.layer_norm(x, g, b), r), [x, ge, be])
        # layer_norm composed with a matmul on both sides
        w = _rand(rng, n, n)
        yield (f"layer_norm_composition[{k}]",
               lambda x, w, g, b, r=r: _weighted(ad.layer_norm(ad.matmul(ad.layer_norm(x, g, b), w), g, b), r),
               [x, w, g, b])


def block_cases(rng: np.random.Generator):
    """Mixing, aggregation, blocks and fusion on 6 x 4 (and batched) inputs."""
    n, t = 6, 4
    a_s = normalize_adjacency(build_spatial_adjacency(chain(2), "axis-identity", True))
    a_t = normalize_adjacency(build_temporal_adjacency(t, True))
    for k, lead in enumerate([(), (2,), (3,)]):
        x = _rand(rng, *lead, n, t, scale=2.0)
        r = _probe(rng, lead + (n, t))
        w = _rand(rng, n, n)
        yield f"spatial_mix[{k}]", lambda x, w, r=r: _weighted(spatial_mix(x, w), r), [x, w]
        wt = _rand(rng, t, t)
        yield f"temporal_mix[{k}]", lambda x, w, r=r: _weighted(temporal_mix(x, w), r), [x, wt]
        ms = Tensor((a_s != 0) * rng.uniform(0.5, 1.5, size=a_s.shape), requires_grad=True)
        yield (f"aggregate_left_masked[{k}]",
               lambda x, m, r=r: _weighted(aggregate(a_s, x, "left", m), r), [x, ms])
        mt = Tensor((a_t != 0) * rng.uniform(0.5, 1.5, size=a_t.shape), requires_grad=True)
        yield (f"aggregate_right_masked[{k}]",
               lambda x, m, r=r: _weighted(aggregate(a_t, x, "right", m), r), [x, mt])
        for kind, adj, fn in ((BlockKind.SPATIAL, a_s, spatial_block),
                              (BlockKind.TEMPORAL, a_t, temporal_block)):
            blk = init_block(kind, n, t, t, rng, adj, trainable_mask=True)
            _jitter(blk.params.tensors().values(), rng)
            params = list(blk.params.tensors().values())
            yield (f"{kind.value}_block[{k}]",
                   lambda x, *ps, p=blk.params, adj=adj, fn=fn, r=r: _weighted(fn(x, p, adj), r),
                   [x] + params)
            for tie in (False, True):
                sb = init_block(kind, n, t, t, rng, adj, guidance=STREAM, tie=tie)
                _jitter(sb.params.tensors().values(), rng)
                yield (f"{kind.value}_stream_block[tie={tie}][{k}]",
                       lambda x, *ps, p=sb.params, kind=kind, adj=adj, tie=tie, r=r:
                       _weighted(stream_block(x, p, kind, adj, tie), r),
                       [x] + list(sb.params.tensors().values()))
        pb = init_block(BlockKind.PLAIN, n, t, 2, rng)
        _jitter(pb.params.tensors().values(), rng)
        r2 = _probe(rng, lead + (n, 2))
        yield (f"plain_block[{k}]", lambda x, *ps, p=pb.params, r=r2: _weighted(plain_block(x, p), r),
               [x] + list(pb.params.tensors().values()))
        xb = _rand(rng, *lead, n, t)
        ms2 = Tensor((a_s != 0) * 1.0, requires_grad=True)
        mt2 = Tensor((a_t != 0) * 1.0, requires_grad=True)
        rb = _probe(rng, lead + (n, t))

        def fuse(xa, xb, ms, mt, r=r, rb=rb):
            ya, yb = fusion(xa, xb, a_s, a_t, ms, mt)
            return ad.add(_weighted(ya, r), _weighted(yb, rb))

        yield f"fusion[{k}]", fuse, [x, xb, ms2, mt2]
        target = rng.normal(size=lead + (n, t))
        yield f"mpjpe_loss[{k}]", lambda x, y=target: mpjpe_loss(x, y), [x]
        yield f"velocity_loss[{k}]", lambda x, y=target: velocity_loss(x, y), [x]


def _jitter(tensors, rng) -> None:
    """Move parameters off their symmetric initial values (gamma=1, beta=0, mask=1)."""
    for t in tensors:
        t.data = t.data + 0.1 * rng.normal(size=t.shape) * (t.data != 0 if t.name == "adjacency_mask" else 1)


def end_to_end_case(seed: int = 0, trainable_mask: bool = True):
    """Tiny model (N=6, T=4, T_f=2, n=2): loss over a small batch w.r.t. every parameter."""
    cfg = NetworkConfig(joints=2, input_frames=4, output_frames=2, middle_blocks=2,
                        trainable_mask=trainable_mask, seed=seed)
    model = init_parameters(cfg)
    rng = np.random.default_rng(seed + 1)
    _jitter(model.parameters(), rng)
    x = rng.normal(size=(3, 6, 4)) * 20.0
    y = x[..., -1:].repeat(2, axis=-1) + rng.normal(size=(3, 6, 2)) * 5.0
    return "end_to_end_tiny_model", lambda *ps: mpjpe_loss(model.forward_matrix(x), y), model.parameters()


def run_gradient_suite(seed: int = 0, h: float = 1e-5) -> list:
    """Run every case; per-op cases at OP_TOL, the end-to-end model at MODEL_TOL."""
    rng = np.random.default_rng(seed)
    results = []
    for name, f, xs in list(op_cases(rng)) + list(block_cases(rng)):
        results.append(GradCase(name, grad_check(f, xs, h=h, tol=OP_TOL)))
    name, f, xs = end_to_end_case(seed)
    results.append(GradCase(name, grad_check(f, xs, h=h, tol=MODEL_TOL)))
    return results
