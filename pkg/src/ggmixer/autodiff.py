"""Dense tensors with a define-by-run reverse-mode tape.

Every differentiable operation used by the network lives here. Tensors hold
float64 numpy arrays of rank 0 to 3; rank-3 tensors are treated as a batch of
matrices, and matmul broadcasts a 2-D operand across that batch.

Operations are only recorded while a :class:`Tape` is active::

    with Tape() as tape:
        loss = sum_(matmul(w, x))
    backward(tape, loss)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import NumericError, ParameterError, ShapeError, UsageError

ArrayLike = Union[np.ndarray, Sequence, float, int]

_TAPES: list["Tape"] = []


class Tensor:
    """Shape-tagged float64 array that can participate in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"tensors of rank > 3 are not supported, got shape {arr.shape}")
        if any(d == 0 for d in arr.shape):
            raise ShapeError(f"dimension sizes must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.ravel()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Op:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]
    name: str


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self.ops: list[_Op] = []
        self._index: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.ops)

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._index and self.ops[self._index[id(t)]].output is t

    def record(self, name: str, inputs: tuple, output: Tensor, backward) -> None:
        self._index[id(output)] = len(self.ops)
        self.ops.append(_Op(inputs, output, backward, name))


def current_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def _make(name: str, data: np.ndarray, inputs: tuple, backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None
    out.name = None
    tape = current_tape()
    if needs and tape is not None:
        tape.record(name, inputs, out, backward)
    return out


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# -- operations -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; either operand may carry a leading batch axis."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul batch sizes differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        da = _reduce_to(g @ _swap(bd), ad.shape) if a.requires_grad else None
        db = _reduce_to(_swap(ad) @ g, bd.shape) if b.requires_grad else None
        return da, db

    return _make("matmul", ad @ bd, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes (a batch of matrices is transposed per item)."""
    if a.ndim < 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _make("transpose", _swap(a.data), (a,), lambda g: (_swap(g),))


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} needs equal shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make("scale", a.data * s, (a,), lambda g: (g * s,))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum_(a: Tensor, axis: Optional[int] = None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _make("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("sum", out, (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return _make("mean", np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def sqrt(a: Tensor, eps: float = 0.0) -> Tensor:
    """Elementwise sqrt(a + eps)."""
    out = np.sqrt(a.data + eps)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma * xhat + beta``.

    ``gamma`` and ``beta`` must match the trailing axes of ``x``: either the
    last axis alone or the full per-matrix shape (elementwise affine).
    """
    if not eps > 0:
        raise ParameterError(f"layer_norm eps must be > 0, got {eps}")
    if gamma.shape != beta.shape:
        raise ShapeError(f"gamma {gamma.shape} and beta {beta.shape} differ")
    k = gamma.ndim
    if k == 0 or k > x.ndim or x.shape[-k:] != gamma.shape:
        raise ShapeError(f"affine shape {gamma.shape} does not match trailing axes of {x.shape}")
    xd, gd = x.data, gamma.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = gd * xhat + beta.data

    def backward(g):
        dx = dgamma = dbeta = None
        if x.requires_grad:
            dxhat = g * gd
            dx = rstd * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        if gamma.requires_grad:
            dgamma = _reduce_leading(g * xhat, gd.shape)
        if beta.requires_grad:
            dbeta = _reduce_leading(g, gd.shape)
        return dx, dgamma, dbeta

    return _make("layer_norm", out, (x, gamma, beta), backward)


def _reduce_leading(g: np.ndarray, shape: tuple) -> np.ndarray:
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


# -- differentiation --------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; clear them with ``zero_grad``.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise UsageError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for op in reversed(tape.ops[: tape._index[id(loss)] + 1]):
        g = grads.pop(id(op.output), None)
        if g is None:
            continue
        for inp, gi in zip(op.inputs, op.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if tape.produced(inp):
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
            else:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi


@dataclass
class GradCheckReport:
    max_error: float
    passed: bool
    checked: int
    tol: float


def grad_check(
    f: Callable[..., Tensor],
    x: Union[Tensor, Sequence[Tensor]],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients against central differences.

    ``f`` is called as ``f(*xs)`` and must return a scalar tensor; it may also
    ignore its arguments and close over them, since the inputs are perturbed
    in place. The error per entry is ``|g - g_fd| / max(1, |g|, |g_fd|)``.
    ``max_entries`` caps the number of entries probed per tensor (sampled).
    """
    if not 0 < h <= 1e-2:
        raise ParameterError(f"h must be in (0, 1e-2], got {h}")
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved_flags = [t.requires_grad for t in xs]
    saved_grads = [t.grad for t in xs]
    rng = np.random.default_rng(seed)
    try:
        for t in xs:
            t.requires_grad = True
            t.grad = None
        with Tape() as tape:
            out = f(*xs)
        _check_finite(out)
        if out.size != 1:
            raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
        if tape.produced(out):
            backward(tape, out)
        analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in xs]

        worst = 0.0
        checked = 0
        for t, g in zip(xs, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = f(*xs)
                flat[i] = orig - h
                fm = f(*xs)
                flat[i] = orig
                _check_finite(fp)
                _check_finite(fm)
                fd = (fp.item() - fm.item()) / (2 * h)
                ga = g.reshape(-1)[i]
                err = abs(ga - fd) / max(1.0, abs(ga), abs(fd))
                worst = max(worst, err)
                checked += 1
    finally:
        for t, flag, gr in zip(xs, saved_flags, saved_grads):
            t.requires_grad = flag
            t.grad = gr
    return GradCheckReport(max_error=worst, passed=worst <= tol, checked=checked, tol=tol)


def _check_finite(t: Tensor) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError("function produced non-finite output")
