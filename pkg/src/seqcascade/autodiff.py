"""Dense-tensor math with reverse-mode gradient accumulation.

A flat tape records every differentiable operation in execution order.
Walking the tape backwards visits each node after all of its consumers, so a
single reverse sweep propagates gradients without an explicit topological
sort.  Arithmetic defaults to 32-bit floats; gradient-oracle tests may switch
the default to float64 via `set_default_dtype` so finite differences are
meaningful.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateBatchError, MaskError, ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_TAPE: list["_Node"] = []


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / finite differences)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def tape_reset() -> None:
    """Drop every recorded operation; grads already deposited stay in place."""
    _TAPE.clear()


def tape_size() -> int:
    return len(_TAPE)


class Tensor:
    """A dense array plus an optional same-shape gradient accumulator.

    `requires_grad` marks leaves (parameters) whose gradients should be
    retained by `backward`.  Outputs of recorded operations carry gradient
    flow through the tape without storing it, unless a caller flips
    `requires_grad` on them explicitly.
    """

    __slots__ = ("data", "requires_grad", "grad", "_traced")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._traced = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _fresh(data: np.ndarray) -> Tensor:
    """Wrap an ndarray produced by an op, skipping dtype coercion."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = False
    t.grad = None
    t._traced = False
    return t


class _Node:
    __slots__ = ("outs", "backward")

    def __init__(self, outs: tuple[Tensor, ...], backward: Callable):
        self.outs = outs
        self.backward = backward


def _flows(t: Tensor) -> bool:
    return t.requires_grad or t._traced


def _record(inputs: Sequence[Tensor], outs: tuple[Tensor, ...], backward_fn) -> None:
    if not _GRAD_ENABLED:
        return
    for t in inputs:
        if t.requires_grad or t._traced:
            break
    else:
        return
    for o in outs:
        o._traced = True
    _TAPE.append(_Node(outs, backward_fn))


def backward(loss: Tensor) -> None:
    """Accumulate dL/dt into `.grad` of every requires_grad tensor reachable
    from `loss`.  Repeated calls without `tape_reset` accumulate."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    touched: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(_TAPE):
        if len(node.outs) == 1:
            g = flows.get(id(node.outs[0]))
            if g is None:
                continue
            deposits = node.backward(g)
        else:
            gouts = [flows.get(id(o)) for o in node.outs]
            if all(g is None for g in gouts):
                continue
            deposits = node.backward(gouts)
        for t, g in deposits:
            if g is None:
                continue
            key = id(t)
            if key in flows:
                flows[key] = flows[key] + g
            else:
                flows[key] = g
                touched[key] = t
    for key, t in touched.items():
        if t.requires_grad:
            if t.grad is None:
                t.grad = flows[key].copy()
            else:
                t.grad += flows[key]


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    out = _fresh(a.data @ b.data)
    if _GRAD_ENABLED and (a.requires_grad or a._traced or b.requires_grad or b._traced):
        na, nb = _flows(a), _flows(b)

        def bwd(g):
            return ((a, g @ b.data.T if na else None),
                    (b, a.data.T @ g if nb else None))

        out._traced = True
        _TAPE.append(_Node((out,), bwd))
    return out


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materializing the transpose (tied output projections)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(f"matmul_nt: {a.shape} x {b.shape}^T")
    out = _fresh(a.data @ b.data.T)
    if _GRAD_ENABLED and (a.requires_grad or a._traced or b.requires_grad or b._traced):
        na, nb = _flows(a), _flows(b)

        def bwd(g):
            return ((a, g @ b.data if na else None),
                    (b, g.T @ a.data if nb else None))

        out._traced = True
        _TAPE.append(_Node((out,), bwd))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; either operand may be a single row broadcast over the
    other's rows."""
    ash, bsh = a.data.shape, b.data.shape
    if ash == bsh:
        kind = 0
    elif len(ash) == 2 and len(bsh) == 2 and ash[1] == bsh[1] and bsh[0] == 1:
        kind = 1  # b broadcast over a's rows
    elif len(ash) == 2 and len(bsh) == 2 and ash[1] == bsh[1] and ash[0] == 1:
        kind = 2  # a broadcast over b's rows
    else:
        raise ShapeError(f"add: {ash} + {bsh}")
    out = _fresh(a.data + b.data)
    if _GRAD_ENABLED and (a.requires_grad or a._traced or b.requires_grad or b._traced):
        na, nb = _flows(a), _flows(b)

        def bwd(g):
            ga = gb = None
            if na:
                ga = g.sum(axis=0, keepdims=True) if kind == 2 else g
            if nb:
                gb = g.sum(axis=0, keepdims=True) if kind == 1 else g
            return ((a, ga), (b, gb))

        out._traced = True
        _TAPE.append(_Node((out,), bwd))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: {a.shape} * {b.shape}")
    out = _fresh(a.data * b.data)
    if _GRAD_ENABLED and (a.requires_grad or a._traced or b.requires_grad or b._traced):
        na, nb = _flows(a), _flows(b)

        def bwd(g):
            return ((a, g * b.data if na else None),
                    (b, g * a.data if nb else None))

        out._traced = True
        _TAPE.append(_Node((out,), bwd))
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    out = _fresh(a.data * s)

    def bwd(g):
        return ((a, g * s),)

    _record((a,), (out,), bwd)
    return out


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    out = _fresh(y)

    def bwd(g):
        return ((t, g * (1.0 - y * y)),)

    _record((t,), (out,), bwd)
    return out


def sigmoid(t: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-t.data))
    out = _fresh(y)

    def bwd(g):
        return ((t, g * y * (1.0 - y)),)

    _record((t,), (out,), bwd)
    return out


def relu(t: Tensor) -> Tensor:
    y = np.maximum(t.data, 0)
    out = _fresh(y)

    def bwd(g):
        return ((t, g * (t.data > 0)),)

    _record((t,), (out,), bwd)
    return out


def _masked_softmax(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        if not mask.any(axis=-1).all():
            raise MaskError("softmax over fully masked row")
        shifted = np.where(mask, x, -np.inf)
        shifted = shifted - shifted.max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
    else:
        e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(t: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last dimension.  `mask` (same shape, boolean) pins
    masked entries to exactly zero probability."""
    if t.data.shape[-1] < 1:
        raise ShapeError("softmax needs a nonempty last dimension")
    y = _masked_softmax(t.data, mask)
    out = _fresh(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((t, y * (g - dot)),)

    _record((t,), (out,), bwd)
    return out


_ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "softmax": softmax}


def activation(t: Tensor, kind: str) -> Tensor:
    """Apply one of {tanh, sigmoid, relu, softmax}; softmax runs over the last
    dimension."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None
    return fn(t)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("embedding ids must be a flat sequence")
    v = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        bad = ids[(ids < 0) | (ids >= v)][0]
        raise IndexError(f"embedding id {bad} out of range [0, {v})")
    out = _fresh(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return ((table, gt),)

    _record((table,), (out,), bwd)
    return out


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors with equal row counts along columns."""
    if not tensors:
        raise ShapeError("concat_cols of nothing")
    rows = tensors[0].data.shape[0]
    if any(t.data.ndim != 2 or t.data.shape[0] != rows for t in tensors):
        raise ShapeError("concat_cols: row counts differ")
    out = _fresh(np.concatenate([t.data for t in tensors], axis=1))
    widths = [t.data.shape[1] for t in tensors]

    def bwd(g):
        deposits = []
        offset = 0
        for t, w in zip(tensors, widths):
            deposits.append((t, g[:, offset:offset + w]))
            offset += w
        return deposits

    _record(tuple(tensors), (out,), bwd)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack (1, d) tensors into a (T, d) tensor."""
    if not rows:
        raise ShapeError("stack_rows of nothing")
    if any(t.data.ndim != 2 or t.data.shape[0] != 1 for t in rows):
        raise ShapeError("stack_rows expects (1, d) rows")
    out = _fresh(np.concatenate([t.data for t in rows], axis=0))

    def bwd(g):
        return [(t, g[i:i + 1]) for i, t in enumerate(rows)]

    _record(tuple(rows), (out,), bwd)
    return out


def split_rows(t: Tensor) -> list[Tensor]:
    """Split a (T, d) tensor into T tensors of shape (1, d)."""
    if t.data.ndim != 2:
        raise ShapeError("split_rows expects a 2-D tensor")
    outs = tuple(_fresh(t.data[i:i + 1]) for i in range(t.data.shape[0]))

    def bwd(gouts):
        g = np.concatenate(
            [go if go is not None else np.zeros((1, t.data.shape[1]), dtype=t.data.dtype)
             for go in gouts],
            axis=0,
        )
        return ((t, g),)

    _record((t,), outs, bwd)
    return list(outs)


def slice_cols(t: Tensor, start: int, stop: int) -> Tensor:
    if t.data.ndim != 2 or not (0 <= start < stop <= t.data.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] of {t.shape}")
    out = _fresh(t.data[:, start:stop])

    def bwd(g):
        gt = np.zeros_like(t.data)
        gt[:, start:stop] = g
        return ((t, gt),)

    _record((t,), (out,), bwd)
    return out


def sum_all(t: Tensor) -> Tensor:
    out = _fresh(t.data.sum())

    def bwd(g):
        return ((t, np.full_like(t.data, g)),)

    _record((t,), (out,), bwd)
    return out


def cross_entropy(
    logits: Tensor,
    targets: Sequence[int],
    pad_mask: Sequence[bool] | None = None,
    reduction: str = "mean",
) -> Tensor:
    """Negative log-softmax probability of `targets`, averaged (or summed)
    over unmasked positions.  Masked positions contribute exactly zero."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects (T, V) logits, got {logits.shape}")
    t_len, v = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (t_len,):
        raise ShapeError(f"targets length {targets.shape} vs {t_len} positions")
    if pad_mask is None:
        keep = None
        count = t_len
    else:
        keep = np.asarray(pad_mask, dtype=bool)
        if keep.shape != (t_len,):
            raise ShapeError("pad_mask length mismatch")
        count = int(keep.sum())
    if count == 0:
        raise DegenerateBatchError("cross_entropy over fully masked sequence")
    live = targets if keep is None else targets[keep]
    if live.min() < 0 or live.max() >= v:
        raise IndexError("target id out of vocabulary range")

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=1, keepdims=True)
    log_probs = (x - m) - np.log(z)
    nll = -log_probs[np.arange(t_len), targets]
    total = float(nll.sum() if keep is None else (nll * keep).sum())
    denom = count if reduction == "mean" else 1
    out = _fresh(np.asarray(total / denom, dtype=x.dtype))

    def bwd(g):
        probs = e / z
        probs[np.arange(t_len), targets] -= 1.0
        if keep is None:
            probs *= 1.0 / denom
        else:
            probs *= (keep / denom)[:, None]
        return ((logits, probs * g),)

    _record((logits,), (out,), bwd)
    return out


def dropout(t: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at training time so
    inference is the identity."""
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return t
    if rng is None:
        raise ConfigError("training-mode dropout needs an explicit rng")
    keep = (rng.random(t.data.shape) >= p).astype(t.data.dtype)
    keep *= t.data.dtype.type(1.0 / (1.0 - p))
    out = _fresh(t.data * keep)

    def bwd(g):
        return ((t, g * keep),)

    _record((t,), (out,), bwd)
    return out


def clip_gradients(grads: Iterable[np.ndarray], max_norm: float = 5.0) -> list[np.ndarray]:
    """Scale all gradient arrays in place by max_norm/g when the global L2
    norm g exceeds max_norm; the same factor applies to every array."""
    grads = list(grads)
    norm = global_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return grads


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
