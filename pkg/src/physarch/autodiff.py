"""Reverse-mode automatic differentiation on dense float64 arrays.

The graph is built define-by-run: every operation records its parents and a
backward rule on the output tensor. ``backward(loss)`` walks the recorded
graph once in reverse topological order and accumulates gradients into the
``requires_grad`` leaves. Tensors are 1-D or 2-D only; 2-D tensors hold a
batch of row vectors. There is no broadcasting beyond multiplication by a
scalar, which keeps every backward rule a few lines of checkable numpy.

Calling ``backward`` twice without clearing leaf gradients adds a second full
contribution; optimizers here clear gradients after each update, so a training
loop never needs an explicit zeroing pass.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

Array = np.ndarray


class OpNode:
    """One recorded operation: its inputs and how to push gradients back."""

    __slots__ = ("op", "parents", "backward")

    def __init__(self, op: str, parents: tuple["Tensor", ...],
                 backward: Callable[[Array], tuple[Array | None, ...]]):
        self.op = op
        self.parents = parents
        self.backward = backward


class Tensor:
    """A dense float64 array plus an optional autodiff record.

    ``grad`` stays ``None`` until a backward pass deposits something; a leaf
    that a loss never touches therefore contributes a zero update downstream.
    """

    __slots__ = ("value", "grad", "node", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1)
        if v.ndim > 2:
            raise ShapeError(f"tensors are 1-D or 2-D, got shape {v.shape}")
        self.value = v
        self.grad: Array | None = None
        self.node: OpNode | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        tag = self.node.op if self.node is not None else "leaf"
        return f"Tensor(shape={self.shape}, {tag}, requires_grad={self.requires_grad})"


def tensor(value, requires_grad: bool = False) -> Tensor:
    return Tensor(value, requires_grad=requires_grad)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _make(op: str, parents: tuple[Tensor, ...], value: Array,
          backward_rule: Callable[[Array], tuple[Array | None, ...]]) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = OpNode(op, parents, backward_rule)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf below ``loss``.

    Gradients of interior tensors are transient per call; only leaves keep
    theirs, so repeated calls add repeated (not compounded) contributions.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            if loss.grad is None:
                loss.grad = np.zeros_like(loss.value)
            loss.grad += np.ones_like(loss.value)
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            topo.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:  # type: ignore[union-attr]
            if p.node is not None and id(p) not in visited:
                stack.append((p, False))

    pending: dict[int, Array] = {id(loss): np.ones_like(loss.value)}
    for t in reversed(topo):
        gout = pending.pop(id(t), None)
        if gout is None:
            continue
        grads = t.node.backward(gout)  # type: ignore[union-attr]
        for p, g in zip(t.node.parents, grads):  # type: ignore[union-attr]
            if g is None or not p.requires_grad:
                continue
            if p.node is None:
                if p.grad is None:
                    p.grad = np.zeros_like(p.value)
                p.grad += g
            else:
                held = pending.get(id(p))
                pending[id(p)] = g if held is None else held + g


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _make("add", (a, b), a.value + b.value,
                 lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _make("sub", (a, b), a.value - b.value,
                 lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _make("mul", (a, b), av * bv,
                 lambda g: (g * bv, g * av))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("div", a, b)
    av, bv = a.value, b.value
    return _make("div", (a, b), av / bv,
                 lambda g: (g / bv, -g * av / (bv * bv)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scale", (x,), x.value * c,
                 lambda g: (g * c,))


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a single-element tensor (a differentiable gate)."""
    if s.value.size != 1:
        raise ShapeError(f"scale_by: gate must have one element, got shape {s.shape}")
    xv = x.value
    sv = float(s.value.reshape(-1)[0])

    def back(g: Array):
        return (g * sv, np.array([float(np.sum(g * xv))]))

    return _make("scale_by", (x, s), xv * sv, back)


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0.0  # subgradient at exactly 0 is 0
    return _make("relu", (x,), np.where(mask, x.value, 0.0),
                 lambda g: (g * mask,))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``w @ x + b`` for a vector, ``x @ w.T + b`` row-wise for a batch."""
    if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
        raise ShapeError(f"affine: w {w.shape} and b {b.shape} are inconsistent")
    if x.ndim == 1:
        if x.shape[0] != w.shape[1]:
            raise ShapeError(f"affine: x {x.shape} does not match w {w.shape}")
        xv, wv = x.value, w.value

        def back1(g: Array):
            return (wv.T @ g, np.outer(g, xv), g)

        return _make("affine", (x, w, b), wv @ xv + b.value, back1)

    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"affine: x {x.shape} does not match w {w.shape}")
    xv, wv = x.value, w.value

    def back2(g: Array):
        return (g @ wv, g.T @ xv, g.sum(axis=0))

    return _make("affine", (x, w, b), xv @ wv.T + b.value, back2)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Join vectors end to end, or batches feature-wise."""
    if not parts:
        raise ShapeError("concat: no tensors given")
    ndims = {p.ndim for p in parts}
    if len(ndims) != 1:
        raise ShapeError(f"concat: mixed ranks {sorted(t.shape for t in parts)}")
    ndim = ndims.pop()
    if ndim == 2:
        rows = {p.shape[0] for p in parts}
        if len(rows) != 1:
            raise ShapeError(f"concat: row counts differ {sorted(t.shape for t in parts)}")
    axis = 0 if ndim == 1 else 1
    widths = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + widths)

    def back(g: Array):
        if ndim == 1:
            return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _make("concat", tuple(parts),
                 np.concatenate([p.value for p in parts], axis=axis), back)


def take_cols(x: Tensor, cols: Sequence[int]) -> Tensor:
    """Select features: elements of a vector, or columns of a batch."""
    idx = [int(c) for c in cols]
    width = x.shape[-1]
    for c in idx:
        if not 0 <= c < width:
            raise ShapeError(f"take_cols: column {c} outside width {width} of {x.shape}")
    xv = x.value

    def back(g: Array):
        gx = np.zeros_like(xv)
        # explicit loop: repeated columns must accumulate, fancy-index += would not
        if xv.ndim == 1:
            for j, c in enumerate(idx):
                gx[c] += g[j]
        else:
            for j, c in enumerate(idx):
                gx[:, c] += g[:, j]
        return (gx,)

    value = xv[idx] if xv.ndim == 1 else xv[:, idx]
    return _make("take_cols", (x,), value, back)


def softmax(x: Tensor) -> Tensor:
    if x.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {x.shape}")
    shifted = x.value - np.max(x.value)
    e = np.exp(shifted)
    p = e / e.sum()

    def back(g: Array):
        return (p * (g - float(np.dot(p, g))),)

    return _make("softmax", (x,), p, back)


def harden(p: Tensor) -> Tensor:
    """Straight-through gate: forward value 1, backward passes the gradient to p."""
    return _make("harden", (p,), np.ones_like(p.value),
                 lambda g: (g,))


def harden_off(p: Tensor) -> Tensor:
    """Complementary straight-through gate: forward value 0, backward
    passes the gradient to p. Lets a candidate that contributes nothing
    to the forward value still receive first-order credit."""
    return _make("harden_off", (p,), np.zeros_like(p.value),
                 lambda g: (g,))


def total(x: Tensor) -> Tensor:
    """Sum of all elements, as a single-element tensor."""
    xv = x.value
    return _make("total", (x,), np.array([float(xv.sum())]),
                 lambda g: (np.full_like(xv, float(g.reshape(-1)[0])),))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same_shape("mse_loss", pred, target)
    diff = pred.value - target.value
    n = diff.size

    def back(g: Array):
        gd = (2.0 / n) * diff * float(g.reshape(-1)[0])
        return (gd, -gd)

    return _make("mse_loss", (pred, target),
                 np.array([float(np.mean(diff * diff))]), back)


def affine_params(rng: np.random.Generator, in_dim: int, out_dim: int) -> tuple[Tensor, Tensor]:
    """Fresh affine weights: uniform +-sqrt(1/fan_in), zero bias."""
    bound = math.sqrt(1.0 / in_dim)
    w = Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)), requires_grad=True)
    b = Tensor(np.zeros(out_dim), requires_grad=True)
    return w, b


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


class AdamState:
    """Adam moments for a fixed parameter list.

    A parameter whose gradient is absent this step is treated as having a zero
    gradient: its moments keep decaying, which matches the usual behavior when
    an operation sits outside the sampled subgraph.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        params = list(params)
        for p in params:
            if not p.requires_grad:
                raise ValueError("AdamState: every parameter must require gradients")
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]


def adam_step(state: AdamState) -> None:
    """One bias-corrected Adam update; clears gradients afterwards."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(state.params, state.m, state.v):
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
