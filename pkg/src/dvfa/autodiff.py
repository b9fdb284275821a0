"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every operation records a closure that maps the output gradient to the input
gradients. The graph is rebuilt on every forward pass and released after
``backward``; variable sequence lengths therefore need no special handling.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

PROB_EPS = 1e-7

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = dtype or (data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _DEFAULT_DTYPE)
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------
    def backward(self, accumulate: bool = False) -> None:
        """Populate ``.grad`` on every trainable leaf reachable from this scalar.

        Leaves that already hold a gradient are rejected unless ``accumulate``
        is true, in which case the new gradient is added to the old one. The
        recorded graph is released afterwards, so a second call on the same
        root raises.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("graph already consumed by a previous backward()")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")

        order = _topological_order(self)
        if not accumulate:
            for node in order:
                if node._backward is None and node.grad is not None:
                    name = node.name or repr(node)
                    raise RuntimeError(
                        f"gradient already populated on {name}; call zero_grad() or pass accumulate=True"
                    )

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _DEFAULT_DTYPE))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return _result(np.where(positive, x.data, 0).astype(x.dtype), (x,), lambda g: (g * positive,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # overflow-free form
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _result(out, (x,), lambda g: (g * out * (1 - out),))


def swish(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def backward(g):
        return (g * (s + out * (1 - s)),)

    return _result(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1 - out * out),))


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    """Clip values; the gradient is zero wherever the clip is active."""
    inside = (x.data >= low) & (x.data <= high)
    return _result(np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


# -- reductions and shape ----------------------------------------------------

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result(np.asarray(out, dtype=x.dtype), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _result(out, (x,), lambda g: (np.transpose(g, inverse),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(
                f"concat along axis {axis}: shapes {tensors[0].shape} and {t.shape} differ off-axis"
            )
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _result(out, tuple(tensors), backward)


def split_last(x: Tensor, parts: int) -> list[Tensor]:
    width = x.shape[-1]
    if width % parts:
        raise ShapeError(f"cannot split last axis of {x.shape} into {parts} parts")
    step = width // parts
    return [x[..., i * step:(i + 1) * step] for i in range(parts)]


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = np.tensordot(a.data, g, axes=(list(range(a.ndim - 1)), list(range(g.ndim - 1))))
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), backward)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding ids must lie in [0, {weight.shape[0]}), got range [{ids.min()}, {ids.max()}]")
    out = weight.data[ids]

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _result(out, (weight,), backward)


# -- normalisation and distributions -----------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match width {x.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    width = x.shape[-1]

    def backward(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (g * xhat).reshape(-1, width).sum(axis=0)
        if beta.requires_grad:
            gbeta = g.reshape(-1, width).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def _masked_scores(x: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return x
    mask = np.asarray(mask, dtype=bool)
    if not np.all(np.broadcast_to(mask, x.shape).any(axis=-1)):
        raise ValueError("softmax: a row has every entry masked out")
    return np.where(mask, x, -np.inf)


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is false get exactly 0."""
    s = _masked_scores(x.data, mask)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), backward)


def log_softmax(x: Tensor, mask=None) -> Tensor:
    """Log-softmax over the last axis; masked entries are -inf with zero gradient."""
    s = _masked_scores(x.data, mask)
    shifted = s - s.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        g = np.where(np.isfinite(out), g, 0)
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), backward)


def cross_entropy(log_probs: Tensor, targets, mask=None) -> Tensor:
    """Summed negative log-likelihood of ``targets`` under per-row log distributions.

    ``log_probs`` has shape (..., N); ``targets`` and ``mask`` have the leading
    shape. Masked rows contribute nothing and receive zero gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n_classes = log_probs.shape[-1]
    if targets.shape != log_probs.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {targets.shape} vs log_probs {log_probs.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise ValueError(f"cross_entropy: target index out of range [0, {n_classes})")
    weight = np.ones(targets.shape, dtype=log_probs.dtype) if mask is None else np.asarray(mask, dtype=log_probs.dtype)
    if weight.shape != targets.shape:
        raise ShapeError(f"cross_entropy: mask {weight.shape} vs targets {targets.shape}")
    picked = np.take_along_axis(log_probs.data, targets[..., None], axis=-1)[..., 0]
    if np.any(~np.isfinite(picked) & (weight > 0)):
        raise ValueError("cross_entropy: a target class has zero probability")
    picked = np.where(weight > 0, picked, 0)
    out = np.asarray(-(picked * weight).sum(), dtype=log_probs.dtype)

    def backward(g):
        full = np.zeros_like(log_probs.data)
        np.put_along_axis(full, targets[..., None], (-g * weight)[..., None], axis=-1)
        return (full,)

    return _result(out, (log_probs,), backward)


def binary_cross_entropy(probs: Tensor, targets, mask=None, eps: float = PROB_EPS) -> Tensor:
    """Summed binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    targets = np.asarray(targets, dtype=probs.dtype)
    if targets.shape != probs.shape:
        raise ShapeError(f"binary_cross_entropy: targets {targets.shape} vs probs {probs.shape}")
    weight = np.ones(targets.shape, dtype=probs.dtype) if mask is None else np.asarray(mask, dtype=probs.dtype)
    if weight.shape != targets.shape:
        raise ShapeError(f"binary_cross_entropy: mask {weight.shape} vs probs {probs.shape}")
    p = np.clip(probs.data, eps, 1 - eps)
    out = np.asarray(-(weight * (targets * np.log(p) + (1 - targets) * np.log1p(-p))).sum(), dtype=probs.dtype)
    inside = (probs.data >= eps) & (probs.data <= 1 - eps)

    def backward(g):
        return (g * weight * inside * (-(targets / p) + (1 - targets) / (1 - p)),)

    return _result(out, (probs,), backward)


# -- convolutions ------------------------------------------------------------

def _pad_time(x: np.ndarray, left: int, right: int) -> np.ndarray:
    widths = [(0, 0)] * x.ndim
    widths[-2] = (left, right)
    return np.pad(x, widths)


def depthwise_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 1-D convolution over time with 'same' zero padding.

    x: (..., L, C); weight: (K, C) with K odd; bias: (C,).
    """
    k, c = weight.shape
    if k % 2 == 0:
        raise ShapeError(f"depthwise_conv1d: kernel width must be odd, got {k}")
    if x.shape[-1] != c:
        raise ShapeError(f"depthwise_conv1d: input width {x.shape[-1]} vs kernel channels {c}")
    half = k // 2
    length = x.shape[-2]
    xp = _pad_time(x.data, half, half)
    out = np.zeros_like(x.data)
    for j in range(k):
        out += xp[..., j:j + length, :] * weight.data[j]
    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for j in range(k):
                gp[..., j:j + length, :] += g * weight.data[j]
            gx = gp[..., half:half + length, :]
        if weight.requires_grad:
            gw = np.stack([(xp[..., j:j + length, :] * g).reshape(-1, c).sum(axis=0) for j in range(k)])
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, c).sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _result(out, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Full 1-D convolution over time, stride 1, 'same' zero padding.

    x: (..., L, Cin); weight: (K, Cin, Cout) with K odd; bias: (Cout,).
    """
    k, cin, cout = weight.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d: kernel width must be odd, got {k}")
    if x.shape[-1] != cin:
        raise ShapeError(f"conv1d: input width {x.shape[-1]} vs kernel input channels {cin}")
    half = k // 2
    length = x.shape[-2]
    xp = _pad_time(x.data, half, half)
    cols = np.concatenate([xp[..., j:j + length, :] for j in range(k)], axis=-1)
    w2 = weight.data.reshape(k * cin, cout)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gcols = g @ w2.T
            gp = np.zeros_like(xp)
            for j in range(k):
                gp[..., j:j + length, :] += gcols[..., j * cin:(j + 1) * cin]
            gx = gp[..., half:half + length, :]
        if weight.requires_grad:
            gw = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _result(out, parents, backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# -- gradient checking -------------------------------------------------------

def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the scalar ``fn()`` wrt ``tensor``."""
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    g_flat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = float(fn().data)
            flat[i] = original - h
            minus = float(fn().data)
            flat[i] = original
            g_flat[i] = (plus - minus) / (2 * h)
    return grad


def gradient_check(fn: Callable[[], Tensor], tensors: Iterable[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between analytic and finite-difference gradients.

    Elementwise ``|a - n| / max(|a|, |n|, 1e-6)``; the floor keeps entries whose
    true gradient is ~0 from dividing finite-difference noise by nothing.
    """
    tensors = list(tensors)
    for t in tensors:
        t.zero_grad()
    fn().backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data, dtype=np.float64) if t.grad is None else t.grad.astype(np.float64)
        numeric = numerical_gradient(fn, t, h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        worst = max(worst, float((np.abs(analytic - numeric) / denom).max(initial=0.0)))
    return worst
