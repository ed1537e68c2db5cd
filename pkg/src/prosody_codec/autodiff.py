"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional backward closure; calling
``backward`` on a scalar output walks the recorded graph once in reverse
topological order. The op set is exactly what the codec needs: elementwise
arithmetic, matmul (batched), softmax, layer norm, depthwise conv1d, swish,
sigmoid, embedding lookup, masked fill, reductions, and the stop-gradient /
straight-through pair used by the quantizer.

Forward values are never mutated by backward. Broadcasting follows numpy;
gradients of broadcast operands are summed back to the operand shape.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import ContractError, NumericError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the module-level functions are the actual ops
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce operands; scalar constants adopt the tensor operand's dtype so
    python floats don't silently upcast a float32 graph to float64."""
    at, bt = isinstance(a, Tensor), isinstance(b, Tensor)
    if at and not bt and np.ndim(b) == 0:
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if bt and not at and np.ndim(a) == 0:
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return as_tensor(a), as_tensor(b)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(out: Tensor, seed: np.ndarray | None = None) -> None:
    """Run reverse-mode accumulation from ``out`` (scalar unless seed given)."""
    if seed is None:
        if out.data.size != 1:
            raise ContractError(
                f"backward: output has shape {out.data.shape}, expected scalar (or pass seed)"
            )
        seed = np.ones_like(out.data)
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    out.grad = np.asarray(seed, dtype=out.data.dtype).reshape(out.data.shape)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data + b.data

    def bwd():
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad, b.data.shape))

    out = _make(out_data, (a, b), bwd)
    return out


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data - b.data

    def bwd():
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(-out.grad, b.data.shape))

    out = _make(out_data, (a, b), bwd)
    return out


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data * b.data

    def bwd():
        _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

    out = _make(out_data, (a, b), bwd)
    return out


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data / b.data

    def bwd():
        _accumulate(a, _unbroadcast(out.grad / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))

    out = _make(out_data, (a, b), bwd)
    return out


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data**p

    def bwd():
        _accumulate(a, out.grad * p * a.data ** (p - 1))

    out = _make(out_data, (a,), bwd)
    return out


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.abs(a.data)

    def bwd():
        _accumulate(a, out.grad * np.sign(a.data))

    out = _make(out_data, (a,), bwd)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd():
        _accumulate(a, out.grad * out_data)

    out = _make(out_data, (a,), bwd)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd():
        _accumulate(a, out.grad / a.data)

    out = _make(out_data, (a,), bwd)
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd():
        _accumulate(a, out.grad * 0.5 / out_data)

    out = _make(out_data, (a,), bwd)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd():
        _accumulate(a, out.grad * out_data * (1.0 - out_data))

    out = _make(out_data, (a,), bwd)
    return out


def swish(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def bwd():
        _accumulate(a, out.grad * (s + a.data * s * (1.0 - s)))

    out = _make(out_data, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 1 or a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else -1]:
        raise ContractError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    # (..., m, k) @ (k, n): flatten to one GEMM instead of a batched loop
    if a.data.ndim > 2 and b.data.ndim == 2:
        lead = a.data.shape[:-1]
        a2 = a.data.reshape(-1, a.data.shape[-1])
        out_data = (a2 @ b.data).reshape(lead + (b.data.shape[-1],))

        def bwd():
            g2 = out.grad.reshape(-1, b.data.shape[-1])
            _accumulate(a, (g2 @ b.data.T).reshape(a.data.shape))
            _accumulate(b, a2.T @ g2)

        out = _make(out_data, (a, b), bwd)
        return out
    out_data = a.data @ b.data

    def bwd():
        g = out.grad
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    out = _make(out_data, (a, b), bwd)
    return out


def linear(x, w, b=None) -> Tensor:
    """x @ w (+ b)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd():
        g = out.grad
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, out_data * (g - dot))

    out = _make(out_data, (x,), bwd)
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out_data = xhat * gain.data + bias.data

    def bwd():
        g = out.grad
        _accumulate(gain, _unbroadcast(g * xhat, gain.data.shape))
        _accumulate(bias, _unbroadcast(g, bias.data.shape))
        dxhat = g * gain.data
        term = n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        _accumulate(x, inv_std / n * term)

    out = _make(out_data, (x, gain, bias), bwd)
    return out


def conv1d_depthwise(x, w) -> Tensor:
    """Depthwise 1-D convolution along the length axis, 'same' padding.

    ``x``: (B, L, C) or (L, C); ``w``: (k, C), one filter per channel.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.data.ndim != 2 or xd.shape[2] != w.data.shape[1]:
        raise ContractError(
            f"conv1d_depthwise: incompatible shapes {x.data.shape} and {w.data.shape}"
        )
    k = w.data.shape[0]
    left = (k - 1) // 2
    right = k - 1 - left
    xpad = np.pad(xd, ((0, 0), (left, right), (0, 0)))
    L = xd.shape[1]
    out_data = np.zeros_like(xd)
    for j in range(k):
        out_data += w.data[j] * xpad[:, j : j + L, :]
    if squeeze:
        out_data = out_data[0]

    def bwd():
        g = out.grad[None] if squeeze else out.grad
        gw = np.empty_like(w.data)
        for j in range(k):
            gw[j] = (g * xpad[:, j : j + L, :]).sum(axis=(0, 1))
        _accumulate(w, gw)
        gxpad = np.zeros_like(xpad)
        for j in range(k):
            gxpad[:, j : j + L, :] += w.data[j] * g
        gx = gxpad[:, left : left + L, :]
        _accumulate(x, gx[0] if squeeze else gx)

    out = _make(out_data, (x, w), bwd)
    return out


def embedding_lookup(table, ids) -> Tensor:
    """Row gather: ``table[ids]`` with scatter-add backward into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractError(
            f"embedding_lookup: index out of range for table of {table.data.shape[0]} rows"
        )
    out_data = table.data[ids]

    def bwd():
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), out.grad.reshape(-1, table.data.shape[1]))
        _accumulate(table, gt)

    out = _make(out_data, (table,), bwd)
    return out


def masked_fill(x, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is True with ``value`` (no grad there)."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    out_data = np.where(mask, np.asarray(value, dtype=x.data.dtype), x.data)

    def bwd():
        _accumulate(x, _unbroadcast(np.where(mask, 0.0, out.grad), x.data.shape))

    out = _make(out_data, (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# reductions / shape


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd():
        g = out.grad
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(g, x.data.shape).copy())

    out = _make(out_data, (x,), bwd)
    return out


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out_data.size, 1)

    def bwd():
        g = out.grad
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(g, x.data.shape) / count)

    out = _make(out_data, (x,), bwd)
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def bwd():
        _accumulate(x, out.grad.reshape(x.data.shape))

    out = _make(out_data, (x,), bwd)
    return out


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def bwd():
        _accumulate(x, out.grad.transpose(inverse))

    out = _make(out_data, (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# gradient flow control


def stop_gradient(x) -> Tensor:
    """Pass the value through; block all gradient flow."""
    x = as_tensor(x)
    return Tensor(x.data, requires_grad=False)


def straight_through(x, value) -> Tensor:
    """Forward the bits of ``value``; route the incoming gradient to ``x`` as
    identity. Equivalent to x + stop_gradient(value - x) without the float
    round-off of actually computing that sum."""
    x = as_tensor(x)
    value = np.asarray(value, dtype=x.data.dtype)
    if value.shape != x.data.shape:
        raise ContractError(
            f"straight_through: value shape {value.shape} != input shape {x.data.shape}"
        )

    def bwd():
        _accumulate(x, out.grad)

    out = _make(value, (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# verification and optimization


def grad_check(f, x: Tensor, eps: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor. Error per component is
    |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    base = np.array(x.data, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("grad_check: non-finite forward value")
    backward(out)
    g_ad = probe.grad if probe.grad is not None else np.zeros_like(base)
    g_fd = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = eps
        hi = f(Tensor((flat + bump).reshape(base.shape))).data
        lo = f(Tensor((flat - bump).reshape(base.shape))).data
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise NumericError("grad_check: non-finite value during finite differences")
        g_fd.reshape(-1)[i] = (hi.item() - lo.item()) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-8)
    return float(np.max(np.abs(g_ad - g_fd) / denom))


class AdamState:
    """First/second moment averages keyed like the parameter dict."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict[str, np.ndarray]:
    """One Adam update with bias correction. Aborts (no mutation) on a
    non-finite gradient."""
    for name, g in grads.items():
        if name not in params:
            raise ContractError(f"adam_step: gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ContractError(
                f"adam_step: {name}: grad shape {g.shape} != param shape {params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for {name!r}")
    state.t += 1
    t = state.t
    new_params = dict(params)
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = float(sum(float((g * g).sum()) for g in grads.values()))
    norm = total**0.5
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}
