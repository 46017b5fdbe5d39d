"""Minimal reverse-mode differentiation engine over numpy arrays.

Supplies exactly the primitives the sequence models need: valid and dilated
causal 1-D convolution, an LSTM layer, weight normalization, spatial dropout,
relu/concat/linear, softmax cross-entropy, and a bias-corrected Adam step.

Sequence ops accept either an unbatched (T, F) array or a batched (B, T, F)
array and return a matching number of dimensions. Graph construction and
backward are single-threaded; tensors must not be mutated after use except
through the optimizer.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError

_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf diagnostics (off by default: costs a full pass
    over every intermediate). Training and inference always validate losses,
    gradients, and model outputs regardless of this flag."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _node(data, parents, vjp):
    """Create a graph node; drops the tape when no parent needs gradients."""
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericalError("non-finite values produced by an autodiff op")
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def backward(loss: Tensor, seed_grad=None) -> None:
    """Accumulate gradients of `loss` into every reachable requires_grad tensor."""
    if seed_grad is None:
        seed_grad = np.ones_like(loss.data)
    loss.grad = np.asarray(seed_grad, dtype=loss.data.dtype)

    # Iterative topological order (graphs can be thousands of nodes deep).
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g.astype(parent.data.dtype, copy=True)
            else:
                parent.grad += g


def _with_batch(x: Tensor):
    """Promote (T, F) to (1, T, F); returns (tensor, had_batch_dim)."""
    if x.data.ndim == 2:
        return reshape(x, (1,) + x.data.shape), False
    if x.data.ndim == 3:
        return x, True
    raise ValueError(f"expected a 2-D or 3-D sequence tensor, got shape {x.data.shape}")


def _match_batch(y: Tensor, had_batch: bool) -> Tensor:
    return y if had_batch else reshape(y, y.data.shape[1:])


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def vjp(grad):
        return (grad.reshape(x.data.shape),)

    return _node(x.data.reshape(shape), (x,), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add requires equal shapes, got {a.data.shape} and {b.data.shape}")

    def vjp(grad):
        return grad, grad

    return _node(a.data + b.data, (a, b), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def vjp(grad):
        return (grad * mask,)

    return _node(np.where(mask, x.data, 0), (x,), vjp)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel (last) axis; leading shapes must match."""
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ValueError(
            f"concat requires matching leading shapes, got {a.data.shape} and {b.data.shape}"
        )
    split = a.data.shape[-1]

    def vjp(grad):
        return grad[..., :split], grad[..., split:]

    return _node(np.concatenate([a.data, b.data], axis=-1), (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (..., C) @ w (C, O) + b (O,)."""
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    y2 = x2 @ w.data
    if b is not None:
        y2 = y2 + b.data

    def vjp(grad):
        g2 = grad.reshape(-1, grad.shape[-1])
        dx = (g2 @ w.data.T).reshape(x.data.shape) if x.requires_grad else None
        dw = x2.T @ g2 if w.requires_grad else None
        db = g2.sum(axis=0) if (b is not None and b.requires_grad) else None
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(y2.reshape(lead + (w.data.shape[1],)), parents, vjp)


def _conv_windows(x3, k, stride, dilation):
    """(B, T, F) -> (B, T_out, F, k) tap windows."""
    span = (k - 1) * dilation + 1
    win = sliding_window_view(x3, span, axis=1)[..., ::dilation]
    if stride > 1:
        win = win[:, ::stride]
    return win


def conv1d_valid(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid cross-correlation: x (B, T, F), w (L, F, k) -> (B, T_c, L) with
    T_c = floor((T - k) / stride) + 1."""
    x3, had_batch = _with_batch(x)
    n_filters, n_in, k = w.data.shape
    bsz, t, f = x3.data.shape
    if f != n_in:
        raise ValueError(f"filter expects {n_in} input channels, got {f}")
    if t < k:
        raise ValueError(f"input length {t} is shorter than kernel {k}")

    win = _conv_windows(x3.data, k, stride, 1)
    t_c = win.shape[1]
    wincol = np.ascontiguousarray(win).reshape(bsz, t_c, f * k)
    wcol = w.data.reshape(n_filters, f * k)
    y = wincol @ wcol.T
    if b is not None:
        y = y + b.data

    def vjp(grad):
        g2 = grad.reshape(-1, n_filters)
        dx = None
        if x3.requires_grad:
            dxcol = (grad @ wcol).reshape(bsz, t_c, f, k)
            dx = np.zeros_like(x3.data)
            for j in range(k):
                dx[:, j : j + stride * t_c : stride, :] += dxcol[:, :, :, j]
        dw = None
        if w.requires_grad:
            dw = (g2.T @ wincol.reshape(-1, f * k)).reshape(n_filters, f, k)
        db = g2.sum(axis=0) if (b is not None and b.requires_grad) else None
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x3, w, b) if b is not None else (x3, w)
    return _match_batch(_node(y, parents, vjp), had_batch)


def conv1d_causal_dilated(x: Tensor, w: Tensor, b: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Causal dilated cross-correlation: left zero-pad of (k-1)*dilation keeps
    the output length at T; output at time t depends only on inputs at <= t."""
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    x3, had_batch = _with_batch(x)
    n_filters, n_in, k = w.data.shape
    bsz, t, f = x3.data.shape
    if f != n_in:
        raise ValueError(f"filter expects {n_in} input channels, got {f}")

    pad = (k - 1) * dilation
    xp = np.concatenate([np.zeros((bsz, pad, f), dtype=x3.data.dtype), x3.data], axis=1)
    win = _conv_windows(xp, k, 1, dilation)
    wincol = np.ascontiguousarray(win).reshape(bsz, t, f * k)
    wcol = w.data.reshape(n_filters, f * k)
    y = wincol @ wcol.T
    if b is not None:
        y = y + b.data

    def vjp(grad):
        g2 = grad.reshape(-1, n_filters)
        dx = None
        if x3.requires_grad:
            dxcol = (grad @ wcol).reshape(bsz, t, f, k)
            dxp = np.zeros((bsz, t + pad, f), dtype=grad.dtype)
            for j in range(k):
                dxp[:, j * dilation : j * dilation + t, :] += dxcol[:, :, :, j]
            dx = dxp[:, pad:, :]
        dw = None
        if w.requires_grad:
            dw = (g2.T @ wincol.reshape(-1, f * k)).reshape(n_filters, f, k)
        db = g2.sum(axis=0) if (b is not None and b.requires_grad) else None
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x3, w, b) if b is not None else (x3, w)
    return _match_batch(_node(y, parents, vjp), had_batch)


def weight_norm(v: Tensor, g: Tensor) -> Tensor:
    """Effective filter w = g * v / ||v||, per output filter (first axis)."""
    axes = tuple(range(1, v.data.ndim))
    norms = np.sqrt((v.data ** 2).sum(axis=axes))
    if np.any(norms < 1e-12):
        raise NumericalError("weight_norm direction has (near-)zero norm")
    shape = (-1,) + (1,) * (v.data.ndim - 1)
    scale = (g.data / norms).reshape(shape)
    w = v.data * scale

    def vjp(grad):
        dot = (grad * v.data).sum(axis=axes)
        dg = dot / norms if g.requires_grad else None
        dv = None
        if v.requires_grad:
            dv = grad * scale - v.data * ((dot * g.data / norms ** 3).reshape(shape))
        return dv, dg

    return _node(w, (v, g), vjp)


def spatial_dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Zero whole channels with probability `rate` during training, scaling
    survivors by 1/(1-rate); identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout requires an rng")
    x3, had_batch = _with_batch(x)
    bsz, _, c = x3.data.shape
    keep = (rng.random((bsz, 1, c)) >= rate) / (1.0 - rate)
    keep = keep.astype(x3.data.dtype)

    def vjp(grad):
        return (grad * keep,)

    return _match_batch(_node(x3.data * keep, (x3,), vjp), had_batch)


def lstm(x: Tensor, w: Tensor, b: Tensor, hidden_size: int) -> Tensor:
    """Single-layer unidirectional LSTM; returns per-step hidden states.

    x (B, T, C); w ((C + H), 4H) with gate columns ordered (input, forget,
    cell, output); b (4H,). Initial hidden and cell states are zero.
    """
    x3, had_batch = _with_batch(x)
    bsz, t, c = x3.data.shape
    h = hidden_size
    if w.data.shape != (c + h, 4 * h):
        raise ValueError(f"lstm weight must be {(c + h, 4 * h)}, got {w.data.shape}")
    wx, wh = w.data[:c], w.data[c:]

    dtype = np.result_type(x3.data.dtype, w.data.dtype)
    i_all = np.empty((t, bsz, h), dtype=dtype)
    f_all = np.empty_like(i_all)
    g_all = np.empty_like(i_all)
    o_all = np.empty_like(i_all)
    cprev_all = np.empty_like(i_all)
    tanhc_all = np.empty_like(i_all)
    hprev_all = np.empty_like(i_all)
    outputs = np.empty((bsz, t, h), dtype=dtype)

    ht = np.zeros((bsz, h), dtype=dtype)
    ct = np.zeros((bsz, h), dtype=dtype)
    for step in range(t):
        z = x3.data[:, step] @ wx + ht @ wh + b.data
        i_g = expit(z[:, :h])
        f_g = expit(z[:, h : 2 * h])
        g_g = np.tanh(z[:, 2 * h : 3 * h])
        o_g = expit(z[:, 3 * h :])
        hprev_all[step] = ht
        cprev_all[step] = ct
        ct = f_g * ct + i_g * g_g
        tc = np.tanh(ct)
        ht = o_g * tc
        i_all[step], f_all[step], g_all[step], o_all[step] = i_g, f_g, g_g, o_g
        tanhc_all[step] = tc
        outputs[:, step] = ht

    def vjp(grad):
        need_x = x3.requires_grad
        dx = np.zeros_like(x3.data) if need_x else None
        dw = np.zeros_like(w.data) if w.requires_grad else None
        db = np.zeros_like(b.data) if b.requires_grad else None
        dh_next = np.zeros((bsz, h), dtype=dtype)
        dc_next = np.zeros((bsz, h), dtype=dtype)
        for step in range(t - 1, -1, -1):
            i_g, f_g, g_g, o_g = i_all[step], f_all[step], g_all[step], o_all[step]
            tc = tanhc_all[step]
            dh = grad[:, step] + dh_next
            do = dh * tc
            dc = dh * o_g * (1 - tc ** 2) + dc_next
            di = dc * g_g
            df = dc * cprev_all[step]
            dg = dc * i_g
            dz = np.concatenate(
                [
                    di * i_g * (1 - i_g),
                    df * f_g * (1 - f_g),
                    dg * (1 - g_g ** 2),
                    do * o_g * (1 - o_g),
                ],
                axis=1,
            )
            if dw is not None:
                dw[:c] += x3.data[:, step].T @ dz
                dw[c:] += hprev_all[step].T @ dz
            if db is not None:
                db += dz.sum(axis=0)
            if need_x:
                dx[:, step] = dz @ wx.T
            dh_next = dz @ wh.T
            dc_next = dc * f_g
        return dx, dw, db

    return _match_batch(_node(outputs, (x3, w, b), vjp), had_batch)


def lstm_forward(x: Tensor, w: Tensor, b: Tensor, hidden_size: int) -> tuple[Tensor, Tensor]:
    """LSTM per-step outputs plus the final-time hidden state."""
    outputs = lstm(x, w, b, hidden_size)
    return outputs, last_frame(outputs)


def last_frame(x: Tensor) -> Tensor:
    """Select the final time step: (B, T, H) -> (B, H) or (T, H) -> (H,)."""
    axis = x.data.ndim - 2
    if axis < 0:
        raise ValueError(f"expected a sequence tensor, got shape {x.data.shape}")

    def vjp(grad):
        dx = np.zeros_like(x.data)
        if axis == 0:
            dx[-1] = grad
        else:
            dx[:, -1] = grad
        return (dx,)

    data = x.data[-1] if axis == 0 else x.data[:, -1]
    return _node(data.copy(), (x,), vjp)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax (stabilized); handy for evaluation."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits (B, n)) against integer labels."""
    labels = np.asarray(labels)
    bsz, n = logits.data.shape
    if labels.shape != (bsz,):
        raise ValueError(f"labels must have shape ({bsz},), got {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(bsz)
    loss = -logp[rows, labels].mean()

    def vjp(grad):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (grad / bsz),)

    return _node(np.asarray(loss, dtype=logits.data.dtype), (logits,), vjp)


class Parameter:
    """A named trainable tensor with its Adam moment state."""

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.tensor = Tensor(np.asarray(data), requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = np.asarray(value, dtype=self.tensor.data.dtype)

    @property
    def size(self) -> int:
        return self.tensor.data.size

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.data.shape})"


def zero_grad(params) -> None:
    for p in params:
        p.tensor.grad = None


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place; skips parameters without grads."""
    for p in params:
        g = p.tensor.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {p.name!r}")
        p.step += 1
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        m_hat = p.m / (1 - beta1 ** p.step)
        v_hat = p.v / (1 - beta2 ** p.step)
        p.tensor.data = p.tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def uniform_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    """Glorot-style uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
