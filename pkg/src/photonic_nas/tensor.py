"""Dense float64 tensors with reverse-mode differentiation.

Every operation on a tensor that requires gradients records its parents and a
backward closure. ``backward`` orders the recorded graph topologically (the
tape) and runs each closure exactly once, from the loss towards the leaves.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError

_ACTIVATIONS = ("relu", "silu", "tanh", "gelu", "sigmoid")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = self.data + other.data

        def grad_fn(g):
            if self.requires_grad:
                self.accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(g, other.shape))

        return record(out, (self, other), grad_fn)

    __radd__ = __add__

    def __neg__(self):
        def grad_fn(g):
            self.accumulate(-g)

        return record(-self.data, (self,), grad_fn)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = self.data * other.data

        def grad_fn(g):
            if self.requires_grad:
                self.accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(g * self.data, other.shape))

        return record(out, (self, other), grad_fn)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = self.data / other.data

        def grad_fn(g):
            if self.requires_grad:
                self.accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(-g * out / other.data, other.shape))

        return record(out, (self, other), grad_fn)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
        out = self.data @ other.data

        def grad_fn(g):
            if self.requires_grad:
                self.accumulate(g @ other.data.T)
            if other.requires_grad:
                other.accumulate(self.data.T @ g)

        return record(out, (self, other), grad_fn)

    # reductions and reshapes ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def grad_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.accumulate(np.broadcast_to(g, self.shape))

        return record(out, (self,), grad_fn)

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.data.reshape(shape)

        def grad_fn(g):
            self.accumulate(g.reshape(self.shape))

        return record(out, (self,), grad_fn)

    def flatten(self):
        return self.reshape(self.shape[0], -1)

    # elementwise functions -----------------------------------------------

    def relu(self):
        mask = self.data > 0

        def grad_fn(g):
            self.accumulate(g * mask)

        return record(self.data * mask, (self,), grad_fn)

    def sigmoid(self):
        out = _sigmoid(self.data)

        def grad_fn(g):
            self.accumulate(g * out * (1.0 - out))

        return record(out, (self,), grad_fn)

    def tanh(self):
        out = np.tanh(self.data)

        def grad_fn(g):
            self.accumulate(g * (1.0 - out * out))

        return record(out, (self,), grad_fn)

    def silu(self):
        sig = _sigmoid(self.data)
        out = self.data * sig

        def grad_fn(g):
            self.accumulate(g * sig * (1.0 + self.data * (1.0 - sig)))

        return record(out, (self,), grad_fn)

    def gelu(self):
        # tanh approximation
        x = self.data
        c = np.sqrt(2.0 / np.pi)
        inner = c * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        out = 0.5 * x * (1.0 + t)

        def grad_fn(g):
            dinner = c * (1.0 + 3 * 0.044715 * x**2)
            self.accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))

        return record(out, (self,), grad_fn)

    def clamp(self, lo, hi):
        inside = (self.data > lo) & (self.data < hi)

        def grad_fn(g):
            self.accumulate(g * inside)

        return record(np.clip(self.data, lo, hi), (self,), grad_fn)

    def exp(self):
        out = np.exp(self.data)

        def grad_fn(g):
            self.accumulate(g * out)

        return record(out, (self,), grad_fn)

    def log(self):
        def grad_fn(g):
            self.accumulate(g / self.data)

        return record(np.log(self.data), (self,), grad_fn)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data, parents, grad_fn):
    """Wrap ``data`` in a tensor; link it into the graph if any parent needs gradients."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = grad_fn
    return out


def tape(loss):
    """Topologically ordered list of graph nodes reachable from ``loss`` (inputs first)."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Populate ``.grad`` of every tensor upstream of the scalar ``loss``.

    Parameters listed in ``params`` that the loss does not reach are given a
    zero gradient instead of being left at ``None``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            if p.grad is None:
                p.zero_grad()
    if not loss.requires_grad:
        return
    nodes = tape(loss)
    for node in nodes:
        if node._backward is not None:
            node.grad = None  # interior nodes hold fresh gradients per pass
    loss.grad = np.ones_like(loss.data)
    for node in reversed(nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# functional layer vocabulary ------------------------------------------------


def linear(x, weight, bias=None):
    """``x @ weight + bias`` for ``x`` of shape (B, I) and ``weight`` (I, O)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    y = x @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        y = y + bias
    return y


def activation(x, kind):
    if kind not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}; expected one of {_ACTIVATIONS}")
    return getattr(x, kind)()


def concat(tensors, axis=1):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def grad_fn(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.accumulate(g[tuple(index)])

    return record(data, tuple(tensors), grad_fn)


def conv2d(x, weight, bias=None, stride=1, padding=1):
    """Cross-correlation of (B, C, H, W) input with (O, C, k, k) kernels."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernels, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels, kernels expect {weight.shape[1]}")
    B, C, H, W = x.shape
    O, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    Ho, Wo = windows.shape[2], windows.shape[3]
    out = np.einsum("bchwij,ocij->bohw", windows, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        if weight.requires_grad:
            weight.accumulate(np.einsum("bohw,bchwij->ocij", g, windows, optimize=True))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += np.einsum(
                        "bohw,oc->bchw", g, weight.data[:, :, i, j], optimize=True
                    )
            x.accumulate(gxp[:, :, padding : padding + H, padding : padding + W])

    return record(out, parents, grad_fn)


def max_pool2x2(x):
    if x.ndim != 4:
        raise DimensionError(f"max_pool2x2 expects (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    if H < 2 or W < 2:
        raise DimensionError(f"max_pool2x2 needs spatial size >= 2, got {H}x{W}")
    Ho, Wo = H // 2, W // 2
    blocks = x.data[:, :, : 2 * Ho, : 2 * Wo].reshape(B, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, Ho, Wo, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gb = np.zeros((B, C, Ho, Wo, 4))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * Ho, 2 * Wo)
        full = np.zeros_like(x.data)
        full[:, :, : 2 * Ho, : 2 * Wo] = gb
        x.accumulate(full)

    return record(out, (x,), grad_fn)


def adaptive_avg_pool1x1(x):
    if x.ndim != 4 or x.shape[2] == 0 or x.shape[3] == 0:
        raise DimensionError(f"adaptive average pooling needs non-empty (B, C, H, W), got {x.shape}")
    return x.mean(axis=(2, 3))


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch normalisation over (B, F) or (B, C, H, W) input.

    ``running_mean`` and ``running_var`` are plain arrays updated in place in
    training mode (unbiased variance, exponential moving average).
    """
    from .errors import DegenerateBatchError

    if x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    elif x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise DimensionError(f"batch_norm expects 2-d or 4-d input, got {x.shape}")
    if x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batch_norm: {x.shape[1]} features but {gamma.shape[0]} scales")
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)
    if training:
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch_norm in training mode needs a batch of at least 2")
        n = x.size // x.shape[1]
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(-1) * n / (n - 1)
    else:
        n = None
        mu = running_mean.reshape(bshape)
        var = running_var.reshape(bshape)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * g_ + b_

    def grad_fn(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx = g * g_
            if training:
                gx = inv / n * (
                    n * gx - gx.sum(axis=axes, keepdims=True) - xhat * (gx * xhat).sum(axis=axes, keepdims=True)
                )
            else:
                gx = gx * inv
            x.accumulate(gx)

    return record(out, (x, gamma, beta), grad_fn)


def dropout(x, p, training, rng):
    from .errors import ParameterError

    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def grad_fn(g):
        x.accumulate(g * mask)

    return record(x.data * mask, (x,), grad_fn)


def softmax(logits):
    """Row softmax of an array or tensor (no gradient); returns an array."""
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    if labels.shape != (B,):
        raise DimensionError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K}); got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = np.mean(logsum - z[np.arange(B), labels])

    def grad_fn(g):
        probs = np.exp(z - logsum[:, None])
        probs[np.arange(B), labels] -= 1.0
        logits.accumulate(g * probs / B)

    return record(loss, (logits,), grad_fn)
