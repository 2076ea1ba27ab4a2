"""Layers built on the tensor engine.

Modules keep their trainable tensors in ``self.params`` (name -> Tensor) and
non-trainable state (batch-norm running statistics) in ``self.buffers``.
Child modules are discovered through ``self.children``.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    def __init__(self):
        self.params = {}
        self.buffers = {}
        self.children = {}
        self.training = True

    def __call__(self, x):
        return self.forward(x)

    def named_parameters(self, prefix=""):
        for name, p in self.params.items():
            yield prefix + name, p
        for cname, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self.buffers.items():
            yield prefix + name, b
        for cname, child in self.children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def train(self, mode=True):
        self.training = mode
        for child in self.children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)


def kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params["weight"] = Tensor(kaiming_uniform(rng, (in_features, out_features), in_features), True)
        if bias:
            self.params["bias"] = Tensor(np.zeros(out_features), True)

    def forward(self, x):
        return T.linear(x, self.params["weight"], self.params.get("bias"))


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, rng, kernel_size=3, padding=1):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.padding = padding
        self.params["weight"] = Tensor(kaiming_uniform(rng, shape, fan_in), True)
        self.params["bias"] = Tensor(np.zeros(out_channels), True)

    def forward(self, x):
        return T.conv2d(x, self.params["weight"], self.params["bias"], padding=self.padding)


class BatchNorm(Module):
    """BatchNorm1d for (B, F) input and BatchNorm2d for (B, C, H, W) input."""

    def __init__(self, num_features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["weight"] = Tensor(np.ones(num_features), True)
        self.params["bias"] = Tensor(np.zeros(num_features), True)
        self.buffers["running_mean"] = np.zeros(num_features)
        self.buffers["running_var"] = np.ones(num_features)

    def forward(self, x):
        return T.batch_norm(
            x,
            self.params["weight"],
            self.params["bias"],
            self.buffers["running_mean"],
            self.buffers["running_var"],
            self.training,
            self.momentum,
            self.eps,
        )


class Dropout(Module):
    def __init__(self, p, rng):
        super().__init__()
        self.p = float(p)
        self.rng = rng

    def forward(self, x):
        return T.dropout(x, self.p, self.training, self.rng)


class Activation(Module):
    def __init__(self, kind):
        super().__init__()
        self.kind = kind

    def forward(self, x):
        return T.activation(x, self.kind)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        for i, layer in enumerate(layers):
            self.children[str(i)] = layer

    def __len__(self):
        return len(self.children)

    def __iter__(self):
        return iter(self.children.values())

    def forward(self, x):
        for layer in self.children.values():
            x = layer(x)
        return x


def count_parameters(module):
    return int(sum(p.size for p in module.parameters()))
