"""Parameter containers and the small layer zoo built on tensor.py."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A Tensor registered as trainable state on a Module."""

    def __init__(self, data, dtype=np.float32):
        super().__init__(np.asarray(data, dtype=dtype), requires_grad=True)


class Module:
    """Base class: tracks parameters, buffers and submodules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_requires_grad(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._list = []
        for m in mods:
            self.append(m)

    def append(self, mod: Module):
        setattr(self, str(len(self._list)), mod)
        self._list.append(mod)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    """NCHW convolution; weights U(+-1/sqrt(fan_in)), biases zero."""

    def __init__(self, c_in: int, c_out: int, kernel, rng: np.random.Generator,
                 stride=(1, 1), dilation=(1, 1), padding=((0, 0), (0, 0)),
                 groups: int = 1, bias: bool = True):
        super().__init__()
        kh, kw = kernel if isinstance(kernel, tuple) else (kernel, kernel)
        self.stride = tuple(stride)
        self.dilation = tuple(dilation)
        self.padding = tuple(tuple(p) for p in padding)
        self.groups = groups
        fan_in = (c_in // groups) * kh * kw
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Parameter(_uniform(rng, (c_out, c_in // groups, kh, kw), bound))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride,
                        self.dilation, self.padding, self.groups)


class Linear(Module):
    """y = x @ W^T + b; weights U(+-1/sqrt(fan_in)), biases zero."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / np.sqrt(d_in)
        self.weight = Parameter(_uniform(rng, (d_out, d_in), bound))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = T.matmul(x, T.transpose(self.weight))
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class InstanceNorm2d(Module):
    """Affine instance norm with tracked running statistics.

    Eval mode applies the running mean/var as a per-channel affine map, so a
    frozen network stays local in time and frequency.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float64))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float64))

    def forward(self, x: Tensor) -> Tensor:
        return T.instance_norm(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, self.training, self.momentum, self.eps)


class SnakeBeta(Module):
    """Periodic activation x + sin^2(alpha x)/(beta + eps) with log-scale params.

    Both log parameters start at zero, i.e. alpha = beta = 1.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.log_alpha = Parameter(np.zeros(channels))
        self.log_beta = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return T.snakebeta(x, self.log_alpha, self.log_beta)


class SnakeBeta1d(SnakeBeta):
    """SnakeBeta over the last axis of (..., D) activations (linear heads)."""

    def forward(self, x: Tensor) -> Tensor:
        # route through the channel-axis op by flattening lead axes to (N, D)
        flat = T.reshape(x, (-1, x.shape[-1]))
        out = T.snakebeta(flat, self.log_alpha, self.log_beta)
        return T.reshape(out, x.shape)
