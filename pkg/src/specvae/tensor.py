"""Minimal reverse-mode autodiff over numpy arrays.

Exactly the operator set the codec needs: broadcasting arithmetic, matmul,
grouped/dilated 2D convolution, nearest-neighbor upsampling, reductions,
pointwise nonlinearities, gather/scatter framing ops and packed real FFTs
for differentiable STFT pipelines, instance normalization and the SnakeBeta
activation. Float32 by default; pass float64 tensors for gradient checks.
"""

from __future__ import annotations

import contextlib
from functools import lru_cache

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy array plus the graph edges needed for backward().

    grad is populated only after a backward pass and always matches the
    value's shape. A second backward through the same root is an error;
    reset by rebuilding the graph.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not (isinstance(data, np.ndarray) and np.issubdtype(arr.dtype, np.floating)):
            # lists, scalars and integer arrays default to float32; explicit
            # float numpy arrays keep their precision (float64 grad checks)
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._grad_fn = None
        self._backward_ran = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """A leaf view of the same values, cut off from the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- graph ---------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward: root must be scalar, got shape {self.data.shape}")
        if self._backward_ran:
            raise RuntimeError("backward: second backward through the same graph; rebuild the graph first")
        self._backward_ran = True

        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._grad_fn is None or node.grad is None:
                continue
            node._grad_fn(node.grad)
            if node is not self:
                # interior activations are not reused; free eagerly
                node.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _toposort(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
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


def _make(data: np.ndarray, parents, grad_fn) -> Tensor:
    data = np.asarray(data)  # numpy scalars from reductions keep their dtype
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not (t.requires_grad or t._grad_fn is not None):
        return
    if t.grad is None:
        t.grad = g.astype(t.dtype, copy=True) if g.dtype != t.dtype else g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)

    def grad_fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)

    def grad_fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)

    def grad_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)

    def grad_fn(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def grad_fn(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        _accum(a, _unbroadcast(np.matmul(g, bt), a.shape))
        _accum(b, _unbroadcast(np.matmul(at, g), b.shape))

    return _make(np.matmul(a.data, b.data), (a, b), grad_fn)


# -- pointwise ----------------------------------------------------------------


def abs_(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def grad_fn(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), grad_fn)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def grad_fn(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), grad_fn)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def grad_fn(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), grad_fn)


def sin(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def grad_fn(g):
        _accum(a, g * np.cos(a.data))

    return _make(np.sin(a.data), (a,), grad_fn)


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def grad_fn(g):
        _accum(a, g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), grad_fn)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def grad_fn(g):
        _accum(a, g * (0.5 / out_data))

    return _make(out_data, (a,), grad_fn)


def pow_const(a: Tensor, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)

    def grad_fn(g):
        _accum(a, g * (p * a.data ** (p - 1.0)))

    return _make(a.data ** p, (a,), grad_fn)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def grad_fn(g):
        mask = (a.data >= lo) & (a.data <= hi)
        _accum(a, g * mask.astype(g.dtype))

    return _make(out_data, (a,), grad_fn)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    mask = a.data >= 0

    def grad_fn(g):
        _accum(a, g * np.where(mask, 1.0, slope).astype(g.dtype))

    return _make(np.where(mask, a.data, slope * a.data), (a,), grad_fn)


# -- reductions ---------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)

    def grad_fn(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.shape).astype(a.dtype))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def grad_fn(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(g, axis)
        _accum(a, (np.broadcast_to(gg, a.shape) / count).astype(a.dtype))

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), grad_fn)


# -- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)

    def grad_fn(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), grad_fn)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)

    def grad_fn(g):
        inv = None if axes is None else tuple(np.argsort(axes))
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), grad_fn)


def slice_(a: Tensor, key) -> Tensor:
    """Basic indexing only (ints, slices, tuples thereof)."""
    a = _as_tensor(a)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accum(a, full)

    return _make(a.data[key], (a,), grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn)


def pad_constant(a: Tensor, pad_width) -> Tensor:
    """Zero padding; pad_width as in np.pad."""
    a = _as_tensor(a)
    pad_width = tuple((int(l), int(r)) for l, r in pad_width)

    def grad_fn(g):
        idx = tuple(slice(l, g.shape[i] - r) for i, (l, r) in enumerate(pad_width))
        _accum(a, g[idx])

    return _make(np.pad(a.data, pad_width), (a,), grad_fn)


# -- convolution and resampling ------------------------------------------------


def _conv_out_len(n, pad0, pad1, k, s, d):
    return (n + pad0 + pad1 - d * (k - 1) - 1) // s + 1


@lru_cache(maxsize=256)
def _im2col_index(c_in, hp, wp, kh, kw, sh, sw, dh, dw, ho, wo):
    # linear indices into a flattened (c_in, hp, wp) volume, shape (c_in*kh*kw, ho*wo)
    c = np.arange(c_in)[:, None, None, None, None]
    i = np.arange(kh)[None, :, None, None, None]
    j = np.arange(kw)[None, None, :, None, None]
    oh = np.arange(ho)[None, None, None, :, None]
    ow = np.arange(wo)[None, None, None, None, :]
    rows = oh * sh + i * dh
    cols = ow * sw + j * dw
    idx = c * (hp * wp) + rows * wp + cols
    return np.ascontiguousarray(idx.reshape(c_in * kh * kw, ho * wo))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=(1, 1),
           dilation=(1, 1), padding=((0, 0), (0, 0)), groups: int = 1) -> Tensor:
    """2D cross-correlation, NCHW x (C_out, C_in/groups, kh, kw).

    Supports per-axis asymmetric zero padding, stride, dilation and groups
    (groups == C_in gives a depthwise conv). Output length per axis is
    floor((n + pad - d*(k-1) - 1)/s) + 1.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d: expected 4D input and weight, got {x.shape} and {w.shape}")
    n, c_in, h, wd = x.shape
    c_out, c_g, kh, kw = w.shape
    if c_in != c_g * groups or c_out % groups:
        raise ValueError(f"conv2d: input {x.shape} incompatible with weight {w.shape} groups={groups}")
    sh, sw = stride
    dh, dw_ = dilation
    (ph0, ph1), (pw0, pw1) = padding
    ho = _conv_out_len(h, ph0, ph1, kh, sh, dh)
    wo = _conv_out_len(wd, pw0, pw1, kw, sw, dw_)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d: output would be empty for input {x.shape}, kernel {w.shape}, "
                         f"stride {stride}, dilation {dilation}, padding {padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)))
    hp, wp = xp.shape[2], xp.shape[3]
    depthwise = groups == c_in and c_out == c_in

    if kh == 1 and kw == 1 and groups == 1:
        xs = xp[:, :, ::sh, ::sw]
        w2 = w.data.reshape(c_out, c_in)
        out = np.einsum("oc,nchw->nohw", w2, xs, optimize=True)

        def grad_fn(g):
            if w.requires_grad or w._grad_fn is not None:
                gw = np.einsum("nohw,nchw->oc", g, xs, optimize=True)
                _accum(w, gw.reshape(w.shape))
            gxp = np.zeros_like(xp)
            gxp[:, :, ::sh, ::sw] = np.einsum("oc,nohw->nchw", w2, g, optimize=True)
            _accum(x, gxp[:, :, ph0:hp - ph1 or None, pw0:wp - pw1 or None])

    elif depthwise:
        out = np.zeros((n, c_out, ho, wo), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i * dh:i * dh + sh * (ho - 1) + 1:sh,
                           j * dw_:j * dw_ + sw * (wo - 1) + 1:sw]
                out += w.data[:, 0, i, j][None, :, None, None] * patch

        def grad_fn(g):
            gxp = np.zeros_like(xp)
            gw = np.zeros_like(w.data) if (w.requires_grad or w._grad_fn is not None) else None
            for i in range(kh):
                for j in range(kw):
                    sl = (slice(None), slice(None),
                          slice(i * dh, i * dh + sh * (ho - 1) + 1, sh),
                          slice(j * dw_, j * dw_ + sw * (wo - 1) + 1, sw))
                    if gw is not None:
                        gw[:, 0, i, j] = (g * xp[sl]).sum(axis=(0, 2, 3))
                    gxp[sl] += w.data[:, 0, i, j][None, :, None, None] * g
            if gw is not None:
                _accum(w, gw)
            _accum(x, gxp[:, :, ph0:hp - ph1 or None, pw0:wp - pw1 or None])

    else:
        idx = _im2col_index(c_in, hp, wp, kh, kw, sh, sw, dh, dw_, ho, wo)
        cols = xp.reshape(n, -1)[:, idx.ravel()].reshape(n, c_in * kh * kw, ho * wo)
        k_g = c_g * kh * kw
        cols_g = cols.reshape(n, groups, k_g, ho * wo)
        w2 = w.data.reshape(groups, c_out // groups, k_g)
        out = np.matmul(w2[None], cols_g).reshape(n, c_out, ho, wo)

        def grad_fn(g):
            g2 = g.reshape(n, groups, c_out // groups, ho * wo)
            if w.requires_grad or w._grad_fn is not None:
                gw = np.matmul(g2, cols_g.transpose(0, 1, 3, 2)).sum(axis=0)
                _accum(w, gw.reshape(w.shape))
            gcols = np.matmul(w2.transpose(0, 2, 1)[None], g2).reshape(n, -1)
            gxp_flat = np.zeros((n, c_in * hp * wp), dtype=g.dtype)
            np.add.at(gxp_flat, (np.arange(n)[:, None], idx.ravel()[None, :]), gcols)
            gxp = gxp_flat.reshape(n, c_in, hp, wp)
            _accum(x, gxp[:, :, ph0:hp - ph1 or None, pw0:wp - pw1 or None])

    parents = (x, w)
    result = _make(out, parents, grad_fn)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (c_out,):
            raise ValueError(f"conv2d: bias shape {b.shape} does not match {c_out} output channels")
        result = add(result, reshape(b, (1, c_out, 1, 1)))
    return result


def nearest_upsample2(a: Tensor, axes=(2, 3)) -> Tensor:
    """Repeat each element twice along the given axes."""
    a = _as_tensor(a)
    axes = tuple(axes)
    out = a.data
    for ax in axes:
        out = np.repeat(out, 2, axis=ax)

    def grad_fn(g):
        for ax in axes:
            shp = list(g.shape)
            shp[ax] //= 2
            shp.insert(ax + 1, 2)
            g = g.reshape(shp).sum(axis=ax + 1)
        _accum(a, g)

    return _make(out, (a,), grad_fn)


# -- gather / scatter and packed FFTs -------------------------------------------


def take_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather along the last axis: out[..., *idx.shape] = a[..., idx]."""
    a = _as_tensor(a)
    idx = np.asarray(idx)

    def grad_fn(g):
        lead = a.shape[:-1]
        b = int(np.prod(lead)) if lead else 1
        g2 = g.reshape(b, idx.size)
        ga = np.zeros((b, a.shape[-1]), dtype=g.dtype)
        np.add.at(ga, (np.arange(b)[:, None], idx.ravel()[None, :]), g2)
        _accum(a, ga.reshape(a.shape))

    return _make(a.data[..., idx], (a,), grad_fn)


def overlap_add(frames: Tensor, hop: int, length: int) -> Tensor:
    """Scatter-add (..., M, W) frames at stride hop into a (..., length) signal."""
    frames = _as_tensor(frames)
    m, w = frames.shape[-2], frames.shape[-1]
    if (m - 1) * hop + w > length:
        raise ValueError(f"overlap_add: frames ({m}x{w}, hop {hop}) overrun length {length}")
    pos = (np.arange(m)[:, None] * hop + np.arange(w)[None, :])
    lead = frames.shape[:-2]
    b = int(np.prod(lead)) if lead else 1
    out = np.zeros((b, length), dtype=frames.dtype)
    np.add.at(out, (np.arange(b)[:, None], pos.ravel()[None, :]), frames.data.reshape(b, -1))
    out = out.reshape(*lead, length)

    def grad_fn(g):
        _accum(frames, g[..., pos])

    return _make(out, (frames,), grad_fn)


def _rfft_weights(n: int, dtype) -> np.ndarray:
    # doubling factors of the half spectrum: DC (and Nyquist when n even) count once
    f = n // 2 + 1
    d = np.full(f, 2.0, dtype=dtype)
    d[0] = 1.0
    if n % 2 == 0:
        d[-1] = 1.0
    return d


def rfft_packed(a: Tensor) -> Tensor:
    """Real FFT along the last axis, packed as (..., n//2+1, 2) [re, im]."""
    a = _as_tensor(a)
    n = a.shape[-1]
    spec = np.fft.rfft(a.data, axis=-1)
    out = np.stack([spec.real, spec.imag], axis=-1).astype(a.dtype)

    def grad_fn(g):
        gc = g[..., 0] + 1j * g[..., 1]
        # adjoint of rfft: weight-corrected inverse transform
        gc = gc / _rfft_weights(n, np.float64)
        gc[..., 0] = gc[..., 0].real
        if n % 2 == 0:
            gc[..., -1] = gc[..., -1].real
        ga = n * np.fft.irfft(gc, n=n, axis=-1)
        _accum(a, ga.astype(a.dtype))

    return _make(out, (a,), grad_fn)


def irfft_packed(a: Tensor, n: int) -> Tensor:
    """Inverse of rfft_packed: (..., n//2+1, 2) -> (..., n) real signal.

    The imaginary parts of the DC (and Nyquist, n even) bins are ignored,
    matching the Hermitian assumption of the inverse real FFT.
    """
    a = _as_tensor(a)
    spec = a.data[..., 0] + 1j * a.data[..., 1]
    spec[..., 0] = spec[..., 0].real
    if n % 2 == 0:
        spec[..., -1] = spec[..., -1].real
    out = np.fft.irfft(spec, n=n, axis=-1).astype(a.dtype)

    def grad_fn(g):
        gs = np.fft.rfft(g, axis=-1) * (_rfft_weights(n, np.float64) / n)
        ga = np.stack([gs.real, gs.imag], axis=-1)
        _accum(a, ga.astype(a.dtype))

    return _make(out, (a,), grad_fn)


# -- normalization and activations ----------------------------------------------


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                  running_var: np.ndarray, training: bool, momentum: float = 0.1,
                  eps: float = 1e-5) -> Tensor:
    """Per-(instance, channel) normalization over spatial axes.

    Training mode normalizes with the instance's own statistics and updates
    the running buffers in place; eval mode applies the running statistics as
    a fixed per-channel affine map (keeps encode/decode local in time).
    """
    x = _as_tensor(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"instance_norm: affine shapes {gamma.shape}/{beta.shape} do not match {c} channels")
    axes = tuple(range(2, x.ndim))
    gshape = (1, c) + (1,) * (x.ndim - 2)

    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.mean(axis=0).reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * var.mean(axis=0).reshape(c)

        def grad_fn(g):
            gxh = g * gamma.data.reshape(gshape)
            m = np.prod([x.shape[i] for i in axes])
            gx = inv * (gxh - gxh.mean(axis=axes, keepdims=True)
                        - xhat * (gxh * xhat).mean(axis=axes, keepdims=True))
            _accum(x, gx.astype(x.dtype))
            sum_axes = (0,) + axes
            _accum(gamma, (g * xhat).sum(axis=sum_axes))
            _accum(beta, g.sum(axis=sum_axes))
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(gshape).astype(x.dtype)
        mu = running_mean.reshape(gshape).astype(x.dtype)
        xhat = (x.data - mu) * inv

        def grad_fn(g):
            _accum(x, g * gamma.data.reshape(gshape) * inv)
            sum_axes = (0,) + axes
            _accum(gamma, (g * xhat).sum(axis=sum_axes))
            _accum(beta, g.sum(axis=sum_axes))

    out = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)
    return _make(out, (x, gamma, beta), grad_fn)


SNAKE_EPS = 1e-9


def snakebeta(x: Tensor, log_alpha: Tensor, log_beta: Tensor) -> Tensor:
    """x + (1/(beta+eps)) * sin^2(alpha*x), alpha/beta = exp of per-channel params.

    The channel axis is axis 1; log parameters are 1D of length C.
    """
    x, log_alpha, log_beta = _as_tensor(x), _as_tensor(log_alpha), _as_tensor(log_beta)
    c = x.shape[1]
    if log_alpha.shape != (c,) or log_beta.shape != (c,):
        raise ValueError(f"snakebeta: param shapes {log_alpha.shape}/{log_beta.shape} "
                         f"do not match {c} channels of {x.shape}")
    shape = (1, c) + (1,) * (x.ndim - 2)
    alpha = np.exp(log_alpha.data).reshape(shape)
    beta_inv = 1.0 / (np.exp(log_beta.data).reshape(shape) + SNAKE_EPS)
    s = np.sin(alpha * x.data)
    out = x.data + beta_inv * s * s

    def grad_fn(g):
        sum_axes = (0,) + tuple(range(2, x.ndim))
        sin2ax = np.sin(2.0 * alpha * x.data)
        _accum(x, g * (1.0 + alpha * beta_inv * sin2ax))
        _accum(log_alpha, (g * (alpha * x.data * beta_inv * sin2ax)).sum(axis=sum_axes))
        # d/d(log beta) = -beta * sin^2 / (beta+eps)^2 = -(sin^2 * beta_inv) * beta/(beta+eps)
        b = np.exp(log_beta.data).reshape(shape)
        _accum(log_beta, (-g * s * s * beta_inv * beta_inv * b).sum(axis=sum_axes))

    return _make(out, (x, log_alpha, log_beta), grad_fn)


# -- composed helpers ------------------------------------------------------------


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = sqrt(sum_(square(a), axis=axis, keepdims=True) + _as_tensor(eps, a.dtype))
    return div(a, norm)


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    return sum_(mul(l2_normalize(a, axis, eps), l2_normalize(b, axis, eps)), axis=axis)
