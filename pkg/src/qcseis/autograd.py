"""Reverse-mode automatic differentiation over dense numpy tensors.

A deliberately closed operator set: exactly the kernels the networks in
this package need, each with a hand-written backward rule that is
finite-difference checked (see gradcheck). There is no general
broadcasting engine; shapes must line up the way each op defines them.
Network tensors are float32 by default, but every kernel also runs in
float64 (used by tests and at the quantum-layer boundary). Reductions go
through numpy's fixed pairwise order, so results are bit-identical across
runs and worker counts.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "DegenerateBatchError",
    "no_grad",
    "backward",
    "tensor",
    "conv2d",
    "linear",
    "prelu",
    "batchnorm2d",
    "pixel_shuffle",
    "split_channels",
    "concat_channels",
    "flatten",
    "sigmoid",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "add_scalar",
    "absval",
    "log",
    "sqrt",
    "clamp",
    "tsum",
    "tmean",
    "sum_axis",
    "mean_axis",
    "maxpool2d",
    "avgpool2d",
    "nearest_upsample",
]


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class DegenerateBatchError(ValueError):
    """Batch statistics were requested on a batch too small to provide them."""


class _GradMode:
    enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


class Tensor:
    """Dense n-d float array with an optional backward-graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, grad={'set' if self.grad is not None else 'none'})"


class Parameter:
    """Named, optionally trainable tensor owned by a model."""

    __slots__ = ("tensor", "name", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = True, dtype=np.float32):
        self.tensor = Tensor(np.asarray(data), requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = bool(trainable)

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self):
        kind = "param" if self.trainable else "buffer"
        return f"Parameter({self.name!r}, {kind}, shape={tuple(self.tensor.shape)})"


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GradMode.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _same_dtype(*tensors: Tensor):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError(f"mixed tensor dtypes: {dt} vs {t.data.dtype}")
    return dt


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into .grad of every reachable tensor.

    Repeated calls without zero_grad keep accumulating. The root must be
    a scalar (single element) attached to a recorded graph.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward requires a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward root is not connected to any recorded graph")

    topo = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        nxt = next(parents, None)
        if nxt is None:
            topo.append(node)
            stack.pop()
        elif id(nxt) not in visited:
            visited.add(id(nxt))
            stack.append((nxt, iter(nxt._parents)))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


# ---------------------------------------------------------------------------
# convolution


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, (b, c, ho, wo, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3)
    )
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(b, ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int, ho: int, wo: int):
    b, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    dxp = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
    dwin = dcols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += dwin[..., i, j]
    if padding:
        return dxp[:, :, padding : padding + h, padding : padding + w]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B, Cin, H, W] with [Cout, Cin, kh, kw] kernels."""
    _same_dtype(x, weight, bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects a 4-d input and a 4-d weight")
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"input has {cin} channels but weight expects {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d kernels must have odd spatial dims")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d output is empty for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    # output dims follow floor semantics: (H + 2p - k) // stride + 1
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T + bias.data
    out = out.transpose(0, 2, 1).reshape(b, cout, ho, wo)

    def bwd(g):
        gmat = g.reshape(b, cout, ho * wo).transpose(0, 2, 1)
        dw = np.tensordot(gmat, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        db = g.sum(axis=(0, 2, 3))
        dcols = gmat @ wmat
        dx = _col2im(dcols, x.shape, kh, kw, stride, padding, ho, wo)
        return dx, dw, db

    return _result(out, (x, weight, bias), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """[B, F] @ [Fout, F].T + [Fout]."""
    _same_dtype(x, weight, bias)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError("linear expects 2-d input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear input width {x.shape[1]} != weight width {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError("linear bias shape mismatch")
    out = x.data @ weight.data.T + bias.data

    def bwd(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return _result(out, (x, weight, bias), bwd)


# ---------------------------------------------------------------------------
# activations and normalization


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """Per-channel leaky rectifier on [B, C, H, W]; slope alpha where x < 0.

    The derivative at x == 0 is taken as alpha.
    """
    _same_dtype(x, alpha)
    if x.ndim != 4:
        raise ShapeError("prelu expects a 4-d input")
    if alpha.shape != (x.shape[1],):
        raise ShapeError(f"alpha shape {alpha.shape} does not match {x.shape[1]} channels")
    a = alpha.data[None, :, None, None]
    xd = x.data
    out = np.where(xd >= 0, xd, a * xd)

    def bwd(g):
        dx = g * np.where(xd > 0, xd.dtype.type(1), a)
        da = (g * xd * (xd < 0)).sum(axis=(0, 2, 3))
        return dx, da

    return _result(out, (x, alpha), bwd)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), bwd)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_running: bool = True,
) -> Tensor:
    """Per-channel batch normalization on [B, C, H, W].

    Training mode normalizes by batch statistics and (optionally) folds
    them into the running buffers in place; eval mode reads the buffers.
    """
    _same_dtype(x, gamma, beta)
    if x.ndim != 4:
        raise ShapeError("batchnorm2d expects a 4-d input")
    b, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batchnorm2d gamma/beta must be per-channel vectors")
    xd = x.data
    if training:
        if b < 2:
            raise DegenerateBatchError("batchnorm2d needs batch size >= 2 in training mode")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if update_running:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.astype(running_mean.dtype)
            running_var *= 1.0 - momentum
            running_var += momentum * var.astype(running_var.dtype)
    else:
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)

    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(g):
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            m = b * h * w
            sum_dxhat = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            dx = (inv[None, :, None, None] / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        else:
            dx = dxhat * inv[None, :, None, None]
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# shape rearrangement


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange [B, C*r*r, H, W] into [B, C, H*r, W*r] (sub-pixel layout)."""
    b, crr, h, w = x.shape
    if crr % (r * r):
        raise ShapeError(f"{crr} channels are not divisible by r^2 = {r * r}")
    c = crr // (r * r)
    out = x.data.reshape(b, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, h * r, w * r)

    def bwd(g):
        dx = g.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, crr, h, w)
        return (np.ascontiguousarray(dx),)

    return _result(np.ascontiguousarray(out), (x,), bwd)


def split_channels(x: Tensor, at: int) -> tuple[Tensor, Tensor]:
    """Split [B, C, H, W] into [B, at, ...] and [B, C-at, ...]."""
    if x.ndim != 4:
        raise ShapeError("split_channels expects a 4-d input")
    c = x.shape[1]
    if not 0 < at < c:
        raise ShapeError(f"split point {at} must be inside (0, {c})")

    def bwd_first(g):
        dx = np.zeros_like(x.data)
        dx[:, :at] = g
        return (dx,)

    def bwd_second(g):
        dx = np.zeros_like(x.data)
        dx[:, at:] = g
        return (dx,)

    first = _result(x.data[:, :at].copy(), (x,), bwd_first)
    second = _result(x.data[:, at:].copy(), (x,), bwd_second)
    return first, second


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two [B, *, H, W] maps along the channel axis."""
    _same_dtype(a, b)
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError("concat_channels expects 4-d inputs")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels spatial/batch mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def bwd(g):
        return g[:, :ca].copy(), g[:, ca:].copy()

    return _result(out, (a, b), bwd)


def flatten(x: Tensor) -> Tensor:
    """Collapse all non-batch axes: [B, ...] -> [B, F]."""
    b = x.shape[0]
    out = x.data.reshape(b, -1)

    def bwd(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _binary(a: Tensor, b: Tensor):
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise op on mismatched shapes {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary(a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary(a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary(a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary(a, b)
    out = a.data / b.data

    def bwd(g):
        return g / b.data, -g * a.data / (b.data * b.data)

    return _result(out, (a, b), bwd)


def neg(x: Tensor) -> Tensor:
    return _result(-x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _result(x.data + x.data.dtype.type(c), (x,), lambda g: (g,))


def absval(x: Tensor) -> Tensor:
    xd = x.data
    return _result(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def bwd(g):
        return (g / (2.0 * out),)

    return _result(out, (x,), bwd)


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where lo <= x <= hi."""
    if lo is None and hi is None:
        raise ValueError("clamp needs at least one bound")
    xd = x.data
    out = np.clip(xd, lo, hi)
    mask = np.ones_like(xd)
    if lo is not None:
        mask *= xd >= lo
    if hi is not None:
        mask *= xd <= hi

    def bwd(g):
        return (g * mask,)

    return _result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# reductions and resampling


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def bwd(g):
        return (np.full_like(x.data, g),)

    return _result(out, (x,), bwd)


def tmean(x: Tensor) -> Tensor:
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)
    n = x.data.dtype.type(x.data.size)

    def bwd(g):
        return (np.full_like(x.data, g / n),)

    return _result(out, (x,), bwd)


def sum_axis(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    out = x.data.sum(axis=axis)

    def bwd(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis),)

    return _result(out, (x,), bwd)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    """Mean along one axis, keeping that axis with size 1."""
    n = x.shape[axis]
    out = x.data.mean(axis=axis, keepdims=True)
    inv = x.data.dtype.type(1.0 / n)

    def bwd(g):
        return (np.repeat(g, n, axis=axis) * inv,)

    return _result(out, (x,), bwd)


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k max pooling; gradient routes to the first argmax."""
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"maxpool2d needs spatial dims divisible by {k}, got {h}x{w}")
    ho, wo = h // k, w // k
    windows = x.data.reshape(b, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, k * k)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        dwin = np.zeros((b, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (np.ascontiguousarray(dx),)

    return _result(out, (x,), bwd)


def avgpool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling."""
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avgpool2d needs spatial dims divisible by {k}, got {h}x{w}")
    ho, wo = h // k, w // k
    out = x.data.reshape(b, c, ho, k, wo, k).mean(axis=(3, 5))
    inv = x.data.dtype.type(1.0 / (k * k))

    def bwd(g):
        dx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) * inv
        return (dx,)

    return _result(out, (x,), bwd)


def nearest_upsample(x: Tensor, factors: tuple[int, int]) -> Tensor:
    """Repeat each element factors[0] times along H and factors[1] along W.

    The adjoint sums each factor-sized block back to its source element.
    """
    fh, fw = factors
    if fh < 1 or fw < 1:
        raise ShapeError("upsample factors must be >= 1")
    b, c, h, w = x.shape
    out = x.data
    if fh > 1:
        out = np.repeat(out, fh, axis=2)
    if fw > 1:
        out = np.repeat(out, fw, axis=3)

    def bwd(g):
        dx = g.reshape(b, c, h, fh, w, fw).sum(axis=(3, 5))
        return (dx,)

    return _result(out, (x,), bwd)
