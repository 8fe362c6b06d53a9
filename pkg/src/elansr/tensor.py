"""Minimal rank-4 tensor engine: NCHW forward ops with reverse-mode gradients.

Tensors wrap dense NumPy arrays. Every operation that consumes tensors
records a backward closure onto the produced tensor while gradient mode is
enabled, forming the tape for ``Tensor.backward``. Tensors are treated as
immutable once produced by an operation; a tape belongs to a single thread.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)
_default_dtype = np.float32
_grad_enabled = True


def set_default_dtype(dtype) -> None:
    """Select the default numeric precision ('f32'/'f64' or a numpy dtype)."""
    global _default_dtype
    named = {"f32": np.float32, "f64": np.float64}
    dt = named.get(dtype, dtype)
    dt = np.dtype(dt).type
    if dt not in _FLOAT_DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}; use f32 or f64")
    _default_dtype = dt


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the context (inference fast path)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


# ---------------------------------------------------------------------------
# MAC accounting
# ---------------------------------------------------------------------------

class MacCounter:
    """Accumulates forward multiply-accumulate counts, bucketed by scope.

    Ops report their MACs to the innermost active scope label; calls made
    outside any scope land in a bucket named after the op kind.
    """

    def __init__(self):
        self.buckets: dict[str, int] = {}
        self._labels: list[str] = []

    def add(self, kind: str, n: int) -> None:
        label = self._labels[-1] if self._labels else kind
        self.buckets[label] = self.buckets.get(label, 0) + int(n)

    def get(self, label: str) -> int:
        return self.buckets.get(label, 0)

    @property
    def total(self) -> int:
        return sum(self.buckets.values())


_counter: MacCounter | None = None


@contextlib.contextmanager
def count_macs():
    """Activate a fresh MAC counter for the duration of the context."""
    global _counter
    prev = _counter
    _counter = MacCounter()
    try:
        yield _counter
    finally:
        _counter = prev


@contextlib.contextmanager
def mac_scope(label: str):
    """Attribute MACs recorded inside the context to `label`."""
    if _counter is None:
        yield
        return
    _counter._labels.append(label)
    try:
        yield
    finally:
        _counter._labels.pop()


def _record_macs(kind: str, n: int) -> None:
    if _counter is not None:
        _counter.add(kind, n)


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    """Dense numeric array with an optional gradient buffer.

    The primary layout is rank-4 NCHW; attention internals also pass
    rank-3 (batch, rows, cols) tensors through the same machinery.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward_fn = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={'set' if self.grad is not None else 'none'})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- tape ----------------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar loss to every recorded input."""
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "add")
            out = _make(self.data + other.data, (self, other))
            if out._parents:
                def bwd(g, a=self, b=other):
                    if a.requires_grad:
                        a._accumulate(g)
                    if b.requires_grad:
                        b._accumulate(g)
                out._backward_fn = bwd
            return out
        out = _make(self.data + other, (self,))
        if out._parents:
            out._backward_fn = lambda g, a=self: a._accumulate(g)
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _make(-self.data, (self,))
        if out._parents:
            out._backward_fn = lambda g, a=self: a._accumulate(-g)
        return out

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "sub")
            out = _make(self.data - other.data, (self, other))
            if out._parents:
                def bwd(g, a=self, b=other):
                    if a.requires_grad:
                        a._accumulate(g)
                    if b.requires_grad:
                        b._accumulate(-g)
                out._backward_fn = bwd
            return out
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "mul")
            out = _make(self.data * other.data, (self, other))
            if out._parents:
                def bwd(g, a=self, b=other):
                    if a.requires_grad:
                        a._accumulate(g * b.data)
                    if b.requires_grad:
                        b._accumulate(g * a.data)
                out._backward_fn = bwd
            return out
        out = _make(self.data * other, (self,))
        if out._parents:
            out._backward_fn = lambda g, a=self, c=other: a._accumulate(g * c)
        return out

    __rmul__ = __mul__

    def abs(self) -> "Tensor":
        out = _make(np.abs(self.data), (self,))
        if out._parents:
            sign = np.sign(self.data)
            out._backward_fn = lambda g, a=self, s=sign: a._accumulate(g * s)
        return out

    def sum(self) -> "Tensor":
        out = _make(np.asarray(self.data.sum()), (self,))
        if out._parents:
            out._backward_fn = lambda g, a=self: a._accumulate(
                np.broadcast_to(g, a.data.shape).astype(a.data.dtype)
            )
        return out

    def mean(self) -> "Tensor":
        n = self.data.size
        out = _make(np.asarray(self.data.mean()), (self,))
        if out._parents:
            out._backward_fn = lambda g, a=self, n=n: a._accumulate(
                np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype)
            )
        return out

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out = _make(self.data.reshape(shape), (self,))
        if out._parents:
            out._backward_fn = lambda g, a=self, s=old: a._accumulate(g.reshape(s))
        return out

    def transpose(self, axes) -> "Tensor":
        axes = tuple(axes)
        out = _make(np.ascontiguousarray(self.data.transpose(axes)), (self,))
        if out._parents:
            inv = tuple(np.argsort(axes))
            out._backward_fn = lambda g, a=self, inv=inv: a._accumulate(g.transpose(inv))
        return out

    def __getitem__(self, idx) -> "Tensor":
        # basic (slice/int) indexing only; advanced indexing is a non-goal
        out = _make(np.ascontiguousarray(self.data[idx]), (self,))
        if out._parents:
            def bwd(g, a=self, idx=idx):
                full = np.zeros_like(a.data)
                full[idx] = g
                a._accumulate(full)
            out._backward_fn = bwd
        return out


def _make(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._backward_fn = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    else:
        out.requires_grad = False
        out._parents = ()
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _default_dtype), requires_grad)


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate tensors along `axis` (channel axis by default)."""
    datas = [t.data for t in tensors]
    out = _make(np.concatenate(datas, axis=axis), tuple(tensors))
    if out._parents:
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def bwd(g, ts=tuple(tensors), offs=offsets, ax=axis):
            for t, lo, hi in zip(ts, offs[:-1], offs[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[ax] = slice(lo, hi)
                    t._accumulate(g[tuple(sl)])
        out._backward_fn = bwd
    return out


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class ConvParams:
    """2D convolution weights: (out_channels, in_channels, kH, kW) plus bias.

    Only square 1x1/3x3 kernels at stride 1 appear in this network.
    """

    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        w = self.weight.data
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"conv weight must be (out,in,k,k), got {w.shape}")
        if w.shape[2] not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {w.shape[2]}")
        if self.stride != 1:
            raise ValueError("only stride 1 is supported")
        if not 0 <= self.padding <= w.shape[2] - 1:
            raise ValueError(f"padding {self.padding} invalid for k={w.shape[2]}")
        if self.bias.data.shape != (w.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.data.shape} does not match out_channels {w.shape[0]}"
            )

    @property
    def out_channels(self) -> int:
        return self.weight.data.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.data.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.data.shape[2]


@dataclass
class BnParams:
    """Per-channel batch-norm parameters and running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.data.shape[0]


def identity_bn(channels: int, dtype=None, requires_grad: bool = True) -> BnParams:
    dt = dtype or _default_dtype
    return BnParams(
        gamma=Tensor(np.ones(channels, dtype=dt), requires_grad),
        beta=Tensor(np.zeros(channels, dtype=dt), requires_grad),
        running_mean=np.zeros(channels, dtype=dt),
        running_var=np.ones(channels, dtype=dt),
    )


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """Unfold (N,C,H,W) into (N, C*k*k, H_out*W_out) patches for stride 1."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    s0, s1, s2, s3 = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x, (n, c, k, k, ho, wo), (s0, s1, s2, s3, s2, s3), writeable=False
    )
    return cols.reshape(n, c * k * k, ho * wo), ho, wo


def _conv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, pad: int):
    co, ci, k, _ = w.shape
    if k == 1 and pad == 0:
        n, c, h, wd = x.shape
        out = np.matmul(w.reshape(co, ci), x.reshape(n, ci, h * wd))
        out = out.reshape(n, co, h, wd)
        cols = None
    else:
        cols, ho, wo = _im2col(x, k, pad)
        out = np.matmul(w.reshape(co, ci * k * k), cols)
        out = out.reshape(x.shape[0], co, ho, wo)
    if b is not None:
        out += b.reshape(1, co, 1, 1)
    return out, cols


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Stride-1 2D convolution with zero padding.

    With padding (k-1)/2 the spatial extent is preserved.
    """
    n, c, h, w = x.data.shape
    if c != p.in_channels:
        raise ValueError(
            f"conv2d: input has {c} channels (shape {x.data.shape}) but weights "
            f"expect {p.in_channels} (shape {p.weight.data.shape})"
        )
    k, pad = p.kernel_size, p.padding
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    _record_macs("conv", n * p.out_channels * c * k * k * ho * wo)
    out_data, cols = _conv2d_raw(x.data, p.weight.data, p.bias.data, pad)
    out = _make(out_data, (x, p.weight, p.bias))
    if out._parents:
        def bwd(g, x=x, wt=p.weight, bt=p.bias, cols=cols, k=k, pad=pad):
            n, co = g.shape[0], g.shape[1]
            gm = g.reshape(n, co, -1)
            if bt.requires_grad:
                bt._accumulate(g.sum(axis=(0, 2, 3)))
            if wt.requires_grad:
                if cols is None:
                    xm = x.data.reshape(n, x.data.shape[1], -1)
                    dw = np.matmul(gm, xm.transpose(0, 2, 1)).sum(axis=0)
                else:
                    dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0)
                wt._accumulate(dw.reshape(wt.data.shape))
            if x.requires_grad:
                # gradient w.r.t. input is a convolution with the rotated,
                # channel-transposed kernel at complementary padding
                wrot = wt.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                dx, _ = _conv2d_raw(g, np.ascontiguousarray(wrot), None, k - 1 - pad)
                x._accumulate(dx)
        out._backward_fn = bwd
    return out


def relu(x: Tensor) -> Tensor:
    out = _make(np.maximum(x.data, 0), (x,))
    if out._parents:
        mask = x.data > 0
        out._backward_fn = lambda g, a=x, m=mask: a._accumulate(g * m)
    return out


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

def batch_norm(x: Tensor, p: BnParams, training: bool = False) -> Tensor:
    """Per-channel batch norm over (N, H, W).

    Training mode normalizes with batch statistics and updates the running
    buffers in place; inference mode uses the running statistics.
    """
    if x.data.shape[1] != p.channels:
        raise ValueError(
            f"batch_norm: input has {x.data.shape[1]} channels, params have {p.channels}"
        )
    _record_macs("norm", x.data.size)
    gamma = p.gamma.data.reshape(1, -1, 1, 1)
    beta = p.beta.data.reshape(1, -1, 1, 1)
    if training:
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + p.epsilon)
        xhat = (x.data - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        # running update uses the unbiased variance estimate
        unbiased = var * m / (m - 1) if m > 1 else var
        p.running_mean[...] = (1 - p.momentum) * p.running_mean + p.momentum * mean
        p.running_var[...] = (1 - p.momentum) * p.running_var + p.momentum * unbiased
    else:
        inv_std = 1.0 / np.sqrt(p.running_var + p.epsilon)
        xhat = (x.data - p.running_mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        m = None
    out = _make(gamma * xhat + beta, (x, p.gamma, p.beta))
    if out._parents:
        def bwd(g, x=x, gt=p.gamma, bt=p.beta, xhat=xhat, inv=inv_std, m=m):
            if bt.requires_grad:
                bt._accumulate(g.sum(axis=(0, 2, 3)))
            if gt.requires_grad:
                gt._accumulate((g * xhat).sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gw = g * gt.data.reshape(1, -1, 1, 1)
                if m is None:
                    x._accumulate(gw * inv.reshape(1, -1, 1, 1))
                else:
                    s1 = gw.sum(axis=(0, 2, 3), keepdims=True)
                    s2 = (gw * xhat).sum(axis=(0, 2, 3), keepdims=True)
                    dx = (gw - s1 / m - xhat * s2 / m) * inv.reshape(1, -1, 1, 1)
                    x._accumulate(dx)
        out._backward_fn = bwd
    return out


def fold_bn_into_conv(conv: ConvParams, bn: BnParams) -> ConvParams:
    """Absorb inference-mode batch norm into the preceding convolution.

    Returns conv' with conv2d(x, conv') == batch_norm(conv2d(x, conv), bn)
    for every input, up to floating-point rounding.
    """
    if bn.channels != conv.out_channels:
        raise ValueError(
            f"fold: bn has {bn.channels} channels, conv outputs {conv.out_channels}"
        )
    scale = bn.gamma.data / np.sqrt(bn.running_var + bn.epsilon)
    w = conv.weight.data * scale.reshape(-1, 1, 1, 1)
    b = (conv.bias.data - bn.running_mean) * scale + bn.beta.data
    return ConvParams(
        weight=Tensor(w), bias=Tensor(b), stride=conv.stride, padding=conv.padding
    )


# ---------------------------------------------------------------------------
# Attention building blocks
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _make(s, (x,))
    if out._parents:
        def bwd(g, a=x, s=s, axis=axis):
            dot = (g * s).sum(axis=axis, keepdims=True)
            a._accumulate(s * (g - dot))
        out._backward_fn = bwd
    return out


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """(B, m, k) @ (B, k, n) -> (B, m, n)."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ValueError(
            f"batched_matmul expects rank-3 operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ValueError(
            f"batched_matmul: incompatible shapes {a.data.shape} x {b.data.shape}"
        )
    bs, m, k = a.data.shape
    n = b.data.shape[2]
    _record_macs("matmul", bs * m * k * n)
    out = _make(np.matmul(a.data, b.data), (a, b))
    if out._parents:
        def bwd(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(np.matmul(g, b.data.transpose(0, 2, 1)))
            if b.requires_grad:
                b._accumulate(np.matmul(a.data.transpose(0, 2, 1), g))
        out._backward_fn = bwd
    return out


# ---------------------------------------------------------------------------
# Rearrangement ops
# ---------------------------------------------------------------------------

def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (N, C*r^2, H, W) into (N, C, H*r, W*r); a pure permutation."""
    n, c, h, w = x.data.shape
    if r < 1:
        raise ValueError("upscale factor must be >= 1")
    if c % (r * r) != 0:
        raise ValueError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    if r == 1:
        return x.reshape(n, c, h, w)
    co = c // (r * r)
    out = x.reshape(n, co, r, r, h, w).transpose((0, 1, 4, 2, 5, 3))
    return out.reshape(n, co, h * r, w * r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_shuffle`."""
    n, c, h, w = x.data.shape
    if r == 1:
        return x.reshape(n, c, h, w)
    if h % r or w % r:
        raise ValueError(f"pixel_unshuffle: spatial dims {(h, w)} not divisible by {r}")
    out = x.reshape(n, c, h // r, r, w // r, r).transpose((0, 1, 3, 5, 2, 4))
    return out.reshape(n, c * r * r, h // r, w // r)


def roll2d(x: Tensor, offset: tuple[int, int]) -> Tensor:
    """Toroidal translation of the spatial dims by (dy, dx)."""
    dy, dx = offset
    if dy == 0 and dx == 0:
        return x
    out = _make(np.roll(x.data, (dy, dx), axis=(2, 3)), (x,))
    if out._parents:
        out._backward_fn = lambda g, a=x, dy=dy, dx=dx: a._accumulate(
            np.roll(g, (-dy, -dx), axis=(2, 3))
        )
    return out


def pad2d_zero(x: Tensor, pads: tuple[int, int, int, int]) -> Tensor:
    """Zero-pad spatial dims by (top, bottom, left, right)."""
    t, b, l, r = pads
    out = _make(np.pad(x.data, ((0, 0), (0, 0), (t, b), (l, r))), (x,))
    if out._parents:
        h, w = x.data.shape[2], x.data.shape[3]
        out._backward_fn = lambda g, a=x, t=t, l=l, h=h, w=w: a._accumulate(
            g[:, :, t:t + h, l:l + w]
        )
    return out


def _reflect_indices(size: int, before: int, after: int) -> np.ndarray:
    """Source indices for mirror padding without edge duplication."""
    idx = np.arange(-before, size + after)
    if size == 1:
        return np.zeros_like(idx)
    period = 2 * size - 2
    idx = np.abs(idx) % period
    return np.where(idx >= size, period - idx, idx)


def pad2d_reflect(x: Tensor, pads: tuple[int, int, int, int]) -> Tensor:
    """Reflection-pad spatial dims by (top, bottom, left, right)."""
    t, b, l, r = pads
    if t == b == l == r == 0:
        return x
    h, w = x.data.shape[2], x.data.shape[3]
    iy = _reflect_indices(h, t, b)
    ix = _reflect_indices(w, l, r)
    out = _make(np.ascontiguousarray(x.data[:, :, iy[:, None], ix[None, :]]), (x,))
    if out._parents:
        def bwd(g, a=x, iy=iy, ix=ix, t=t, b=b, l=l, r=r, h=h, w=w):
            # fold padded rows back first, then padded columns
            rows = g[:, :, t:t + h, :].copy()
            for p in list(range(t)) + list(range(t + h, t + h + b)):
                rows[:, :, iy[p], :] += g[:, :, p, :]
            full = rows[:, :, :, l:l + w].copy()
            for p in list(range(l)) + list(range(l + w, l + w + r)):
                full[:, :, :, ix[p]] += rows[:, :, :, p]
            a._accumulate(full)
        out._backward_fn = bwd
    return out
