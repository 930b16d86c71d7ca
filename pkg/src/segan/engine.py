"""Reverse-mode autodiff over batched 1-D signal tensors.

Define-by-run: every op builds the output tensor and, when gradients are
enabled, records its parents plus a closure that routes the upstream gradient
back to them. `backward(loss)` walks the recorded graph in reverse
topological order. Convention for conv-shaped data is (batch, length,
channels); reductions and reshapes may produce other ranks.

Only the operations this model family needs are provided. float32 is the
training dtype; build the same graph from float64 arrays when verifying
against finite differences.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import NonScalarLossError, ShapeMismatchError

_grad_enabled = True
_check_finite = False


def set_debug_checks(on: bool) -> None:
    """Enable per-op finiteness assertions (slow; off by default)."""
    global _check_finite
    _check_finite = bool(on)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping needed for backprop.

    `grad` is lazily allocated during backward for intermediates;
    parameters pre-allocate it so unused parameters report zero gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
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

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped as constants of matching dtype
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __neg__(self):
        return mul(self, _wrap(-1.0, self))

    def sum(self) -> "Tensor":
        return _reduce(self, np.sum, scale=1.0)

    def mean(self) -> "Tensor":
        return _reduce(self, np.mean, scale=1.0 / self.data.size)

    def mean_axis(self, axis: int) -> "Tensor":
        """Mean along one axis, keepdims=True."""
        n = self.data.shape[axis]
        out = _make(np.mean(self.data, axis=axis, keepdims=True), (self,))
        if out._tracked():
            def back(g, x=self, axis=axis, n=n):
                _accum(x, np.broadcast_to(g / n, x.data.shape))
            out._backward = back
        return out

    def reshape(self, *shape) -> "Tensor":
        out = _make(self.data.reshape(*shape), (self,))
        if out._tracked():
            orig = self.data.shape

            def back(g, x=self, orig=orig):
                _accum(x, g.reshape(orig))
            out._backward = back
        return out

    def backward(self) -> None:
        backward(self)

    def _tracked(self) -> bool:
        return self.requires_grad and self._parents != ()


class Parameter(Tensor):
    """A named trainable tensor; gradient buffer always allocated."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _make(data: np.ndarray, parents) -> Tensor:
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an op")
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(parents)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


def _reduce(x: Tensor, fn, scale: float) -> Tensor:
    out = _make(np.asarray(fn(x.data)), (x,))
    if out._tracked():
        def back(g, x=x, scale=scale):
            _accum(x, np.broadcast_to(g * scale, x.data.shape).astype(x.data.dtype, copy=False))
        out._backward = back
    return out


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data + b.data, (a, b))
    if out._tracked():
        def back(g, a=a, b=b):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(g, b.data.shape))
        out._backward = back
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data - b.data, (a, b))
    if out._tracked():
        def back(g, a=a, b=b):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(-g, b.data.shape))
        out._backward = back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data * b.data, (a, b))
    if out._tracked():
        def back(g, a=a, b=b):
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
            _accum(b, _unbroadcast(g * a.data, b.data.shape))
        out._backward = back
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data / b.data, (a, b))
    if out._tracked():
        def back(g, a=a, b=b):
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        out._backward = back
    return out


def sqrt(x: Tensor) -> Tensor:
    root = np.sqrt(x.data)
    out = _make(root, (x,))
    if out._tracked():
        def back(g, x=x, root=root):
            _accum(x, g * (0.5 / root))
        out._backward = back
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = _make(y, (x,))
    if out._tracked():
        def back(g, x=x, y=y):
            _accum(x, g * (1.0 - y * y))
        out._backward = back
    return out


def absolute(x: Tensor) -> Tensor:
    """|x| with subgradient 0 at x == 0 (np.sign convention)."""
    out = _make(np.abs(x.data), (x,))
    if out._tracked():
        def back(g, x=x):
            _accum(x, g * np.sign(x.data))
        out._backward = back
    return out


def leaky_relu(x: Tensor, alpha: float = 0.3) -> Tensor:
    pos = x.data > 0
    out = _make(np.where(pos, x.data, alpha * x.data), (x,))
    if out._tracked():
        def back(g, x=x, pos=pos, alpha=alpha):
            _accum(x, g * np.where(pos, 1.0, alpha).astype(x.data.dtype))
        out._backward = back
    return out


def prelu(x: Tensor, slopes: Tensor) -> Tensor:
    """Rectifier with a trainable negative-side slope per channel.

    `slopes` has one entry per channel (last axis of x).
    """
    if slopes.data.shape != (x.data.shape[-1],):
        raise ShapeMismatchError(
            f"prelu slopes {slopes.data.shape} do not match channels {x.data.shape[-1]}")
    pos = x.data > 0
    out = _make(np.where(pos, x.data, slopes.data * x.data), (x, slopes))
    if out._tracked():
        def back(g, x=x, slopes=slopes, pos=pos):
            _accum(x, g * np.where(pos, 1.0, slopes.data))
            neg_part = np.where(pos, 0.0, x.data) * g
            _accum(slopes, neg_part.sum(axis=tuple(range(x.data.ndim - 1))))
        out._backward = back
    return out


# ---------------------------------------------------------------------------
# structural ops


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel (last) axis; batch/length must match."""
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeMismatchError(
            f"concat_channels leading dims differ: {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[-1]
    out = _make(np.concatenate([a.data, b.data], axis=-1), (a, b))
    if out._tracked():
        def back(g, a=a, b=b, ca=ca):
            _accum(a, g[..., :ca])
            _accum(b, g[..., ca:])
        out._backward = back
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on flattened activations: (B, N) @ (N, M) + (M,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatchError(
            f"linear expects (B,N)@(N,M); got {x.data.shape} and {w.data.shape}")
    y = x.data @ w.data
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents)
    if out._tracked():
        def back(g, x=x, w=w, b=b):
            _accum(x, g @ w.data.T)
            _accum(w, x.data.T @ g)
            if b is not None:
                _accum(b, g.sum(axis=0))
        out._backward = back
    return out


# ---------------------------------------------------------------------------
# convolutions

def _conv_geometry(length: int, width: int, stride: int) -> tuple[int, int, int, int]:
    """Output length and left/right zero padding for same-style conv."""
    out_len = -(-length // stride)
    pad_total = max((out_len - 1) * stride + width - length, 0)
    pad_left = pad_total // 2
    return out_len, pad_total, pad_left, (out_len - 1) * stride + 1


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Strided cross-correlation. x: (B, L, Cin), w: (width, Cin, Cout).

    Zero padding totals width - stride when L divides by the stride (split
    floor left / ceil right), so output length is always ceil(L / stride).
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeMismatchError("conv1d expects x (B,L,Cin) and w (width,Cin,Cout)")
    batch, length, cin = x.data.shape
    width, wcin, cout = w.data.shape
    if wcin != cin:
        raise ShapeMismatchError(f"conv1d channel mismatch: input {cin}, weight {wcin}")
    if width % 2 == 0:
        raise ShapeMismatchError(f"conv1d filter width must be odd, got {width}")
    if length < 1 or stride < 1:
        raise ShapeMismatchError("conv1d needs L >= 1 and stride >= 1")
    if b is not None and b.data.shape != (cout,):
        raise ShapeMismatchError(f"conv1d bias shape {b.data.shape} != ({cout},)")

    out_len, pad_total, pad_left, span = _conv_geometry(length, width, stride)
    xp = np.zeros((batch, length + pad_total, cin), dtype=x.data.dtype)
    xp[:, pad_left:pad_left + length] = x.data

    y = np.zeros((batch, out_len, cout), dtype=x.data.dtype)
    for k in range(width):
        y += xp[:, k:k + span:stride] @ w.data[k]
    if b is not None:
        y += b.data

    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents)
    if out._tracked():
        def back(g, x=x, w=w, b=b, xp=xp, stride=stride, span=span,
                 pad_left=pad_left, length=length, width=width):
            if b is not None:
                _accum(b, g.sum(axis=(0, 1)))
            if w.requires_grad:
                gw = np.empty_like(w.data)
                for k in range(width):
                    gw[k] = np.tensordot(xp[:, k:k + span:stride], g, axes=((0, 1), (0, 1)))
                _accum(w, gw)
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for k in range(width):
                    gxp[:, k:k + span:stride] += g @ w.data[k].T
                _accum(x, gxp[:, pad_left:pad_left + length])
        out._backward = back
    return out


def conv1d_transpose(y: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Fractional-stride upsampling conv: the linear adjoint of conv1d.

    y: (B, L, Cin), w: (width, Cout, Cin); output (B, L*stride, Cout).
    With zero bias, <conv1d(x, w), y> == <x, conv1d_transpose(y, w)> for any
    w viewed with swapped channel roles (same memory layout).
    """
    if y.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeMismatchError("conv1d_transpose expects y (B,L,Cin) and w (width,Cout,Cin)")
    batch, length, cin = y.data.shape
    width, cout, wcin = w.data.shape
    if wcin != cin:
        raise ShapeMismatchError(
            f"conv1d_transpose channel mismatch: input {cin}, weight {wcin}")
    if width % 2 == 0:
        raise ShapeMismatchError(f"conv1d_transpose filter width must be odd, got {width}")
    if b is not None and b.data.shape != (cout,):
        raise ShapeMismatchError(f"conv1d_transpose bias shape {b.data.shape} != ({cout},)")

    out_len = length * stride
    pad_total = max(width - stride, 0)
    pad_left = pad_total // 2
    span = (length - 1) * stride + 1

    op = np.zeros((batch, out_len + pad_total, cout), dtype=y.data.dtype)
    for k in range(width):
        op[:, k:k + span:stride] += y.data @ w.data[k].T
    res = op[:, pad_left:pad_left + out_len]
    res = res + b.data if b is not None else res.copy()

    parents = (y, w) if b is None else (y, w, b)
    out = _make(res, parents)
    if out._tracked():
        def back(g, y=y, w=w, b=b, stride=stride, span=span, width=width,
                 pad_total=pad_total, pad_left=pad_left, out_len=out_len):
            if b is not None:
                _accum(b, g.sum(axis=(0, 1)))
            gp = np.zeros((g.shape[0], out_len + pad_total, g.shape[2]), dtype=g.dtype)
            gp[:, pad_left:pad_left + out_len] = g
            if w.requires_grad:
                gw = np.empty_like(w.data)
                for k in range(width):
                    gw[k] = np.tensordot(gp[:, k:k + span:stride], y.data, axes=((0, 1), (0, 1)))
                _accum(w, gw)
            if y.requires_grad:
                gy = np.zeros_like(y.data)
                for k in range(width):
                    gy += gp[:, k:k + span:stride] @ w.data[k]
                _accum(y, gy)
        out._backward = back
    return out


# ---------------------------------------------------------------------------
# normalization and losses


def virtual_batch_norm(x: Tensor, ref_mean: np.ndarray, ref_var: np.ndarray,
                       n_ref: int, gamma: Tensor, beta: Tensor,
                       eps: float = 1e-5) -> Tensor:
    """Normalize each example with reference-batch stats blended 1/(n_ref+1)
    with the example's own per-channel stats.

    ref_mean/ref_var are frozen arrays (no gradient); gamma/beta are
    per-channel trainables. Differentiable through the example's own
    mean/variance contribution.
    """
    w_ref = n_ref / (n_ref + 1.0)
    w_new = 1.0 / (n_ref + 1.0)
    dt = x.data.dtype
    ex_mean = x.mean_axis(1)
    centered = sub(x, ex_mean)
    ex_var = mul(centered, centered).mean_axis(1)
    mu = add(Tensor((w_ref * ref_mean).astype(dt)), mul(ex_mean, Tensor(np.asarray(w_new, dt))))
    var = add(Tensor((w_ref * ref_var + eps).astype(dt)), mul(ex_var, Tensor(np.asarray(w_new, dt))))
    norm = div(sub(x, mu), sqrt(var))
    return add(mul(norm, gamma), beta)


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference; subgradient 0 where a == b."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"l1_loss shapes differ: {a.data.shape} vs {b.data.shape}")
    return absolute(sub(a, b)).mean()


def lsq_loss(d_out: Tensor, target: float) -> Tensor:
    """Half mean squared distance to a 0/1 target (real=1, fake=0)."""
    if target not in (0, 1, 0.0, 1.0):
        raise ValueError(f"lsq_loss target must be 0 or 1, got {target}")
    diff = sub(d_out, Tensor(np.asarray(target, d_out.data.dtype)))
    return mul(mul(diff, diff).mean(), Tensor(np.asarray(0.5, d_out.data.dtype)))


# ---------------------------------------------------------------------------
# backprop driver


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into .grad over the graph below `loss`."""
    if loss.data.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def sample_z(batch: int, length: int = 8, channels: int = 1024,
             seed: int = 0, dtype=np.float32) -> Tensor:
    """Standard-normal latent block (batch, length, channels); seed-deterministic."""
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((batch, length, channels)).astype(dtype))
