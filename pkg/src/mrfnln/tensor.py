"""Dense tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every differentiable op appends a node holding
references to its inputs and a closure that maps the output gradient to input
gradients.  ``backward()`` on a scalar walks the graph once in reverse
topological order, accumulates ``.grad`` on every tensor that requires it
(intermediates included), then releases the tape; a second backward through
the same graph raises ``TapeReleasedError``.

Only float32 and float64 are supported.  Binary ops require both operands to
share a dtype; nothing promotes silently.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeMismatchError, TapeReleasedError

_ALLOWED = (np.float32, np.float64)
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._grad_fn: Optional[Callable] = None
        self._released = False

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
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- graph management ----------------------------------------------------

    def detach(self) -> "Tensor":
        """Same data, no history, no gradient requirement."""
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        """Dtype-cast copy with no history."""
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse accumulation from a scalar output."""
        if self._released:
            raise TapeReleasedError(
                "tape already consumed by a previous backward(); rebuild the "
                "graph by re-running the forward pass"
            )
        if self.data.size != 1:
            raise ShapeMismatchError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise TapeReleasedError(
                "loss does not depend on any tensor with requires_grad=True"
            )

        order = self._topo_order()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            fn = node._grad_fn
            if fn is None:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            # Release contexts as soon as a node has been propagated.
            node._grad_fn = None
            node._parents = ()
            node._released = True
        self._released = True

    def _topo_order(self):
        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen and p._grad_fn is not None:
                    stack.append((p, False))
        return order

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return add_scalar(self, -float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    """Wrap an op result, recording the tape node only when it can matter."""
    rg = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg)
    if rg:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _check_dtypes(*tensors: Tensor):
    dts = {t.data.dtype for t in tensors}
    if len(dts) > 1:
        raise TypeError(f"mixed dtypes in op: {sorted(str(d) for d in dts)}")


def _broadcastable(sa, sb) -> bool:
    for da, db in zip(sa[::-1], sb[::-1]):
        if da != db and da != 1 and db != 1:
            return False
    return True


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to the given operand shape (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"add: cannot broadcast {a.shape} with {b.shape}")

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"mul: cannot broadcast {a.shape} with {b.shape}")

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return _result(a.data * b.data, (a, b), grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a/b; the gradient flows through both operands."""
    _check_dtypes(a, b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"div: cannot broadcast {a.shape} with {b.shape}")
    out = a.data / b.data

    def grad_fn(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), grad_fn)


def scale(x: Tensor, s: float) -> Tensor:
    s = x.data.dtype.type(s)

    def grad_fn(g):
        return (g * s,)

    return _result(x.data * s, (x,), grad_fn)


def add_scalar(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)

    def grad_fn(g):
        return (g,)

    return _result(x.data + c, (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def grad_fn(g):
        return (g * (x.data > 0),)

    return _result(out, (x,), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so exp() never sees a large positive argument.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), grad_fn)


# -- reductions and reshapes ----------------------------------------------


def tsum(x: Tensor) -> Tensor:
    def grad_fn(g):
        return (np.full_like(x.data, g),)

    return _result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), grad_fn)


def mean_abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """Scalar mean(|a - b|); the L1 workhorse for losses."""
    _check_dtypes(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mean_abs_diff: {a.shape} vs {b.shape}")
    d = a.data - b.data
    out = np.asarray(np.abs(d).mean(), dtype=a.data.dtype)

    def grad_fn(g):
        s = np.sign(d) * (g / d.size)
        return s, -s

    return _result(out, (a, b), grad_fn)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return _result(out, (x,), grad_fn)


def flatten(x: Tensor, start_axis: int = 1) -> Tensor:
    lead = x.shape[:start_axis]
    return reshape(x, lead + (-1,))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def grad_fn(g):
        return (g.transpose(inv),)

    return _result(x.data.transpose(axes), (x,), grad_fn)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeMismatchError("concat of an empty sequence")
    _check_dtypes(*xs)
    base = list(xs[0].shape)
    for t in xs[1:]:
        other = list(t.shape)
        if len(other) != len(base):
            raise ShapeMismatchError(
                f"concat: rank mismatch {xs[0].shape} vs {t.shape}"
            )
        for ax, (da, db) in enumerate(zip(base, other)):
            if ax != (axis % len(base)) and da != db:
                raise ShapeMismatchError(
                    f"concat: shapes {xs[0].shape} and {t.shape} differ on axis {ax}"
                )
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in xs], axis=axis), xs, grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C,1,1] spatial mean."""
    if x.ndim != 4:
        raise ShapeMismatchError(f"global_avg_pool expects 4D, got {x.shape}")
    B, C, H, W = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def grad_fn(g):
        return (np.broadcast_to(g / (H * W), x.data.shape).copy(),)

    return _result(out, (x,), grad_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    m = d.max(axis=axis, keepdims=True)
    e = np.exp(d - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _result(out, (x,), grad_fn)


# -- matmul ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2D or batched 3D matrix product (equal batch dims only)."""
    _check_dtypes(a, b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or a.ndim != b.ndim:
        raise ShapeMismatchError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")

    def swap(m):
        return m.swapaxes(-1, -2)

    def grad_fn(g):
        return g @ swap(b.data), swap(a.data) @ g

    return _result(a.data @ b.data, (a, b), grad_fn)


# -- padding / cropping -----------------------------------------------------


def pad_reflect2d(x: Tensor, pad: tuple) -> Tensor:
    """Reflect-pad the two trailing spatial axes; pad = (top, bottom, left, right)."""
    pt, pb, pl, pr = pad
    if x.ndim != 4:
        raise ShapeMismatchError(f"pad_reflect2d expects 4D, got {x.shape}")
    B, C, H, W = x.shape
    if pt >= H or pb >= H or pl >= W or pr >= W:
        raise ConfigError(
            f"reflect pad {pad} must be smaller than the spatial dims ({H}x{W})"
        )
    out = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)), mode="reflect")

    # Source row/col for every padded row/col (single fold is enough: pad < dim).
    ih = np.arange(-pt, H + pb)
    ih = np.where(ih < 0, -ih, ih)
    ih = np.where(ih >= H, 2 * H - 2 - ih, ih)
    iw = np.arange(-pl, W + pr)
    iw = np.where(iw < 0, -iw, iw)
    iw = np.where(iw >= W, 2 * W - 2 - iw, iw)

    def grad_fn(g):
        th = np.zeros((B, C, H, g.shape[3]), dtype=g.dtype)
        np.add.at(th, (slice(None), slice(None), ih), g)
        gx = np.zeros((B, C, H, W), dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), slice(None), iw), th)
        return (gx,)

    return _result(out, (x,), grad_fn)


def crop2d(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    if x.ndim != 4:
        raise ShapeMismatchError(f"crop2d expects 4D, got {x.shape}")
    B, C, H, W = x.shape
    if top + height > H or left + width > W or top < 0 or left < 0:
        raise ShapeMismatchError(
            f"crop ({top},{left},{height},{width}) exceeds input {H}x{W}"
        )
    out = x.data[:, :, top : top + height, left : left + width].copy()

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, :, top : top + height, left : left + width] = g
        return (gx,)

    return _result(out, (x,), grad_fn)


# -- convolution -------------------------------------------------------------


def _windows(xp: np.ndarray, kernel: int, stride: int, dilation: int) -> np.ndarray:
    """Strided view [B,C,Ho,Wo,k,k] over a padded input."""
    ke = dilation * (kernel - 1) + 1
    v = np.lib.stride_tricks.sliding_window_view(xp, (ke, ke), axis=(2, 3))
    return v[:, :, ::stride, ::stride, ::dilation, ::dilation]


def _conv_checks(x: Tensor, weight: Tensor, bias, stride, dilation, padding, transposed):
    _check_dtypes(*([x, weight] + ([bias] if bias is not None else [])))
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatchError(
            f"conv expects 4D input/weight, got {x.shape} and {weight.shape}"
        )
    if x.shape[0] == 0:
        raise ShapeMismatchError("empty batch")
    in_axis = 0 if transposed else 1
    if weight.shape[in_axis] != x.shape[1]:
        raise ShapeMismatchError(
            f"weight expects {weight.shape[in_axis]} input channels, input has {x.shape[1]}"
        )
    if stride < 1 or dilation < 1 or padding < 0:
        raise ConfigError(
            f"bad conv geometry: stride={stride} dilation={dilation} padding={padding}"
        )


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
) -> Tensor:
    """2D cross-correlation; weight is [out_ch, in_ch, k, k], zero padding."""
    _conv_checks(x, weight, bias, stride, dilation, padding, transposed=False)
    B, C, H, W = x.shape
    O, _, kh, kw = weight.shape
    if kh != kw:
        raise ConfigError(f"square kernels only, got {kh}x{kw}")
    k = kh
    ke = dilation * (k - 1) + 1
    if H + 2 * padding < ke or W + 2 * padding < ke:
        raise ConfigError(
            f"effective kernel {ke} exceeds padded input {H + 2 * padding}x{W + 2 * padding}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, k, stride, dilation)
    out = np.einsum("bchwij,ocij->bohw", win, weight.data, optimize=True)
    if bias is not None:
        out += bias.data[None, :, None, None]
    Ho, Wo = out.shape[2], out.shape[3]

    def grad_fn(g):
        gw = np.einsum("bchwij,bohw->ocij", win, g, optimize=True)
        gp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                gp[
                    :,
                    :,
                    ki * dilation : ki * dilation + stride * Ho : stride,
                    kj * dilation : kj * dilation + stride * Wo : stride,
                ] += np.einsum("bohw,oc->bchw", g, weight.data[:, :, ki, kj])
        gx = (
            gp[:, :, padding : padding + H, padding : padding + W]
            if padding
            else gp
        )
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        if bias is not None:
            return gx, gw, gb
        return gx, gw

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, grad_fn)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
    padding: int = 1,
) -> Tensor:
    """Transposed conv (scatter form); weight is [in_ch, out_ch, k, k].

    Forward here is exactly the adjoint of ``conv2d``'s input gradient, which
    the inner-product test in the suite checks directly.
    """
    _conv_checks(x, weight, bias, stride, 1, padding, transposed=True)
    B, C, H, W = x.shape
    _, O, kh, kw = weight.shape
    if kh != kw:
        raise ConfigError(f"square kernels only, got {kh}x{kw}")
    k = kh
    Hf = (H - 1) * stride + k
    Wf = (W - 1) * stride + k
    if Hf < 2 * padding or Wf < 2 * padding:
        raise ConfigError(f"padding {padding} larger than produced map {Hf}x{Wf}")
    full = np.zeros((B, O, Hf, Wf), dtype=x.data.dtype)
    for ki in range(k):
        for kj in range(k):
            full[:, :, ki : ki + stride * H : stride, kj : kj + stride * W : stride] += (
                np.einsum("bihw,io->bohw", x.data, weight.data[:, :, ki, kj])
            )
    out = full[:, :, padding : Hf - padding, padding : Wf - padding]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        win = _windows(gfull, k, stride, 1)
        gx = np.einsum("bohwuv,iouv->bihw", win, weight.data, optimize=True)
        gw = np.einsum("bihw,bohwuv->iouv", x.data, win, optimize=True)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        if bias is not None:
            return gx, gw, gb
        return gx, gw

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(np.ascontiguousarray(out), parents, grad_fn)


# -- pooling -----------------------------------------------------------------


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    """Non-overlapping max pooling; kernel must equal stride and divide H, W.

    Ties route the gradient to the first maximum in row-major window order.
    """
    if stride is None:
        stride = kernel
    if kernel != stride:
        raise ConfigError(f"maxpool2d supports kernel == stride only, got {kernel}/{stride}")
    if x.ndim != 4:
        raise ShapeMismatchError(f"maxpool2d expects 4D, got {x.shape}")
    B, C, H, W = x.shape
    if H % kernel or W % kernel:
        raise ShapeMismatchError(
            f"maxpool2d kernel {kernel} must divide spatial dims, got {H}x{W}"
        )
    k = kernel
    Ho, Wo = H // k, W // k
    tiles = (
        x.data.reshape(B, C, Ho, k, Wo, k)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(B, C, Ho, Wo, k * k)
    )
    idx = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gt = np.zeros((B, C, Ho, Wo, k * k), dtype=g.dtype)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gx = (
            gt.reshape(B, C, Ho, Wo, k, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(B, C, H, W)
        )
        return (gx,)

    return _result(np.ascontiguousarray(out), (x,), grad_fn)


def adaptive_maxpool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Max pool to a fixed output grid with floor/ceil window boundaries.

    Window (i, j) covers rows [floor(i*H/out_h), ceil((i+1)*H/out_h)) and the
    analogous column span, so windows tile the input even when sizes do not
    divide evenly.
    """
    if x.ndim != 4:
        raise ShapeMismatchError(f"adaptive_maxpool2d expects 4D, got {x.shape}")
    B, C, H, W = x.shape
    if out_h < 1 or out_w < 1 or out_h > H or out_w > W:
        raise ConfigError(
            f"adaptive pool output {out_h}x{out_w} incompatible with input {H}x{W}"
        )
    out = np.empty((B, C, out_h, out_w), dtype=x.data.dtype)
    arg_r = np.empty((B, C, out_h, out_w), dtype=np.intp)
    arg_c = np.empty((B, C, out_h, out_w), dtype=np.intp)
    bi, ci = np.ogrid[:B, :C]
    for i in range(out_h):
        h0, h1 = (i * H) // out_h, -((-(i + 1) * H) // out_h)
        for j in range(out_w):
            w0, w1 = (j * W) // out_w, -((-(j + 1) * W) // out_w)
            win = x.data[:, :, h0:h1, w0:w1].reshape(B, C, -1)
            am = win.argmax(axis=-1)
            out[:, :, i, j] = win[bi, ci, am]
            arg_r[:, :, i, j] = h0 + am // (w1 - w0)
            arg_c[:, :, i, j] = w0 + am % (w1 - w0)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        bidx = np.broadcast_to(bi[..., None, None], arg_r.shape)
        cidx = np.broadcast_to(ci[..., None, None], arg_r.shape)
        np.add.at(gx, (bidx, cidx, arg_r, arg_c), g)
        return (gx,)

    return _result(out, (x,), grad_fn)


# -- fused losses -------------------------------------------------------------


def logistic_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits, numerically stable.

    ``targets`` is a plain array of 0/1 labels; no gradient flows into it.
    """
    z = logits.data
    t = np.asarray(targets, dtype=z.dtype)
    if z.shape != t.shape:
        raise ShapeMismatchError(f"logistic_loss: logits {z.shape} vs targets {t.shape}")
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per.mean(), dtype=z.dtype)

    def grad_fn(g):
        sig = np.empty_like(z)
        pos = z >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        e = np.exp(z[~pos])
        sig[~pos] = e / (1.0 + e)
        return ((sig - t) * (g / z.size),)

    return _result(out, (logits,), grad_fn)
