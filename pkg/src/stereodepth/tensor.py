"""Dense N-D tensors with reverse-mode automatic differentiation.

Every operation is a pure function: it computes its result eagerly with
NumPy (or the compiled kernels) and, when gradients are enabled, records
its parents plus a local backward rule on the output. `Tensor.backward()`
replays those rules in reverse topological order, so two replays over the
same graph produce bitwise-identical gradients.

float32 is the working precision for training and inference; every op
also runs in float64, which the gradient-check tests rely on. Elementwise
arithmetic requires operands of identical shape (or a Python scalar);
there is no implicit broadcasting.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording within the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    """A NumPy array plus an optional gradient buffer and graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() requires a single-element tensor, shape is {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def __repr__(self) -> str:
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad})"

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=np.float32, requires_grad=False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def full(shape, value, dtype=np.float32, requires_grad=False) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=dtype), requires_grad=requires_grad)

    # -- autodiff ---------------------------------------------------------

    def backward(self) -> None:
        """Populate grad on every requires_grad tensor this loss depends on."""
        if self.size != 1:
            raise ValueError(f"backward() requires a scalar loss, shape is {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor with requires_grad=False")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # -- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, recording the graph only while grads are enabled."""
    rg = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = rg
    out._parents = parents if rg else ()
    out._backward_fn = backward_fn if rg else None
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}")


# -- elementwise arithmetic -------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = a.dtype.type(b)
        return _make(a.data + s, (a,), lambda gy: (gy,))
    _check_same_shape(a, b, "add")
    _check_same_dtype("add", a, b)
    return _make(a.data + b.data, (a, b), lambda gy: (gy, gy))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = a.dtype.type(b)
        return _make(a.data - s, (a,), lambda gy: (gy,))
    _check_same_shape(a, b, "sub")
    _check_same_dtype("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda gy: (gy, -gy))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = a.dtype.type(b)
        return _make(a.data * s, (a,), lambda gy: (gy * s,))
    _check_same_shape(a, b, "mul")
    _check_same_dtype("mul", a, b)
    return _make(a.data * b.data, (a, b), lambda gy: (gy * b.data, gy * a.data))


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / b)
    _check_same_shape(a, b, "div")
    _check_same_dtype("div", a, b)
    out = a.data / b.data

    def backward(gy):
        return gy / b.data, -gy * out / b.data

    return _make(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda gy: (-gy,))


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    out = a.data ** p
    return _make(out, (a,), lambda gy: (gy * p * a.data ** (p - 1.0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda gy: (gy * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda gy: (gy / a.data,))


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda gy: (gy * np.sign(a.data),))


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient passes where a >= floor."""
    s = a.dtype.type(floor)
    mask = a.data >= s
    return _make(np.maximum(a.data, s), (a,), lambda gy: (gy * mask,))


def minimum(a: Tensor, ceil: float) -> Tensor:
    """Elementwise min with a constant; gradient passes where a <= ceil."""
    s = a.dtype.type(ceil)
    mask = a.data <= s
    return _make(np.minimum(a.data, s), (a,), lambda gy: (gy * mask,))


def where(condition: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select a where condition holds, else b. condition carries no gradient."""
    _check_same_shape(a, b, "where")
    _check_same_dtype("where", a, b)
    cond = np.asarray(condition, dtype=bool)
    if cond.shape != a.shape:
        raise ShapeError(f"where: condition shape {cond.shape} != operand shape {a.shape}")
    out = np.where(cond, a.data, b.data)
    return _make(out, (a, b), lambda gy: (gy * cond, gy * ~cond))


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    s = a.dtype.type(slope)
    mask = a.data > 0
    out = np.where(mask, a.data, a.data * s)
    return _make(out, (a,), lambda gy: (gy * np.where(mask, a.dtype.type(1), s),))


# -- structure ----------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return _make(np.ascontiguousarray(out), (a,),
                 lambda gy: (gy.reshape(a.shape),))


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; backward scatters into the source shape."""
    out = a.data[index]

    def backward(gy):
        gx = np.zeros_like(a.data)
        gx[index] = gy
        return (gx,)

    return _make(np.ascontiguousarray(out), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    _check_same_dtype("concat", *tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(gy):
        grads = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * gy.ndim
            idx[axis] = slice(int(start), int(stop))
            grads.append(np.ascontiguousarray(gy[tuple(idx)]))
        return grads

    return _make(out, tensors, backward)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)

    def backward(gy):
        if axis is None:
            return (np.broadcast_to(gy, a.shape).astype(a.dtype, copy=True),)
        g = gy if keepdims else np.expand_dims(gy, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _make(out, (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        n = a.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- neural ops ----------------------------------------------------------------

def softmax_axis(a: Tensor, axis: int) -> Tensor:
    """Numerically stabilized softmax along one axis."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax_axis: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(gy):
        inner = (gy * out).sum(axis=axis, keepdims=True)
        return (out * (gy - inner),)

    return _make(out, (a,), backward)


def _check_conv_args(op: str, k: int, stride: int, dilation: int, padding: int) -> None:
    if k % 2 == 0:
        raise ValueError(f"{op}: kernel size must be odd, got {k}")
    if stride < 1:
        raise ValueError(f"{op}: stride must be >= 1, got {stride}")
    if dilation < 1:
        raise ValueError(f"{op}: dilation must be >= 1, got {dilation}")
    if padding < 0:
        raise ValueError(f"{op}: padding must be >= 0, got {padding}")


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[C,H,W] with w[O,C,k,k] plus bias b[O]."""
    if x.ndim != 3 or w.ndim != 4 or b.ndim != 1:
        raise ShapeError(f"conv2d: expected ranks (3,4,1), got ({x.ndim},{w.ndim},{b.ndim})")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: kernel must be square, got {w.shape[2:]}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape[0]} != weight C_in {w.shape[1]}")
    if b.shape[0] != w.shape[0]:
        raise ShapeError(f"conv2d: bias size {b.shape[0]} != C_out {w.shape[0]}")
    _check_same_dtype("conv2d", x, w, b)
    _check_conv_args("conv2d", w.shape[2], stride, dilation, padding)

    out = K.conv2d_forward(x.data, w.data, b.data, stride, dilation, padding)
    if min(out.shape[1:]) < 1:
        raise ShapeError(f"conv2d: empty output {out.shape} for input {x.shape}")

    def backward(gy):
        gx, gw, gb = K.conv2d_backward(x.data, w.data, np.ascontiguousarray(gy),
                                       stride, dilation, padding,
                                       x.requires_grad, w.requires_grad)
        return gx, gw, gb if b.requires_grad else None

    return _make(out, (x, w, b), backward)


def conv3d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[C,D,H,W] with w[O,C,k,k,k] plus bias b[O]."""
    if x.ndim != 4 or w.ndim != 5 or b.ndim != 1:
        raise ShapeError(f"conv3d: expected ranks (4,5,1), got ({x.ndim},{w.ndim},{b.ndim})")
    if not (w.shape[2] == w.shape[3] == w.shape[4]):
        raise ShapeError(f"conv3d: kernel must be cubic, got {w.shape[2:]}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv3d: input channels {x.shape[0]} != weight C_in {w.shape[1]}")
    if b.shape[0] != w.shape[0]:
        raise ShapeError(f"conv3d: bias size {b.shape[0]} != C_out {w.shape[0]}")
    _check_same_dtype("conv3d", x, w, b)
    _check_conv_args("conv3d", w.shape[2], stride, 1, padding)

    out = K.conv3d_forward(x.data, w.data, b.data, stride, padding)
    if min(out.shape[1:]) < 1:
        raise ShapeError(f"conv3d: empty output {out.shape} for input {x.shape}")

    def backward(gy):
        gx, gw, gb = K.conv3d_backward(x.data, w.data, np.ascontiguousarray(gy),
                                       stride, padding,
                                       x.requires_grad, w.requires_grad)
        return gx, gw, gb if b.requires_grad else None

    return _make(out, (x, w, b), backward)


def residual_block2d(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
                     dilation: int = 1, proj_w: Tensor | None = None,
                     proj_b: Tensor | None = None, slope: float = 0.1) -> Tensor:
    """Two same-padded dilated convs with a skip connection.

    The skip path is the identity when input and output channels match;
    otherwise a 1x1 projection (proj_w, proj_b) is required. No activation
    after the add, so zero conv weights make the block an exact identity.
    """
    k = w1.shape[2]
    pad = dilation * (k - 1) // 2
    h = leaky_relu(conv2d(x, w1, b1, stride=1, dilation=dilation, padding=pad), slope)
    h = conv2d(h, w2, b2, stride=1, dilation=dilation, padding=pad)
    if proj_w is None:
        if x.shape[0] != w2.shape[0]:
            raise ShapeError(
                f"residual_block2d: {x.shape[0]} input channels vs {w2.shape[0]} output "
                f"channels requires a projection")
        skip = x
    else:
        skip = conv2d(x, proj_w, proj_b, stride=1, dilation=1, padding=0)
    return add(h, skip)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Align-corners-false bilinear upsampling of [C,H,W] or [H,W] by factor."""
    if factor < 1:
        raise ValueError(f"bilinear_upsample: factor must be >= 1, got {factor}")
    if factor not in (2, 4, 8):
        raise ValueError(f"bilinear_upsample: factor must be one of 2, 4, 8, got {factor}")
    squeeze = x.ndim == 2
    data = x.data[None] if squeeze else x.data
    if data.ndim != 3:
        raise ShapeError(f"bilinear_upsample: expected [C,H,W] or [H,W], got {x.shape}")
    out = K.upsample_bilinear_forward(data, factor)
    in_shape = data.shape

    def backward(gy):
        g = gy[None] if squeeze else gy
        gx = K.upsample_bilinear_backward(g, in_shape, factor)
        return (gx[0] if squeeze else gx,)

    return _make(out[0] if squeeze else out, (x,), backward)


def corr_volume(f_left: Tensor, f_right: Tensor, ndisp: int) -> Tensor:
    """Per-channel correlation volume: v[c,d,y,x] = fl[c,y,x] * fr[c,y,x-d]."""
    if f_left.shape != f_right.shape or f_left.ndim != 3:
        raise ShapeError(f"corr_volume: feature shapes {f_left.shape} vs {f_right.shape}")
    _check_same_dtype("corr_volume", f_left, f_right)
    if ndisp < 1 or ndisp > f_left.shape[2]:
        raise ShapeError(f"corr_volume: ndisp {ndisp} outside [1, width={f_left.shape[2]}]")
    out = K.corr_volume_forward(f_left.data, f_right.data, ndisp)

    def backward(gy):
        return K.corr_volume_backward(f_left.data, f_right.data, gy)

    return _make(out, (f_left, f_right), backward)
