"""Minimal dense-tensor engine with reverse-mode gradient accumulation.

Tensors wrap float32 (or float64, for high-precision gradient checks) numpy
arrays. Operations executed inside a :class:`Tape` context record backward
closures; ``Tape.backward`` replays them in exact reverse order. Outside a
tape, operations are plain forward evaluation.

Broadcasting is deliberately narrow: a second operand may be a scalar, a
per-channel vector ``(c,)``, or an array whose dimensions are each equal to
the first operand's or 1 (which covers per-image ``(n, c, 1, 1)`` parameters
and full-resolution parameter maps). Anything else is a shape error.

Every operation verifies its result is finite and raises ``ValueError``
otherwise.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tape",
    "active_tape",
    "tensor",
    "zeros",
    "ones",
    "add",
    "sub",
    "mul",
    "div",
    "pow_",
    "exp",
    "log",
    "sigmoid",
    "relu",
    "minimum",
    "maximum",
    "where",
    "neg",
    "abs_",
    "clamp",
    "tsum",
    "tmean",
    "reshape",
    "slice_",
    "concat",
    "save_tensor",
    "load_tensor",
    "save_container",
    "load_container",
]

_state = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations; confined to one thread.

    Backward visits nodes in exact reverse of recording order. The gradient
    of a leaf never touched by the tape is zero (left as ``None``).
    """

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def record(self, out: "Tensor", backward: Callable[[np.ndarray], None]) -> None:
        out._on_tape = True
        self._nodes.append((out, backward))

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ValueError("backward() expects a scalar loss tensor")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._nodes):
            if out.grad is None:
                continue
            fn(out.grad)

    def __len__(self) -> int:
        return len(self._nodes)


def tape() -> Tape:
    """Open a fresh gradient tape (context manager)."""
    return Tape()


class Tensor:
    """Dense array plus optional gradient buffer.

    Data is immutable by convention after construction; all mutation goes
    through recorded operations.
    """

    __slots__ = ("data", "requires_grad", "grad", "_on_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._on_tape = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        t = active_tape()
        if t is None:
            raise RuntimeError("backward() called with no active tape")
        t.backward(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __pow__(self, other):
        return pow_(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return slice_(self, idx)


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad, dtype=dtype)


def ones(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad, dtype=dtype)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # min/max propagate NaN and expose infinities without allocating a
    # full boolean mask, which matters on full-resolution images
    if arr.size and not (np.isfinite(arr.min()) and np.isfinite(arr.max())):
        raise ValueError(f"non-finite values produced by '{op}'")


def _as_tensor(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _tracked(*ts: Tensor) -> bool:
    if active_tape() is None:
        return False
    return any(t.requires_grad or t._on_tape for t in ts)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._on_tape):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_broadcast(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> None:
    """Allow scalar, per-channel ``(c,)`` against NCHW, or dim-wise {equal, 1}."""
    if b_shape == a_shape or b_shape == () or int(np.prod(b_shape)) == 1:
        return
    if len(a_shape) == 4 and b_shape == (a_shape[1],):
        return  # per-channel vector against NCHW (handled by _chan_view)
    if len(b_shape) <= len(a_shape):
        aligned = a_shape[len(a_shape) - len(b_shape) :]
        if all(bd == ad or bd == 1 or ad == 1 for ad, bd in zip(aligned, b_shape)):
            return
    raise ValueError(f"shapes {a_shape} and {b_shape} are not broadcast-compatible")


def _chan_view(b: np.ndarray, a_shape: tuple[int, ...]) -> np.ndarray:
    # reshape a (c,) vector so it broadcasts over the channel axis of NCHW
    if len(a_shape) == 4 and b.shape == (a_shape[1],):
        return b.reshape(1, -1, 1, 1)
    return b


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    g = grad
    # channel-vector case: sum everything except the channel axis
    if len(shape) == 1 and g.ndim == 4 and shape == (g.shape[1],):
        return g.sum(axis=(0, 2, 3))
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _binary(
    name: str,
    a,
    b,
    fwd: Callable[[np.ndarray, np.ndarray], np.ndarray],
    bwd: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], tuple],
) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_broadcast(a.shape, b.shape) if a.data.size >= b.data.size else _check_broadcast(
        b.shape, a.shape
    )
    bd = _chan_view(b.data, a.shape)
    ad = _chan_view(a.data, b.shape)
    out_data = fwd(ad, bd)
    _check_finite(out_data, name)
    out = Tensor(out_data, dtype=out_data.dtype)
    if _tracked(a, b):

        def backward(g: np.ndarray, a=a, b=b, ad=ad, bd=bd) -> None:
            ga, gb = bwd(g, ad, bd, out.data)
            if ga is not None:
                _accum(a, _unbroadcast(ga, a.shape))
            if gb is not None:
                _accum(b, _unbroadcast(gb, b.shape))

        active_tape().record(out, backward)
    return out


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y, lambda g, x, y, o: (g, g))


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y, lambda g, x, y, o: (g, -g))


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y, lambda g, x, y, o: (g * y, g * x))


def div(a, b) -> Tensor:
    bt = _as_tensor(b)
    if np.any(bt.data == 0):
        raise ValueError("division by a tensor containing zeros")
    return _binary(
        "div",
        a,
        bt,
        lambda x, y: x / y,
        lambda g, x, y, o: (g / y, -g * x / (y * y)),
    )


def pow_(a, b) -> Tensor:
    """Elementwise power.

    Negative bases require an integer exponent. A zero base with positive
    exponent evaluates to 0 with zero gradient for both operands (subgradient
    convention for pure-black pixels).
    """
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    if np.any(ad < 0):
        if not np.all(bd == np.round(bd)):
            raise ValueError("pow with negative base and non-integer exponent")

    def fwd(x, y):
        # 0**E with E > 0 is 0 (numpy's convention already); 0**E with E <= 0
        # produces a non-finite value and is rejected by the finite check.
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.power(x, y)
        return out.astype(out.dtype)

    def bwd(g, x, y, o):
        # negative bases are fine here (the forward already enforced an
        # integer exponent for them); only x == 0 takes the subgradient 0
        nonzero = x != 0
        xs = np.where(nonzero, x, 1.0)
        ga = g * np.broadcast_to(y, o.shape) * np.power(xs, np.asarray(y) - 1.0)
        ga = np.where(np.broadcast_to(nonzero, o.shape), ga, 0.0)
        pos = x > 0
        xp = np.where(pos, x, 1.0)
        gb = g * o * np.log(xp)
        gb = np.where(np.broadcast_to(pos, o.shape), gb, 0.0)
        return ga.astype(o.dtype), gb.astype(o.dtype)

    return _binary("pow", a, b, fwd, bwd)


def minimum(a, b) -> Tensor:
    return _binary(
        "min",
        a,
        b,
        np.minimum,
        lambda g, x, y, o: (
            np.where(np.broadcast_to(x, o.shape) <= np.broadcast_to(y, o.shape), g, 0.0),
            np.where(np.broadcast_to(x, o.shape) > np.broadcast_to(y, o.shape), g, 0.0),
        ),
    )


def maximum(a, b) -> Tensor:
    return _binary(
        "max",
        a,
        b,
        np.maximum,
        lambda g, x, y, o: (
            np.where(np.broadcast_to(x, o.shape) >= np.broadcast_to(y, o.shape), g, 0.0),
            np.where(np.broadcast_to(x, o.shape) < np.broadcast_to(y, o.shape), g, 0.0),
        ),
    )


def _unary(name, a, fwd, bwd) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = fwd(a.data)
    _check_finite(out_data, name)
    out = Tensor(out_data, dtype=out_data.dtype)
    if _tracked(a):

        def backward(g: np.ndarray, a=a) -> None:
            _accum(a, bwd(g, a.data, out.data))

        active_tape().record(out, backward)
    return out


def neg(a) -> Tensor:
    return _unary("neg", a, lambda x: -x, lambda g, x, o: -g)


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda g, x, o: g * o)


def log(a) -> Tensor:
    return _unary("log", a, np.log, lambda g, x, o: g / x)


def sigmoid(a) -> Tensor:
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary("sigmoid", a, fwd, lambda g, x, o: g * o * (1.0 - o))


def relu(a) -> Tensor:
    return _unary("relu", a, lambda x: np.maximum(x, 0.0), lambda g, x, o: g * (x > 0))


def abs_(a) -> Tensor:
    return _unary("abs", a, np.abs, lambda g, x, o: g * np.sign(x))


def where(mask, a, b) -> Tensor:
    """Select ``a`` where mask else ``b``; gradient flows only through the
    selected branch. The mask is a plain boolean array, never differentiated."""
    mask = np.asarray(mask, dtype=bool)
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out_shape = np.broadcast_shapes(mask.shape, a.shape, b.shape)
    out_data = np.where(mask, np.broadcast_to(a.data, out_shape), np.broadcast_to(b.data, out_shape))
    _check_finite(out_data, "where")
    out = Tensor(out_data, dtype=out_data.dtype)
    if _tracked(a, b):
        m = np.broadcast_to(mask, out_shape)

        def backward(g: np.ndarray, a=a, b=b, m=m) -> None:
            _accum(a, _unbroadcast(np.where(m, g, 0.0), a.shape))
            _accum(b, _unbroadcast(np.where(m, 0.0, g), b.shape))

        active_tape().record(out, backward)
    return out


def clamp(a, lo: float, hi: float, straight_through: bool = False) -> Tensor:
    """Clip to ``[lo, hi]``. With ``straight_through`` the gradient passes
    unchanged through clipped regions (used after the denoiser / CCM)."""
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    out = Tensor(out_data, dtype=out_data.dtype)
    if _tracked(a):
        if straight_through:

            def backward(g: np.ndarray, a=a) -> None:
                _accum(a, g)

        else:
            inside = (a.data >= lo) & (a.data <= hi)

            def backward(g: np.ndarray, a=a, inside=inside) -> None:
                _accum(a, g * inside)

        active_tape().record(out, backward)
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    out = Tensor(out_data, dtype=a.dtype)
    if _tracked(a):

        def backward(g: np.ndarray, a=a) -> None:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _accum(a, np.broadcast_to(gg, a.shape).copy())

        active_tape().record(out, backward)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), dtype=a.dtype)
    if _tracked(a):

        def backward(g: np.ndarray, a=a) -> None:
            _accum(a, g.reshape(a.shape))

        active_tape().record(out, backward)
    return out


def slice_(a, idx) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data[idx].copy(), dtype=a.dtype)
    if _tracked(a):

        def backward(g: np.ndarray, a=a, idx=idx) -> None:
            full = np.zeros_like(a.data)
            full[idx] = g
            _accum(a, full)

        active_tape().record(out, backward)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), dtype=ts[0].dtype)
    if _tracked(*ts):
        sizes = [t.shape[axis] for t in ts]

        def backward(g: np.ndarray, ts=ts, sizes=sizes) -> None:
            start = 0
            for t, s in zip(ts, sizes):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, start + s)
                _accum(t, g[tuple(sl)])
                start += s

        active_tape().record(out, backward)
    return out


# ---------------------------------------------------------------------------
# binary tensor file: magic "DTNS", u32 version=1, u32 rank, u32 dims[rank],
# float32 little-endian payload, row-major.
# ---------------------------------------------------------------------------

_MAGIC = b"DTNS"
_CONTAINER_MAGIC = b"DTNC"


def _tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = _MAGIC + struct.pack("<II", 1, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def _tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if buf[offset : offset + 4] != _MAGIC:
        raise ValueError("not a DTNS tensor blob")
    version, rank = struct.unpack_from("<II", buf, offset + 4)
    if version != 1:
        raise ValueError(f"unsupported DTNS version {version}")
    dims = struct.unpack_from(f"<{rank}I", buf, offset + 12)
    start = offset + 12 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(dims)
    return arr.astype(np.float32), start + 4 * count


def save_tensor(path, arr) -> None:
    data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
    with open(path, "wb") as f:
        f.write(_tensor_bytes(data))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, _ = _tensor_from_bytes(buf)
    return arr


def save_container(path, entries: dict[str, np.ndarray | Tensor]) -> None:
    """Named collection of tensors (weight checkpoints)."""
    with open(path, "wb") as f:
        f.write(_CONTAINER_MAGIC + struct.pack("<II", 1, len(entries)))
        for name, value in entries.items():
            data = value.data if isinstance(value, Tensor) else np.asarray(value)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)) + nb)
            f.write(_tensor_bytes(data))


def load_container(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != _CONTAINER_MAGIC:
        raise ValueError("not a DTNC container file")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != 1:
        raise ValueError(f"unsupported DTNC version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        name = buf[offset : offset + nlen].decode("utf-8")
        offset += nlen
        arr, offset = _tensor_from_bytes(buf, offset)
        out[name] = arr
    return out
