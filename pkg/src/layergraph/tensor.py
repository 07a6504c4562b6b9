"""Dense row-major tensors and the numeric primitives the layers need.

A :class:`Tensor` is an immutable value: a read-only numpy buffer with one
of three element types. The functions below check shapes and dtypes up
front and raise the library's own errors, so callers never see numpy
broadcasting or silent casts.
"""
from __future__ import annotations

import hashlib
import math
from pathlib import Path

import numpy as np

from .errors import DomainError, DtypeMismatch, IndexOutOfRange, InvalidRange, ShapeMismatch

float32 = np.dtype(np.float32)
float64 = np.dtype(np.float64)
int64 = np.dtype(np.int64)

DTYPES = {"float32": float32, "float64": float64, "int64": int64}
DEFAULT_DTYPE = float32


def as_dtype(dtype) -> np.dtype:
    if dtype is None:
        return DEFAULT_DTYPE
    if isinstance(dtype, str):
        try:
            return DTYPES[dtype]
        except KeyError:
            raise DtypeMismatch(f"unsupported dtype {dtype!r}") from None
    dt = np.dtype(dtype)
    if dt not in DTYPES.values():
        raise DtypeMismatch(f"unsupported dtype {dt}")
    return dt


class Tensor:
    """Immutable n-dimensional array. Axis 0 is the batch axis by convention."""

    __slots__ = ("_data",)

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data._data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype.kind in "iub":
                dt = int64
            elif arr.dtype == float64 and isinstance(data, (np.ndarray, np.generic)):
                dt = float64
            else:
                dt = DEFAULT_DTYPE
        else:
            dt = as_dtype(dtype)
        arr = np.array(data, dtype=dt, copy=True, order="C")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal fast path: arr is freshly computed and owned by the new tensor
        t = object.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        t._data = arr
        return t

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying row-major buffer."""
        return self._data

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self):
        return self._data.item()

    def tolist(self):
        return self._data.tolist()

    def bitwise_equal(self, other: "Tensor") -> bool:
        return (
            self.shape == other.shape
            and self.dtype == other.dtype
            and self._data.tobytes() == other._data.tobytes()
        )

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self._data.astype(dtype)
        return self._data

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        body = np.array2string(self._data, precision=6, separator=", ")
        return f"Tensor({body}, dtype={self.dtype.name})"


def as_tensor(value, dtype=None) -> Tensor:
    """Convert ``value`` to a tensor.

    Raw arrays and lists are cast to ``dtype``; an existing tensor must
    already have it.
    """
    if isinstance(value, Tensor):
        if dtype is not None and value.dtype != as_dtype(dtype):
            raise DtypeMismatch(f"expected {as_dtype(dtype).name}, got {value.dtype.name}")
        return value
    return Tensor(value, dtype)


def _same_dtype(a: Tensor, b: Tensor, op: str):
    if a.dtype != b.dtype:
        raise DtypeMismatch(f"{op}: mixed dtypes {a.dtype.name} and {b.dtype.name}")


def _float(x: Tensor, op: str):
    if x.dtype.kind != "f":
        raise DtypeMismatch(f"{op} requires a floating tensor, got {x.dtype.name}")


# -- construction -------------------------------------------------------------

def zeros(shape, dtype=None) -> Tensor:
    return Tensor._wrap(np.zeros(tuple(shape), dtype=as_dtype(dtype)))


def ones(shape, dtype=None) -> Tensor:
    return Tensor._wrap(np.ones(tuple(shape), dtype=as_dtype(dtype)))


def cast(x: Tensor, dtype) -> Tensor:
    dt = as_dtype(dtype)
    if x.dtype == dt:
        return x
    return Tensor._wrap(x.data.astype(dt))


def derive_seed(seed: int, *keys) -> int:
    """Split a 64-bit seed into an independent child seed named by ``keys``."""
    text = "/".join([str(int(seed))] + [str(k) for k in keys]).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def random_uniform(shape, low=0.0, high=1.0, seed=0, dtype=None) -> Tensor:
    """Uniform samples in ``[low, high)``; a pure function of its arguments.

    Uses the counter-based Philox generator keyed by ``seed``.
    """
    if not low < high:
        raise InvalidRange(f"random_uniform needs low < high, got [{low}, {high})")
    dt = as_dtype(dtype)
    if dt.kind != "f":
        raise DtypeMismatch(f"random_uniform requires a floating dtype, got {dt.name}")
    gen = np.random.Generator(np.random.Philox(key=int(seed) % (1 << 64)))
    u = gen.random(tuple(shape), dtype=np.float64)
    out = (low + (high - low) * u).astype(dt)
    # casting or the affine map can round up onto `high`
    top = np.nextafter(dt.type(high), dt.type(low))
    np.minimum(out, top, out=out)
    np.maximum(out, dt.type(low), out=out)
    return Tensor._wrap(out)


# -- binary ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    _same_dtype(a, b, "matmul")
    return Tensor._wrap(a.data @ b.data)


def add_broadcast(a: Tensor, b: Tensor) -> Tensor:
    """Same-shape sum, or ``b`` rank-1 replicated over the leading axes of ``a``."""
    _same_dtype(a, b, "add")
    if a.shape != b.shape and not (b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]):
        raise ShapeMismatch(f"cannot add shapes {a.shape} and {b.shape}")
    return Tensor._wrap(a.data + b.data)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b, "add")
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot add shapes {a.shape} and {b.shape}")
    return Tensor._wrap(a.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b, "sub")
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot subtract shapes {a.shape} and {b.shape}")
    return Tensor._wrap(a.data - b.data)


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b, "mul")
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot multiply shapes {a.shape} and {b.shape}")
    return Tensor._wrap(a.data * b.data)


def scalar_mul(x: Tensor, s) -> Tensor:
    return Tensor._wrap(x.data * x.dtype.type(s))


# -- unary -------------------------------------------------------------------

def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + z), z / (1 + z)).astype(x.dtype, copy=False)


def _log(x):
    if np.any(x <= 0):
        bad = x[x <= 0].flat[0]
        raise DomainError(f"log of non-positive element {bad}")
    return np.log(x)


UNARY = {
    "identity": lambda x: x.copy(),
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, x.dtype.type(0)),
    "sigmoid": _sigmoid,
    "exp": np.exp,
    "log": _log,
    "neg": np.negative,
}


def elementwise_unary(op: str, x: Tensor) -> Tensor:
    try:
        fn = UNARY[op]
    except KeyError:
        raise DomainError(f"unknown elementwise op {op!r}") from None
    if op != "identity" and op != "neg":
        _float(x, op)
    with np.errstate(over="ignore"):
        return Tensor._wrap(fn(x.data))


def tanh(x):
    return elementwise_unary("tanh", x)


def relu(x):
    return elementwise_unary("relu", x)


def sigmoid(x):
    return elementwise_unary("sigmoid", x)


def exp(x):
    return elementwise_unary("exp", x)


def log(x):
    return elementwise_unary("log", x)


def neg(x):
    return elementwise_unary("neg", x)


# -- shape and reductions ----------------------------------------------------------

def transpose_2d(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeMismatch(f"transpose_2d expects rank 2, got {x.shape}")
    return Tensor._wrap(x.data.T)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != x.size:
        raise ShapeMismatch(f"cannot reshape {x.shape} to {shape}")
    return Tensor._wrap(x.data.reshape(shape))


def _axis(x: Tensor, axis):
    if axis is None:
        return None
    if not -x.ndim <= axis < x.ndim:
        raise ShapeMismatch(f"axis {axis} out of range for rank {x.ndim}")
    return axis


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    return Tensor._wrap(np.asarray(np.sum(x.data, axis=_axis(x, axis)), dtype=x.dtype))


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    _float(x, "reduce_mean")
    return Tensor._wrap(np.asarray(np.mean(x.data, axis=_axis(x, axis)), dtype=x.dtype))


def argmax(x: Tensor, axis=-1) -> Tensor:
    return Tensor._wrap(np.argmax(x.data, axis=_axis(x, axis)).astype(int64))


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis in the log-sum-exp stabilized form."""
    _float(x, "log_softmax")
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    return Tensor._wrap(shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True)))


def softmax(x: Tensor) -> Tensor:
    _float(x, "softmax")
    shifted = np.exp(x.data - np.max(x.data, axis=-1, keepdims=True))
    return Tensor._wrap(shifted / np.sum(shifted, axis=-1, keepdims=True))


def gather_rows(table: Tensor, indices: Tensor) -> Tensor:
    if table.ndim != 2:
        raise ShapeMismatch(f"gather_rows table must be rank 2, got {table.shape}")
    if indices.dtype != int64:
        raise DtypeMismatch(f"indices must be int64, got {indices.dtype.name}")
    if indices.ndim not in (1, 2):
        raise ShapeMismatch(f"indices must be rank 1 or 2, got {indices.shape}")
    v = table.shape[0]
    bad = (indices.data < 0) | (indices.data >= v)
    if np.any(bad):
        raise IndexOutOfRange(f"index {int(indices.data[bad].flat[0])} outside table of {v} rows")
    return Tensor._wrap(table.data[indices.data])


def scatter_add_rows(n_rows: int, indices: Tensor, rows: Tensor) -> Tensor:
    """Inverse of :func:`gather_rows` for gradients: sums ``rows`` into a zero table."""
    d = rows.shape[-1]
    out = np.zeros((n_rows, d), dtype=rows.dtype)
    np.add.at(out, indices.data.reshape(-1), rows.data.reshape(-1, d))
    return Tensor._wrap(out)


def all_finite(x: Tensor) -> bool:
    return bool(np.all(np.isfinite(x.data)))


# -- text round-trip ------------------------------------------------------------

def format_tensor(x: Tensor) -> str:
    """Render in the ``.tsr`` text layout: dims line, then one line per last-axis row."""
    if x.dtype == int64:
        fmt = str
    elif x.dtype == float32:
        fmt = lambda v: format(float(v), ".9g")  # noqa: E731
    else:
        fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    lines = [" ".join(str(d) for d in x.shape)]
    if x.ndim == 0:
        lines.append(fmt(x.data.item()))
    elif x.size:
        rows = x.data.reshape(-1, x.shape[-1])
        lines.extend(" ".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def parse_tensor(text: str, dtype=None) -> Tensor:
    lines = text.splitlines()
    if lines and lines[0].strip() == "version: 1":
        lines = lines[1:]  # tolerated on read, never written
    if not lines:
        raise ValueError("empty tensor text")
    dims = tuple(int(d) for d in lines[0].split())
    dt = as_dtype(dtype)
    values = " ".join(lines[1:]).split()
    n = math.prod(dims)
    if len(values) != n:
        raise ShapeMismatch(f"tensor text declares {dims} ({n} values) but holds {len(values)}")
    conv = int if dt == int64 else float
    return Tensor(np.array([conv(v) for v in values], dtype=dt).reshape(dims), dt)


def save(x: Tensor, path) -> None:
    Path(path).write_text(format_tensor(x), encoding="utf-8")


def load(path, dtype=None) -> Tensor:
    return parse_tensor(Path(path).read_text(encoding="utf-8"), dtype)
