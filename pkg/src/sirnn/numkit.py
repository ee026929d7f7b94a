"""Dense arrays with tape-based reverse-mode differentiation.

Only the handful of primitives the dialog models need are provided. Every
primitive checks its operand shapes, refuses non-finite results, and records
a vector-Jacobian product on the innermost active :class:`Tape` when one of
its inputs requires a gradient.

Broadcasting is limited to adding a length-``m`` vector to every column of an
``(m, n)`` matrix. Everything else must match exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ParameterStore", "NonFiniteError", "ShapeError", "TapeError",
    "OPS", "forward_op", "backward", "grad_check", "grad_check_params",
    "matmul", "add", "sub", "mul", "scale", "one_minus", "concat_rows", "slice_rows",
    "take_cols", "sigmoid", "tanh", "log", "clip", "sum_", "max_elementwise_reduce",
    "save_checkpoint", "load_checkpoint",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; operations executed inside the ``with`` block
    whose inputs require gradients are recorded. ``params`` names the leaves
    whose gradients :func:`backward` reports.
    """

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.params = dict(params) if params is not None else None
        self.consumed = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, vjp):
        if self.consumed:
            raise TapeError("tape already consumed")
        self.nodes.append((out, inputs, vjp))


def _active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(kind: str, value: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{kind} produced non-finite values")
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=track)
    if track:
        tape.record(out, inputs, vjp)
    return out


def _same_shape(kind, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``(m,k) @ (k,)`` or ``(m,k) @ (k,n)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, Bm = a.data, b.data

    def vjp(g):
        if Bm.ndim == 1:
            return np.outer(g, Bm), A.T @ g
        return g @ Bm.T, A.T @ g

    return _finish("matmul", A @ Bm, (a, b), vjp)


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a vector added to each column of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _finish("add", a.data + b.data, (a, b), lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[0]:
        return _finish("add", a.data + b.data[:, None], (a, b), lambda g: (g, g.sum(axis=1)))
    raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _finish("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul_elementwise", a, b)
    A, Bm = a.data, b.data
    return _finish("mul_elementwise", A * Bm, (a, b), lambda g: (g * Bm, g * A))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = a.data.dtype.type(c)
    return _finish("scale", a.data * c, (a,), lambda g: (g * c,))


def one_minus(a) -> Tensor:
    a = _as_tensor(a)
    return _finish("one_minus", 1 - a.data, (a,), lambda g: (-g,))


def concat_rows(*parts) -> Tensor:
    """Stack along the first axis (vectors end to end, or matrices with equal column counts)."""
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ShapeError("concat_rows: no inputs")
    tail = parts[0].shape[1:]
    for p in parts[1:]:
        if p.shape[1:] != tail:
            raise ShapeError(f"concat_rows: shape mismatch {parts[0].shape} vs {p.shape}")
    sizes = [p.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _finish("concat_rows", np.concatenate([p.data for p in parts], axis=0), parts, vjp)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"slice: range [{start}, {stop}) invalid for shape {a.shape}")

    def vjp(g):
        out = np.zeros_like(a.data)
        out[start:stop] = g
        return (out,)

    return _finish("slice", a.data[start:stop], (a,), vjp)


def take_cols(a, idx) -> Tensor:
    """Gather columns of a matrix (repeats allowed); the adjoint scatter-adds."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"take_cols: expected matrix and index vector, got {a.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ShapeError(f"take_cols: index out of range for shape {a.shape}")
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])

    def vjp(g):
        out = np.zeros_like(a.data)
        if idx.size:
            # segmented sums over sorted indices handle repeats without np.add.at
            out[:, sorted_idx[starts]] = np.add.reduceat(g[:, order], starts, axis=1)
        return (out,)

    return _finish("take_cols", a.data[:, idx], (a,), vjp)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # split form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return _finish("sigmoid", s, (a,), lambda g: (g * s * (1 - s),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _finish("tanh", t, (a,), lambda g: (g * (1 - t * t),))


def log(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    if (x <= 0).any():
        raise NonFiniteError("log of non-positive value")
    return _finish("log", np.log(x), (a,), lambda g: (g / x,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _finish("clip", np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def sum_(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    if axis is None:
        return _finish("sum", np.asarray(x.sum()), (a,), lambda g: (np.full_like(x, g),))
    if axis != 0:
        raise ShapeError("sum: only axis=None or axis=0 supported")
    return _finish("sum", x.sum(axis=0), (a,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def max_elementwise_reduce(*parts) -> Tensor:
    """Coordinate-wise max over equally shaped tensors; ties route the adjoint to the first."""
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ShapeError("max_elementwise_reduce: no inputs")
    for p in parts[1:]:
        _same_shape("max_elementwise_reduce", parts[0], p)
    stack = np.stack([p.data for p in parts])
    winner = stack.argmax(axis=0)

    def vjp(g):
        return tuple(np.where(winner == i, g, 0).astype(g.dtype) for i in range(len(parts)))

    return _finish("max_elementwise_reduce", stack.max(axis=0), parts, vjp)


OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul_elementwise": mul,
    "scale": scale,
    "one_minus": one_minus,
    "concat_rows": concat_rows,
    "slice": slice_rows,
    "take_cols": take_cols,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "log": log,
    "clip": clip,
    "sum": sum_,
    "max_elementwise_reduce": max_elementwise_reduce,
}


def forward_op(kind: str, inputs: Sequence, **kwargs) -> Tensor:
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Replay the tape in reverse and return ``{name: d loss / d param}``.

    Parameters are ``tape.params`` when given, else every named leaf that
    took part in a recorded op. Parameters the loss never touched get zeros.
    """
    if tape.consumed:
        raise TapeError("tape already consumed")
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
    params = tape.params if tape.params is not None else _named_leaves(tape)
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, vjp in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    tape.nodes.clear()

    result = {}
    for name, p in params.items():
        g = grads.get(id(p))
        result[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.data.dtype)
    return result


def _named_leaves(tape: Tape) -> dict[str, Tensor]:
    outs = {id(o) for o, _, _ in tape.nodes}
    found = {}
    for _, inputs, _ in tape.nodes:
        for t in inputs:
            if t.requires_grad and t.name and id(t) not in outs:
                found[t.name] = t
    return found


# --------------------------------------------------------------------------
# finite-difference checks
# --------------------------------------------------------------------------

def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and central differences."""
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True, name="x")
    with Tape({"x": xt}) as tape:
        out = f(xt)
    analytic = backward(tape, out)["x"]
    if not np.isfinite(analytic).all():
        raise NonFiniteError("non-finite analytic gradient")

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(base.copy())).item()
        flat[i] = orig - eps
        lo = f(Tensor(base.copy())).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (hi - lo) / (2 * eps)
    if not np.isfinite(numeric).all():
        raise NonFiniteError("non-finite finite-difference estimate")
    return _rel_err(analytic, numeric)


def grad_check_params(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                      eps: float = 1e-5, names: Iterable[str] | None = None,
                      max_coords: int | None = None, rng=None) -> dict[str, float]:
    """Per-parameter max relative error for a closure over ``params`` (mutated in place, restored).

    ``max_coords`` caps how many coordinates of each parameter are probed.
    """
    with Tape(params) as tape:
        loss = loss_fn()
    analytic = backward(tape, loss)
    rng = np.random.default_rng(0) if rng is None else rng
    report = {}
    for name in (names if names is not None else params):
        p = params[name].data
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        a = analytic[name].reshape(-1)[coords]
        n = np.empty_like(a)
        for k, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn().item()
            flat[i] = orig - eps
            lo = loss_fn().item()
            flat[i] = orig
            n[k] = (hi - lo) / (2 * eps)
        report[name] = _rel_err(a, n)
    return report


# --------------------------------------------------------------------------
# parameters and checkpoints
# --------------------------------------------------------------------------

class ParameterStore:
    """Named trainable tensors plus named frozen ones (never updated, never differentiated)."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None,
                 frozen: Mapping[str, np.ndarray] | None = None):
        self.params: dict[str, Tensor] = {
            k: Tensor(v, requires_grad=True, name=k) for k, v in (params or {}).items()}
        self.frozen: dict[str, Tensor] = {
            k: Tensor(v, requires_grad=False, name=k) for k, v in (frozen or {}).items()}

    def __getitem__(self, name: str) -> Tensor:
        if name in self.params:
            return self.params[name]
        return self.frozen[name]

    def __contains__(self, name):
        return name in self.params or name in self.frozen

    def names(self) -> list[str]:
        return sorted(self.params)

    @property
    def dtype(self):
        for t in self.params.values():
            return t.dtype
        return np.dtype(np.float64)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.data.copy() for k, v in self.params.items()},
                              {k: v.data.copy() for k, v in self.frozen.items()})

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore({k: v.data.astype(dtype) for k, v in self.params.items()},
                              {k: v.data.astype(dtype) for k, v in self.frozen.items()})

    def to_entries(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data for k, v in sorted(self.params.items())}
        out.update({f"frozen/{k}": v.data for k, v in sorted(self.frozen.items())})
        return out

    @classmethod
    def from_entries(cls, entries: Mapping[str, np.ndarray]) -> "ParameterStore":
        params = {k[len("param/"):]: v for k, v in entries.items() if k.startswith("param/")}
        frozen = {k[len("frozen/"):]: v for k, v in entries.items() if k.startswith("frozen/")}
        return cls(params, frozen)


CHECKPOINT_MAGIC = b"SIRN"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, entries: Mapping[str, np.ndarray]) -> None:
    """Write entries in the container layout documented in the README."""
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<II", CHECKPOINT_VERSION, len(entries))
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint container")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    pos = 12
    entries = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        entries[name] = arr.astype(np.float32)
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after {count} entries")
    return entries
