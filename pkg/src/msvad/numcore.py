"""Dense array core with tape-based reverse-mode differentiation.

Values are plain numpy arrays wrapped in :class:`Var`. Operations on Vars that
belong to a :class:`Tape` are recorded in execution order; ``Tape.backward``
walks that record in exact reverse and accumulates adjoints. Vars without a
tape are constants, and operations on them record nothing, which is how
inference runs.

Broadcasting is limited to what the model needs (bias rows, scalars, batched
matrix products); backward passes reduce gradients back to each input's shape.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class NumericError(ArithmeticError):
    """A non-finite value appeared in a recorded computation."""


class TapeError(RuntimeError):
    """The tape was used out of order (e.g. backward called twice)."""


class Var:
    __slots__ = ("value", "tape", "name")
    __array_priority__ = 1000

    def __init__(self, value, tape: "Tape | None" = None, name: str | None = None):
        self.value = np.asarray(value)
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return div(self, other)
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class _Op:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive ops plus the leaf parameters being watched.

    >>> tape = Tape()
    >>> w = tape.watch("w", np.array([[1.0, 2.0]]))
    >>> grads = tape.backward(sum_(w * w) * 0.5)
    >>> grads["w"].tolist()
    [[1.0, 2.0]]
    """

    def __init__(self, check_finite: bool = False):
        self.check_finite = check_finite
        self._ops: list[_Op] = []
        self._params: dict[str, Var] = {}
        self._grads: dict[int, np.ndarray] = {}
        self._used = False

    def __len__(self):
        return len(self._ops)

    def watch(self, name: str, value) -> Var:
        if name in self._params:
            raise TapeError(f"parameter {name!r} is already watched")
        var = Var(value, tape=self, name=name)
        self._params[name] = var
        return var

    def reset(self):
        self._ops.clear()
        self._grads.clear()
        self._params.clear()
        self._used = False

    def record(self, value, inputs, backward) -> Var:
        if self._used:
            raise TapeError("tape already consumed by backward(); call reset()")
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite output from {getattr(backward, '__qualname__', 'op')}")
        out = Var(value, tape=self)
        self._ops.append(_Op(out, inputs, backward))
        return out

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Propagate d(loss)/d(.) through the record; return gradients per watched name."""
        if self._used:
            raise TapeError("backward() called twice without reset()")
        if loss.value.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        self._used = True
        grads = self._grads
        grads[id(loss)] = np.ones_like(loss.value)
        for op in reversed(self._ops):
            g = grads.pop(id(op.out), None)
            if g is None:
                continue
            for var, gi in zip(op.inputs, op.backward(g)):
                if gi is None or var.tape is not self:
                    continue
                key = id(var)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = {}
        for name, var in self._params.items():
            g = grads.get(id(var))
            out[name] = np.zeros_like(var.value) if g is None else np.asarray(g).reshape(var.shape)
        # drop the record now: Var <-> Tape references form a cycle that would
        # otherwise hold every activation until the cyclic GC runs
        grads.clear()
        self._ops.clear()
        self._params.clear()
        return out


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _pair(a, b) -> tuple[Var, Var]:
    # python scalars take the dtype of the other operand (no silent upcast)
    if not isinstance(a, Var) and np.isscalar(a) and isinstance(b, Var):
        a = Var(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Var) and np.isscalar(b) and isinstance(a, Var):
        b = Var(np.asarray(b, dtype=a.dtype))
    return as_var(a), as_var(b)


def _emit(value, inputs, backward) -> Var:
    tape = None
    for v in inputs:
        if v.tape is not None:
            if tape is not None and v.tape is not tape:
                raise TapeError("inputs belong to different tapes")
            tape = v.tape
    if tape is None:
        return Var(value)
    return tape.record(value, inputs, backward)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Var:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.value + b.value, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Var:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.value - b.value, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    a, b = _pair(a, b)
    av, bv = a.value, b.value

    def backward(g):
        ga = unbroadcast(g * bv, av.shape) if a.tape is not None else None
        gb = unbroadcast(g * av, bv.shape) if b.tape is not None else None
        return ga, gb

    return _emit(av * bv, (a, b), backward)


def div(a, b) -> Var:
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    out = av / bv

    def backward(g):
        return unbroadcast(g / bv, av.shape), unbroadcast(-g * out / bv, bv.shape)

    return _emit(out, (a, b), backward)


def relu(x) -> Var:
    x = as_var(x)
    keep = x.value > 0
    return _emit(np.where(keep, x.value, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * keep,))


def sigmoid(x) -> Var:
    x = as_var(x)
    v = x.value
    # split on sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(v.dtype, copy=False)
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),))


def log(x) -> Var:
    x = as_var(x)
    v = x.value
    return _emit(np.log(v), (x,), lambda g: (g / v,))


def clip(x, lo: float, hi: float) -> Var:
    x = as_var(x)
    v = x.value
    inside = (v > lo) & (v < hi)
    return _emit(np.clip(v, lo, hi), (x,), lambda g: (g * inside,))


def dropout(x, rate: float, rng: np.random.Generator | None, train: bool) -> Var:
    """Inverted dropout; identity when ``train`` is false or ``rate`` is 0."""
    x = as_var(x)
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    keep = (rng.random(x.shape, dtype=dtype) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _emit(x.value * keep, (x,), lambda g: (g * keep,))


# -- reductions and shape ---------------------------------------------------

def sum_(x, axis=None, keepdims=False) -> Var:
    x = as_var(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit(x.value.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Var:
    x = as_var(x)
    shape = x.shape
    if axis is None:
        n = x.value.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([shape[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape),)

    return _emit(x.value.mean(axis=axis, keepdims=keepdims), (x,), backward)


def cummean(x, axis: int) -> Var:
    """Running mean along ``axis``: out[t] = mean(x[0..t])."""
    x = as_var(x)
    axis = axis % x.ndim
    n = x.shape[axis]
    counts_shape = [1] * x.ndim
    counts_shape[axis] = n
    counts = np.arange(1, n + 1, dtype=x.dtype).reshape(counts_shape)

    def backward(g):
        scaled = g / counts
        return (np.flip(np.cumsum(np.flip(scaled, axis), axis=axis), axis),)

    return _emit(np.cumsum(x.value, axis=axis) / counts, (x,), backward)


def reshape(x, shape) -> Var:
    x = as_var(x)
    old = x.shape
    return _emit(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Var:
    x = as_var(x)
    if not axes:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _emit(x.value.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def swap_last(x) -> Var:
    x = as_var(x)
    return _emit(np.swapaxes(x.value, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(x, index) -> Var:
    x = as_var(x)
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _emit(x.value[index], (x,), backward)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(xs, axis: int = -1) -> Var:
    xs = [as_var(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _emit(np.concatenate([x.value for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Var:
    """Matrix product with batch broadcasting over leading axes.

    Adjoints are dA = dC @ B^T and dB = A^T @ dC, reduced over broadcast
    batch axes.
    """
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if av.ndim < 1 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

    def backward(g):
        ga = gb = None
        if a.tape is not None:
            ga = unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        if b.tape is not None:
            if bv.ndim == 2:
                k, n = bv.shape
                gb = av.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _emit(av @ bv, (a, b), backward)


def softmax(x, mask=None, axis: int = -1) -> Var:
    """Max-subtracted softmax along ``axis``.

    ``mask`` is a boolean array broadcastable to ``x``; True marks entries
    that are excluded and receive probability exactly 0.
    """
    x = as_var(x)
    v = x.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        if np.any(mask.all(axis=axis)):
            raise ValueError("softmax row is fully masked")
        v = np.where(mask, -np.inf, v)
    out = v - v.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def backward(g):
        gout = g * out
        gout -= out * gout.sum(axis=axis, keepdims=True)
        return (gout,)

    return _emit(out, (x,), backward)


def layernorm(x, gain, bias, eps: float = 1e-5) -> Var:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_var(x), as_var(gain), as_var(bias)
    v = x.value
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gain.value
    d = v.shape[-1]

    def backward(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        ggain = (g * xhat).reshape(-1, d).sum(axis=0).reshape(gv.shape)
        gbias = g.reshape(-1, d).sum(axis=0).reshape(bias.shape)
        return dx, ggain, gbias

    return _emit(xhat * gv + bias.value, (x, gain, bias), backward)


# -- checkpoint container -----------------------------------------------------

def save_container(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write a flat ``name -> array`` container with a JSON header to ``path`` (.npz)."""
    header = dict(meta, version=CHECKPOINT_VERSION, names=sorted(arrays))
    payload = {f"a:{k}": np.ascontiguousarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise ValueError(f"{path}: not a checkpoint container")
        meta = json.loads(data["__meta__"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported container version {meta.get('version')}")
        arrays = {k[2:]: data[k].copy() for k in data.files if k.startswith("a:")}
    return arrays, meta
