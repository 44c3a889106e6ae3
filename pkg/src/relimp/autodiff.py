"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tape` records every operation whose inputs are attached to it.
Operations on tensors that are not attached to the active tape run eagerly
and record nothing, so the same model code serves training and inference.

    tape = Tape()
    with tape:
        w = tape.leaf(np.ones((3, 2)))
        loss = (x @ w).sigmoid().sum()
    grads = tape.backward(loss)
    grads[w]
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Pullback = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_active: "Tape | None" = None


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """Dense float64 array, optionally linked to a node on a recording tape."""

    __slots__ = ("data", "node", "tape")
    __array_priority__ = 100

    def __init__(self, data, node: int | None = None, tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p: float):
        return power(self, p)

    def __neg__(self):
        return multiply(self, -1.0)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Gradients(dict):
    """Mapping node id -> gradient array; also indexable by the leaf Tensor."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__getitem__(key)


class Tape:
    """Append-only record of operations; insertion order is a topological order."""

    def __init__(self, debug: bool = False):
        self.debug = debug
        self.kinds: list[str] = []
        self.inputs: list[tuple[int | None, ...]] = []
        self.pullbacks: list[Pullback | None] = []
        self.shapes: list[tuple[int, ...]] = []
        self._prev: Tape | None = None

    def __len__(self) -> int:
        return len(self.kinds)

    def __enter__(self) -> "Tape":
        global _active
        self._prev, _active = _active, self
        return self

    def __exit__(self, *exc) -> None:
        global _active
        _active = self._prev
        self._prev = None

    def reset(self) -> None:
        self.kinds.clear()
        self.inputs.clear()
        self.pullbacks.clear()
        self.shapes.clear()

    def _append(self, kind, inputs, pullback, shape) -> int:
        self.kinds.append(kind)
        self.inputs.append(inputs)
        self.pullbacks.append(pullback)
        self.shapes.append(shape)
        return len(self.kinds) - 1

    def leaf(self, value) -> Tensor:
        data = np.array(value, dtype=np.float64)
        node = self._append("leaf", (), None, data.shape)
        return Tensor(data, node, self)

    def owns(self, t: Tensor) -> bool:
        return t.tape is self and t.node is not None

    def backward(self, loss: Tensor) -> Gradients:
        """Gradient of a scalar ``loss`` w.r.t. every leaf on this tape.

        Leaves the loss does not depend on receive zero gradients.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        if not self.owns(loss):
            raise ValueError("backward: loss is not recorded on this tape")
        acc: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape)}
        out = Gradients()
        for nid in range(loss.node, -1, -1):
            g = acc.pop(nid, None)
            if self.kinds[nid] == "leaf":
                out[nid] = g if g is not None else np.zeros(self.shapes[nid])
                continue
            if g is None:
                continue
            for src, gi in zip(self.inputs[nid], self.pullbacks[nid](g)):
                if src is None or gi is None:
                    continue
                if src in acc:
                    acc[src] = acc[src] + gi
                else:
                    acc[src] = gi
        for nid in range(loss.node + 1, len(self.kinds)):
            if self.kinds[nid] == "leaf":
                out[nid] = np.zeros(self.shapes[nid])
        return out


def active_tape() -> "Tape | None":
    return _active


def _record(kind: str, out: np.ndarray, inputs: Sequence[Tensor], pullback: Pullback) -> Tensor:
    tape = _active
    if tape is not None and tape.debug and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{kind}: non-finite value in output of shape {out.shape}")
    if tape is None or not any(tape.owns(t) for t in inputs):
        return Tensor(out)
    ids = tuple(t.node if tape.owns(t) else None for t in inputs)
    node = tape._append(kind, ids, pullback, out.shape)
    return Tensor(out, node, tape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(kind: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# -- binary elementwise ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("multiply", a.data, b.data)
    x, y = a.data, b.data
    return _record("multiply", x * y, (a, b),
                   lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))


def divide(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("divide", a.data, b.data)
    x, y = a.data, b.data
    out = x / y
    return _record("divide", out, (a, b),
                   lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)))


def matmul(a, b) -> Tensor:
    """``a (..., k) @ b (k, m)``, or a batched matmul with equal leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    x, w = a.data, b.data
    if x.ndim < 1 or w.ndim < 2 or x.shape[-1] != w.shape[-2] or (
        w.ndim > 2 and x.shape[:-2] != w.shape[:-2]
    ):
        raise ShapeError(f"matmul: incompatible shapes {x.shape} and {w.shape}")
    out = x @ w
    if w.ndim == 2:
        def pullback(g):
            gx = g @ w.T
            gw = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, w.shape[-1])
            return gx, gw
    else:
        def pullback(g):
            return g @ np.swapaxes(w, -1, -2), np.swapaxes(x, -1, -2) @ g
    return _record("matmul", out, (a, b), pullback)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record("power", x ** p, (a,), lambda g: (g * p * x ** (p - 1),))


# -- unary elementwise -----------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow to inf yields the correct limit 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record("log", np.log(x), (a,), lambda g: (g / x,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _record("exp", y, (a,), lambda g: (g * y,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp; the gradient passes only where the value was inside [lo, hi]."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _record("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _record("softmax", y, (a,),
                   lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _record("log_softmax", y, (a,),
                   lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# -- reductions and structural ops -----------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def pullback(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record("sum", np.asarray(out), (a,), pullback)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([shape[ax] for ax in axes]))

    def pullback(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape),)

    return _record("mean", np.asarray(out), (a,), pullback)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    ax = axis % ts[0].ndim
    lead = [t.shape[:ax] + t.shape[ax + 1:] for t in ts]
    if any(s != lead[0] for s in lead):
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)
    return _record("concat", out, ts, lambda g: np.split(g, sizes, axis=ax))


def slice_(a, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    a = as_tensor(a)
    shape = a.shape
    out = a.data[index]

    def pullback(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _record("slice", np.array(out), (a,), pullback)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(old),))


def take(a, index: np.ndarray) -> Tensor:
    """Gather rows along axis 0 with an integer index array of any shape."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape
    out = a.data[index]

    def pullback(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _record("take", out, (a,), pullback)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if any(t.shape != ts[0].shape for t in ts):
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}")
    out = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)
    return _record("stack", out, ts,
                   lambda g: [np.take(g, i, axis=axis) for i in range(n)])


def lstm_seq(xw, Wh, b) -> Tensor:
    """Final hidden state of a zero-initialised LSTM run over a whole sequence.

    ``xw`` is the precomputed input projection (T, M, 4H); gate order is
    input, forget, output, cell candidate. Equivalent to chaining
    ``layers.lstm_cell`` but recorded as one node with a hand-written BPTT.
    """
    xw, Wh, b = as_tensor(xw), as_tensor(Wh), as_tensor(b)
    T, M, G = xw.shape
    H = Wh.shape[0]
    if G != 4 * H or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_seq: incompatible shapes {xw.shape}, {Wh.shape}, {b.shape}")
    W, bias = Wh.data, b.data
    h = np.zeros((M, H))
    c = np.zeros((M, H))
    hs, cs, acts = [h], [c], []
    for t in range(T):
        z = xw.data[t] + h @ W + bias
        sg = _sigmoid(z[:, : 3 * H])
        g = np.tanh(z[:, 3 * H:])
        i, f, o = sg[:, :H], sg[:, H: 2 * H], sg[:, 2 * H:]
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        acts.append((i, f, o, g, tc))
        hs.append(h)
        cs.append(c)

    def pullback(gh):
        gxw = np.empty((T, M, G))
        gW = np.zeros_like(W)
        dh = gh
        dc = np.zeros((M, H))
        for t in range(T - 1, -1, -1):
            i, f, o, g, tc = acts[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cs[t]
            dz = gxw[t]
            dz[:, :H] = di * i * (1.0 - i)
            dz[:, H: 2 * H] = df * f * (1.0 - f)
            dz[:, 2 * H: 3 * H] = do * o * (1.0 - o)
            dz[:, 3 * H:] = dg * (1.0 - g * g)
            gW += hs[t].T @ dz
            dh = dz @ W.T
            dc = dc * f
        return gxw, gW, gxw.sum(axis=(0, 1))

    return _record("lstm_seq", h, (xw, Wh, b), pullback)


OPS: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "multiply": multiply,
    "divide": divide,
    "matmul": matmul,
    "power": power,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "clip": clip,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "sum": sum_,
    "mean": mean,
    "concat": concat,
    "slice": slice_,
    "reshape": reshape,
    "take": take,
    "stack": stack,
    "lstm_seq": lstm_seq,
}


def record_op(kind: str, *inputs, **attrs) -> Tensor:
    """Dispatch an operation by name; records it when an input is on the active tape."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    return tape.backward(loss)


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return _sigmoid(np.asarray(x, dtype=np.float64))
