"""Dense float64 tensors with a reverse-mode differentiation tape.

A ``Tensor`` is an immutable wrapper around a C-contiguous float64 array.
Tensors created through ``Tape.leaf`` (or produced by an op with at least one
taped input) are recorded on that tape; everything else is a constant.

    tape = Tape()
    w = tape.leaf([[0.5], [-1.0]])
    loss = mean(log(sigmoid(matmul(x, w))))
    grads = tape.backward(loss)
    grads[w]
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

LOG_FLOOR = 1e-12
LEAKY_SLOPE = 0.2
# sigmoid outputs are kept inside the open interval (0, 1)
SIGMOID_MIN = np.finfo(np.float64).tiny
SIGMOID_MAX = 1.0 - np.finfo(np.float64).epsneg


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An op received (or would produce) values outside its domain."""


class ContractError(ValueError):
    """A caller broke an op's precondition."""


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional["Tape"] = None, node: int = -1, _check: bool = True):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr is data:
            arr = arr.view()
        if _check and not np.isfinite(arr).all():
            raise DomainError("tensor entries must be finite")
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self) -> str:
        where = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={list(self.shape)}{where})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {list(t.shape)}")


VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable computations.

    Node ids are assigned in insertion order, which is also a valid
    topological order; backward walks the nodes in reverse and accumulates
    parent gradients in that fixed order.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[Optional[VJP]] = []
        self.kinds: list[str] = []

    def __len__(self) -> int:
        return len(self.values)

    def leaf(self, data) -> Tensor:
        t = data if isinstance(data, Tensor) else Tensor(data)
        return self._record("leaf", t.data, (), None)

    def _record(self, kind: str, value: np.ndarray, parents: tuple, vjp: Optional[VJP]) -> Tensor:
        node = len(self.values)
        value = np.asarray(value)
        out = Tensor.__new__(Tensor)
        value.flags.writeable = False
        out.data = value
        out.tape = self
        out.node = node
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjp)
        self.kinds.append(kind)
        return out

    def backward(self, root: Tensor) -> "Gradients":
        if root.tape is not self:
            raise ContractError("root tensor was not recorded on this tape")
        if root.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {list(root.shape)}")
        grads: list[Optional[np.ndarray]] = [None] * len(self.values)
        grads[root.node] = np.ones_like(self.values[root.node])
        for i in range(root.node, -1, -1):
            g = grads[i]
            vjp = self.vjps[i]
            if g is None or vjp is None:
                continue
            for p, gp in zip(self.parents[i], vjp(g)):
                if p < 0 or gp is None:
                    continue
                grads[p] = gp if grads[p] is None else grads[p] + gp
        return Gradients(self, grads)


class Gradients:
    """Result of ``Tape.backward``: gradient lookup by tensor."""

    def __init__(self, tape: Tape, grads: list):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.tape is not self._tape:
            raise ContractError("tensor is not on the differentiated tape")
        g = self._grads[t.node]
        return np.zeros_like(t.data) if g is None else g

    def reached(self, t: Tensor) -> bool:
        return t.tape is self._tape and self._grads[t.node] is not None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*ts: Tensor) -> Optional[Tape]:
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands live on different tapes")
            tape = t.tape
    return tape


def _emit(kind: str, value: np.ndarray, inputs: tuple, vjp: VJP) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        value = np.asarray(value)
        out = Tensor.__new__(Tensor)
        value.flags.writeable = False
        out.data = value
        out.tape = None
        out.node = -1
        return out
    parents = tuple(t.node if t.tape is tape else -1 for t in inputs)
    return tape._record(kind, value, parents, vjp)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul of {list(a.shape)} by {list(b.shape)}")
    A, B = a.data, b.data
    need_a, need_b = a.tape is not None, b.tape is not None

    def vjp(g):
        return (g @ B.T if need_a else None, A.T @ g if need_b else None)

    return _emit("matmul", A @ B, (a, b), vjp)


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` with ``b`` (shape [out]) added to every row."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"affine of {list(x.shape)} by {list(w.shape)}")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"bias shape {list(b.shape)} does not match {w.shape[1]} outputs")
    X, W = x.data, w.data
    need_x, need_w, need_b = x.tape is not None, w.tape is not None, b.tape is not None

    def vjp(g):
        return (
            g @ W.T if need_x else None,
            X.T @ g if need_w else None,
            g.sum(axis=0) if need_b else None,
        )

    return _emit("affine", X @ W + b.data, (x, w, b), vjp)


# ---------------------------------------------------------------- elementwise


def _binary_operands(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape and b.size != 1 and a.size != 1:
        raise DimensionError(f"elementwise op on {list(a.shape)} and {list(b.shape)}")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    A, B = a.data, b.data
    return _emit("mul", A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit("relu", np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, alpha: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    x = a.data
    mask = x > 0
    y = np.maximum(x, alpha * x) if 0.0 <= alpha <= 1.0 else np.where(mask, x, alpha * x)
    return _emit("leaky_relu", y, (a,), lambda g: (g * (mask * (1.0 - alpha) + alpha),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(y, SIGMOID_MIN, SIGMOID_MAX)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def log(a) -> Tensor:
    """Natural log of ``max(a, LOG_FLOOR)``; values floored get zero gradient."""
    a = as_tensor(a)
    x = a.data
    if np.isnan(x).any() or (x < 0).any():
        raise DomainError("log of a negative or NaN value")
    u = np.maximum(x, LOG_FLOOR)
    live = x >= LOG_FLOOR
    return _emit("log", np.log(u), (a,), lambda g: (np.where(live, g / u, 0.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    if not np.isfinite(y).all():
        raise DomainError("exp overflowed")
    return _emit("exp", y, (a,), lambda g: (g * y,))


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "neg": neg,
    "scale": scale,
}


def elementwise(a, kind: str, *args) -> Tensor:
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, *args)


# ---------------------------------------------------------------- reductions


def _reduce_axis(axis):
    if axis in (None, "all"):
        return None
    if axis in (1, "row", "per-row"):
        return 1
    raise ContractError(f"unsupported reduction axis {axis!r}")


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    ax = _reduce_axis(axis)
    shape = a.shape
    if ax is None:
        return _emit("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))
    return _emit("sum", a.data.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], shape[1], axis=1),))


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    ax = _reduce_axis(axis)
    shape = a.shape
    if ax is None:
        n = a.size
        return _emit("mean", np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))
    k = shape[1]
    return _emit("mean", a.data.mean(axis=1), (a,), lambda g: (np.repeat(g[:, None] / k, k, axis=1),))


def l2_norm_sq(a, axis=None) -> Tensor:
    a = as_tensor(a)
    ax = _reduce_axis(axis)
    x = a.data
    if ax is None:
        return _emit("l2_norm_sq", np.asarray(np.dot(x.ravel(), x.ravel())), (a,), lambda g: (2.0 * float(g) * x,))
    return _emit("l2_norm_sq", np.einsum("ij,ij->i", x, x), (a,), lambda g: (2.0 * g[:, None] * x,))


def reduce(a, kind: str, axis=None) -> Tensor:
    fns = {"sum": sum, "mean": mean, "l2_norm_sq": l2_norm_sq}
    if kind not in fns:
        raise ContractError(f"unknown reduction {kind!r}")
    return fns[kind](a, axis)


# ---------------------------------------------------------------- row plumbing


def concat_rows(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise DimensionError("concat_rows needs equal trailing shapes")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _emit("concat_rows", np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp)


def rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _emit("rows", a.data[start:stop].copy(), (a,), vjp)


# ---------------------------------------------------------------- fused MLP


def _hidden_act(kind: str, x: np.ndarray, alpha: float) -> np.ndarray:
    if kind == "leaky_relu":
        return np.maximum(x, alpha * x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    raise ContractError(f"unknown hidden activation {kind!r}")


def _hidden_deriv(kind: str, pre: np.ndarray, post: np.ndarray, alpha: float) -> np.ndarray:
    # arithmetic on the mask is several times faster than np.where here
    if kind == "leaky_relu":
        return (pre > 0) * (1.0 - alpha) + alpha
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    return 1.0 - post * post


def mlp(x, weights: Sequence, biases: Sequence, hidden: str = "leaky_relu",
        output: str = "identity", alpha: float = LEAKY_SLOPE) -> Tensor:
    """Whole MLP forward as one tape node.

    Numerically the same composition as ``affine`` followed by the activation
    ops, but recorded once, which keeps per-step tape overhead small.
    """
    x = as_tensor(x)
    ws = [as_tensor(w) for w in weights]
    bs = [as_tensor(b) for b in biases]
    h = x.data
    if h.ndim != 2 or h.shape[1] != ws[0].shape[0]:
        raise DimensionError(f"mlp input {list(h.shape)} does not fit {ws[0].shape[0]} inputs")
    if hidden not in ("leaky_relu", "relu", "tanh"):
        raise ContractError(f"unknown hidden activation {hidden!r}")
    if output not in ("sigmoid", "identity"):
        raise ContractError(f"unknown output activation {output!r}")
    inputs, pres = [], []
    n = len(ws)
    for i in range(n):
        inputs.append(h)
        pre = h @ ws[i].data + bs[i].data
        if i < n - 1:
            pres.append(pre)
            h = _hidden_act(hidden, pre, alpha)
        else:
            h = pre
    if output == "sigmoid":
        h = _sigmoid(h)
    need_x = x.tape is not None
    need_w = [w.tape is not None for w in ws]
    need_b = [b.tape is not None for b in bs]

    def vjp(g):
        gw, gb = [None] * n, [None] * n
        if output == "sigmoid":
            g = g * (h * (1.0 - h))
        for i in range(n - 1, -1, -1):
            if need_w[i]:
                gw[i] = inputs[i].T @ g
            if need_b[i]:
                gb[i] = g.sum(axis=0)
            if i > 0 or need_x:
                g = g @ ws[i].data.T
                if i > 0:
                    g = g * _hidden_deriv(hidden, pres[i - 1], inputs[i], alpha)
        gx = g if need_x else None
        out = [gx]
        for i in range(n):
            out.extend((gw[i], gb[i]))
        return tuple(out)

    operands = [x]
    for w, b in zip(ws, bs):
        operands.extend((w, b))
    return _emit("mlp", h, tuple(operands), vjp)
