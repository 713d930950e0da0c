"""Scalar reverse-mode automatic differentiation.

Values are recorded on a :class:`Tape` as they are computed.  Every recorded
node stores its operation code, up to two parent indices, an optional
constant operand and its local partial derivatives, so ``backward`` is a
single reverse sweep.

A recorded tape is a static graph: :meth:`Tape.compile` freezes it into flat
arrays which can then be re-evaluated for new parameter values without
re-recording (see :class:`CompiledTape`).  Branch decisions of ``relu``,
``abs``, ``max`` and ``min`` are re-taken on every replay, so the compiled
graph is exact for any parameter vector.

The functions in this module (``exp``, ``sigmoid``, ``relu`` ...) accept plain
floats as well as :class:`Var`, which lets model code run unchanged either as
a fast float simulation or as a recorded expression.

Calling ``backward`` twice on the same root is allowed and returns identical
results: the sweep never mutates the tape.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


__all__ = [
    "DomainError",
    "Var",
    "Tape",
    "CompiledTape",
    "lift",
    "backward",
    "elementary",
    "exp",
    "log",
    "sigmoid",
    "tanh",
    "relu",
    "sqrt",
    "absolute",
    "maximum",
    "minimum",
    "value_of",
]

# operation codes; keep in sync with the numba kernels below
CONST, PARAM = 0, 1
ADD, SUB, MUL, DIV = 2, 3, 4, 5
EXP, LOG, SIGMOID, TANH, RELU, ABS, SQRT = 6, 7, 8, 9, 10, 11, 12
MAX, MIN, NEG = 13, 14, 15
ADDC, MULC, RSUBC, RDIVC, DIVC, MAXC, MINC = 16, 17, 18, 19, 20, 21, 22

Number = Union[int, float]


class DomainError(ArithmeticError, ValueError):
    """Raised for log/sqrt of a negative number or division by zero."""


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class Tape:
    """Append-only record of scalar operations."""

    def __init__(self) -> None:
        self.op: List[int] = []
        self.a: List[int] = []
        self.b: List[int] = []
        self.c: List[float] = []
        self.val: List[float] = []
        self.da: List[float] = []
        self.db: List[float] = []
        self.param_nodes: List[int] = []
        self.param_names: List[str] = []

    def __len__(self) -> int:
        return len(self.op)

    def _push(self, op, a, b, c, val, da, db) -> "Var":
        self.op.append(op)
        self.a.append(a)
        self.b.append(b)
        self.c.append(c)
        self.val.append(val)
        self.da.append(da)
        self.db.append(db)
        return Var(self, len(self.op) - 1)

    def const(self, x: Number) -> "Var":
        x = float(x)
        return self._push(CONST, -1, -1, x, x, 0.0, 0.0)

    lift = const

    def param(self, x: Number, name: Optional[str] = None) -> "Var":
        """Record a differentiable leaf."""
        slot = len(self.param_nodes)
        x = float(x)
        v = self._push(PARAM, slot, -1, 0.0, x, 0.0, 0.0)
        self.param_nodes.append(v.index)
        self.param_names.append(name if name is not None else f"p{slot}")
        return v

    def params(self, values: Sequence[Number], prefix: str = "p") -> List["Var"]:
        return [self.param(x, f"{prefix}{i}") for i, x in enumerate(values)]

    def adjoints(self, root: "Var") -> np.ndarray:
        if not isinstance(root, Var) or root.tape is not self:
            raise ValueError("root is not recorded on this tape")
        n = root.index + 1
        adj = [0.0] * n
        adj[root.index] = 1.0
        op, a, b, da, db = self.op, self.a, self.b, self.da, self.db
        for i in range(root.index, -1, -1):
            g = adj[i]
            if g == 0.0 or op[i] <= PARAM:
                continue
            adj[a[i]] += g * da[i]
            if b[i] >= 0:
                adj[b[i]] += g * db[i]
        out = np.zeros(len(self.op))
        out[:n] = adj
        return out

    def gradient_array(self, root: "Var") -> np.ndarray:
        """Gradient of ``root`` w.r.t. every parameter, in registration order."""
        adj = self.adjoints(root)
        return np.array([adj[i] for i in self.param_nodes], dtype=float)

    def backward(self, root: "Var") -> Dict[str, float]:
        g = self.gradient_array(root)
        return dict(zip(self.param_names, g.tolist()))

    def compile(self) -> "CompiledTape":
        return CompiledTape(self)


class Var:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, index: int) -> None:
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape.val[self.index]

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"Var({self.value!r}, node={self.index})"

    def _other(self, y) -> "Var":
        if y.tape is not self.tape:
            raise ValueError("operands recorded on different tapes")
        return y

    def __add__(self, y):
        t, x = self.tape, self.value
        if isinstance(y, Var):
            y = self._other(y)
            return t._push(ADD, self.index, y.index, 0.0, x + y.value, 1.0, 1.0)
        y = float(y)
        return t._push(ADDC, self.index, -1, y, x + y, 1.0, 0.0)

    __radd__ = __add__

    def __sub__(self, y):
        t, x = self.tape, self.value
        if isinstance(y, Var):
            y = self._other(y)
            return t._push(SUB, self.index, y.index, 0.0, x - y.value, 1.0, -1.0)
        y = float(y)
        return t._push(ADDC, self.index, -1, -y, x - y, 1.0, 0.0)

    def __rsub__(self, y):
        y = float(y)
        return self.tape._push(RSUBC, self.index, -1, y, y - self.value, -1.0, 0.0)

    def __mul__(self, y):
        t, x = self.tape, self.value
        if isinstance(y, Var):
            y = self._other(y)
            yv = y.value
            return t._push(MUL, self.index, y.index, 0.0, x * yv, yv, x)
        y = float(y)
        return t._push(MULC, self.index, -1, y, x * y, y, 0.0)

    __rmul__ = __mul__

    def __truediv__(self, y):
        t, x = self.tape, self.value
        if isinstance(y, Var):
            y = self._other(y)
            yv = y.value
            if yv == 0.0:
                raise DomainError("division by zero")
            q = x / yv
            return t._push(DIV, self.index, y.index, 0.0, q, 1.0 / yv, -q / yv)
        y = float(y)
        if y == 0.0:
            raise DomainError("division by zero")
        return t._push(DIVC, self.index, -1, y, x / y, 1.0 / y, 0.0)

    def __rtruediv__(self, y):
        x = self.value
        if x == 0.0:
            raise DomainError("division by zero")
        y = float(y)
        q = y / x
        return self.tape._push(RDIVC, self.index, -1, y, q, -q / x, 0.0)

    def __neg__(self):
        return self.tape._push(NEG, self.index, -1, 0.0, -self.value, -1.0, 0.0)

    def __pos__(self):
        return self

    def __abs__(self):
        x = self.value
        return self.tape._push(ABS, self.index, -1, 0.0, abs(x), 1.0 if x >= 0.0 else -1.0, 0.0)

    def __pow__(self, k):
        if k == 2:
            return self * self
        raise NotImplementedError("only squaring is supported")


def value_of(x) -> float:
    return x.value if isinstance(x, Var) else float(x)


def lift(x: Number, tape: Tape) -> Var:
    return tape.const(x)


def backward(root: Var) -> Dict[str, float]:
    return root.tape.backward(root)


def exp(x):
    if not isinstance(x, Var):
        return math.exp(x)
    e = math.exp(x.value)
    return x.tape._push(EXP, x.index, -1, 0.0, e, e, 0.0)


def log(x):
    if not isinstance(x, Var):
        if x <= 0.0:
            raise DomainError(f"log of non-positive value {x}")
        return math.log(x)
    v = x.value
    if v <= 0.0:
        raise DomainError(f"log of non-positive value {v}")
    return x.tape._push(LOG, x.index, -1, 0.0, math.log(v), 1.0 / v, 0.0)


def sigmoid(x):
    if not isinstance(x, Var):
        return _sigmoid(x)
    s = _sigmoid(x.value)
    return x.tape._push(SIGMOID, x.index, -1, 0.0, s, s * (1.0 - s), 0.0)


def tanh(x):
    if not isinstance(x, Var):
        return math.tanh(x)
    th = math.tanh(x.value)
    return x.tape._push(TANH, x.index, -1, 0.0, th, 1.0 - th * th, 0.0)


def relu(x):
    # derivative at exactly 0 is 0
    if not isinstance(x, Var):
        return x if x > 0.0 else 0.0
    v = x.value
    if v > 0.0:
        return x.tape._push(RELU, x.index, -1, 0.0, v, 1.0, 0.0)
    return x.tape._push(RELU, x.index, -1, 0.0, 0.0, 0.0, 0.0)


def sqrt(x):
    if not isinstance(x, Var):
        if x < 0.0:
            raise DomainError(f"sqrt of negative value {x}")
        return math.sqrt(x)
    v = x.value
    if v < 0.0:
        raise DomainError(f"sqrt of negative value {v}")
    r = math.sqrt(v)
    d = 0.5 / r if r > 0.0 else math.inf
    return x.tape._push(SQRT, x.index, -1, 0.0, r, d, 0.0)


def absolute(x):
    return abs(x)


def _binary_select(code_vv, code_vc, x, y, take_first):
    # ties route the whole derivative to the first argument
    if isinstance(x, Var) and isinstance(y, Var):
        y = x._other(y)
        first = take_first(x.value, y.value)
        v = x.value if first else y.value
        return x.tape._push(code_vv, x.index, y.index, 0.0, v,
                            1.0 if first else 0.0, 0.0 if first else 1.0)
    if isinstance(y, Var) and not isinstance(x, Var):
        # a constant never receives derivative; treat it as the second operand
        x, y = y, x
    if isinstance(x, Var):
        c = float(y)
        first = take_first(x.value, c)
        return x.tape._push(code_vc, x.index, -1, c, x.value if first else c,
                            1.0 if first else 0.0, 0.0)
    return x if take_first(x, y) else y


def maximum(x, y):
    return _binary_select(MAX, MAXC, x, y, lambda p, q: p >= q)


def minimum(x, y):
    return _binary_select(MIN, MINC, x, y, lambda p, q: p <= q)


_UNARY = {"exp": exp, "log": log, "sigmoid": sigmoid, "tanh": tanh,
          "relu": relu, "abs": absolute, "sqrt": sqrt}
_BINARY = {"add": lambda x, y: x + y, "sub": lambda x, y: x - y,
           "mul": lambda x, y: x * y, "div": lambda x, y: x / y,
           "max": maximum, "min": minimum}


def elementary(kind: str, *args):
    """Apply a named elementary operation (``'add'``, ``'sigmoid'`` ...)."""
    if kind in _UNARY:
        (x,) = args
        return _UNARY[kind](x)
    if kind in _BINARY:
        x, y = args
        return _BINARY[kind](x, y)
    raise ValueError(f"unknown operation {kind!r}")


# ---------------------------------------------------------------------------
# compiled replay


@njit(cache=True, nogil=True, error_model="numpy")
def _replay_forward(op, a, b, c, theta, vals):  # pragma: no cover - jitted
    n = op.shape[0]
    for i in range(n):
        k = op[i]
        if k == 0:
            vals[i] = c[i]
        elif k == 1:
            vals[i] = theta[a[i]]
        elif k == 2:
            vals[i] = vals[a[i]] + vals[b[i]]
        elif k == 3:
            vals[i] = vals[a[i]] - vals[b[i]]
        elif k == 4:
            vals[i] = vals[a[i]] * vals[b[i]]
        elif k == 5:
            vals[i] = vals[a[i]] / vals[b[i]]
        elif k == 6:
            vals[i] = math.exp(vals[a[i]])
        elif k == 7:
            x = vals[a[i]]
            vals[i] = math.log(x) if x > 0.0 else np.nan
        elif k == 8:
            x = vals[a[i]]
            if x >= 0.0:
                vals[i] = 1.0 / (1.0 + math.exp(-x))
            else:
                e = math.exp(x)
                vals[i] = e / (1.0 + e)
        elif k == 9:
            vals[i] = math.tanh(vals[a[i]])
        elif k == 10:
            x = vals[a[i]]
            vals[i] = x if x > 0.0 else 0.0
        elif k == 11:
            vals[i] = abs(vals[a[i]])
        elif k == 12:
            x = vals[a[i]]
            vals[i] = math.sqrt(x) if x >= 0.0 else np.nan
        elif k == 13:
            x = vals[a[i]]
            y = vals[b[i]]
            vals[i] = x if x >= y else y
        elif k == 14:
            x = vals[a[i]]
            y = vals[b[i]]
            vals[i] = x if x <= y else y
        elif k == 15:
            vals[i] = -vals[a[i]]
        elif k == 16:
            vals[i] = vals[a[i]] + c[i]
        elif k == 17:
            vals[i] = vals[a[i]] * c[i]
        elif k == 18:
            vals[i] = c[i] - vals[a[i]]
        elif k == 19:
            vals[i] = c[i] / vals[a[i]]
        elif k == 20:
            vals[i] = vals[a[i]] / c[i]
        elif k == 21:
            x = vals[a[i]]
            vals[i] = x if x >= c[i] else c[i]
        elif k == 22:
            x = vals[a[i]]
            vals[i] = x if x <= c[i] else c[i]


@njit(cache=True, nogil=True, error_model="numpy")
def _replay_backward(op, a, b, c, vals, root, adj):  # pragma: no cover - jitted
    for i in range(adj.shape[0]):
        adj[i] = 0.0
    adj[root] = 1.0
    for i in range(root, -1, -1):
        g = adj[i]
        k = op[i]
        if g == 0.0 or k <= 1:
            continue
        ia = a[i]
        if k == 2:
            adj[ia] += g
            adj[b[i]] += g
        elif k == 3:
            adj[ia] += g
            adj[b[i]] -= g
        elif k == 4:
            adj[ia] += g * vals[b[i]]
            adj[b[i]] += g * vals[ia]
        elif k == 5:
            y = vals[b[i]]
            adj[ia] += g / y
            adj[b[i]] -= g * vals[i] / y
        elif k == 6:
            adj[ia] += g * vals[i]
        elif k == 7:
            adj[ia] += g / vals[ia]
        elif k == 8:
            s = vals[i]
            adj[ia] += g * s * (1.0 - s)
        elif k == 9:
            th = vals[i]
            adj[ia] += g * (1.0 - th * th)
        elif k == 10:
            if vals[ia] > 0.0:
                adj[ia] += g
        elif k == 11:
            if vals[ia] >= 0.0:
                adj[ia] += g
            else:
                adj[ia] -= g
        elif k == 12:
            adj[ia] += g * 0.5 / vals[i]
        elif k == 13:
            if vals[ia] >= vals[b[i]]:
                adj[ia] += g
            else:
                adj[b[i]] += g
        elif k == 14:
            if vals[ia] <= vals[b[i]]:
                adj[ia] += g
            else:
                adj[b[i]] += g
        elif k == 15:
            adj[ia] -= g
        elif k == 16:
            adj[ia] += g
        elif k == 17:
            adj[ia] += g * c[i]
        elif k == 18:
            adj[ia] -= g
        elif k == 19:
            adj[ia] -= g * vals[i] / vals[ia]
        elif k == 20:
            adj[ia] += g / c[i]
        elif k == 21:
            if vals[ia] >= c[i]:
                adj[ia] += g
        elif k == 22:
            if vals[ia] <= c[i]:
                adj[ia] += g


@njit(cache=True, nogil=True, error_model="numpy")
def _gather(adj, nodes, out):  # pragma: no cover - jitted
    for j in range(nodes.shape[0]):
        out[j] = adj[nodes[j]]


class CompiledTape:
    """Frozen, replayable copy of a :class:`Tape`.

    ``forward(theta)`` re-evaluates every node with parameter vector ``theta``
    (in the tape's parameter registration order); ``gradient(root)`` then
    returns d root / d theta.  Invalid domains produce NaN instead of raising.

    A compiled tape owns its value buffers, so one instance must not be shared
    between threads; create one per worker.
    """

    def __init__(self, tape: Tape) -> None:
        self.op = np.asarray(tape.op, dtype=np.int8)
        self.a = np.asarray(tape.a, dtype=np.int64)
        self.b = np.asarray(tape.b, dtype=np.int64)
        self.c = np.asarray(tape.c, dtype=np.float64)
        self.param_nodes = np.asarray(tape.param_nodes, dtype=np.int64)
        self.param_names = list(tape.param_names)
        self.vals = np.asarray(tape.val, dtype=np.float64).copy()
        self._adj = np.zeros_like(self.vals)

    def __len__(self) -> int:
        return self.op.shape[0]

    @property
    def n_params(self) -> int:
        return self.param_nodes.shape[0]

    def copy(self) -> "CompiledTape":
        new = object.__new__(CompiledTape)
        new.__dict__.update(self.__dict__)
        new.vals = self.vals.copy()
        new._adj = np.zeros_like(self.vals)
        return new

    def forward(self, theta) -> np.ndarray:
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        _replay_forward(self.op, self.a, self.b, self.c, theta, self.vals)
        return self.vals

    def value(self, node) -> float:
        idx = node.index if isinstance(node, Var) else int(node)
        return float(self.vals[idx])

    def gradient(self, root) -> np.ndarray:
        idx = root.index if isinstance(root, Var) else int(root)
        if not 0 <= idx < len(self):
            raise ValueError("root is not recorded on this tape")
        _replay_backward(self.op, self.a, self.b, self.c, self.vals, idx, self._adj)
        out = np.empty(self.n_params)
        _gather(self._adj, self.param_nodes, out)
        return out
