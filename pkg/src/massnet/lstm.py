"""Plain LSTM baseline with a dense output head.

Per layer and gate ``g in (i, f, g, o)`` the parameters are an input matrix
``W_g`` (n x d), a recurrent matrix ``U_g`` (n x n) and a bias ``b_g`` (n),
stored flattened row-major under ``"lstm/<layer>/W_i"`` etc.  The head maps
the last layer's hidden state to one output: ``y = head/w . h + head/b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad

GATES = ("i", "f", "g", "o")
Params = Dict[str, np.ndarray]


def lstm_count_parameters(n: int, d: int = 2) -> int:
    if n < 1 or d < 1:
        raise ValueError("hidden size and input dimension must be positive")
    return 4 * n * (d + n + 1) + (n + 1)


@dataclass(frozen=True)
class LstmSpec:
    hidden_sizes: Tuple[int, ...] = (1,)
    input_dim: int = 2

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.hidden_sizes)
        if not sizes or any(n < 1 for n in sizes) or self.input_dim < 1:
            raise ValueError("hidden sizes and input dimension must be positive")
        object.__setattr__(self, "hidden_sizes", sizes)

    @property
    def label(self) -> str:
        return f"LSTM({','.join(map(str, self.hidden_sizes))})"

    def layer_dims(self) -> List[Tuple[int, int]]:
        dims, d = [], self.input_dim
        for n in self.hidden_sizes:
            dims.append((n, d))
            d = n
        return dims

    def to_dict(self) -> dict:
        return {"kind": "lstm", "hidden_sizes": list(self.hidden_sizes),
                "input_dim": self.input_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "LstmSpec":
        return cls(tuple(d["hidden_sizes"]), d.get("input_dim", 2))


def shapes(spec: LstmSpec) -> Dict[str, int]:
    out = {}
    for l, (n, d) in enumerate(spec.layer_dims()):
        for g in GATES:
            out[f"lstm/{l + 1}/W_{g}"] = n * d
            out[f"lstm/{l + 1}/U_{g}"] = n * n
            out[f"lstm/{l + 1}/b_{g}"] = n
    out["head/w"] = spec.hidden_sizes[-1]
    out["head/b"] = 1
    return out


def count_parameters(spec: LstmSpec) -> int:
    return sum(shapes(spec).values())


class LstmState(NamedTuple):
    c: np.ndarray
    h: np.ndarray


def zero_state(spec: LstmSpec) -> List[LstmState]:
    return [LstmState(np.zeros(n), np.zeros(n)) for n in spec.hidden_sizes]


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _mats(spec: LstmSpec, params: Params, layer: int):
    n, d = spec.layer_dims()[layer]
    p = f"lstm/{layer + 1}/"
    out = {}
    for g in GATES:
        try:
            W = np.asarray(params[p + f"W_{g}"], dtype=float).reshape(n, d)
            U = np.asarray(params[p + f"U_{g}"], dtype=float).reshape(n, n)
            b = np.asarray(params[p + f"b_{g}"], dtype=float).reshape(n)
        except ValueError:
            raise ValueError(f"parameter shapes of layer {layer + 1} do not match {spec}") from None
        out[g] = (W, U, b)
    return out


def cell_update(c, i, f, g):
    """Cell-state recursion ``f * c + i * g`` (elementwise)."""
    return f * c + i * g


def lstm_step(states: Sequence[LstmState], x_t, spec: LstmSpec, params: Params):
    """One step of the stacked LSTM; returns ``(new_states, y)``."""
    x = np.asarray(x_t, dtype=float)
    if x.shape != (spec.input_dim,):
        raise ValueError(f"input must have {spec.input_dim} entries, got {x.shape}")
    new = []
    for l, st in enumerate(states):
        m = _mats(spec, params, l)
        pre = {g: W @ x + U @ st.h + b for g, (W, U, b) in m.items()}
        i, f, o = _sigmoid(pre["i"]), _sigmoid(pre["f"]), _sigmoid(pre["o"])
        g = np.tanh(pre["g"])
        c = cell_update(st.c, i, f, g)
        h = o * np.tanh(c)
        new.append(LstmState(c, h))
        x = h
    y = float(np.dot(params["head/w"], x) + params["head/b"][0])
    return new, y


@dataclass
class LstmTrace:
    spec: LstmSpec
    q: np.ndarray
    c: np.ndarray  # (T, total units)
    h: np.ndarray
    dates: Optional[np.ndarray] = None


def forward(spec: LstmSpec, params: Params, pp, pet, dates=None) -> LstmTrace:
    pp = np.asarray(pp, dtype=float)
    pet = np.asarray(pet, dtype=float)
    T, units = len(pp), sum(spec.hidden_sizes)
    c_rec, h_rec, q = np.zeros((T, units)), np.zeros((T, units)), np.zeros(T)
    states = zero_state(spec)
    for t in range(T):
        states, q[t] = lstm_step(states, (pp[t], pet[t]), spec, params)
        c_rec[t] = np.concatenate([s.c for s in states])
        h_rec[t] = np.concatenate([s.h for s in states])
    return LstmTrace(spec, q, c_rec, h_rec, dates)


def _expression(spec: LstmSpec, P: Dict[str, list], pp, pet) -> list:
    # scalar loops so every value can be a tape variable
    dims = spec.layer_dims()
    hs = [[0.0] * n for n, _ in dims]
    cs = [[0.0] * n for n, _ in dims]
    q = []
    for t in range(len(pp)):
        x = [pp[t], pet[t]]
        for l, (n, d) in enumerate(dims):
            p = f"lstm/{l + 1}/"
            h_prev, c_prev = hs[l], cs[l]
            new_h, new_c = [], []
            for k in range(n):
                pre = {}
                for g in GATES:
                    W, U, b = P[p + f"W_{g}"], P[p + f"U_{g}"], P[p + f"b_{g}"]
                    s = b[k]
                    for j in range(d):
                        s = s + W[k * d + j] * x[j]
                    for j in range(n):
                        s = s + U[k * n + j] * h_prev[j]
                    pre[g] = s
                c = cell_update(c_prev[k], ad.sigmoid(pre["i"]), ad.sigmoid(pre["f"]),
                                ad.tanh(pre["g"]))
                new_c.append(c)
                new_h.append(ad.sigmoid(pre["o"]) * ad.tanh(c))
            hs[l], cs[l] = new_h, new_c
            x = new_h
        w, b = P["head/w"], P["head/b"]
        y = b[0]
        for j, hj in enumerate(x):
            y = y + w[j] * hj
        q.append(y)
    return q


class LstmModel:
    """Adapter exposing an LSTM to the trainer; every weight is trainable."""

    kind = "lstm"

    def __init__(self, spec: LstmSpec):
        self.spec = spec
        self.shapes = shapes(spec)
        self.slots = [(k, i) for k, n in self.shapes.items() for i in range(n)]

    @property
    def n_params(self) -> int:
        return len(self.slots)

    def default_params(self) -> Params:
        return {k: np.zeros(n) for k, n in self.shapes.items()}

    def flatten(self, params: Params) -> np.ndarray:
        return np.concatenate([np.asarray(params[k], dtype=float).ravel() for k in self.shapes])

    def unflatten(self, theta, base: Optional[Params] = None) -> Params:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} values, got {theta.shape}")
        out, pos = {}, 0
        for k, n in self.shapes.items():
            out[k] = theta[pos:pos + n].copy()
            pos += n
        return out

    def slot_scales(self) -> np.ndarray:
        return np.ones(self.n_params)

    def random_params(self, rng: np.random.Generator) -> Params:
        """Uniform in +-1/sqrt(n) of the layer feeding each weight."""
        out = {}
        last = self.spec.hidden_sizes[-1]
        for k, n in self.shapes.items():
            if k.startswith("head/"):
                width = last
            else:
                width = self.spec.hidden_sizes[int(k.split("/")[1]) - 1]
            bound = 1.0 / math.sqrt(width)
            out[k] = rng.uniform(-bound, bound, n)
        return out

    def expression(self, theta: Sequence, pp, pet, base=None) -> list:
        P, pos = {}, 0
        for k, n in self.shapes.items():
            P[k] = list(theta[pos:pos + n])
            pos += n
        return _expression(self.spec, P, list(map(float, pp)), list(map(float, pet)))

    def simulate(self, params: Params, pp, pet) -> np.ndarray:
        return forward(self.spec, params, pp, pet).q
