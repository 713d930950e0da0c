"""Layered networks of mass-conserving nodes.

A network is described by a :class:`NetworkSpec`: a network type deciding how
the precipitation is handed to the first layer and how final-layer outputs
are combined into streamflow, a sharing mode, and 1 to 3 layer widths.

Parameters live in a flat ``dict`` of 1-D float arrays keyed
``"<layer>/<node>/<field>"`` (1-based) for node weights and ``"mix/..."`` for
the mixing weights.  Every array is present for every spec; entries that a
configuration does not train are frozen (usually at 0) and listed nowhere in
:func:`layout`.  Pruned parameter sets may also carry the 0/1 masks
``"mix/out_mask"`` (output weights) and ``"mix/final_in_mask"`` (inputs of
the final layer); a missing mask means all ones.

================  =====================  ==========================
type              input weights          output weights
================  =====================  ==========================
DI                softmax (sum to one)   fixed 1 (plain sum)
DS                fixed 1 (replicated)   softmax (sum to one)
DIR               exp (positive)         fixed 1
DSR               fixed 1                exp (positive)
MLB               raw + optional bias    raw + bias
================  =====================  ==========================

Layers after the first receive the previous layer's outputs through a
``N_prev x N`` weight matrix realized in the same spirit: DI splits each
source output over the targets (softmax over targets), DS gives each target
a convex mix of the sources (softmax over sources), DIR/DSR use positive
weights and MLB raw weights clamped at the node boundary.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .mcp import NodeParams, Sharing, compute_gates, softmax_kappas

Params = Dict[str, np.ndarray]

NODE_FIELDS = ("out_bias", "out_state_coef", "loss_bias", "loss_pet_coef",
               "loss_state_coef", "logit_out", "logit_loss", "logit_rem")
_VECTOR_FIELDS = ("out_state_coef", "loss_state_coef")
STATE_SCALE = 100.0  # mm, reference storage used to scale state coefficients in training


class SimulationError(RuntimeError):
    """Raised when a state turns NaN during a simulation."""

    def __init__(self, message: str, timestep: int):
        super().__init__(message)
        self.timestep = timestep


class NetType(str, enum.Enum):
    DI = "DI"
    DS = "DS"
    DIR = "DIR"
    DSR = "DSR"
    MLB = "MLB"


@dataclass(frozen=True)
class NetworkSpec:
    ntype: NetType
    sharing: Sharing = Sharing.NONE
    layer_sizes: Tuple[int, ...] = (1,)
    mlb_input_bias: bool = True

    def __post_init__(self):
        ntype = str(getattr(self.ntype, "value", self.ntype)).upper()
        object.__setattr__(self, "ntype", NetType(ntype))
        object.__setattr__(self, "sharing", Sharing.parse(self.sharing))
        sizes = tuple(int(n) for n in self.layer_sizes)
        # trailing zeros as in "(3,3,0)" mean absent layers
        while len(sizes) > 1 and sizes[-1] == 0:
            sizes = sizes[:-1]
        if not 1 <= len(sizes) <= 3:
            raise ValueError(f"1 to 3 layers supported, got {len(sizes)}")
        if any(n < 1 for n in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "mlb_input_bias", bool(self.mlb_input_bias))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def n_nodes(self) -> int:
        return sum(self.layer_sizes)

    @property
    def n_final(self) -> int:
        return self.layer_sizes[-1]

    @property
    def label(self) -> str:
        sizes = ",".join(str(n) for n in self.layer_sizes)
        return f"MN_{self.sharing.value}^{self.ntype.value}({sizes})"

    def node_labels(self) -> List[str]:
        return [f"{l + 1}_{k + 1}" for l, n in enumerate(self.layer_sizes) for k in range(n)]

    def to_dict(self) -> dict:
        return {"kind": "mcp-network", "ntype": self.ntype.value, "sharing": self.sharing.value,
                "layer_sizes": list(self.layer_sizes), "mlb_input_bias": self.mlb_input_bias}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(d["ntype"], d.get("sharing", "None"), tuple(d["layer_sizes"]),
                   d.get("mlb_input_bias", True))

    @classmethod
    def parse(cls, text: str, mlb_input_bias: bool = True) -> "NetworkSpec":
        """Parse ``"MN_SALO^DS(5)"``, ``"DS(3,3)"`` or ``"DS:SALO:3,3"``."""
        t = text.strip().replace(" ", "")
        m = re.fullmatch(r"(?:MN)?(?:_(\w+?))?\^?(DI|DS|DIR|DSR|MLB)(?:_(\w+))?\(([\d,]+)\)", t,
                         flags=re.IGNORECASE)
        if m:
            sharing = m.group(1) or m.group(3) or "None"
            sizes = tuple(int(s) for s in m.group(4).split(",") if s)
            return cls(m.group(2).upper(), sharing, sizes, mlb_input_bias)
        parts = t.split(":")
        if len(parts) == 3:
            sizes = tuple(int(s) for s in parts[2].split(",") if s)
            return cls(parts[0].upper(), parts[1], sizes, mlb_input_bias)
        raise ValueError(f"cannot parse network spec {text!r}")


# ---------------------------------------------------------------------------
# parameter layout


def node_key(layer: int, node: int, name: str) -> str:
    return f"{layer + 1}/{node + 1}/{name}"


def _mixing_shapes(spec: NetworkSpec) -> Dict[str, int]:
    sizes = spec.layer_sizes
    shapes = {"mix/in_weights": sizes[0]}
    if spec.ntype is NetType.MLB and spec.mlb_input_bias:
        shapes["mix/in_bias"] = sizes[0]
    for l in range(1, spec.n_layers):
        shapes[f"mix/between/{l + 1}"] = sizes[l - 1] * sizes[l]
    shapes["mix/out_weights"] = spec.n_final
    if spec.ntype is NetType.MLB:
        shapes["mix/out_bias"] = 1
    return shapes


def default_params(spec: NetworkSpec) -> Params:
    """All parameter arrays, filled with their frozen values."""
    params: Params = {}
    for l, n in enumerate(spec.layer_sizes):
        for k in range(n):
            for name in NODE_FIELDS:
                size = n if name in _VECTOR_FIELDS else 1
                params[node_key(l, k, name)] = np.zeros(size)
    raw = 1.0 if spec.ntype is NetType.MLB else 0.0
    for key, size in _mixing_shapes(spec).items():
        fill = 0.0 if key.endswith("bias") else raw
        params[key] = np.full(size, fill)
    return params


def layout(spec: NetworkSpec) -> List[Tuple[str, int]]:
    """Trainable ``(key, index)`` slots in canonical order."""
    slots: List[Tuple[str, int]] = []
    sh = spec.sharing
    for l, n in enumerate(spec.layer_sizes):
        for k in range(n):
            key = lambda name: node_key(l, k, name)  # noqa: E731
            slots += [(key("out_bias"), 0), (key("out_state_coef"), k), (key("loss_bias"), 0),
                      (key("loss_pet_coef"), 0), (key("loss_state_coef"), k),
                      (key("logit_out"), 0), (key("logit_loss"), 0), (key("logit_rem"), 0)]
            others = [j for j in range(n) if j != k]
            if sh.output_shared:
                slots += [(key("out_state_coef"), j) for j in others]
            if sh.loss_shared:
                slots += [(key("loss_state_coef"), j) for j in others]

    t = spec.ntype
    sizes = spec.layer_sizes
    n1, nf = sizes[0], spec.n_final
    if (t is NetType.DI and n1 > 1) or t in (NetType.DIR, NetType.MLB):
        slots += [("mix/in_weights", j) for j in range(n1)]
    if t is NetType.MLB and spec.mlb_input_bias:
        slots += [("mix/in_bias", j) for j in range(n1)]
    for l in range(1, spec.n_layers):
        src, dst = sizes[l - 1], sizes[l]
        trainable = {NetType.DI: dst > 1, NetType.DS: src > 1}.get(t, True)
        if trainable:
            slots += [(f"mix/between/{l + 1}", i) for i in range(src * dst)]
    if (t is NetType.DS and nf > 1) or t in (NetType.DSR, NetType.MLB):
        slots += [("mix/out_weights", k) for k in range(nf)]
    if t is NetType.MLB:
        slots.append(("mix/out_bias", 0))
    return slots


def count_parameters(spec: NetworkSpec) -> int:
    return len(layout(spec))


def slot_names(spec: NetworkSpec) -> List[str]:
    return [f"{key}[{i}]" for key, i in layout(spec)]


def flatten(spec: NetworkSpec, params: Params) -> np.ndarray:
    return np.array([params[key][i] for key, i in layout(spec)], dtype=float)


def unflatten(spec: NetworkSpec, theta, base: Optional[Params] = None) -> Params:
    params = {k: np.array(v, dtype=float) for k, v in (base or default_params(spec)).items()}
    slots = layout(spec)
    if len(theta) != len(slots):
        raise ValueError(f"expected {len(slots)} values, got {len(theta)}")
    for (key, i), v in zip(slots, theta):
        params[key][i] = float(v)
    return params


def node_params(params, spec: NetworkSpec, layer: int, node: int) -> NodeParams:
    g = lambda name: params[node_key(layer, node, name)]  # noqa: E731
    return NodeParams(g("out_bias")[0], list(g("out_state_coef")), g("loss_bias")[0],
                      g("loss_pet_coef")[0], list(g("loss_state_coef")), g("logit_out")[0],
                      g("logit_loss")[0], g("logit_rem")[0])


# ---------------------------------------------------------------------------
# mixing


def _softmax(xs: Sequence) -> list:
    shift = max(ad.value_of(x) for x in xs)
    es = [ad.exp(x - shift) for x in xs]
    total = es[0]
    for e in es[1:]:
        total = total + e
    return [e / total for e in es]


def _check_len(values, n, what):
    if len(values) != n:
        raise ValueError(f"{what}: expected {n} entries, got {len(values)}")


def realize_input_weights(spec: NetworkSpec, params) -> list:
    w = list(params["mix/in_weights"])
    n1 = spec.layer_sizes[0]
    _check_len(w, n1, "input weights")
    t = spec.ntype
    if t is NetType.DI:
        return _softmax(w)
    if t in (NetType.DS, NetType.DSR):
        return [1.0] * n1
    if t is NetType.DIR:
        return [ad.exp(x) for x in w]
    return w


def _mask(params, key: str, n: int) -> Optional[list]:
    """Frozen 0/1 mask written by pruning, or None when absent or all ones."""
    if key not in params:
        return None
    m = [float(x) for x in params[key]]
    _check_len(m, n, key)
    return None if all(x == 1.0 for x in m) else m


def realize_output_weights(spec: NetworkSpec, params) -> list:
    w = list(params["mix/out_weights"])
    nf = spec.n_final
    _check_len(w, nf, "output weights")
    t = spec.ntype
    if t in (NetType.DI, NetType.DIR):
        w = [1.0] * nf
    elif t is NetType.DS:
        w = _softmax(w)
    elif t is NetType.DSR:
        w = [ad.exp(x) for x in w]
    mask = _mask(params, "mix/out_mask", nf)
    if mask is not None:
        w = [x * m for x, m in zip(w, mask)]
    return w


def realize_between(spec: NetworkSpec, params, layer: int) -> List[list]:
    """Matrix ``W[j][k]`` routing output of node j of ``layer - 1`` to node k."""
    src, dst = spec.layer_sizes[layer - 1], spec.layer_sizes[layer]
    flat = list(params[f"mix/between/{layer + 1}"])
    _check_len(flat, src * dst, "between-layer weights")
    rows = [flat[j * dst:(j + 1) * dst] for j in range(src)]
    t = spec.ntype
    if t is NetType.DI:
        return [_softmax(r) for r in rows]
    if t is NetType.DS:
        cols = [_softmax([rows[j][k] for j in range(src)]) for k in range(dst)]
        return [[cols[k][j] for k in range(dst)] for j in range(src)]
    if t in (NetType.DIR, NetType.DSR):
        return [[ad.exp(x) for x in r] for r in rows]
    return rows


@dataclass
class Mixing:
    in_weights: list
    in_bias: Optional[list]
    between: List[List[list]]
    out_weights: list
    out_bias: object = 0.0
    plain_sum: bool = False  # output weights are all exactly 1
    final_in_mask: Optional[list] = None


def realize_mixing(spec: NetworkSpec, params) -> Mixing:
    in_bias = list(params["mix/in_bias"]) if "mix/in_bias" in params else None
    out_bias = params["mix/out_bias"][0] if "mix/out_bias" in params else 0.0
    between = [realize_between(spec, params, l) for l in range(1, spec.n_layers)]
    plain = (spec.ntype in (NetType.DI, NetType.DIR)
             and _mask(params, "mix/out_mask", spec.n_final) is None)
    return Mixing(realize_input_weights(spec, params), in_bias, between,
                  realize_output_weights(spec, params), out_bias, plain,
                  _mask(params, "mix/final_in_mask", spec.n_final))


def distribute_input(u, spec: NetworkSpec, mixing: Mixing) -> list:
    """Per-node inputs of the first layer."""
    if spec.ntype in (NetType.DS, NetType.DSR):
        return [u] * spec.layer_sizes[0]
    out = [w * u for w in mixing.in_weights]
    if spec.ntype is NetType.MLB:
        if mixing.in_bias is not None:
            out = [x + b for x, b in zip(out, mixing.in_bias)]
        out = [ad.relu(x) for x in out]
    return out


def route(outputs: Sequence, spec: NetworkSpec, matrix: List[list]) -> list:
    dst = len(matrix[0])
    res = []
    for k in range(dst):
        s = matrix[0][k] * outputs[0]
        for j in range(1, len(outputs)):
            s = s + matrix[j][k] * outputs[j]
        res.append(ad.relu(s) if spec.ntype is NetType.MLB else s)
    return res


def _weighted_terms(o: Sequence, spec: NetworkSpec, mixing: Mixing) -> list:
    if mixing.plain_sum:
        return list(o)
    return [w * x for w, x in zip(mixing.out_weights, o)]


def aggregate_output(o: Sequence, spec: NetworkSpec, mixing: Mixing):
    terms = _weighted_terms(o, spec, mixing)
    q = terms[0]
    for x in terms[1:]:
        q = q + x
    if spec.ntype is NetType.MLB:
        q = q + mixing.out_bias
    return q


# ---------------------------------------------------------------------------
# simulation


@dataclass
class SimulationTrace:
    """Per-step record of a network run.

    Node arrays have shape ``(T, n_nodes)`` with columns in
    :meth:`NetworkSpec.node_labels` order; ``x`` is the state at the start of
    each step.  ``paths`` holds each final-layer node's weighted contribution
    to ``q``.
    """

    spec: NetworkSpec
    q: np.ndarray
    x: np.ndarray
    g_out: np.ndarray
    g_loss_raw: np.ndarray
    g_loss_con: np.ndarray
    g_rem: np.ndarray
    out: np.ndarray
    loss: np.ndarray
    inflow: np.ndarray
    paths: np.ndarray
    x_final: np.ndarray
    dates: Optional[np.ndarray] = None
    pp: Optional[np.ndarray] = None
    pet: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.q.shape[0]

    def tail(self, start: int) -> "SimulationTrace":
        """The trace from step ``start`` on (drops a spin-up prefix)."""
        cut = lambda a: None if a is None else a[start:]  # noqa: E731
        return SimulationTrace(self.spec, self.q[start:], self.x[start:], self.g_out[start:],
                               self.g_loss_raw[start:], self.g_loss_con[start:],
                               self.g_rem[start:], self.out[start:], self.loss[start:],
                               self.inflow[start:], self.paths[start:], self.x_final,
                               cut(self.dates), cut(self.pp), cut(self.pet))


def _as_lists(params) -> dict:
    return {k: [float(x) for x in v] for k, v in params.items()}


def _run(spec: NetworkSpec, P, pp: Sequence[float], pet: Sequence[float], x0: Sequence[float],
         rec: Optional[dict] = None) -> list:
    sizes = spec.layer_sizes
    sharing = spec.sharing
    nodes = [[node_params(P, spec, l, k) for k in range(n)] for l, n in enumerate(sizes)]
    kappas = [[softmax_kappas(p.logit_out, p.logit_loss, p.logit_rem) for p in layer]
              for layer in nodes]
    mix = realize_mixing(spec, P)
    offsets = np.cumsum((0,) + sizes)
    states = [list(x0[offsets[l]:offsets[l + 1]]) for l in range(len(sizes))]
    checking = rec is not None
    q = []
    for t in range(len(pp)):
        e = pet[t]
        inputs = distribute_input(pp[t], spec, mix)
        for l, n in enumerate(sizes):
            if mix.final_in_mask is not None and l + 1 == len(sizes):
                inputs = [x * m for x, m in zip(inputs, mix.final_in_mask)]
            X = states[l]
            gates = [compute_gates(nodes[l][k], X, k, e, sharing, kappas[l][k]) for k in range(n)]
            outs, new = [], []
            for k in range(n):
                g, xk = gates[k], X[k]
                outs.append(g.g_out * xk)
                new.append(g.g_rem * xk + inputs[k])
            if checking:
                base = offsets[l]
                for k in range(n):
                    g = gates[k]
                    c = base + k
                    rec["x"][t, c] = X[k]
                    rec["g_out"][t, c] = g.g_out
                    rec["g_loss_raw"][t, c] = g.g_loss_raw
                    rec["g_loss_con"][t, c] = g.g_loss_con
                    rec["g_rem"][t, c] = g.g_rem
                    rec["out"][t, c] = outs[k]
                    rec["loss"][t, c] = g.g_loss_con * X[k]
                    rec["inflow"][t, c] = inputs[k]
                    if new[k] != new[k]:
                        raise SimulationError(
                            f"state of node {l + 1}_{k + 1} became NaN at timestep {t}", t)
            states[l] = new
            if l + 1 < len(sizes):
                inputs = route(outs, spec, mix.between[l])
        terms = _weighted_terms(outs, spec, mix)
        qt = terms[0]
        for x in terms[1:]:
            qt = qt + x
        if spec.ntype is NetType.MLB:
            qt = qt + mix.out_bias
        if checking:
            rec["paths"][t, :] = terms
        q.append(qt)
    if checking:
        rec["x_final"] = np.array([x for layer in states for x in layer], dtype=float)
    return q


def forward(spec: NetworkSpec, params: Params, pp, pet, x0=None, dates=None) -> SimulationTrace:
    """Run the network over a forcing series and record everything."""
    pp = np.asarray(pp, dtype=float)
    pet = np.asarray(pet, dtype=float)
    if pp.shape != pet.shape or pp.ndim != 1:
        raise ValueError("pp and pet must be 1-D series of equal length")
    if np.any(pp < 0) or np.any(pet < 0):
        raise ValueError("forcing must be nonnegative")
    x0 = np.zeros(spec.n_nodes) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (spec.n_nodes,) or np.any(x0 < 0):
        raise ValueError(f"x0 must hold {spec.n_nodes} nonnegative states")
    T, n = len(pp), spec.n_nodes
    rec = {name: np.zeros((T, n)) for name in
           ("x", "g_out", "g_loss_raw", "g_loss_con", "g_rem", "out", "loss", "inflow")}
    rec["paths"] = np.zeros((T, spec.n_final))
    q = _run(spec, _as_lists(params), pp.tolist(), pet.tolist(), x0.tolist(), rec)
    return SimulationTrace(spec=spec, q=np.array(q, dtype=float), dates=dates, pp=pp, pet=pet,
                           **rec)


def simulate_q(spec: NetworkSpec, params: Params, pp, pet, x0=None) -> np.ndarray:
    return forward(spec, params, pp, pet, x0).q


class NetworkModel:
    """Adapter exposing a network spec to the trainer."""

    kind = "mcp-network"

    def __init__(self, spec: NetworkSpec, state_scale: float = STATE_SCALE):
        self.spec = spec
        self.slots = layout(spec)
        self.state_scale = float(state_scale)

    def slot_scales(self) -> np.ndarray:
        """Typical magnitude of each trainable slot.

        State coefficients multiply storages of hundreds of mm, so they are
        scaled by ``1 / state_scale``; everything else by 1.
        """
        return np.array([1.0 / self.state_scale if key.endswith("state_coef") else 1.0
                         for key, _ in self.slots])

    @property
    def n_params(self) -> int:
        return len(self.slots)

    def default_params(self) -> Params:
        return default_params(self.spec)

    def flatten(self, params: Params) -> np.ndarray:
        return flatten(self.spec, params)

    def unflatten(self, theta, base: Optional[Params] = None) -> Params:
        return unflatten(self.spec, theta, base)

    def random_params(self, rng: np.random.Generator) -> Params:
        """Uniform(-1, 1) in scaled coordinates (see :meth:`slot_scales`)."""
        return self.unflatten(rng.uniform(-1.0, 1.0, self.n_params) * self.slot_scales())

    def expression(self, theta: Sequence, pp, pet, base: Optional[Params] = None) -> list:
        """Streamflow series as expressions of ``theta`` (floats or tape vars)."""
        P = _as_lists(base or default_params(self.spec))
        for (key, i), v in zip(self.slots, theta):
            P[key][i] = v
        x0 = [0.0] * self.spec.n_nodes
        return _run(self.spec, P, list(map(float, pp)), list(map(float, pet)), x0)

    def simulate(self, params: Params, pp, pet) -> np.ndarray:
        return simulate_q(self.spec, params, pp, pet)


# ---------------------------------------------------------------------------
# interpretability exports


@dataclass
class GateCurve:
    x: np.ndarray
    g_out: np.ndarray
    threshold: float
    plateau: float


def export_gate_functions(spec: NetworkSpec, params: Params, layer: int, node: int, x_grid,
                          other_states: Optional[Sequence[float]] = None,
                          pet: float = 0.0) -> GateCurve:
    """Output gate of node ``(layer, node)`` (0-based) along a grid of its own state.

    Other states of the layer are held at ``other_states`` (default 0).
    ``threshold`` is the smallest grid value with ``g_out > 1e-3`` (NaN when
    the gate never opens); ``plateau`` is the upper bound ``kappa_out``.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if np.any(np.diff(x_grid) < 0):
        raise ValueError("x_grid must be sorted ascending")
    n = spec.layer_sizes[layer]
    states = [0.0] * n if other_states is None else [float(s) for s in other_states]
    _check_len(states, n, "other_states")
    p = node_params(_as_lists(params), spec, layer, node)
    kappas = softmax_kappas(p.logit_out, p.logit_loss, p.logit_rem)
    g = np.empty_like(x_grid)
    for i, x in enumerate(x_grid):
        states[node] = float(x)
        g[i] = compute_gates(p, states, node, pet, spec.sharing, kappas).g_out
    above = np.nonzero(g > 1e-3)[0]
    threshold = float(x_grid[above[0]]) if above.size else math.nan
    return GateCurve(x_grid, g, threshold, float(kappas[0]))


def water_years(dates) -> np.ndarray:
    """Water year (Oct 1 - Sep 30, labelled by the ending year) of each date."""
    d = np.asarray(dates, dtype="datetime64[D]")
    years = d.astype("datetime64[Y]").astype(int) + 1970
    months = d.astype("datetime64[M]").astype(int) % 12 + 1
    return years + (months >= 10)


def _ratios(block: np.ndarray) -> np.ndarray:
    total = block.sum(axis=1, keepdims=True)
    out = np.zeros_like(block)
    np.divide(block, total, out=out, where=total > 0)
    return out


def export_timeseries(trace: SimulationTrace, water_year: int) -> Dict[str, np.ndarray]:
    """Columns describing one water year of a trace.

    States and output gates are given with their per-layer fractions; final
    layer paths are given as cumulative (within the year) contributions and
    their fractions of the cumulative total.
    """
    if trace.dates is None:
        raise ValueError("trace carries no dates")
    wy = water_years(trace.dates)
    sel = np.nonzero(wy == water_year)[0]
    if sel.size == 0:
        raise ValueError(f"water year {water_year} not in trace")
    spec = trace.spec
    labels = spec.node_labels()
    cols: Dict[str, np.ndarray] = {"date": np.asarray(trace.dates)[sel],
                                   "q_sim": trace.q[sel]}
    offsets = np.cumsum((0,) + spec.layer_sizes)
    for name, arr in (("X", trace.x), ("GO", trace.g_out)):
        for l in range(spec.n_layers):
            block = arr[sel, offsets[l]:offsets[l + 1]]
            ratio = _ratios(block)
            for k in range(block.shape[1]):
                cols[f"{name}_{labels[offsets[l] + k]}"] = block[:, k]
                cols[f"{name}ratio_{labels[offsets[l] + k]}"] = ratio[:, k]
    cum = np.cumsum(trace.paths[sel], axis=0)
    ratio = _ratios(cum)
    for k in range(spec.n_final):
        cols[f"Qcum_{k + 1}"] = cum[:, k]
        cols[f"Qratio_{k + 1}"] = ratio[:, k]
    return cols


def trace_columns(trace: SimulationTrace, q_obs=None) -> Dict[str, np.ndarray]:
    """Flat per-step table of a trace (the trace CSV layout)."""
    cols: Dict[str, np.ndarray] = {}
    if trace.dates is not None:
        cols["date"] = np.asarray(trace.dates)
    cols["q_sim"] = trace.q
    if q_obs is not None:
        cols["q_obs"] = np.asarray(q_obs, dtype=float)
    labels = trace.spec.node_labels()
    for name, arr in (("X", trace.x), ("GO", trace.g_out), ("GLcon", trace.g_loss_con),
                      ("O", trace.out), ("L", trace.loss)):
        for c, lab in enumerate(labels):
            cols[f"{name}_{lab}"] = arr[:, c]
    return cols
