"""The mass-conserving perceptron node.

A node holds one mass store ``X`` (mm).  At every step a fraction ``g_out`` of
the store leaves as output, a fraction ``g_loss_con`` leaves as evaporative
loss and the rest is remembered, then the input mass is added::

    O = g_out * X,   L = g_loss_con * X,   X' = g_rem * X + U

with ``g_out + g_loss_con + g_rem = 1``, so ``X' = X - O - L + U`` holds exactly
up to rounding.

All functions work on plain floats or on :class:`massnet.autodiff.Var`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence, Tuple

from . import autodiff as ad

EPS_STATE = 1e-9  # mm; guards pet / X as X -> 0


class Sharing(str, enum.Enum):
    """Which gates of a node may read the other cell states of its layer."""

    NONE = "None"
    SAL = "SAL"
    SAO = "SAO"
    SALO = "SALO"

    @property
    def output_shared(self) -> bool:
        return self in (Sharing.SAO, Sharing.SALO)

    @property
    def loss_shared(self) -> bool:
        return self in (Sharing.SAL, Sharing.SALO)

    @classmethod
    def parse(cls, text) -> "Sharing":
        if isinstance(text, cls):
            return text
        key = str(text).strip().upper()
        if key in ("NONE", ""):
            return cls.NONE
        return cls(key)


@dataclass
class NodeParams:
    """Trainable weights of one augmented node.

    ``out_state_coef`` and ``loss_state_coef`` have one entry per node in the
    layer; entry ``own_index`` multiplies the node's own state.
    """

    out_bias: float = 0.0
    out_state_coef: List[float] = field(default_factory=lambda: [0.0])
    loss_bias: float = 0.0
    loss_pet_coef: float = 0.0
    loss_state_coef: List[float] = field(default_factory=lambda: [0.0])
    logit_out: float = 0.0
    logit_loss: float = 0.0
    logit_rem: float = 0.0


class GateValues(NamedTuple):
    g_out: float
    g_loss_raw: float
    g_loss_con: float
    g_rem: float


class NodeFluxes(NamedTuple):
    output: float
    loss: float
    input: float
    pet: float


def softmax_kappas(logit_out, logit_loss, logit_rem) -> Tuple:
    """Split unit mass over (output, loss, remember) with a stabilized softmax."""
    m = ad.maximum(ad.maximum(ad.value_of(logit_out), ad.value_of(logit_loss)),
                   ad.value_of(logit_rem))
    # the shift is a constant: softmax is shift invariant, so no gradient is lost
    e_out = ad.exp(logit_out - m)
    e_loss = ad.exp(logit_loss - m)
    e_rem = ad.exp(logit_rem - m)
    total = e_out + e_loss + e_rem
    return e_out / total, e_loss / total, e_rem / total


def _linear(bias, coefs: Sequence, states: Sequence, own_index: int, shared: bool):
    s = bias + coefs[own_index] * states[own_index]
    if shared:
        for j, x in enumerate(states):
            if j != own_index:
                s = s + coefs[j] * x
    return s


def compute_gates(params: NodeParams, layer_states: Sequence, own_index: int, pet,
                  sharing: Sharing = Sharing.NONE, kappas=None) -> GateValues:
    """Gate values of one node given the time-t states of its layer.

    ``kappas`` may be passed in precomputed (they depend on parameters only).
    """
    sharing = Sharing.parse(sharing)
    if kappas is None:
        kappas = softmax_kappas(params.logit_out, params.logit_loss, params.logit_rem)
    k_out, k_loss = kappas[0], kappas[1]
    s_out = _linear(params.out_bias, params.out_state_coef, layer_states, own_index,
                    sharing.output_shared)
    s_loss = _linear(params.loss_bias + params.loss_pet_coef * pet, params.loss_state_coef,
                     layer_states, own_index, sharing.loss_shared)
    g_out = k_out * ad.sigmoid(s_out)
    g_loss = k_loss * ad.sigmoid(s_loss)
    cap = pet / ad.maximum(layer_states[own_index], EPS_STATE)
    g_loss_con = g_loss - ad.relu(g_loss - cap)
    g_rem = 1.0 - g_out - g_loss_con
    return GateValues(g_out, g_loss, g_loss_con, g_rem)


def node_step(state, input_mass, pet, gates: GateValues):
    """Advance one node by one step; returns ``(new_state, fluxes)``."""
    out = gates.g_out * state
    loss = gates.g_loss_con * state
    new_state = gates.g_rem * state + input_mass
    return new_state, NodeFluxes(out, loss, input_mass, pet)


def linear_reservoir_step(state, input_mass, kappa_out):
    """Node with constant output gate ``kappa_out`` and no loss (Nash reservoir)."""
    k = ad.value_of(kappa_out)
    if not 0.0 < k < 1.0:
        raise ValueError(f"kappa_out must lie in (0, 1), got {k}")
    gates = GateValues(kappa_out, 0.0, 0.0, 1.0 - kappa_out)
    return node_step(state, input_mass, 0.0, gates)
