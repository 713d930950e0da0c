"""Post-training ablation of final-layer flow paths, without retraining.

``PathOnly`` zeroes the realized output weight of each removed node; the
node keeps evolving and its storage still feeds the gates of its
neighbours.  ``FullNode`` also cuts every sharing coefficient that reads a
removed node's state and stops its input, so it stays empty.  Removed nodes
remain in the parameter set (masked), which keeps pruned files comparable
with the parent.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .dataio import Dataset, build_spinup
from .metrics import annual_distribution
from .network import NetType, NetworkSpec, Params, node_key, simulate_q

LEADERBOARD_HEADER = ("removed_indices", "mode", "median_kge_ss", "min_kge_ss", "q25", "q75")
_REMOVED_LOGIT = -1e300  # exp() of this is exactly 0


class PruneMode(str, enum.Enum):
    PATH_ONLY = "PathOnly"
    FULL_NODE = "FullNode"

    @classmethod
    def parse(cls, text) -> "PruneMode":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        aliases = {"pathonly": cls.PATH_ONLY, "path": cls.PATH_ONLY, "p": cls.PATH_ONLY,
                   "fullnode": cls.FULL_NODE, "full": cls.FULL_NODE, "f": cls.FULL_NODE}
        if key not in aliases:
            raise ValueError(f"unknown prune mode {text!r} (PathOnly or FullNode)")
        return aliases[key]


def _check_removed(spec: NetworkSpec, removed: Iterable[int]) -> Tuple[int, ...]:
    rem = tuple(sorted(set(int(j) for j in removed)))
    nf = spec.n_final
    if any(not 0 <= j < nf for j in rem):
        raise ValueError(f"removed indices must lie in 0..{nf - 1}, got {rem}")
    if len(rem) == nf:
        raise ValueError("cannot remove every final-layer node")
    return rem


def prune(params: Params, spec: NetworkSpec, removed: Iterable[int], mode="PathOnly",
          renormalize: bool = False) -> Params:
    """Pruned copy of ``params``; ``removed`` holds 0-based final-layer indices.

    With ``renormalize`` a DS network's surviving output weights are rescaled
    to sum to one again (off by default: the removed mass is simply lost).
    """
    mode = PruneMode.parse(mode)
    rem = _check_removed(spec, removed)
    out = {k: np.array(v, dtype=float) for k, v in params.items()}
    nf = spec.n_final
    mask = np.array(out.get("mix/out_mask", np.ones(nf)), dtype=float)
    mask[list(rem)] = 0.0
    out["mix/out_mask"] = mask
    if renormalize:
        if spec.ntype is not NetType.DS:
            raise ValueError("renormalization applies to DS networks only")
        if rem:
            out["mix/out_weights"][list(rem)] = _REMOVED_LOGIT
    if mode is PruneMode.FULL_NODE and rem:
        last = spec.n_layers - 1
        for i in range(nf):
            if i in rem:
                continue
            for name in ("out_state_coef", "loss_state_coef"):
                out[node_key(last, i, name)][list(rem)] = 0.0
        inmask = np.array(out.get("mix/final_in_mask", np.ones(nf)), dtype=float)
        inmask[list(rem)] = 0.0
        out["mix/final_in_mask"] = inmask
    return out


@dataclass
class PruneCase:
    removed: Tuple[int, ...]  # 0-based
    mode: PruneMode
    params: Params
    annual: List[float]
    median: float
    minimum: float
    q25: float
    q75: float

    @property
    def label(self) -> str:
        return ";".join(str(j + 1) for j in self.removed)

    def row(self) -> tuple:
        return (self.label, self.mode.value, self.median, self.minimum, self.q25, self.q75)


@dataclass
class PruneSelection:
    best: PruneCase
    leaderboard: List[PruneCase]


def prune_cases(n_final: int, k: int) -> List[Tuple[int, ...]]:
    if not 1 <= k < n_final:
        raise ValueError(f"k must satisfy 1 <= k < {n_final}, got {k}")
    return list(itertools.combinations(range(n_final), k))


def evaluate_case(params: Params, spec: NetworkSpec, removed: Sequence[int], mode,
                  ds: Dataset, renormalize: bool = False) -> PruneCase:
    mode = PruneMode.parse(mode)
    pruned = prune(params, spec, removed, mode, renormalize)
    pp, pet, n_spin = build_spinup(ds)
    q = simulate_q(spec, pruned, pp, pet)[n_spin:]
    dist = annual_distribution(q, ds.qq, ds.water_year)
    s = dist.stats
    return PruneCase(_check_removed(spec, removed), mode, pruned, dist.values, s["median"],
                     s["min"], s["25%"], s["75%"])


def _rank_key(case: PruneCase):
    med = case.median if not math.isnan(case.median) else -math.inf
    return (-med, case.removed)


def enumerate_and_select(params: Params, spec: NetworkSpec, k: int, mode, ds: Dataset,
                         renormalize: bool = False) -> PruneSelection:
    """Evaluate every way of removing ``k`` final-layer nodes.

    Cases are ranked by median annual KGE_ss (descending), ties broken by the
    removed indices in lexicographic order.
    """
    cases = [evaluate_case(params, spec, rem, mode, ds, renormalize)
             for rem in prune_cases(spec.n_final, k)]
    board = sorted(cases, key=_rank_key)
    return PruneSelection(board[0], board)


def leaderboard_rows(selection: PruneSelection) -> List[tuple]:
    return [case.row() for case in selection.leaderboard]
