"""Parameter files: a spec plus named weight arrays as JSON.

Floats are written with ``repr`` precision, so a save/load round trip is
exact.  The ``kind`` field of the spec selects the model family.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .lstm import LstmModel, LstmSpec
from .network import NetworkModel, NetworkSpec, Params

Spec = Union[NetworkSpec, LstmSpec]
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def spec_from_dict(d: dict) -> Spec:
    kind = d.get("kind")
    if kind == "mcp-network":
        return NetworkSpec.from_dict(d)
    if kind == "lstm":
        return LstmSpec.from_dict(d)
    raise CheckpointError(f"unknown model kind {kind!r}")


def model_for(spec: Spec):
    return LstmModel(spec) if isinstance(spec, LstmSpec) else NetworkModel(spec)


def dumps(spec: Spec, params: Params, meta: Optional[dict] = None) -> str:
    doc = {"format": FORMAT_VERSION, "spec": spec.to_dict(),
           "params": {k: [float(x) for x in np.asarray(v, dtype=float).ravel()]
                      for k, v in sorted(params.items())},
           "meta": meta or {}}
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def loads(text: str) -> Tuple[Spec, Params, dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise CheckpointError(f"line {err.lineno}: {err.msg}") from None
    if not isinstance(doc, dict) or "spec" not in doc or "params" not in doc:
        raise CheckpointError("not a parameter file (needs 'spec' and 'params')")
    spec = spec_from_dict(doc["spec"])
    params = {k: np.array(v, dtype=float) for k, v in doc["params"].items()}
    expected = model_for(spec).default_params()
    missing = sorted(set(expected) - set(params))
    if missing:
        raise CheckpointError(f"parameter file lacks {', '.join(missing[:5])}")
    for k, v in expected.items():
        if params[k].shape != v.shape:
            raise CheckpointError(f"{k}: expected {v.size} values, got {params[k].size}")
    return spec, params, doc.get("meta", {})


def save(path, spec: Spec, params: Params, meta: Optional[dict] = None) -> None:
    Path(path).write_text(dumps(spec, params, meta))


def load(path) -> Tuple[Spec, Params, dict]:
    return loads(Path(path).read_text())


def parse_model_spec(text: str, mlb_input_bias: bool = True) -> Spec:
    """``"LSTM(5)"`` / ``"LSTM(5,5)"`` or any form :meth:`NetworkSpec.parse` accepts."""
    m = re.fullmatch(r"\s*LSTM\(([\d,\s]+)\)\s*", text, flags=re.IGNORECASE)
    if m:
        return LstmSpec(tuple(int(s) for s in m.group(1).split(",") if s.strip()))
    return NetworkSpec.parse(text, mlb_input_bias)
