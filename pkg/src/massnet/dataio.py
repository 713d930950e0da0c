"""Daily forcing/streamflow data: CSV I/O, the paired split, spin-up, synthetic data."""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .network import NetworkSpec, Params, default_params, simulate_q, water_years

TRAIN, SELECT, TEST, SPINUP = "Train", "Select", "Test", "SpinUp"
_CYCLE = (TRAIN, TEST, SELECT, TRAIN)
HEADER = ("date", "pp", "pet", "qq")


class DataError(ValueError):
    """Invalid input data; ``line`` is the 1-based file line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class Dataset:
    dates: np.ndarray  # datetime64[D]
    pp: np.ndarray
    pet: np.ndarray
    qq: np.ndarray

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.pp = np.asarray(self.pp, dtype=float)
        self.pet = np.asarray(self.pet, dtype=float)
        self.qq = np.asarray(self.qq, dtype=float)
        n = self.dates.shape[0]
        if not (self.pp.shape == self.pet.shape == self.qq.shape == (n,)):
            raise DataError("columns differ in length")
        if n > 1 and np.any(np.diff(self.dates).astype(int) != 1):
            raise DataError("dates are not contiguous daily steps")
        for name in ("pp", "pet", "qq"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise DataError(f"column {name} must be finite and nonnegative")

    def __len__(self) -> int:
        return self.dates.shape[0]

    @property
    def water_year(self) -> np.ndarray:
        return water_years(self.dates)


def _fmt(x: float) -> str:
    return repr(float(x))


def load_csv(path) -> Dataset:
    """Read a ``date,pp,pet,qq`` file; lines starting with ``#`` are comments."""
    path = Path(path)
    dates, cols = [], ([], [], [])
    header_seen = False
    prev = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if not header_seen:
                if tuple(c.strip() for c in row) != HEADER:
                    raise DataError(f"expected header {','.join(HEADER)}", lineno)
                header_seen = True
                continue
            if len(row) != 4:
                raise DataError(f"expected 4 fields, got {len(row)}", lineno)
            try:
                day = dt.date.fromisoformat(row[0].strip())
                vals = [float(x) for x in row[1:]]
            except ValueError as err:
                raise DataError(f"malformed row ({err})", lineno) from None
            for name, v in zip(HEADER[1:], vals):
                if not np.isfinite(v) or v < 0:
                    raise DataError(f"{name} must be finite and nonnegative, got {v}", lineno)
            if prev is not None and (day - prev).days != 1:
                raise DataError(f"date gap or disorder: {prev} -> {day}", lineno)
            prev = day
            dates.append(day)
            for c, v in zip(cols, vals):
                c.append(v)
    if not header_seen:
        raise DataError("empty file")
    return Dataset(np.array(dates, dtype="datetime64[D]"), *cols)


def dataset_csv(ds: Dataset, comment: Optional[str] = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for d, p, e, q in zip(ds.dates.astype(str), ds.pp, ds.pet, ds.qq):
        w.writerow((d, _fmt(p), _fmt(e), _fmt(q)))
    return buf.getvalue()


def write_csv(ds: Dataset, path, comment: Optional[str] = None) -> None:
    Path(path).write_text(dataset_csv(ds, comment))


# ---------------------------------------------------------------------------
# splitting


def split(data) -> np.ndarray:
    """Label every step Train/Select/Test by pairing sorted flows.

    Flows are ranked largest first (ties by original position); rank i is
    paired with rank N+1-i and pairs are dealt cyclically to
    Train, Test, Select, Train.  With an odd length the median step is dealt
    last on its own.
    """
    qq = np.asarray(data.qq if isinstance(data, Dataset) else data, dtype=float)
    n = qq.shape[0]
    order = np.argsort(-qq, kind="stable")
    labels = np.empty(n, dtype=object)
    n_pairs = n // 2
    for p in range(n_pairs):
        lab = _CYCLE[p % 4]
        labels[order[p]] = lab
        labels[order[n - 1 - p]] = lab
    if n % 2:
        labels[order[n_pairs]] = _CYCLE[n_pairs % 4]
    return labels.astype(str)


def split_counts(labels) -> dict:
    labels = np.asarray(labels)
    return {lab: int(np.sum(labels == lab)) for lab in (TRAIN, SELECT, TEST)}


def split_csv(ds: Dataset, labels, comment: Optional[str] = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("date", "label"))
    for d, lab in zip(ds.dates.astype(str), labels):
        w.writerow((d, lab))
    return buf.getvalue()


def load_split(path, ds: Dataset) -> np.ndarray:
    labels = []
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or tuple(rows[0]) != ("date", "label"):
        raise DataError("split file must have header date,label")
    dates = [r[0] for r in rows[1:]]
    labels = [r[1] for r in rows[1:]]
    if dates != list(ds.dates.astype(str)):
        raise DataError("split file dates do not match the dataset")
    bad = set(labels) - {TRAIN, SELECT, TEST}
    if bad:
        raise DataError(f"unknown labels {sorted(bad)}")
    return np.array(labels)


# ---------------------------------------------------------------------------
# spin-up


def first_water_year(ds: Dataset) -> np.ndarray:
    """Indices of the first water year; it must be complete."""
    if len(ds) == 0:
        raise DataError("empty dataset")
    wy = ds.water_year
    first = wy[0]
    idx = np.nonzero(wy == first)[0]
    start = np.datetime64(f"{first - 1}-10-01")
    end = np.datetime64(f"{first}-09-30")
    if ds.dates[0] != start or ds.dates[idx[-1]] != end:
        raise DataError(f"first water year {first} is incomplete")
    return idx


def build_spinup(ds: Dataset, repeats: int = 3) -> Tuple[np.ndarray, np.ndarray, int]:
    """Forcing with the first water year prepended ``repeats`` times.

    Returns ``(pp, pet, spinup_length)``.
    """
    idx = first_water_year(ds)
    pp = np.concatenate([np.tile(ds.pp[idx], repeats), ds.pp])
    pet = np.concatenate([np.tile(ds.pet[idx], repeats), ds.pet])
    return pp, pet, repeats * idx.size


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class PrecipModel:
    wet_probability: float = 0.3
    mean_depth: float = 10.0  # mm on wet days
    pet_mean: float = 3.0
    pet_amplitude: float = 2.5


def synth_forcing(rng: np.random.Generator, dates, model: PrecipModel = PrecipModel()):
    n = len(dates)
    wet = rng.random(n) < model.wet_probability
    depth = rng.exponential(model.mean_depth, n)
    pp = np.where(wet, depth, 0.0)
    doy = (np.asarray(dates, dtype="datetime64[D]")
           - np.asarray(dates, dtype="datetime64[Y]")).astype(int)
    # peak demand in mid-July
    pet = model.pet_mean + model.pet_amplitude * np.cos(2 * np.pi * (doy - 196) / 365.25)
    return pp, np.maximum(pet, 0.0)


def water_year_dates(first_wy: int, years: int) -> np.ndarray:
    start = np.datetime64(f"{first_wy - 1}-10-01")
    end = np.datetime64(f"{first_wy - 1 + years}-10-01")
    return np.arange(start, end, dtype="datetime64[D]")


REFERENCE_NODE = {"out_bias": -3.0, "out_state_coef": 0.02, "loss_bias": 0.5,
                  "loss_pet_coef": 0.3, "loss_state_coef": 0.005, "logit_out": -1.0,
                  "logit_loss": -0.5, "logit_rem": 1.0}


def reference_params(spec: Optional[NetworkSpec] = None) -> Params:
    """Weights of the default synthetic generator, a single DS node.

    Its output gate opens around 150 mm of storage and it loses up to PET.
    """
    spec = spec or NetworkSpec("DS", "None", (1,))
    if spec.n_nodes != 1:
        raise ValueError("the reference generator is a single-node network")
    params = default_params(spec)
    for name, v in REFERENCE_NODE.items():
        params[f"1/1/{name}"][:] = v
    return params


def synth_generate(spec: NetworkSpec, params: Params, seed: int, years: int,
                   first_wy: int = 1949, model: PrecipModel = PrecipModel(),
                   spinup: bool = True) -> Dataset:
    """Dataset whose streamflow is produced by a known network.

    With ``spinup`` the generator is run with the same three-year spin-up as
    training uses, so a model identical to the generator reproduces ``qq``
    exactly.
    """
    rng = np.random.default_rng(seed)
    dates = water_year_dates(first_wy, years)
    pp, pet = synth_forcing(rng, dates, model)
    ds = Dataset(dates, pp, pet, np.zeros(len(dates)))
    if spinup:
        pp_ext, pet_ext, n_spin = build_spinup(ds)
    else:
        pp_ext, pet_ext, n_spin = pp, pet, 0
    q = simulate_q(spec, params, pp_ext, pet_ext)[n_spin:]
    ds.qq = np.maximum(q, 0.0)
    return ds
