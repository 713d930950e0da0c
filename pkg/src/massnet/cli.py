"""``massnet`` command line: split, train, evaluate, prune, export, count, synth.

Every option may also come from a JSON experiment file (``--config``); keys
are the long option names with dashes replaced by underscores, relative
paths are resolved against the file's directory, and flags given on the
command line win.  Outputs go to ``--out`` (default ``$MASSNET_OUTPUT_DIR``
or ``./massnet_out``); each one starts with a comment naming the command,
a hash of the effective configuration and the seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import checkpoint as ckpt
from . import dataio, plotting
from .lstm import LstmSpec
from .metrics import MetricError, annual_distribution, flow_group_metrics, kge
from .network import (NetworkSpec, SimulationError, export_gate_functions, export_timeseries,
                      forward, node_params, trace_columns)
from .pruning import LEADERBOARD_HEADER, PruneMode, enumerate_and_select, leaderboard_rows
from .trainer import (TrainConfig, TrainingError, init_stagewise, noise_init, substream,
                      train)

log = logging.getLogger("massnet")

OUTPUT_ENV = "MASSNET_OUTPUT_DIR"
STAT_ROWS = ("min", "5%", "25%", "median", "75%", "95%")
COMPONENTS = ("kge", "kge_ss", "rho", "alpha", "beta", "alpha_star", "beta_star")

# key -> (type, default); also the set of keys an experiment file may use
KEYS = {
    "data": (str, None), "split": (str, None), "spec": (str, "MN_None^DS(1)"),
    "mlb_input_bias": (bool, True), "checkpoint": (list, None),
    "epochs": (int, 1000), "restarts": (int, 10), "learning_rate": (float, 0.01),
    "init": (str, "uniform"), "init_from": (str, None), "noise_fraction": (float, None),
    "years": (int, 10), "first_water_year": (int, 1949), "generator": (str, None),
    "k": (int, 1), "mode": (str, "PathOnly"), "renormalize": (bool, False),
    "layer": (int, 1), "node": (int, None), "x_min": (float, 0.0), "x_max": (float, 500.0),
    "n_points": (int, 501), "pet": (float, 0.0), "water_year": (int, None),
    "seed": (int, 0), "threads": (int, 1), "output_dir": (str, None),
}
PATH_KEYS = ("data", "split", "checkpoint", "init_from", "generator")
# keys that do not change results and stay out of the config hash
_UNHASHED = ("output_dir", "threads")


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _coerce(key: str, value):
    typ, _ = KEYS[key]
    if value is None:
        return None
    if typ is list:
        return [str(v) for v in value] if isinstance(value, (list, tuple)) else [str(value)]
    if typ is bool:
        if not isinstance(value, bool):
            raise UsageError(f"config key {key!r} must be true or false")
        return value
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise UsageError(f"config key {key!r}: cannot read {value!r} as {typ.__name__}") from None


def load_config(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"{path}: line {err.lineno}: {err.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: experiment file must hold a JSON object")
    unknown = sorted(set(doc) - set(KEYS))
    if unknown:
        raise UsageError(f"{path}: unknown keys {', '.join(unknown)}")
    out = {k: _coerce(k, v) for k, v in doc.items()}
    base = path.parent
    for k in PATH_KEYS:
        if out.get(k) is None:
            continue
        if k == "checkpoint":
            out[k] = [str(base / p) for p in out[k]]
        else:
            out[k] = str(base / out[k])
    return out


def effective_config(args: argparse.Namespace) -> dict:
    """Defaults, overridden by the experiment file, overridden by flags."""
    cfg = {k: default for k, (_, default) in KEYS.items()}
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for k in KEYS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = _coerce(k, v)
    if cfg["output_dir"] is None:
        cfg["output_dir"] = os.environ.get(OUTPUT_ENV) or "massnet_out"
    return cfg


def _file_digest(path) -> str:
    if not Path(path).is_file():
        raise UsageError(f"file {path} not found")
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(command: str, cfg: dict, used: Iterable[str]) -> str:
    doc = {"command": command}
    for k in sorted(used):
        if k in _UNHASHED:
            continue
        v = cfg.get(k)
        if k in PATH_KEYS and v is not None:
            paths = v if isinstance(v, list) else [v]
            v = [_file_digest(p) for p in paths]
        doc[k] = v
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")
        paths = cfg[k] if isinstance(cfg[k], list) else [cfg[k]]
        if k in PATH_KEYS:
            for p in paths:
                if not Path(p).is_file():
                    raise UsageError(f"{k}: file {p} not found")


# ---------------------------------------------------------------------------
# output helpers


class Run:
    """Output directory plus the provenance header stamped on every file."""

    def __init__(self, command: str, cfg: dict, used: Sequence[str]):
        self.command = command
        self.cfg = cfg
        self.hash = config_hash(command, cfg, used)
        self.seed = cfg["seed"]
        self.header = f"massnet {command} config_hash={self.hash} seed={self.seed}"
        self.out = Path(cfg["output_dir"])
        self.written: List[Path] = []

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.written.append(p)
        return p

    def meta(self, **extra) -> dict:
        return {"command": self.command, "config_hash": self.hash, "seed": self.seed, **extra}

    def table(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        text = table_text(header, rows, self.header)
        self.path(name).write_text(text)
        return text


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def table_text(header: Sequence[str], rows: Iterable[Sequence], comment: str = "") -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _columns_rows(cols: Dict[str, np.ndarray]):
    names = list(cols)
    n = len(next(iter(cols.values())))
    rows = []
    for i in range(n):
        row = []
        for k in names:
            v = cols[k][i]
            row.append(str(v) if k == "date" else float(v))
        rows.append(row)
    return names, rows


def _load_dataset(cfg: dict) -> dataio.Dataset:
    _require(cfg, "data")
    return dataio.load_csv(cfg["data"])


def _labels(cfg: dict, ds: dataio.Dataset) -> np.ndarray:
    if cfg.get("split"):
        _require(cfg, "split")
        return dataio.load_split(cfg["split"], ds)
    return dataio.split(ds)


def _load_network(path):
    spec, params, meta = ckpt.load(path)
    if not isinstance(spec, NetworkSpec):
        raise UsageError(f"{path} holds an LSTM; this command needs a mass-conserving network")
    return spec, params, meta


def _simulate(spec, params, ds: dataio.Dataset) -> np.ndarray:
    pp, pet, n_spin = dataio.build_spinup(ds)
    return ckpt.model_for(spec).simulate(params, pp, pet)[n_spin:]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: dict) -> int:
    used = ["spec", "mlb_input_bias", "generator", "years", "first_water_year", "seed"]
    run = Run("synth", cfg, used)
    if cfg["generator"]:
        _require(cfg, "generator")
        spec, params, _ = _load_network(cfg["generator"])
    else:
        spec = ckpt.parse_model_spec(cfg["spec"], cfg["mlb_input_bias"])
        if not isinstance(spec, NetworkSpec):
            raise UsageError("synthetic data needs a mass-conserving network generator")
        if spec.n_nodes == 1 and spec.ntype.value == "DS":
            params = dataio.reference_params(spec)
        else:
            params = ckpt.model_for(spec).random_params(substream(run.seed, "generator"))
    if cfg["years"] < 1:
        raise UsageError("--years must be at least 1")
    forcing_seed = int(substream(run.seed, "synth").integers(2 ** 63 - 1))
    ds = dataio.synth_generate(spec, params, forcing_seed, cfg["years"], cfg["first_water_year"])
    dataio.write_csv(ds, run.path("data.csv"), run.header)
    ckpt.save(run.path("generator.json"), spec, params, run.meta(role="generator"))
    print(f"{len(ds)} days, {cfg['years']} water years, mean qq {ds.qq.mean():.4f} mm/day")
    print(f"wrote {run.out / 'data.csv'}")
    return 0


def cmd_split(cfg: dict) -> int:
    run = Run("split", cfg, ["data"])
    ds = _load_dataset(cfg)
    labels = dataio.split(ds)
    run.path("split.csv").write_text(dataio.split_csv(ds, labels, run.header))
    counts = dataio.split_counts(labels)
    sys.stdout.write(table_text(("label", "count"), counts.items()))
    return 0


def _init_fn(cfg: dict, spec, model):
    scheme = cfg["init"].lower()
    if scheme == "uniform":
        return None
    if isinstance(spec, LstmSpec):
        raise UsageError("LSTM training supports --init uniform only")
    _require(cfg, "init_from")
    prev_spec, prev_params, _ = _load_network(cfg["init_from"])
    if scheme == "stagewise":
        return lambda rng, r: init_stagewise(prev_spec, prev_params, spec, rng)
    if scheme == "noise":
        if prev_spec.n_nodes != 1:
            raise UsageError("--init noise starts from a single-node checkpoint")
        trained = node_params(prev_params, prev_spec, 0, 0)
        return noise_init(trained, spec, cfg["noise_fraction"])
    raise UsageError(f"unknown --init {cfg['init']!r} (uniform, noise or stagewise)")


def cmd_train(cfg: dict) -> int:
    used = ["data", "split", "spec", "mlb_input_bias", "epochs", "restarts", "learning_rate",
            "init", "init_from", "noise_fraction", "seed"]
    run = Run("train", cfg, used)
    ds = _load_dataset(cfg)
    labels = _labels(cfg, ds)
    spec = ckpt.parse_model_spec(cfg["spec"], cfg["mlb_input_bias"])
    model = ckpt.model_for(spec)
    try:
        config = TrainConfig(learning_rate=cfg["learning_rate"], epochs=cfg["epochs"],
                             restarts=cfg["restarts"], seed=run.seed, threads=cfg["threads"])
    except ValueError as err:
        raise UsageError(str(err)) from None
    init = _init_fn(cfg, spec, model)
    result = train(model, ds, labels, config, init)
    best = result.best
    ckpt.save(run.path("checkpoint.json"), spec, result.best_params,
              run.meta(restart=best.index, train_kge=best.train_kge,
                       select_kge_ss=best.select_kge_ss))
    rows = [(int(r), int(e), loss, tk, sk) for r, e, loss, tk, sk in result.history]
    run.table("train_log.csv", ("restart", "epoch", "loss", "train_kge", "select_kge_ss"), rows)
    run.table("restarts.csv", ("restart", "final_loss", "train_kge", "select_kge_ss", "diverged",
                               "best"),
              [(r.index, r.final_loss, r.train_kge, r.select_kge_ss, r.diverged,
                r.index == best.index) for r in result.restarts])
    if len(result.history):
        plotting.training_curves(result.history, run.path("training.png"), note=run.header)
    print(f"{spec.label}: {model.n_params} parameters")
    print(f"selection KGE_ss {best.select_kge_ss:.6f} (restart {best.index} of "
          f"{config.restarts}, train KGE {best.train_kge:.6f})")
    return 0


def _unique_labels(specs) -> List[str]:
    labels, seen = [], {}
    for s in specs:
        seen[s.label] = seen.get(s.label, 0) + 1
        labels.append(s.label if seen[s.label] == 1 else f"{s.label}#{seen[s.label]}")
    return labels


def cmd_evaluate(cfg: dict) -> int:
    run = Run("evaluate", cfg, ["checkpoint", "data", "split"])
    _require(cfg, "checkpoint")
    ds = _load_dataset(cfg)
    labels = _labels(cfg, ds)
    loaded = [ckpt.load(p) for p in cfg["checkpoint"]]
    names = _unique_labels([spec for spec, _, _ in loaded])
    wy = ds.water_year
    annual, comps, groups, sims, counts = {}, [], [], {}, {}
    for name, (spec, params, _) in zip(names, loaded):
        q = _simulate(spec, params, ds)
        sims[name] = q
        counts[name] = ckpt.model_for(spec).n_params
        dist = annual_distribution(q, ds.qq, wy)
        annual[name] = dist
        subsets = [("all", np.ones(len(ds), bool))]
        subsets += [(lab, labels == lab) for lab in (dataio.TRAIN, dataio.SELECT, dataio.TEST)]
        for sub, mask in subsets:
            c = kge(q, ds.qq, mask).as_dict()
            comps.append((name, sub, *(c[k] for k in COMPONENTS)))
        for g, c in enumerate(flow_group_metrics(q, ds.qq)):
            d = c.as_dict()
            groups.append((name, g + 1, f"{20 * g}-{20 * (g + 1)}%",
                           *(d[k] for k in COMPONENTS)))
    rows = [[f"KGE_ss^{s}"] + [annual[n].stats[s] for n in names] for s in STAT_ROWS]
    rows.append(["n_params"] + [counts[n] for n in names])
    report = run.table("report.csv", ["model"] + names, rows)
    run.table("components.csv", ("model", "subset") + COMPONENTS, comps)
    run.table("flow_groups.csv", ("model", "group", "obs_percentile") + COMPONENTS, groups)
    run.table("annual.csv", ("model", "water_year", "kge_ss"),
              [(n, y, v) for n in names for y, v in zip(annual[n].years, annual[n].values)])
    plotting.annual_boxplot({n: annual[n].values for n in names}, run.path("annual_kge_ss.png"),
                            note=run.header)
    for i, n in enumerate(names):
        plotting.hydrograph(ds.dates, ds.qq, sims[n], run.path(f"hydrograph_{i + 1}.png"),
                            title=n, note=run.header)
    sys.stdout.write(report)
    return 0


def cmd_prune(cfg: dict) -> int:
    run = Run("prune", cfg, ["checkpoint", "data", "k", "mode", "renormalize"])
    _require(cfg, "checkpoint")
    if len(cfg["checkpoint"]) != 1:
        raise UsageError("prune takes exactly one checkpoint")
    spec, params, _ = _load_network(cfg["checkpoint"][0])
    k = cfg["k"]
    if not 1 <= k < spec.n_final:
        raise UsageError(f"--k must satisfy 1 <= k < {spec.n_final} for {spec.label}")
    try:
        mode = PruneMode.parse(cfg["mode"])
    except ValueError as err:
        raise UsageError(str(err)) from None
    ds = _load_dataset(cfg)
    sel = enumerate_and_select(params, spec, k, mode, ds, cfg["renormalize"])
    text = run.table("leaderboard.csv", LEADERBOARD_HEADER, leaderboard_rows(sel))
    ckpt.save(run.path("pruned_best.json"), spec, sel.best.params,
              run.meta(removed=[j + 1 for j in sel.best.removed], mode=mode.value))
    sys.stdout.write(text)
    return 0


def cmd_export_gates(cfg: dict) -> int:
    used = ["checkpoint", "layer", "node", "x_min", "x_max", "n_points", "pet"]
    run = Run("export-gates", cfg, used)
    _require(cfg, "checkpoint")
    spec, params, _ = _load_network(cfg["checkpoint"][0])
    layer = cfg["layer"] - 1
    if not 0 <= layer < spec.n_layers:
        raise UsageError(f"--layer must lie in 1..{spec.n_layers}")
    width = spec.layer_sizes[layer]
    nodes = range(width) if cfg["node"] is None else [cfg["node"] - 1]
    if any(not 0 <= j < width for j in nodes):
        raise UsageError(f"--node must lie in 1..{width}")
    if cfg["n_points"] < 2 or not cfg["x_max"] > cfg["x_min"] or cfg["x_min"] < 0:
        raise UsageError("need 0 <= x_min < x_max and at least 2 grid points")
    grid = np.linspace(cfg["x_min"], cfg["x_max"], cfg["n_points"])
    curves = {f"{layer + 1}_{j + 1}": export_gate_functions(spec, params, layer, j, grid,
                                                            pet=cfg["pet"]) for j in nodes}
    if len(curves) == 1:
        cols = {"x_mm": grid, "g_out": next(iter(curves.values())).g_out}
    else:
        cols = {"x_mm": grid, **{f"g_out_{lab}": c.g_out for lab, c in curves.items()}}
    names, rows = _columns_rows(cols)
    run.table("gates.csv", names, rows)
    run.table("gate_summary.csv", ("node", "threshold", "plateau"),
              [(lab, c.threshold, c.plateau) for lab, c in curves.items()])
    plotting.gate_curves(curves, run.path("gates.png"), title=spec.label, note=run.header)
    print(f"wrote {len(curves)} gate curve(s) on {len(grid)} points to {run.out / 'gates.csv'}")
    return 0


def cmd_export_timeseries(cfg: dict) -> int:
    run = Run("export-timeseries", cfg, ["checkpoint", "data", "water_year"])
    _require(cfg, "checkpoint")
    spec, params, _ = _load_network(cfg["checkpoint"][0])
    ds = _load_dataset(cfg)
    pp, pet, n_spin = dataio.build_spinup(ds)
    trace = forward(spec, params, pp, pet).tail(n_spin)
    trace.dates, trace.pp, trace.pet = ds.dates, ds.pp, ds.pet
    wy = cfg["water_year"]
    if wy is None:
        years, counts = np.unique(ds.water_year, return_counts=True)
        complete = years[counts >= 365]
        wy = int(complete[-1] if complete.size else years[-1])
    cols = export_timeseries(trace, wy)
    names, rows = _columns_rows(cols)
    run.table(f"timeseries_{wy}.csv", names, rows)
    names, rows = _columns_rows(trace_columns(trace, ds.qq))
    run.table("trace.csv", names, rows)
    plotting.timeseries_panels(cols, run.path(f"timeseries_{wy}.png"),
                               title=f"{spec.label}, water year {wy}", note=run.header)
    print(f"water year {wy}: {len(cols['date'])} days written to {run.out}")
    return 0


def cmd_count_params(cfg: dict) -> int:
    spec = ckpt.parse_model_spec(cfg["spec"], cfg["mlb_input_bias"])
    print(ckpt.model_for(spec).n_params)
    return 0


COMMANDS = {
    "synth": cmd_synth, "split": cmd_split, "train": cmd_train, "evaluate": cmd_evaluate,
    "prune": cmd_prune, "export-gates": cmd_export_gates,
    "export-timeseries": cmd_export_timeseries, "count-params": cmd_count_params,
}


# ---------------------------------------------------------------------------
# argument parsing


def _bool_flag(p, name: str, help: str):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), default=None,
                   action=argparse.BooleanOptionalAction, help=help)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment file; flags override its keys")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads for training restarts")
    common.add_argument("--out", dest="output_dir",
                        help=f"output directory (default ${OUTPUT_ENV} or ./massnet_out)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="massnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help):
        return sub.add_parser(name, parents=[common], help=help, description=help)

    spec_help = 'network such as "MN_SALO^DS(5)" or "DS(3,3)", or "LSTM(5)"'

    p = cmd("synth", "generate a synthetic dataset from a known network")
    p.add_argument("--spec", help=spec_help + " (default: reference single DS node)")
    p.add_argument("--generator", help="parameter file of the generating network")
    p.add_argument("--years", type=int, help="number of water years (default 10)")
    p.add_argument("--first-water-year", type=int, help="label of the first water year")
    _bool_flag(p, "mlb-input-bias", "MLB input bias")

    p = cmd("split", "label every day Train/Select/Test")
    p.add_argument("--data", help="date,pp,pet,qq CSV")

    p = cmd("train", "train a network or LSTM with Adam and restarts")
    p.add_argument("--data", help="date,pp,pet,qq CSV")
    p.add_argument("--split", help="date,label CSV (computed when omitted)")
    p.add_argument("--spec", help=spec_help)
    p.add_argument("--epochs", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--init", help="uniform, noise or stagewise")
    p.add_argument("--init-from", help="parameter file seeding noise/stagewise initialization")
    p.add_argument("--noise-fraction", type=float,
                   help="fixed noise fraction (default: drawn per restart)")
    _bool_flag(p, "mlb-input-bias", "MLB input bias")

    p = cmd("evaluate", "annual KGE_ss statistics, components and flow groups")
    p.add_argument("--checkpoint", nargs="+", help="one or more parameter files")
    p.add_argument("--data", help="date,pp,pet,qq CSV")
    p.add_argument("--split", help="date,label CSV (computed when omitted)")

    p = cmd("prune", "rank every removal of k final-layer paths")
    p.add_argument("--checkpoint", nargs=1)
    p.add_argument("--data", help="date,pp,pet,qq CSV")
    p.add_argument("--k", type=int, help="number of removed paths (default 1)")
    p.add_argument("--mode", help="PathOnly (P) or FullNode (F)")
    _bool_flag(p, "renormalize", "rescale surviving DS output weights to sum to one")

    p = cmd("export-gates", "output gate as a function of own storage")
    p.add_argument("--checkpoint", nargs=1)
    p.add_argument("--layer", type=int, help="1-based layer (default 1)")
    p.add_argument("--node", type=int, help="1-based node (default: all nodes of the layer)")
    p.add_argument("--x-min", type=float)
    p.add_argument("--x-max", type=float)
    p.add_argument("--n-points", type=int)
    p.add_argument("--pet", type=float, help="PET held fixed along the curve")

    p = cmd("export-timeseries", "states, gates and path shares over one water year")
    p.add_argument("--checkpoint", nargs=1)
    p.add_argument("--data", help="date,pp,pet,qq CSV")
    p.add_argument("--water-year", type=int, help="default: last complete water year")

    p = cmd("count-params", "number of trainable parameters of a spec")
    p.add_argument("spec_arg", nargs="?", metavar="SPEC", help=spec_help)
    p.add_argument("--spec", help=spec_help)
    _bool_flag(p, "mlb-input-bias", "count the MLB input bias (default on)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "spec_arg", None):
        args.spec = args.spec_arg
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = effective_config(args)
        if cfg["threads"] < 1:
            raise UsageError("--threads must be at least 1")
        return COMMANDS[args.command](cfg)
    except UsageError as err:
        parser.exit(2, f"massnet {args.command}: error: {err}\n")
    except (dataio.DataError, ckpt.CheckpointError, MetricError, SimulationError,
            TrainingError, ValueError, OSError) as err:
        print(f"massnet {args.command}: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
