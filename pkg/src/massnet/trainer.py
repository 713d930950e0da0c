"""Adam maximization of training-set KGE with multiple restarts.

The objective graph (network simulation over the spin-up-extended record
plus the KGE of the training steps) is recorded once per training run and
replayed for every epoch and restart, see :class:`massnet.autodiff.CompiledTape`.
"""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import autodiff as ad
from .dataio import SELECT, TEST, TRAIN, Dataset, build_spinup
from .mcp import NodeParams
from .metrics import MetricError, kge, kge_expression
from .network import NetworkSpec, Params, default_params, layout

log = logging.getLogger(__name__)

NOISE_FRACTIONS = (0.025, 0.05, 0.10, 0.20)
SHARING_INIT_SD = 0.025


class TrainingError(RuntimeError):
    pass


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named purpose derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode()),
                                                         *extra]))


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 1000
    restarts: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.epochs <= 3000:
            raise ValueError("epochs must lie in [0, 3000]")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(theta, grad, state: AdamState, lr: float = 0.01, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam descent step; returns ``(theta, state)``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape:
        raise ValueError("parameter and gradient shapes differ")
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, step)


# ---------------------------------------------------------------------------
# data and objective


@dataclass
class TrainingData:
    """Spin-up-extended forcing plus split indices (in dataset coordinates)."""

    pp: np.ndarray
    pet: np.ndarray
    n_spin: int
    obs: np.ndarray
    train: np.ndarray
    select: np.ndarray
    test: np.ndarray

    @classmethod
    def build(cls, ds: Dataset, labels) -> "TrainingData":
        labels = np.asarray(labels)
        if labels.shape != (len(ds),):
            raise ValueError("one split label per timestep required")
        pp, pet, n_spin = build_spinup(ds)
        idx = lambda lab: np.nonzero(labels == lab)[0]  # noqa: E731
        return cls(pp, pet, n_spin, ds.qq.copy(), idx(TRAIN), idx(SELECT), idx(TEST))


def objective(model, params: Params, data: TrainingData) -> float:
    """``1 - KGE`` of the training steps (float evaluation)."""
    q = model.simulate(params, data.pp, data.pet)[data.n_spin:]
    return 1.0 - kge(q[data.train], data.obs[data.train]).kge


class CompiledObjective:
    """Recorded loss graph, replayable for any parameter vector."""

    def __init__(self, model, data: TrainingData, theta0, base: Optional[Params] = None):
        tape = ad.Tape()
        theta = tape.params(theta0)
        q = model.expression(theta, data.pp, data.pet, base)
        q = [v if isinstance(v, ad.Var) else tape.const(v) for v in q]
        sim_train = [q[data.n_spin + i] for i in data.train]
        self.loss_node = (1.0 - kge_expression(sim_train, data.obs[data.train])).index
        self.q_nodes = np.array([v.index for v in q[data.n_spin:]])
        self.tape = tape.compile()
        self.data = data

    def copy(self) -> "CompiledObjective":
        new = object.__new__(CompiledObjective)
        new.__dict__.update(self.__dict__)
        new.tape = self.tape.copy()
        return new

    def evaluate(self, theta) -> float:
        vals = self.tape.forward(theta)
        return float(vals[self.loss_node])

    def q(self) -> np.ndarray:
        return self.tape.vals[self.q_nodes]

    def gradient(self) -> np.ndarray:
        return self.tape.gradient(self.loss_node)

    def __call__(self, theta):
        loss = self.evaluate(theta)
        return loss, self.gradient()


def _select_kge_ss(q, data: TrainingData) -> float:
    try:
        return kge(q[data.select], data.obs[data.select]).kge_ss
    except MetricError:
        return math.nan


# ---------------------------------------------------------------------------
# initialization


def init_uniform(model, rng: np.random.Generator) -> Params:
    return model.random_params(rng)


def init_single_layer_sharing(trained: NodeParams, spec: NetworkSpec, noise_fraction: float,
                              rng: np.random.Generator) -> Params:
    """Every node starts from a trained single node plus relative Gaussian noise.

    Cross-node sharing coefficients start at N(0, 0.025) and trainable mixing
    weights at N(0, noise_fraction).
    """
    if not 0.0 <= noise_fraction <= 0.20 or 0.0 < noise_fraction < 0.025:
        raise ValueError("noise_fraction must be 0 or lie in [0.025, 0.20]")
    if spec.n_layers != 1:
        raise ValueError("noise initialization applies to single-layer networks")
    base = {"out_bias": trained.out_bias, "loss_bias": trained.loss_bias,
            "loss_pet_coef": trained.loss_pet_coef, "logit_out": trained.logit_out,
            "logit_loss": trained.logit_loss, "logit_rem": trained.logit_rem}
    own_out, own_loss = trained.out_state_coef[0], trained.loss_state_coef[0]
    noisy = lambda m: float(m) + rng.normal(0.0, noise_fraction * abs(float(m)))  # noqa: E731
    params = default_params(spec)
    for key, i in layout(spec):
        layer_s, node_s, name = (key.split("/") + ["", ""])[:3]
        if key.startswith("mix/"):
            params[key][i] = rng.normal(0.0, noise_fraction)
            continue
        k = int(node_s) - 1
        if name in base:
            params[key][i] = noisy(base[name])
        elif i == k:
            params[key][i] = noisy(own_out if name == "out_state_coef" else own_loss)
        else:
            params[key][i] = rng.normal(0.0, SHARING_INIT_SD)
    return params


def noise_init(trained: NodeParams, spec: NetworkSpec,
               noise_fraction: Optional[float] = None) -> "InitFn":
    """Restart initializer for :func:`init_single_layer_sharing`.

    Without a fixed ``noise_fraction`` each restart draws one uniformly from
    :data:`NOISE_FRACTIONS` using its own generator.
    """
    def init(rng: np.random.Generator, r: int) -> Params:
        frac = noise_fraction
        if frac is None:
            frac = float(NOISE_FRACTIONS[rng.integers(len(NOISE_FRACTIONS))])
        return init_single_layer_sharing(trained, spec, frac, rng)
    return init


def _carried(key: str, i: int, prev: NetworkSpec, new: NetworkSpec):
    """Index into the previous parameter array this slot inherits, or None."""
    ps, ns = prev.layer_sizes, new.layer_sizes
    if key.startswith("mix/in_"):
        return i if i < ps[0] else None
    if key.startswith("mix/between/"):
        l = int(key.rsplit("/", 1)[1]) - 1
        if l >= len(ps):
            return None
        j, k = divmod(i, ns[l])
        return j * ps[l] + k if j < ps[l - 1] and k < ps[l] else None
    if key.startswith("mix/out_"):
        if len(ps) != len(ns):
            return None
        return i if i < ps[-1] else None
    l, k, name = key.split("/")
    l, k = int(l) - 1, int(k) - 1
    if l >= len(ps) or k >= ps[l]:
        return None
    if name in ("out_state_coef", "loss_state_coef"):
        return i if i < ps[l] else None
    return i


def init_stagewise(prev_spec: NetworkSpec, prev_params: Params, new_spec: NetworkSpec,
                   rng: np.random.Generator) -> Params:
    """Grow a trained network: carried weights copied, new ones Uniform(-1, 1)."""
    ps, ns = prev_spec.layer_sizes, new_spec.layer_sizes
    ok = (prev_spec.ntype is new_spec.ntype and prev_spec.sharing is new_spec.sharing
          and prev_spec.mlb_input_bias == new_spec.mlb_input_bias
          and len(ns) >= len(ps) and all(n >= p for n, p in zip(ns, ps)))
    if not ok:
        raise ValueError(f"{prev_spec.label} does not embed into {new_spec.label}")
    params = default_params(new_spec)
    for key, arr in params.items():
        for i in range(arr.size):
            j = _carried(key, i, prev_spec, new_spec)
            if j is not None and key in prev_params:
                arr[i] = prev_params[key][j]
    for key, i in layout(new_spec):
        if _carried(key, i, prev_spec, new_spec) is None:
            params[key][i] = rng.uniform(-1.0, 1.0)
    return params


# ---------------------------------------------------------------------------
# training


@dataclass
class RestartResult:
    index: int
    params: Params
    final_loss: float
    train_kge: float
    select_kge_ss: float
    diverged: bool = False
    message: str = ""


@dataclass
class TrainResult:
    best_index: int
    best_params: Params
    restarts: List[RestartResult]
    history: np.ndarray  # rows: restart, epoch, loss, train_kge, select_kge_ss

    @property
    def best(self) -> RestartResult:
        return self.restarts[self.best_index]


InitFn = Callable[[np.random.Generator, int], Params]


def _run_restart(r: int, obj: CompiledObjective, scales: np.ndarray, theta: np.ndarray,
                 config: TrainConfig):
    # Adam runs on theta / scales so every slot moves on its natural scale
    rows = []
    z = theta / scales
    state = AdamState.zeros(theta.size)
    for epoch in range(config.epochs):
        loss = obj.evaluate(z * scales)
        if not math.isfinite(loss):
            return z * scales, rows, f"restart {r}: loss not finite at epoch {epoch}"
        rows.append((r, epoch, loss, 1.0 - loss, _select_kge_ss(obj.q(), obj.data)))
        grad = obj.gradient() * scales
        if not np.all(np.isfinite(grad)):
            return z * scales, rows, f"restart {r}: gradient not finite at epoch {epoch}"
        z, state = adam_update(z, grad, state, config.learning_rate, config.beta1,
                               config.beta2, config.epsilon)
    return z * scales, rows, ""


def train(model, ds: Dataset, labels, config: TrainConfig, init: Optional[InitFn] = None,
          data: Optional[TrainingData] = None) -> TrainResult:
    """Train ``config.restarts`` times and keep the best selection-set KGE_ss.

    ``init(rng, restart)`` returns the starting parameters of a restart; the
    default draws trainable weights from Uniform(-1, 1).  Restart ``r`` uses
    its own generator derived from ``config.seed``.
    """
    data = data or TrainingData.build(ds, labels)
    if init is None:
        init = lambda rng, r: init_uniform(model, rng)  # noqa: E731
    starts = [init(substream(config.seed, "restarts", r), r) for r in range(config.restarts)]
    base = starts[0]
    scales = model.slot_scales()
    thetas = [model.flatten(p) for p in starts]

    obj = None
    for theta in thetas:
        try:
            obj = CompiledObjective(model, data, theta, base)
            break
        except (ad.DomainError, MetricError) as err:
            log.debug("recording failed at one start: %s", err)
    if obj is None:
        raise TrainingError("objective is undefined at every initialization")

    def job(r):
        o = obj.copy()
        theta, rows, msg = _run_restart(r, o, scales, thetas[r], config)
        loss = o.evaluate(theta)
        sel = _select_kge_ss(o.q(), data)
        diverged = bool(msg) or not math.isfinite(loss) or not math.isfinite(sel)
        if diverged and not msg:
            msg = f"restart {r}: final loss or selection score not finite"
        res = RestartResult(r, model.unflatten(theta, base), loss, 1.0 - loss, sel, diverged, msg)
        return res, rows

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            outcomes = list(pool.map(job, range(config.restarts)))
    else:
        outcomes = [job(r) for r in range(config.restarts)]

    results = [o[0] for o in outcomes]
    rows = [row for o in outcomes for row in o[1]]
    ok = [res for res in results if not res.diverged]
    if not ok:
        raise TrainingError("all restarts diverged: " + "; ".join(r.message for r in results))
    best = max(ok, key=lambda res: (res.select_kge_ss, -res.index))
    for res in results:
        log.info("restart %d: train KGE %.4f, select KGE_ss %.4f%s", res.index, res.train_kge,
                 res.select_kge_ss, " (diverged)" if res.diverged else "")
    history = np.array(rows, dtype=float).reshape(-1, 5)
    return TrainResult(best.index, best.params, results, history)
