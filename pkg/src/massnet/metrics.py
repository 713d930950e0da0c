"""Kling-Gupta efficiency and the summaries built on it.

Moments are population moments (divide by N).  ``kge_expression`` evaluates
the same formula on sequences of tape variables so it can be differentiated.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import autodiff as ad

STAT_NAMES = ("min", "5%", "25%", "median", "75%", "95%", "max")
_STAT_Q = (0.0, 5.0, 25.0, 50.0, 75.0, 95.0, 100.0)


class MetricError(ValueError):
    """Raised when a KGE score is undefined for the given observations."""


@dataclass(frozen=True)
class KgeComponents:
    rho: float
    alpha: float
    beta: float
    kge: float
    kge_ss: float
    alpha_star: float
    beta_star: float

    def as_dict(self) -> Dict[str, float]:
        return {"kge": self.kge, "kge_ss": self.kge_ss, "rho": self.rho, "alpha": self.alpha,
                "beta": self.beta, "alpha_star": self.alpha_star, "beta_star": self.beta_star}


def scale_kge(kge):
    """Map KGE onto the scale where the mean-flow benchmark scores 0."""
    return 1.0 - (1.0 - kge) / math.sqrt(2.0)


def kge(sim, obs, mask=None) -> KgeComponents:
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if sim.shape != obs.shape:
        raise ValueError(f"shape mismatch: {sim.shape} vs {obs.shape}")
    if mask is not None:
        mask = np.asarray(mask)
        sim, obs = sim[mask], obs[mask]
    if sim.size < 2:
        raise MetricError("KGE needs at least two points")
    mu_s, mu_o = sim.mean(), obs.mean()
    ds, do = sim - mu_s, obs - mu_o
    var_s, var_o = float(np.mean(ds * ds)), float(np.mean(do * do))
    sd_s, sd_o = math.sqrt(var_s), math.sqrt(var_o)
    if sd_o == 0.0:
        raise MetricError("observations are constant")
    if mu_o == 0.0:
        raise MetricError("observations have zero mean")
    if sd_s == 0.0:
        # a constant simulation has no defined correlation; treat it as uncorrelated
        rho = 0.0
    else:
        # one square root of the variance product keeps rho exactly 1 when sim == obs
        rho = float(np.mean(ds * do)) / math.sqrt(var_s * var_o)
    alpha = sd_s / sd_o
    beta = float(mu_s / mu_o)
    score = 1.0 - math.sqrt((rho - 1.0) ** 2 + (beta - 1.0) ** 2 + (alpha - 1.0) ** 2)
    return KgeComponents(rho, alpha, beta, score, scale_kge(score),
                         1.0 - abs(1.0 - alpha), 1.0 - abs(1.0 - beta))


def _sum(xs):
    total = xs[0]
    for x in xs[1:]:
        total = total + x
    return total


def kge_expression(sim: Sequence, obs) -> object:
    """KGE of a sequence of floats or tape variables against fixed observations."""
    obs = np.asarray(obs, dtype=float)
    n = len(sim)
    if n != obs.size or n < 2:
        raise MetricError("KGE needs at least two matching points")
    mu_o = float(obs.mean())
    do = obs - mu_o
    sd_o = math.sqrt(float(np.mean(do * do)))
    if sd_o == 0.0 or mu_o == 0.0:
        raise MetricError("observations are constant or have zero mean")
    mu_s = _sum(list(sim)) / n
    dev = [s - mu_s for s in sim]
    var_s = _sum([d * d for d in dev]) / n
    cov = _sum([d * float(o) for d, o in zip(dev, do)]) / n
    # the tiny offset keeps the graph finite for a constant simulation (rho -> 0)
    sd_s = ad.sqrt(var_s + 1e-300)
    rho = cov / (sd_s * sd_o)
    alpha = sd_s / sd_o
    beta = mu_s / mu_o
    return 1.0 - ad.sqrt((rho - 1.0) ** 2 + (beta - 1.0) ** 2 + (alpha - 1.0) ** 2)


def distribution_stats(values) -> Dict[str, float]:
    """min/5%/25%/median/75%/95%/max with linear interpolation between order stats."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise MetricError("no values to summarize")
    qs = np.percentile(v, _STAT_Q, method="linear")
    return dict(zip(STAT_NAMES, (float(x) for x in qs)))


def _days_in_water_year(wy: int) -> int:
    leap = wy % 4 == 0 and (wy % 100 != 0 or wy % 400 == 0)
    return 366 if leap else 365


@dataclass
class AnnualDistribution:
    years: List[int]
    values: List[float]
    stats: Dict[str, float]
    skipped: List[str] = field(default_factory=list)


def annual_distribution(sim, obs, water_years, require_complete: bool = True) -> AnnualDistribution:
    """KGE_ss of every water year and the summary statistics over years.

    Years whose observations make KGE undefined are dropped with a warning and
    listed in ``skipped``; incomplete years are dropped silently unless
    ``require_complete`` is False.
    """
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    wy = np.asarray(water_years)
    years, values, skipped = [], [], []
    for y in np.unique(wy):
        sel = wy == y
        if require_complete and sel.sum() != _days_in_water_year(int(y)):
            continue
        try:
            values.append(kge(sim[sel], obs[sel]).kge_ss)
            years.append(int(y))
        except MetricError as err:
            msg = f"water year {int(y)} skipped: {err}"
            warnings.warn(msg)
            skipped.append(msg)
    if not values:
        raise MetricError("no complete water year with a defined KGE")
    return AnnualDistribution(years, values, distribution_stats(values), skipped)


def flow_groups(obs) -> np.ndarray:
    """Group index 0..4 of every step by observed-flow quintile (ties go lower)."""
    obs = np.asarray(obs, dtype=float)
    edges = np.percentile(obs, [20.0, 40.0, 60.0, 80.0], method="linear")
    return np.searchsorted(edges, obs, side="left")


def flow_group_metrics(sim, obs) -> List[KgeComponents]:
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    groups = flow_groups(obs)
    out = []
    for g in range(5):
        sel = groups == g
        if not sel.any():
            raise MetricError(f"flow group {g + 1} is empty")
        out.append(kge(sim[sel], obs[sel]))
    return out
