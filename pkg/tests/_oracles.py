"""Reference computations written independently of the package code."""

import math

import numpy as np


def two_pass_kge(sim, obs):
    """KGE components with explicit two-pass population moments."""
    sim = [float(x) for x in sim]
    obs = [float(x) for x in obs]
    n = len(sim)
    mu_s = sum(sim) / n
    mu_o = sum(obs) / n
    var_s = sum((s - mu_s) ** 2 for s in sim) / n
    var_o = sum((o - mu_o) ** 2 for o in obs) / n
    cov = sum((s - mu_s) * (o - mu_o) for s, o in zip(sim, obs)) / n
    rho = cov / math.sqrt(var_s * var_o)
    alpha = math.sqrt(var_s) / math.sqrt(var_o)
    beta = mu_s / mu_o
    k = 1 - math.sqrt((rho - 1) ** 2 + (alpha - 1) ** 2 + (beta - 1) ** 2)
    return {"rho": rho, "alpha": alpha, "beta": beta, "kge": k,
            "kge_ss": 1 - (1 - k) / math.sqrt(2)}


def type7_percentile(values, p):
    """Percentile p (0..100) by linear interpolation between order statistics."""
    v = sorted(float(x) for x in values)
    h = (len(v) - 1) * p / 100.0
    lo = math.floor(h)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


def central_fd(f, theta, scale=1e-6):
    """Central differences with step ``scale * max(1, |p|)`` per parameter."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = scale * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def paired_split(flows):
    """Label list from the pairing procedure done by hand with Python sorting."""
    n = len(flows)
    order = sorted(range(n), key=lambda i: (-flows[i], i))
    cycle = ["Train", "Test", "Select", "Train"]
    labels = [None] * n
    lo, hi, p = 0, n - 1, 0
    while lo < hi:
        labels[order[lo]] = labels[order[hi]] = cycle[p % 4]
        lo, hi, p = lo + 1, hi - 1, p + 1
    if lo == hi:
        labels[order[lo]] = cycle[p % 4]
    return labels


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def lstm_cell_scalar(x, h, c, W, U, b):
    """One LSTM layer, element by element; W/U/b are dicts of nested lists."""
    n = len(h)
    new_h, new_c = [], []
    for k in range(n):
        pre = {}
        for g in "ifgo":
            s = b[g][k]
            s += sum(W[g][k][j] * x[j] for j in range(len(x)))
            s += sum(U[g][k][j] * h[j] for j in range(n))
            pre[g] = s
        ck = sigmoid(pre["f"]) * c[k] + sigmoid(pre["i"]) * math.tanh(pre["g"])
        new_c.append(ck)
        new_h.append(sigmoid(pre["o"]) * math.tanh(ck))
    return new_h, new_c


# Parameter counts of the reference single-layer architectures.  Columns
# are DI, DS, DIR, DSR, MLB; None marks cells the table leaves blank (no
# sharing is possible with one node).
TYPES = ("DI", "DS", "DIR", "DSR", "MLB")
REFERENCE_COUNTS = {
    1: {"None": (8, 8, 9, 9, 11), "SAL": None, "SAO": None, "SALO": None},
    2: {"None": (18, 18, 18, 18, 21), "SAL": (20, 20, 20, 20, 23),
        "SAO": (20, 20, 20, 20, 23), "SALO": (22, 22, 22, 22, 25)},
    3: {"None": (27, 27, 27, 27, 31), "SAL": (33, 33, 33, 33, 37),
        "SAO": (33, 33, 33, 33, 37), "SALO": (39, 39, 39, 39, 43)},
    4: {"None": (36, 36, 36, 36, 41), "SAL": (48, 48, 48, 48, 53),
        "SAO": (48, 48, 48, 48, 53), "SALO": (60, 60, 60, 60, 65)},
    5: {"None": (45, 45, 45, 45, 51), "SAL": (65, 65, 65, 65, 71),
        "SAO": (65, 65, 65, 65, 71), "SALO": (85, 85, 85, 85, 91)},
}
REFERENCE_LSTM_COUNTS = {2: 43, 3: 76, 4: 117, 5: 166, 6: 223}
