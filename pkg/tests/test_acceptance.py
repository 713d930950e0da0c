"""Acceptance criteria; a summary line per criterion is printed after the run."""

import math
import os
from pathlib import Path

import numpy as np
import pytest

from massnet.cli import main
from massnet.dataio import (SELECT, TEST, TRAIN, load_csv, reference_params, split,
                            split_counts, synth_generate, water_year_dates)
from massnet.lstm import cell_update, lstm_count_parameters
from massnet.mcp import (GateValues, NodeParams, Sharing, compute_gates, linear_reservoir_step,
                         node_step)
from massnet.metrics import annual_distribution, kge, scale_kge
from massnet.network import (NetworkModel, NetworkSpec, count_parameters, forward,
                             node_params, realize_output_weights)
from massnet.pruning import prune, prune_cases
from massnet.trainer import (CompiledObjective, TrainConfig, TrainingData, noise_init,
                             objective, train)
from _oracles import REFERENCE_COUNTS, REFERENCE_LSTM_COUNTS, TYPES, central_fd, two_pass_kge

LEAF_RIVER_ENV = "MASSNET_LEAF_RIVER_CSV"


@pytest.mark.criterion(1, "objective gradients match central differences (20 specs)")
def test_gradient_correctness():
    rng = np.random.default_rng(2024)
    n = 50
    pp = rng.exponential(6.0, n) * (rng.random(n) < 0.5)
    pet = rng.uniform(0.5, 5.0, n)
    obs = np.convolve(pp, np.exp(-np.arange(8) / 2.5) / 2.5)[:n] + 0.3
    idx = np.arange(n)
    data = TrainingData(pp, pet, 0, obs, idx[::2], idx[1::4], idx[3::4])
    worst = 0.0
    for ntype in TYPES:
        for sharing in ("None", "SAL", "SAO", "SALO"):
            sizes = (2,) if sharing == "None" else (3,) if ntype in ("DI", "DS") else (2, 2)
            model = NetworkModel(NetworkSpec(ntype, sharing, sizes))
            theta = model.flatten(model.random_params(rng))
            while np.ptp(model.simulate(model.unflatten(theta), pp, pet)) < 1e-3:
                theta = model.flatten(model.random_params(rng))
            _, grad = CompiledObjective(model, data, theta)(theta)
            fd = central_fd(lambda t: objective(model, model.unflatten(t), data), theta)
            rel = np.abs(grad - fd) / np.maximum(1.0, np.abs(fd))
            worst = max(worst, float(rel.max()))
    print(f"worst relative gradient error {worst:.2e}")
    assert worst < 1e-5


@pytest.mark.criterion(2, "gate simplex and PET cap over 1e5 random evaluations")
def test_gate_simplex_and_pet_cap():
    rng = np.random.default_rng(7)
    sharings = list(Sharing)
    for i in range(100_000):
        u = rng.uniform(-1, 1, 9)
        p = NodeParams(u[0] * 10, list(u[1:4] * 0.1), u[4] * 10, u[5] * 2, list(u[6:9] * 0.1),
                       *rng.uniform(-5, 5, 3))
        states = list(rng.exponential(200.0, 3))
        pet = rng.uniform(0, 15) if i % 10 else 0.0
        g = compute_gates(p, states, 0, pet, sharings[i % 4])
        assert 0 <= g.g_out <= 1 and 0 <= g.g_loss_con <= 1 and 0 <= g.g_rem <= 1
        assert abs(g.g_out + g.g_loss_con + g.g_rem - 1.0) <= 1e-12
        assert g.g_loss_con * states[0] <= pet + 1e-12


@pytest.mark.criterion(3, "DI exact and DS weighted mass closure")
def test_mass_closure():
    rng = np.random.default_rng(3)
    worst = 0.0
    for ntype in ("DI", "DS"):
        spec = NetworkSpec(ntype, "SALO", (4,))
        model = NetworkModel(spec)
        for _ in range(10):
            params = model.random_params(rng)
            pp = rng.exponential(5.0, 1000) * (rng.random(1000) < 0.4)
            pet = rng.uniform(0, 6, 1000)
            tr = forward(spec, params, pp, pet)
            w = np.ones(4) if ntype == "DI" else np.array(realize_output_weights(spec, params))
            stored = w @ (tr.x_final - tr.x[0])
            residual = pp.sum() - tr.q.sum() - w @ tr.loss.sum(axis=0) - stored
            worst = max(worst, abs(residual) / pp.sum())
    print(f"worst relative closure error {worst:.2e}")
    assert worst < 1e-9


@pytest.mark.criterion(4, "parameter counts match the reference tables")
def test_parameter_counts():
    for n, row in REFERENCE_COUNTS.items():
        for sharing, counts in row.items():
            counts = counts or REFERENCE_COUNTS[n]["None"]
            for ntype, expected in zip(TYPES, counts):
                spec = NetworkSpec(ntype, sharing, (n,), mlb_input_bias=False)
                assert count_parameters(spec) == expected, spec.label
    for n, expected in REFERENCE_LSTM_COUNTS.items():
        assert lstm_count_parameters(n, 2) == expected


@pytest.mark.criterion(5, "splitter counts, hand example and subset means")
def test_splitter():
    assert len(water_year_dates(1949, 40)) == 14610
    labels = split(np.random.default_rng(0).gamma(0.8, 2.0, 14610))
    assert split_counts(labels) == {TRAIN: 7306, SELECT: 3652, TEST: 3652}
    eight = split(np.arange(8.0, 0.0, -1.0))
    assert list(eight) == [TRAIN, TEST, SELECT, TRAIN, TRAIN, SELECT, TEST, TRAIN]
    ds = synth_generate(NetworkSpec.parse("DS(1)"), reference_params(), seed=40, years=40)
    labels = split(ds)
    means = [ds.qq[labels == lab].mean() for lab in (TRAIN, SELECT, TEST)]
    spread = (max(means) - min(means)) / min(means)
    print(f"subset means {means}, relative spread {spread:.4f}")
    assert spread < 0.05


@pytest.mark.criterion(6, "KGE components match a two-pass oracle; fixed points")
def test_metric_oracles():
    rng = np.random.default_rng(6)
    for _ in range(100):
        obs = rng.gamma(1.5, 3.0, 300)
        sim = rng.uniform(0.3, 2.0) * obs + rng.normal(0, 2.0, 300) + rng.uniform(-1, 2)
        ours, ref = kge(sim, obs), two_pass_kge(sim, obs)
        for name in ("rho", "alpha", "beta", "kge", "kge_ss"):
            assert abs(getattr(ours, name) - ref[name]) <= 1e-12
    obs = rng.gamma(1.5, 3.0, 300)
    assert kge(obs, obs).kge == 1.0
    assert abs(kge(2 * obs, obs).kge_ss) <= 1e-15
    assert scale_kge(0.0) == 1 - 1 / math.sqrt(2)


@pytest.mark.criterion(7, "node/LSTM cell isomorphism and linear-reservoir impulse response")
def test_isomorphism():
    rng = np.random.default_rng(8)
    for _ in range(10_000):
        x, u, g_out = rng.exponential(100.0), rng.exponential(10.0), rng.random()
        new, _ = node_step(x, u, 0.0, GateValues(g_out, 0.0, 0.0, 1.0 - g_out))
        ref = cell_update(x, 1.0, 1.0 - g_out, u)
        assert abs(new - ref) <= 1e-12 * max(1.0, ref)
    for kappa in (0.02, 0.25, 0.7):
        x, outs = 0.0, []
        for t in range(101):
            x, f = linear_reservoir_step(x, 1.0 if t == 0 else 0.0, kappa)
            outs.append(f.output)
        for t in range(100):
            assert abs(outs[t + 1] - kappa * (1 - kappa) ** t) <= 1e-12


@pytest.mark.slow
@pytest.mark.criterion(8, "synthetic recovery of a single DS node (KGE_ss >= 0.99)")
def test_synthetic_recovery():
    spec = NetworkSpec.parse("MN_None^DS(1)")
    ds = synth_generate(spec, reference_params(), seed=1, years=10)
    labels = split(ds)
    res = train(NetworkModel(spec), ds, labels, TrainConfig(epochs=2000, restarts=10, seed=0))
    print(f"selection KGE_ss {res.best.select_kge_ss:.6f}")
    assert res.best.select_kge_ss >= 0.99


@pytest.mark.criterion(9, "sharing reduction, prune case counts, PathOnly state identity")
def test_sharing_reduction_and_pruning():
    rng = np.random.default_rng(9)
    pp = rng.exponential(5.0, 730) * (rng.random(730) < 0.4)
    pet = rng.uniform(0, 6, 730)
    for ntype in TYPES:
        plain = NetworkSpec(ntype, "None", (3,))
        params = NetworkModel(plain).random_params(rng)
        a = forward(plain, params, pp, pet)
        b = forward(NetworkSpec(ntype, "SALO", (3,)), params, pp, pet)
        assert np.array_equal(a.q, b.q) and np.array_equal(a.x, b.x)
    assert [len(prune_cases(5, k)) for k in (1, 2, 3, 4)] == [5, 10, 10, 5]
    spec = NetworkSpec.parse("MN_SALO^DS(5)")
    params = NetworkModel(spec).random_params(rng)
    parent = forward(spec, params, pp, pet)
    for j in range(5):
        child = forward(spec, prune(params, spec, [j], "PathOnly"), pp, pet)
        assert np.array_equal(child.x, parent.x)


@pytest.mark.criterion(10, "every CLI command reruns byte-identically")
def test_cli_determinism(tmp_path):
    def run_all(out):
        s = out / "synth"
        ck = out / "train" / "checkpoint.json"
        data = s / "data.csv"
        steps = [
            ["synth", "--years", 2, "--out", s],
            ["split", "--data", data, "--out", out / "split"],
            ["train", "--data", data, "--spec", "MN_SALO^DS(2)", "--epochs", 4, "--restarts", 2,
             "--out", out / "train"],
            ["evaluate", "--data", data, "--checkpoint", ck, s / "generator.json",
             "--out", out / "eval"],
            ["prune", "--data", data, "--checkpoint", ck, "--out", out / "prune"],
            ["export-gates", "--checkpoint", ck, "--out", out / "gates"],
            ["export-timeseries", "--data", data, "--checkpoint", ck, "--out", out / "ts"],
        ]
        for argv in steps:
            assert main([str(a) for a in argv + ["--seed", 11]]) == 0
        return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*"))
                if p.is_file()}

    a, b = run_all(tmp_path / "a"), run_all(tmp_path / "b")
    assert len(a) >= 20 and a == b


@pytest.mark.slow
@pytest.mark.criterion(11, "Leaf River reproduction report (needs $" + LEAF_RIVER_ENV + ")")
def test_leaf_river_reproduction():
    path = os.environ.get(LEAF_RIVER_ENV)
    if not path or not Path(path).is_file():
        pytest.skip(f"set {LEAF_RIVER_ENV} to a date,pp,pet,qq CSV to run")
    ds = load_csv(path)
    labels = split(ds)
    single = NetworkSpec.parse("MN_None^DS(1)")
    base = train(NetworkModel(single), ds, labels, TrainConfig(epochs=1000, restarts=10))
    spec = NetworkSpec.parse("MN_None^DS(3)")
    init = noise_init(node_params(base.best_params, single, 0, 0), spec)
    res = train(NetworkModel(spec), ds, labels, TrainConfig(epochs=1000, restarts=10), init)
    data = TrainingData.build(ds, labels)
    q = NetworkModel(spec).simulate(res.best_params, data.pp, data.pet)[data.n_spin:]
    stats = annual_distribution(q, ds.qq, ds.water_year).stats
    for name in ("min", "5%", "25%", "median", "75%", "95%"):
        print(f"KGE_ss^{name},{stats[name]:.4f}")
    inside = abs(stats["median"] - 0.86) <= 0.05
    print(f"median within 0.05 of 0.86: {'yes' if inside else 'no'}")
