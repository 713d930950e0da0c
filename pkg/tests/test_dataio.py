import numpy as np
import pytest
from hypothesis import given, strategies as st

from massnet.dataio import (SELECT, TEST, TRAIN, DataError, Dataset, PrecipModel, build_spinup,
                            dataset_csv, load_csv, load_split, reference_params, split,
                            split_counts, split_csv, synth_forcing, synth_generate,
                            water_year_dates, write_csv)
from massnet.metrics import kge
from massnet.network import NetworkSpec, simulate_q
from _oracles import paired_split


def test_eight_step_example():
    labels = split(np.array([8.0, 7, 6, 5, 4, 3, 2, 1]))
    assert list(labels) == ["Train", "Test", "Select", "Train", "Train", "Select", "Test", "Train"]
    flows = np.arange(8.0, 0, -1)
    assert sorted(flows[labels == TRAIN]) == [1, 4, 5, 8]


def test_forty_year_counts():
    dates = water_year_dates(1949, 40)
    assert len(dates) == 14610
    q = np.random.default_rng(0).gamma(1.0, 1.0, 14610)
    assert split_counts(split(q)) == {TRAIN: 7306, SELECT: 3652, TEST: 3652}


@given(st.lists(st.floats(0, 100), min_size=1, max_size=60))
def test_split_matches_hand_oracle(flows):
    assert list(split(np.array(flows))) == paired_split(flows)


@given(st.integers(1, 500))
def test_split_partitions_with_cycle_counts(n):
    labels = split(np.random.default_rng(n).random(n))
    c = split_counts(labels)
    assert sum(c.values()) == n
    pairs = n // 2
    full, rest = divmod(pairs, 4)
    train_pairs = 2 * full + (rest >= 1) + (rest >= 4)
    assert c[TRAIN] >= 2 * train_pairs


def test_odd_length_and_constant_series():
    labels = split([5.0, 1.0, 3.0])
    assert list(labels) == ["Train", "Train", "Test"]
    assert list(split(np.ones(4))) == ["Train", "Test", "Test", "Train"]


def test_subset_means_agree_on_forty_years():
    ds = synth_generate(NetworkSpec.parse("DS(1)"), reference_params(), seed=3, years=40)
    labels = split(ds)
    means = {lab: ds.qq[labels == lab].mean() for lab in (TRAIN, SELECT, TEST)}
    ref = means[TRAIN]
    assert all(abs(m - ref) / ref < 0.05 for m in means.values())
    spans = [(ds.qq[labels == lab].min(), ds.qq[labels == lab].max()) for lab in means]
    assert all(a[0] <= b[1] and b[0] <= a[1] for a in spans for b in spans)


def _write(tmp_path, lines):
    p = tmp_path / "d.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_load_valid_and_roundtrip(tmp_path, obs_dataset):
    p = _write(tmp_path, ["date,pp,pet,qq", "2000-10-01,1,2,3", "2000-10-02,0,2,3",
                          "2000-10-03,0.5,2,3", "2000-10-04,0,2,3"])
    assert len(load_csv(p)) == 4
    out = tmp_path / "full.csv"
    write_csv(obs_dataset, out, comment="seed 7")
    back = load_csv(out)
    for name in ("dates", "pp", "pet", "qq"):
        assert np.array_equal(getattr(back, name), getattr(obs_dataset, name))
    assert dataset_csv(back, "seed 7") == out.read_text()


@pytest.mark.parametrize("bad,line", [
    (["date,pp,pet,qq", "2000-10-01,1,2,3", "2000-10-02,-1,2,3"], 3),
    (["date,pp,pet,qq", "2000-10-01,1,2,3", "2000-10-03,1,2,3"], 3),
    (["date,pp,pet,qq", "2000-10-01,1,2"], 2),
    (["date,pp,pet,qq", "2000-10-01,x,2,3"], 2),
    (["date,pp,qq", "2000-10-01,1,3"], 1),
])
def test_load_rejects_with_line_number(tmp_path, bad, line):
    with pytest.raises(DataError) as err:
        load_csv(_write(tmp_path, bad))
    assert err.value.line == line and f"line {line}" in str(err.value)


def test_split_file_roundtrip(tmp_path, obs_dataset):
    labels = split(obs_dataset)
    p = tmp_path / "split.csv"
    p.write_text(split_csv(obs_dataset, labels))
    assert np.array_equal(load_split(p, obs_dataset), labels)
    p.write_text(split_csv(obs_dataset, np.where(labels == TRAIN, "Other", labels)))
    with pytest.raises(DataError):
        load_split(p, obs_dataset)


def test_spinup_prefix_is_three_copies(obs_dataset):
    pp, pet, n = build_spinup(obs_dataset)
    assert n == 1095
    first = obs_dataset.pp[:365]
    assert np.array_equal(pp[:n], np.concatenate([first] * 3))
    assert np.array_equal(pp[n:], obs_dataset.pp) and np.array_equal(pet[n:], obs_dataset.pet)


def test_spinup_rejects_incomplete_first_year(obs_dataset):
    ds = Dataset(obs_dataset.dates[5:], obs_dataset.pp[5:], obs_dataset.pet[5:],
                 obs_dataset.qq[5:])
    with pytest.raises(DataError):
        build_spinup(ds)


def test_spinup_moves_the_initial_state(obs_dataset):
    from massnet.network import forward
    spec = NetworkSpec.parse("DS(1)")
    pp, pet, n = build_spinup(obs_dataset)
    tr = forward(spec, reference_params(), pp, pet)
    assert tr.x[n - 1, 0] > 0.0


def test_synthetic_data_is_deterministic_and_self_consistent():
    spec = NetworkSpec.parse("DS(1)")
    a = synth_generate(spec, reference_params(), seed=9, years=3)
    b = synth_generate(spec, reference_params(), seed=9, years=3)
    assert dataset_csv(a) == dataset_csv(b)
    pp, pet, n = build_spinup(a)
    q = simulate_q(spec, reference_params(), pp, pet)[n:]
    assert np.array_equal(q, a.qq)
    assert kge(q, a.qq).kge == pytest.approx(1.0, abs=1e-12)


def test_wet_day_fraction():
    dates = np.arange(np.datetime64("2000-01-01"), np.datetime64("2000-01-01") + 10000)
    pp, pet = synth_forcing(np.random.default_rng(1), dates, PrecipModel(wet_probability=0.3))
    assert abs((pp > 0).mean() - 0.3) < 0.02
    assert np.all(pet >= 0)
