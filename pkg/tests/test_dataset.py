import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from modlknns.dataset import (ConfigError, ParseError, RawLabel, SplitError, SynthConfig,
                              generate_synthetic, load_csv, split, split_sizes, write_csv)


def test_noise_free_labels_match_true_probs():
    ds = generate_synthetic(SynthConfig(n_samples=300, D=6, C=4, flip_rate=0, seed=3))
    assert np.array_equal(ds.raw_labels == RawLabel.POSITIVE, ds.true_probs >= 0.5)


def test_same_seed_same_dataset():
    cfg = SynthConfig(n_samples=200, D=5, C=3, flip_rate=0.2, uncertain_fraction=0.1, seed=8)
    assert generate_synthetic(cfg).equals(generate_synthetic(cfg))


def test_uncertain_count_within_binomial_interval():
    lo, hi = binom.ppf([0.0005, 0.9995], 5000, 0.15)
    # the 99.9% interval sits inside the documented [600, 900] envelope
    assert 600 <= lo and hi <= 900
    for seed in range(5):
        ds = generate_synthetic(SynthConfig(n_samples=1000, D=4, C=5, uncertain_fraction=0.15,
                                            seed=seed))
        count = int((ds.raw_labels == RawLabel.UNCERTAIN).sum())
        assert 600 <= count <= 900


def test_flip_rate_is_honoured():
    ds = generate_synthetic(SynthConfig(n_samples=4000, D=4, C=5, flip_rate=0.2, seed=1))
    rate = np.mean((ds.raw_labels == RawLabel.POSITIVE) != (ds.true_probs >= 0.5))
    assert abs(rate - 0.2) < 0.015


@pytest.mark.parametrize("kwargs", [dict(flip_rate=1.5), dict(uncertain_fraction=-0.1),
                                    dict(flip_rate=0.6, uncertain_fraction=0.6)])
def test_invalid_probabilities(kwargs):
    with pytest.raises(ConfigError):
        generate_synthetic(SynthConfig(n_samples=10, **kwargs))


def test_csv_label_tokens(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,f0,f1,a,b,c\n7,0.1,0.2,1,-1,\n8,0.3,0.4,0,1,1\n")
    ds = load_csv(p)
    assert ds.class_names == ("a", "b", "c")
    assert list(ds.raw_labels[0]) == [RawLabel.POSITIVE, RawLabel.UNCERTAIN, RawLabel.UNMENTIONED]
    assert ds.ids[0] == 7 and ds.features[0, 1] == 0.2


def test_csv_bad_token_reports_position(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,f0,a\n1,0.5,2\n")
    with pytest.raises(ParseError, match="row"):
        load_csv(p)


def test_csv_ragged_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,f0,a\n1,0.5\n")
    with pytest.raises(ParseError):
        load_csv(p)


def test_header_only_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,f0,f1,x,y\n")
    ds = load_csv(p)
    assert len(ds) == 0 and ds.n_classes == 2


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 40), D=st.integers(1, 4), C=st.integers(1, 4), seed=st.integers(0, 99),
       u=st.floats(0, 0.5))
def test_csv_roundtrip(tmp_path_factory, n, D, C, seed, u):
    ds = generate_synthetic(SynthConfig(n_samples=n, D=D, C=C, flip_rate=0.1,
                                        uncertain_fraction=u, seed=seed))
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(ds, path)
    assert load_csv(path).equals(ds)


def test_true_probs_sidecar(tmp_path):
    ds = generate_synthetic(SynthConfig(n_samples=20, D=3, C=2, seed=0))
    write_csv(ds, tmp_path / "d.csv", true_probs_path=tmp_path / "p.csv")
    assert (tmp_path / "p.csv").exists()


def test_split_sizes_largest_remainder():
    assert split_sizes(10, (0.7, 0.1, 0.2)) == [7, 1, 2]
    assert sum(split_sizes(4000, (0.7, 0.1, 0.2))) == 4000


@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 200), seed=st.integers(0, 1000))
def test_split_partitions(n, seed):
    ds = generate_synthetic(SynthConfig(n_samples=n, D=2, C=2, seed=1))
    parts = split(ds, (0.7, 0.1, 0.2), seed)
    ids = np.concatenate([p.ids for p in parts])
    assert sorted(ids.tolist()) == list(range(n))
    again = split(ds, (0.7, 0.1, 0.2), seed)
    assert all(a.equals(b) for a, b in zip(parts, again))


def test_split_too_small():
    ds = generate_synthetic(SynthConfig(n_samples=2, D=2, C=2))
    with pytest.raises(SplitError):
        split(ds, (0.7, 0.1, 0.2), 0)
