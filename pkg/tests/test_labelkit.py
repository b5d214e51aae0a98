import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modlknns.dataset import RawLabel
from modlknns.diffcore import ChecksumError, ContractError
from modlknns.labelkit import (LabelPolicy, PolicyError, SoftLabelDistribution,
                               aggregate_soft_labels, read_soft_labels, resolve,
                               write_soft_labels)

P, N, U, M = RawLabel.POSITIVE, RawLabel.NEGATIVE, RawLabel.UNCERTAIN, RawLabel.UNMENTIONED
RAW = np.array([[P, N, U, M]] * 50, dtype=np.int8)


def test_uncertain_under_each_policy():
    r = resolve(RAW, LabelPolicy.ones())
    assert np.all(r.values[:, 2] == 1.0) and r.mask[:, 2].all()
    r = resolve(RAW, LabelPolicy.zeros())
    assert np.all(r.values[:, 2] == 0.0)
    r = resolve(RAW, LabelPolicy.ignore())
    assert not r.mask[:, 2].any()
    r = resolve(RAW, LabelPolicy.lsr_ones(0.55, 0.85), seed=3)
    assert np.all((r.values[:, 2] >= 0.55) & (r.values[:, 2] <= 0.85))
    r = resolve(RAW, LabelPolicy.lsr_zeros(), seed=3)
    assert np.all((r.values[:, 2] >= 0.0) & (r.values[:, 2] <= 0.3))


@pytest.mark.parametrize("policy", [LabelPolicy.ones(), LabelPolicy.zeros(), LabelPolicy.ignore(),
                                    LabelPolicy.lsr_ones(), LabelPolicy.lsr_zeros()])
def test_certain_slots_fixed(policy):
    r = resolve(RAW, policy, seed=1)
    assert np.all(r.values[:, 0] == 1.0) and np.all(r.values[:, 1] == 0.0)
    assert np.all(r.values[:, 3] == 0.0) and r.mask[:, [0, 1, 3]].all()


def test_lsr_seeds_differ_only_on_uncertain():
    a = resolve(RAW, LabelPolicy.lsr_ones(), seed=1)
    b = resolve(RAW, LabelPolicy.lsr_ones(), seed=2)
    diff = a.values != b.values
    assert diff[:, 2].any() and not diff[:, [0, 1, 3]].any()
    assert np.array_equal(a.values, resolve(RAW, LabelPolicy.lsr_ones(), seed=1).values)


@pytest.mark.parametrize("lo,hi", [(0.9, 0.6), (0.2, 0.4), (-0.1, 0.9)])
def test_bad_bounds(lo, hi):
    with pytest.raises(PolicyError):
        LabelPolicy("lsr-ones", lo, hi)


def test_policy_parse_roundtrip():
    for p in (LabelPolicy.ones(), LabelPolicy.lsr_ones(0.6, 0.9), LabelPolicy.ignore()):
        assert LabelPolicy.parse(str(p)) == p


def test_aggregate_mean_and_identity():
    a = np.full((1, 1), 0.9)
    b = np.full((1, 1), 0.7)
    assert aggregate_soft_labels([a, b]).values[0, 0] == pytest.approx(0.8, abs=1e-15)
    assert np.array_equal(aggregate_soft_labels([a]).values, a)
    same = np.full((3, 2), 0.37)
    assert np.all(aggregate_soft_labels([same] * 6).values == 0.37)


def test_aggregate_errors():
    with pytest.raises(ContractError):
        aggregate_soft_labels([])
    with pytest.raises(ContractError, match="ref-b"):
        aggregate_soft_labels([np.full((2, 2), .5), np.full((3, 2), .5)], ["ref-a", "ref-b"])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 20), st.integers(0, 10_000))
def test_envelope(n_models, n, seed):
    rng = np.random.default_rng(seed)
    preds = [rng.uniform(0.01, 0.99, size=(n, 3)) for _ in range(n_models)]
    out = aggregate_soft_labels(preds).values
    stack = np.stack(preds)
    assert np.all(stack.min(0) <= out) and np.all(out <= stack.max(0))


def test_soft_label_file(tmp_path):
    rng = np.random.default_rng(0)
    dist = aggregate_soft_labels([rng.uniform(0.1, 0.9, (5, 3))], ["ref-a:abc"])
    path = tmp_path / "s.bin"
    write_soft_labels(dist, path)
    back = read_soft_labels(path)
    assert np.array_equal(back.values, dist.values) and back.sources == dist.sources
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(ChecksumError):
        read_soft_labels(path)


def test_empty_soft_label_file(tmp_path):
    dist = SoftLabelDistribution(np.zeros((0, 4)), ("x",))
    write_soft_labels(dist, tmp_path / "e.bin")
    assert read_soft_labels(tmp_path / "e.bin").values.shape == (0, 4)
