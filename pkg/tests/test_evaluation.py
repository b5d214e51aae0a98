import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modlknns.diffcore import ContractError
from modlknns.evaluation import (ARMS, EvalReport, ablation_report, ensemble_evaluate,
                                 evaluate, evaluate_scores, roc_auc, roc_curve, write_k_sweep)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        return None
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def test_worked_value_and_extremes():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert roc_auc([0.3, 0.4], [1, 1]) is None


def test_invalid_inputs():
    with pytest.raises(ContractError):
        roc_auc([0.1, np.nan], [0, 1])
    with pytest.raises(ContractError):
        roc_auc([0.1, 0.2], [0, 2])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=1, max_size=60))
def test_matches_pairwise(pairs):
    scores = [s / 5 for s, _ in pairs]
    labels = [y for _, y in pairs]
    expected = pairwise_auc(scores, labels)
    got = roc_auc(scores, labels)
    assert (got is None) == (expected is None)
    if got is not None:
        assert abs(got - expected) <= 1e-12
        pts = roc_curve(scores, labels)
        assert tuple(pts[0]) == (0.0, 0.0) and tuple(pts[-1]) == (1.0, 1.0)
        assert np.all(np.diff(pts, axis=0) >= 0)
        assert abs(np.trapezoid(pts[:, 1], pts[:, 0]) - got) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=50)
    y = rng.integers(0, 2, 50)
    a = roc_auc(s, y)
    if a is not None:
        assert roc_auc(np.exp(s) * 3 + 1, y) == a


class Fixed:
    def __init__(self, p, n_params=10):
        self.p = p
        self.n_params_ = n_params

    def predict_proba(self, X):
        return self.p


def test_undefined_class_excluded():
    truth = np.array([[1, 0], [0, 0], [1, 0], [0, 0]], dtype=float)
    scores = np.array([[.9, .2], [.1, .3], [.8, .1], [.3, .5]])
    rep = evaluate(Fixed(scores), np.zeros((4, 1)), truth)
    assert rep.per_class_auc[1] is None and rep.n_undefined == 1 and rep.mean_auc == 1.0


def test_oracle_dominates_and_is_repeatable():
    rng = np.random.default_rng(0)
    probs = rng.uniform(size=(200, 3))
    truth = (probs >= 0.5).astype(float)
    noisy = np.clip(probs + rng.normal(scale=0.3, size=probs.shape), 0, 1)
    oracle = evaluate(Fixed(probs), np.zeros((200, 1)), truth)
    model = evaluate(Fixed(noisy), np.zeros((200, 1)), truth)
    assert oracle.mean_auc >= model.mean_auc
    assert oracle.to_dict() == evaluate(Fixed(probs), np.zeros((200, 1)), truth).to_dict()


def test_ensemble_identities():
    rng = np.random.default_rng(1)
    p = rng.uniform(size=(50, 2))
    truth = rng.integers(0, 2, (50, 2)).astype(float)
    single = evaluate(Fixed(p), np.zeros((50, 1)), truth)
    assert ensemble_evaluate([Fixed(p)], np.zeros((50, 1)), truth).per_class_auc == \
        single.per_class_auc
    ens = ensemble_evaluate([Fixed(p)] * 4, np.zeros((50, 1)), truth)
    assert ens.per_class_auc == single.per_class_auc and ens.param_count == 40
    with pytest.raises(ContractError):
        ensemble_evaluate([], np.zeros((50, 1)), truth)
    with pytest.raises(ContractError):
        evaluate(Fixed(p), np.zeros((0, 1)), truth)


def test_report_files(tmp_path):
    rep = evaluate_scores(np.array([[.2], [.7]]), np.array([[0.], [1.]]), ("x",), 5)
    rep.write(tmp_path, "arm")
    assert (tmp_path / "arm_roc_x.csv").read_text().startswith("fpr,tpr\n")
    assert (tmp_path / "arm.json").exists()


def _reports(values):
    return [EvalReport(("a", "b"), list(v), [], 1) for v in values]


def test_ablation_table(tmp_path):
    same = {arm: _reports([(0.7, 0.8), (0.6, 0.9)]) for arm in ARMS}
    table = ablation_report(same)
    assert [r["arm"] for r in table.rows] == list(ARMS)
    assert all(r["delta_mean"] == 0 and r["class_deltas"] == [0, 0] for r in table.rows)
    table.write_csv(tmp_path / "a.csv")
    header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
    assert header.count("delta_a") == 1 and "delta_mean" in header
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 5
    with pytest.raises(ContractError, match="B\\+KNNS"):
        ablation_report({k: v for k, v in same.items() if k != "B+KNNS"})


def test_k_sweep_csv(tmp_path):
    write_k_sweep([(k, 0.01) for k in (3, 5, 7, 9, 11)], tmp_path / "k.csv")
    assert len((tmp_path / "k.csv").read_text().splitlines()) == 6
