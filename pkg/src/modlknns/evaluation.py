"""ROC/AUC metrics, ensemble evaluation and ablation tables."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .diffcore import ContractError

ARMS = ("B", "B+MODL", "B+KNNS", "B+MODL+KNNS")


def roc_auc(scores, labels) -> Optional[float]:
    """Mann-Whitney AUC with ties counted as one half.

    Returns ``None`` when either class is absent.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size == 0:
        raise ContractError("roc_auc needs at least one sample")
    if scores.shape != labels.shape:
        raise ContractError(f"{scores.size} scores vs {labels.size} labels")
    if not np.isfinite(scores).all():
        raise ContractError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be binary")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> np.ndarray:
    """(FPR, TPR) points from (0, 0) to (1, 1), one per distinct threshold."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.empty((0, 2))
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tps = np.cumsum(y)
    fps = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    fpr = np.r_[0.0, fps[last] / n_neg]
    tpr = np.r_[0.0, tps[last] / n_pos]
    return np.column_stack([fpr, tpr])


@dataclass
class EvalReport:
    class_names: tuple[str, ...]
    per_class_auc: list[Optional[float]]
    roc_points: list[np.ndarray]
    param_count: Optional[int] = None

    @property
    def defined(self) -> list[float]:
        return [a for a in self.per_class_auc if a is not None]

    @property
    def n_undefined(self) -> int:
        return sum(a is None for a in self.per_class_auc)

    @property
    def mean_auc(self) -> float:
        d = self.defined
        return float(np.mean(d)) if d else float("nan")

    def to_dict(self) -> dict:
        return {"classes": list(self.class_names),
                "per_class_auc": self.per_class_auc,
                "mean_auc": self.mean_auc,
                "undefined_classes": self.n_undefined,
                "param_count": self.param_count}

    def write(self, directory, stem: str = "eval") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with (directory / f"{stem}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "auc"])
            for name, a in zip(self.class_names, self.per_class_auc):
                w.writerow([name, "" if a is None else repr(a)])
            w.writerow(["mean", repr(self.mean_auc)])
        for name, pts in zip(self.class_names, self.roc_points):
            with (directory / f"{stem}_roc_{name}.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["fpr", "tpr"])
                w.writerows([[repr(float(a)), repr(float(b))] for a, b in pts])


def _truth_arrays(truth, shape):
    values = np.asarray(getattr(truth, "values", truth), dtype=np.float64)
    mask = np.asarray(getattr(truth, "mask", np.ones(values.shape, bool)), dtype=bool)
    if values.shape != shape:
        raise ContractError(f"ground truth shape {values.shape} vs scores {shape}")
    return (values >= 0.5).astype(np.int8), mask


def evaluate_scores(scores: np.ndarray, truth, class_names=None,
                    param_count: Optional[int] = None) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ContractError("cannot evaluate an empty dataset")
    labels, mask = _truth_arrays(truth, scores.shape)
    C = scores.shape[1]
    names = tuple(class_names) if class_names is not None else tuple(f"class_{c}" for c in range(C))
    aucs, curves = [], []
    for c in range(C):
        m = mask[:, c]
        if not m.any():
            aucs.append(None)
            curves.append(np.empty((0, 2)))
            continue
        aucs.append(roc_auc(scores[m, c], labels[m, c]))
        curves.append(roc_curve(scores[m, c], labels[m, c]))
    return EvalReport(names, aucs, curves, param_count)


def evaluate(model, X, truth, class_names=None) -> EvalReport:
    """Score ``model.predict_proba(X)`` against ``truth`` class by class."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ContractError("cannot evaluate an empty dataset")
    scores = model.predict_proba(X)
    C = np.asarray(getattr(truth, "values", truth)).shape[1]
    if scores.shape[1] != C:
        raise ContractError(f"model outputs {scores.shape[1]} classes, ground truth has {C}")
    return evaluate_scores(scores, truth, class_names, getattr(model, "n_params_", None))


def ensemble_evaluate(models: Sequence, X, truth, class_names=None) -> EvalReport:
    """Evaluate the arithmetic mean of member predictions."""
    if not models:
        raise ContractError("ensemble needs at least one member")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ContractError("cannot evaluate an empty dataset")
    preds = [m.predict_proba(X) for m in models]
    widths = {p.shape[1] for p in preds}
    if len(widths) != 1:
        raise ContractError(f"ensemble members disagree on class count: {sorted(widths)}")
    counts = [getattr(m, "n_params_", None) for m in models]
    total = None if any(c is None for c in counts) else int(sum(counts))
    return evaluate_scores(np.mean(np.stack(preds), axis=0), truth, class_names, total)


@dataclass
class AblationTable:
    class_names: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = ["arm", "mean_auc", "std_auc", "n_seeds", "wins_vs_B",
                *[f"delta_{c}" for c in self.class_names], "delta_mean"]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["arm"], f"{r['mean_auc']:.10f}", f"{r['std_auc']:.10f}",
                            r["n_seeds"], r["wins_vs_B"],
                            *[f"{d:.10f}" for d in r["class_deltas"]], f"{r['delta_mean']:.10f}"])

    def format(self) -> str:
        head = f"{'arm':<14}{'mean AUC':>10}{'± std':>9}{'Δ vs B':>9}{'wins':>7}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r['arm']:<14}{100 * r['mean_auc']:>10.2f}{100 * r['std_auc']:>9.2f}"
                         f"{100 * r['delta_mean']:>+9.2f}{r['wins_vs_B']:>4}/{r['n_seeds']}")
        return "\n".join(lines)


def ablation_report(runs: Mapping[str, Sequence[EvalReport]], arms=ARMS) -> AblationTable:
    """Per-arm mean and spread of mean AUC over seeds, with deltas to ``B``.

    ``runs[arm][s]`` must be evaluated on the same split as ``runs["B"][s]``.
    """
    missing = [a for a in arms if a not in runs]
    if missing:
        raise ContractError(f"ablation is missing arms: {', '.join(missing)}")
    base = runs[arms[0]]
    names = base[0].class_names
    base_means = np.array([r.mean_auc for r in base])
    base_class = np.array([[np.nan if a is None else a for a in r.per_class_auc] for r in base])
    table = AblationTable(names)
    for arm in arms:
        reports = runs[arm]
        if len(reports) != len(base):
            raise ContractError(f"arm {arm!r} has {len(reports)} seeds, baseline has {len(base)}")
        means = np.array([r.mean_auc for r in reports])
        per_class = np.array([[np.nan if a is None else a for a in r.per_class_auc]
                              for r in reports])
        deltas = np.nanmean(per_class - base_class, axis=0) if len(reports) else []
        table.rows.append({
            "arm": arm,
            "mean_auc": float(means.mean()),
            "std_auc": float(means.std(ddof=1)) if len(means) > 1 else 0.0,
            "n_seeds": len(reports),
            "wins_vs_B": int((means > base_means).sum()),
            "class_deltas": [float(d) for d in deltas],
            "delta_mean": float((means - base_means).mean()),
            "per_seed": [float(m) for m in means],
        })
    return table


def write_k_sweep(rows: Sequence[tuple[int, float]], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "mean_improvement"])
        for k, imp in rows:
            w.writerow([k, f"{imp:.10f}"])
