"""Classification, distribution and neighbor-smoothing losses.

All losses take predictions as :class:`~modlknns.diffcore.Tensor` nodes so
they can be differentiated, and reduce by the mean over the batch.
Multi-label outputs are compared class by class with Bernoulli KL terms.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import xlogy

from . import diffcore as dc
from .diffcore import ContractError, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.1
    gamma: float = 0.1

    def __post_init__(self):
        for name in ("lam", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ContractError(f"loss weight {name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    distri: float
    neigh: float
    total: float


def _clamped_log_pair(p: Tensor) -> tuple[Tensor, Tensor]:
    p = dc.clamp(p)
    return dc.log(p), dc.log(1.0 - p)


def bce_loss(pred: Tensor, targets, mask=None) -> Tensor:
    """Binary cross-entropy summed over classes, averaged over samples.

    Masked-out slots are dropped; samples with no masked-in slot do not
    count towards the average.  This puts the classification term on the
    same per-sample footing as the two KL terms.
    """
    pred = dc._as_tensor(pred)
    y = np.asarray(getattr(targets, "values", targets), dtype=np.float64)
    if mask is None:
        mask = getattr(targets, "mask", np.ones_like(y, dtype=bool))
    mask = np.asarray(mask, dtype=bool)
    if y.shape != pred.shape or mask.shape != pred.shape:
        raise ContractError(f"prediction shape {pred.shape} vs targets {y.shape}")
    count = int(mask.reshape(mask.shape[0], -1).any(axis=1).sum()) if mask.ndim > 1 \
        else int(mask.any())
    if count == 0:
        log.warning("every label slot is masked out; classification loss is 0")
        return Tensor(0.0)
    y = np.where(mask, y, 0.0)
    logp, log1mp = _clamped_log_pair(pred)
    per_slot = y * logp + (1.0 - y) * log1mp
    return dc.mul(dc.sum_(per_slot * mask.astype(np.float64)), -1.0 / count)


def bernoulli_kl(target, pred: Tensor) -> Tensor:
    """Elementwise ``KL(Bern(target) || Bern(pred))`` with a constant target."""
    t = np.asarray(target, dtype=np.float64)
    logp, log1mp = _clamped_log_pair(pred)
    entropy_part = xlogy(t, t) + xlogy(1.0 - t, 1.0 - t)
    return entropy_part - (t * logp + (1.0 - t) * log1mp)


def distribution_loss(soft: np.ndarray, pred: Tensor) -> Tensor:
    """Per-class Bernoulli KL of the soft labels to the predictions.

    Summed over classes and averaged over the batch.  Soft labels are used
    unclamped with ``0 log 0 = 0``; predictions are clamped before the log.
    """
    pred = dc._as_tensor(pred)
    soft = np.asarray(soft, dtype=np.float64)
    if soft.shape != pred.shape:
        raise ContractError(f"soft labels {soft.shape} vs predictions {pred.shape}")
    if pred.data.ndim == 1:
        return dc.sum_(bernoulli_kl(soft, pred))
    return dc.mean(dc.sum_(bernoulli_kl(soft, pred), axis=1))


def neighbor_loss(anchor_pred: Tensor, neighbor_preds: Tensor, sims,
                  stop_neighbor_grad: bool = False) -> Tensor:
    """Similarity-weighted KL of neighbor predictions relative to the anchor.

    Shapes: anchors ``(B, C)``, neighbors ``(B, K, C)``, sims ``(B, K)``.
    Unbatched ``(C,)``, ``(K, C)``, ``(K,)`` inputs are accepted too.
    """
    anchor_pred = dc._as_tensor(anchor_pred)
    neighbor_preds = dc._as_tensor(neighbor_preds)
    sims = np.asarray(sims, dtype=np.float64)
    if anchor_pred.data.ndim == 1:
        anchor_pred = dc.reshape(anchor_pred, (1,) + anchor_pred.shape)
        neighbor_preds = dc.reshape(neighbor_preds, (1,) + neighbor_preds.shape)
        sims = sims.reshape(1, -1)
    B, K, C = neighbor_preds.shape
    if sims.shape != (B, K):
        raise ContractError(f"expected {K} similarities per anchor, got shape {sims.shape}")
    if anchor_pred.shape != (B, C):
        raise ContractError(f"anchor shape {anchor_pred.shape} vs neighbors {neighbor_preds.shape}")
    if stop_neighbor_grad:
        neighbor_preds = neighbor_preds.detach()
    q = dc.clamp(neighbor_preds)
    p = dc.reshape(dc.clamp(anchor_pred), (B, 1, C))
    kl = (q * (dc.log(q) - dc.log(p))
          + (1.0 - q) * (dc.log(1.0 - q) - dc.log(1.0 - p)))
    weighted = dc.sum_(kl, axis=2) * sims
    return dc.mul(dc.sum_(weighted), 1.0 / B)


def total_loss(cls, distri, neigh, w: LossWeights = LossWeights()) -> LossBreakdown:
    values = [float(getattr(v, "data", v)) for v in (cls, distri, neigh)]
    if not all(math.isfinite(v) for v in values):
        raise ContractError(f"loss components must be finite, got {values}")
    c, d, n = values
    return LossBreakdown(c, d, n, c + w.lam * d + w.gamma * n)


def weighted_objective(cls: Tensor, distri, neigh, w: LossWeights) -> Tensor:
    """Differentiable ``cls + lam * distri + gamma * neigh``; absent terms skipped."""
    out = cls
    if distri is not None:
        out = out + dc.mul(distri, w.lam)
    if neigh is not None:
        out = out + dc.mul(neigh, w.gamma)
    return out


LOG_COLUMNS = ("epoch", "step", "cls", "distri", "neigh", "total", "lr")


class TrainingLog:
    """In-memory rows of the per-step loss log, written as CSV on demand."""

    def __init__(self):
        self.rows: list[tuple] = []

    def append(self, epoch: int, step: int, b: LossBreakdown, lr: float) -> None:
        self.rows.append((epoch, step, b.cls, b.distri, b.neigh, b.total, lr))

    def column(self, name: str) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=np.float64)

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([r[0], r[1], *[repr(float(v)) for v in r[2:]]])
        tmp.replace(path)
