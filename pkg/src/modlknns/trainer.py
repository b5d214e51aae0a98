"""Two-stage training: references on BCE, then the distilled target."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from .dataset import Dataset
from .diffcore import ContractError, NonFiniteError, Parameters
from .evaluation import evaluate_scores
from .labelkit import (LabelPolicy, ResolvedTargets, SoftLabelDistribution,
                       aggregate_soft_labels, resolve, write_soft_labels)
from .modelzoo import ModelSpec, param_count
from .neighborhood import NeighborPool, build_neighbor_pool, write_pool
from .objectives import (LossWeights, TrainingLog, bce_loss, distribution_loss,
                         neighbor_loss, total_loss, weighted_objective)

log = logging.getLogger(__name__)


class TrainingConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    gamma: float = 0.1
    K: int = 9
    sigma: float = 1.0
    policy: LabelPolicy = field(default_factory=LabelPolicy.ones)
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    lr_decay: float = 3.0
    decay_every: int = 2
    seed: int = 0
    stop_neighbor_grad: bool = False

    def __post_init__(self):
        LossWeights(self.lam, self.gamma)
        for name in ("K", "batch_size", "epochs", "decay_every"):
            if int(getattr(self, name)) < 1:
                raise TrainingConfigError(f"{name} must be a positive integer")
        for name in ("sigma", "lr", "lr_decay", "adam_eps"):
            if not getattr(self, name) > 0:
                raise TrainingConfigError(f"{name} must be positive")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise TrainingConfigError(f"{name} must lie in [0, 1)")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lam, self.gamma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"] = str(self.policy)
        return d


def lr_schedule(base_lr: float, epoch: int, decay: float = 3.0, every: int = 2) -> float:
    """Step decay: ``base / decay ** (epoch // every)``."""
    if epoch < 0:
        raise ContractError("epoch must be non-negative")
    return base_lr / decay ** (epoch // every)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_mean_auc: float


@dataclass
class TrainResult:
    spec: ModelSpec
    params: Parameters
    history: list[EpochRecord]
    log: TrainingLog
    best_epoch: int
    best_val_auc: float
    diverged: bool = False

    @property
    def n_params_(self) -> int:
        return param_count(self.spec)

    def predict_proba(self, X) -> np.ndarray:
        return dc.forward(self.spec, self.params, X)


def _val_auc(spec, params, X_val, val_targets) -> float:
    if X_val is None or len(X_val) == 0:
        return float("nan")
    report = evaluate_scores(dc.forward(spec, params, X_val), val_targets)
    return report.mean_auc


def fit_network(spec: ModelSpec, X: np.ndarray, targets: ResolvedTargets,
                config: TrainConfig, *, soft: Optional[np.ndarray] = None,
                pool: Optional[NeighborPool] = None, X_val=None, val_targets=None,
                params: Optional[Parameters] = None) -> TrainResult:
    """Minimize ``cls + lam * distri + gamma * neigh`` with Adam.

    Terms whose weight is zero are neither built nor differentiated, so the
    zero-weight run follows the plain BCE trajectory exactly.  The batch
    order comes from ``config.seed`` alone and is therefore shared by every
    run with the same seed.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    use_distri = config.lam > 0
    use_neigh = config.gamma > 0
    if use_distri and (soft is None or soft.shape != targets.values.shape):
        raise TrainingConfigError("distribution loss needs soft labels for every training row")
    if use_neigh:
        if pool is None or pool.neighbors.shape[0] != n:
            raise TrainingConfigError("neighbor loss needs a pool entry for every training row")
    weights = config.weights
    params = dc.init_params(spec) if params is None else params.copy()
    state = dc.AdamState.zeros_like(params, config.beta1, config.beta2, config.adam_eps)
    leaves = dc.as_leaves(params)  # views onto params; adam_step updates them in place
    order_rng = np.random.default_rng(config.seed)
    train_log = TrainingLog()
    history: list[EpochRecord] = []
    best = (params.copy(), -1, -np.inf)
    diverged = False
    step = 0
    for epoch in range(config.epochs):
        lr = lr_schedule(config.lr, epoch, config.lr_decay, config.decay_every)
        perm = order_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            rows = perm[start:start + config.batch_size]
            pred = dc.forward_graph(spec, leaves, X[rows])
            cls = bce_loss(pred, targets.values[rows], targets.mask[rows])
            distri = distribution_loss(soft[rows], pred) if use_distri else None
            neigh = None
            if use_neigh:
                nb = pool.neighbors[rows]
                nb_pred = dc.forward_graph(spec, leaves, X[nb.ravel()])
                nb_pred = dc.reshape(nb_pred, nb.shape + (spec.output_width,))
                neigh = neighbor_loss(pred, nb_pred, pool.sims[rows],
                                      stop_neighbor_grad=config.stop_neighbor_grad)
            objective = weighted_objective(cls, distri, neigh, weights)
            try:
                breakdown = total_loss(cls, 0.0 if distri is None else distri,
                                       0.0 if neigh is None else neigh, weights)
                grads = dc.backward(objective, leaves)
                dc.adam_step(params, grads, state, lr)
            except (ContractError, NonFiniteError) as exc:
                log.error("%s diverged at epoch %d step %d: %s", spec.name, epoch, step, exc)
                diverged = True
                break
            train_log.append(epoch, step, breakdown, lr)
            epoch_loss += breakdown.total * len(rows)
            step += 1
        if diverged:
            break
        val = _val_auc(spec, params, X_val, val_targets)
        history.append(EpochRecord(epoch, lr, epoch_loss / max(n, 1), val))
        # strict improvement keeps the earliest best; NaN (no validation) keeps the latest
        if np.isnan(val) or val > best[2]:
            best = (params.copy(), epoch, val)
    best_params, best_epoch, best_val = best
    if best_epoch < 0:
        best_params = params.copy()
    return TrainResult(spec, best_params, history, train_log, best_epoch, float(best_val),
                       diverged)


def resolve_split(dataset: Dataset, config: TrainConfig) -> ResolvedTargets:
    return resolve(dataset.raw_labels, config.policy, config.seed)


def train_reference(train: Dataset, spec: ModelSpec, config: TrainConfig,
                    valid: Optional[Dataset] = None) -> TrainResult:
    """Stage 1: BCE on the resolved noisy labels."""
    stage1 = replace(config, lam=0.0, gamma=0.0)
    return fit_network(spec, train.features, resolve_split(train, config), stage1,
                       X_val=None if valid is None else valid.features,
                       val_targets=None if valid is None else resolve_split(valid, config))


def distill_setup(references: Sequence[TrainResult], train: Dataset, config: TrainConfig,
                  soft_path=None, pool_path=None) -> tuple[SoftLabelDistribution, NeighborPool]:
    """Average reference predictions on the train split and build the pool."""
    if not references:
        raise ContractError("distillation needs at least one trained reference")
    preds, sources = [], []
    for ref in references:
        p = ref.predict_proba(train.features)
        if p.shape != (len(train), train.n_classes):
            raise ContractError(f"reference {ref.spec.name!r} predicted shape {p.shape}")
        preds.append(p)
        sources.append(f"{ref.spec.name}:{ref.params.checksum()[:16]}")
    soft = aggregate_soft_labels(preds, sources)
    pool = build_neighbor_pool(soft, config.K, config.sigma, ids=train.ids)
    if soft_path is not None:
        write_soft_labels(soft, soft_path)
    if pool_path is not None:
        write_pool(pool, pool_path)
    return soft, pool


def train_target(train: Dataset, spec: ModelSpec, soft: SoftLabelDistribution,
                 pool: NeighborPool, config: TrainConfig,
                 valid: Optional[Dataset] = None) -> TrainResult:
    """Stage 2: the weighted objective on the target spec."""
    if soft.values.shape != (len(train), train.n_classes):
        raise TrainingConfigError(
            f"soft labels cover {soft.values.shape[0]} rows, train split has {len(train)}")
    if config.gamma > 0 and (pool is None or not np.array_equal(pool.ids, train.ids)):
        raise TrainingConfigError("neighbor pool does not cover the train split")
    return fit_network(spec, train.features, resolve_split(train, config), config,
                       soft=soft.values, pool=pool,
                       X_val=None if valid is None else valid.features,
                       val_targets=None if valid is None else resolve_split(valid, config))
