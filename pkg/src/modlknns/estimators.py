"""scikit-learn compatible wrappers around the two training stages.

``y`` for every estimator is an ``(n_samples, n_classes)`` matrix of targets
in ``[0, 1]``; ``NaN`` marks a slot excluded from the classification loss
(the U-Ignore policy).  Use :func:`modlknns.labelkit.resolve` and
``ResolvedTargets.as_nan_matrix`` to build it from raw labels.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from . import diffcore as dc
from .evaluation import evaluate_scores
from .labelkit import ResolvedTargets, aggregate_soft_labels
from .modelzoo import ModelSpec, param_count
from .neighborhood import NeighborPool, build_neighbor_pool
from .trainer import TrainConfig, fit_network


def _check_targets(y, n_rows: int) -> ResolvedTargets:
    y = check_array(y, ensure_all_finite="allow-nan", ensure_2d=True, dtype=np.float64)
    if y.shape[0] != n_rows:
        raise ValueError(f"X has {n_rows} rows, y has {y.shape[0]}")
    mask = ~np.isnan(y)
    values = np.where(mask, y, 0.0)
    if ((values < 0) | (values > 1)).any():
        raise ValueError("targets must lie in [0, 1]")
    return ResolvedTargets(values, mask)


class MultiLabelMLP(ClassifierMixin, BaseEstimator):
    """Sigmoid-output multi-layer perceptron trained with masked BCE and Adam.

    Parameters
    ----------
    hidden : tuple of int
        Hidden layer widths.
    activation : {"relu", "tanh"}
    learning_rate : float
        Base Adam step size, divided by ``lr_decay`` every ``decay_every`` epochs.
    batch_size, epochs : int
    random_state : int
        Seeds the weight initialization and the batch order.
    """

    def __init__(self, hidden=(128, 64), activation="relu", learning_rate=0.001,
                 beta1=0.9, beta2=0.999, batch_size=32, epochs=10, lr_decay=3.0,
                 decay_every=2, random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.random_state = random_state

    def _train_config(self, **extra) -> TrainConfig:
        return TrainConfig(lr=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
                           batch_size=self.batch_size, epochs=self.epochs,
                           lr_decay=self.lr_decay, decay_every=self.decay_every,
                           seed=self.random_state, **extra)

    def _make_spec(self, n_features: int, n_classes: int) -> ModelSpec:
        return ModelSpec(type(self).__name__, tuple(self.hidden), self.activation,
                         self.random_state, n_features, n_classes)

    def _fit(self, X, y, eval_set, config, soft=None, pool=None):
        X = check_array(X, dtype=np.float64)
        targets = _check_targets(y, X.shape[0])
        X_val = val_targets = None
        if eval_set is not None:
            X_val = check_array(eval_set[0], dtype=np.float64)
            val_targets = _check_targets(eval_set[1], X_val.shape[0])
        self.spec_ = self._make_spec(X.shape[1], targets.values.shape[1])
        result = fit_network(self.spec_, X, targets, config, soft=soft, pool=pool,
                             X_val=X_val, val_targets=val_targets)
        self.params_ = result.params
        self.history_ = result.history
        self.loss_log_ = result.log
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = targets.values.shape[1]
        self.classes_ = np.arange(self.n_outputs_)
        self.n_params_ = param_count(self.spec_)
        return self

    def fit(self, X, y, eval_set=None):
        """Fit on resolved targets; ``eval_set=(X_val, y_val)`` enables checkpoint selection."""
        return self._fit(X, y, eval_set, self._train_config(lam=0.0, gamma=0.0))

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise dc.DimensionError(
                f"X has {X.shape[1]} features, model was fitted on {self.n_features_in_}")
        return dc.forward(self.spec_, self.params_, X)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def score(self, X, y, sample_weight=None) -> float:
        """Mean per-class ROC AUC over classes with both outcomes present."""
        X = check_array(X, dtype=np.float64)
        truth = _check_targets(y, X.shape[0])
        return evaluate_scores(self.predict_proba(X), truth).mean_auc


class DistilledMultiLabelMLP(MultiLabelMLP):
    """Target network trained against soft labels plus neighbor smoothing.

    ``fit`` takes the frozen soft-label matrix (averaged reference
    predictions for the training rows) and optionally a prebuilt
    :class:`~modlknns.neighborhood.NeighborPool`; without one, the pool is
    built from the soft labels.

    Parameters
    ----------
    lam : float
        Weight of the soft-label KL term.
    gamma : float
        Weight of the neighbor smoothing term.
    n_neighbors : int
        Neighbors per anchor.
    sigma : float
        Width of the similarity kernel.
    stop_neighbor_grad : bool
        Treat neighbor predictions as constants in the smoothing term.
    """

    def __init__(self, hidden=(128, 64), activation="relu", learning_rate=0.001,
                 beta1=0.9, beta2=0.999, batch_size=32, epochs=10, lr_decay=3.0,
                 decay_every=2, random_state=0, lam=0.1, gamma=0.1, n_neighbors=9,
                 sigma=1.0, stop_neighbor_grad=False):
        super().__init__(hidden=hidden, activation=activation, learning_rate=learning_rate,
                         beta1=beta1, beta2=beta2, batch_size=batch_size, epochs=epochs,
                         lr_decay=lr_decay, decay_every=decay_every, random_state=random_state)
        self.lam = lam
        self.gamma = gamma
        self.n_neighbors = n_neighbors
        self.sigma = sigma
        self.stop_neighbor_grad = stop_neighbor_grad

    def fit(self, X, y, soft_labels=None, pool: Optional[NeighborPool] = None, eval_set=None):
        config = self._train_config(lam=self.lam, gamma=self.gamma, K=self.n_neighbors,
                                    sigma=self.sigma,
                                    stop_neighbor_grad=self.stop_neighbor_grad)
        soft = None
        if soft_labels is not None:
            soft = check_array(getattr(soft_labels, "values", soft_labels), dtype=np.float64)
        elif self.lam > 0 or (self.gamma > 0 and pool is None):
            raise ValueError("soft_labels are required when lam > 0 or no pool is given")
        if self.gamma > 0 and pool is None:
            pool = build_neighbor_pool(soft, self.n_neighbors, self.sigma)
        self.pool_ = pool
        return self._fit(X, y, eval_set, config, soft=soft, pool=pool)


class SoftLabelEnsemble(TransformerMixin, BaseEstimator):
    """Fits each reference independently and averages their probabilities.

    ``transform`` returns the soft-label matrix; ``predict_proba`` is the
    same average, so the fitted object doubles as the model ensemble.
    """

    def __init__(self, estimators: Sequence[MultiLabelMLP] = ()):
        self.estimators = estimators

    def fit(self, X, y, eval_set=None):
        if len(self.estimators) == 0:
            raise ValueError("SoftLabelEnsemble needs at least one estimator")
        self.estimators_ = [clone(est).fit(X, y, eval_set=eval_set) for est in self.estimators]
        self.n_params_ = int(sum(e.n_params_ for e in self.estimators_))
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        preds = [e.predict_proba(X) for e in self.estimators_]
        return aggregate_soft_labels(preds).values

    predict_proba = transform

    def score(self, X, y, sample_weight=None) -> float:
        X = check_array(X, dtype=np.float64)
        return evaluate_scores(self.transform(X), _check_targets(y, X.shape[0])).mean_auc
