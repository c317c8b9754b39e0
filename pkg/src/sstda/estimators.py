"""sklearn-style wrappers around the functional training code.

X is a list of TrainItem (precomputed scene tensors); targets travel
inside the items, so ``fit(X)`` follows the transformer-style calling
convention. ``get_params``/``set_params`` come from BaseEstimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import features
from .adaptation import AdaptConfig, adapt_loop
from .tracker import CrnnConfig, CrnnModel, TrainConfig, TrainItem, pretrain, toy_config


def _check_items(X):
    if not isinstance(X, (list, tuple)) or not all(isinstance(i, TrainItem) for i in X):
        raise TypeError("X must be a list of TrainItem")
    if len(X) == 0:
        raise ValueError("X is empty")
    return list(X)


def _resolve_cfg(preset) -> CrnnConfig:
    if isinstance(preset, CrnnConfig):
        return preset
    if preset == "toy":
        return toy_config()
    if preset == "default":
        return CrnnConfig()
    raise ValueError(f"unknown model preset {preset!r}")


class AzimuthTracker(BaseEstimator):
    """Source-domain CRNN tracker with a fit/predict interface."""

    def __init__(self, preset="toy", epochs=20, batch_size=16, lr=1e-4,
                 seed=0, val_fraction=0.2):
        self.preset = preset
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.val_fraction = val_fraction

    def fit(self, X, y=None, val_items=None):
        items = _check_items(X)
        cfg = _resolve_cfg(self.preset)
        if val_items is None:
            n_val = max(1, int(len(items) * self.val_fraction))
            val_items, items = items[:n_val], items[n_val:]
        tcfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           lr=self.lr, seed=self.seed)
        state, history = pretrain(items, val_items, cfg, tcfg)
        self.cfg_ = cfg
        self.state_ = state
        self.model_ = CrnnModel.from_state(cfg, state)
        self.history_ = history
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        items = _check_items(X)
        tracks = []
        for item in items:
            pred = self.model_.predict(item.x)
            tracks.append(features.decode_peak(pred, item.gt_track.active))
        return tracks

    def score(self, X, y=None):
        """Negative frame-pooled MAE in degrees (higher is better)."""
        from .evaluation import frame_errors_deg

        check_is_fitted(self, "model_")
        errs = [frame_errors_deg(est, item.gt_track)
                for est, item in zip(self.predict(X), _check_items(X))]
        return -float(np.mean(np.concatenate(errs)))


class ImportanceWeightedAdapter(BaseEstimator):
    """Adapts a pretrained tracker to unlabeled target items."""

    def __init__(self, mode="iwda", u=0.001, epochs=60, batch_size=16, lr=1e-4,
                 patience=10, warmup_steps=200, seed=0):
        self.mode = mode
        self.u = u
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.patience = patience
        self.warmup_steps = warmup_steps
        self.seed = seed

    def fit(self, X, y=None, pretrained=None, cfg=None, target_items=None, val_items=None):
        """X: labeled source items; target_items: unlabeled target items."""
        source_items = _check_items(X)
        if pretrained is None or cfg is None:
            raise ValueError("fit requires pretrained state arrays and the matching config")
        if val_items is None:
            raise ValueError("fit requires a labeled target validation set")
        acfg = AdaptConfig(mode=self.mode, u=self.u, epochs=self.epochs,
                           batch_size=self.batch_size, lr=self.lr,
                           patience=self.patience, warmup_steps=self.warmup_steps,
                           seed=self.seed)
        result = adapt_loop(pretrained, cfg, source_items, target_items or [],
                            val_items, acfg)
        self.cfg_ = cfg
        self.result_ = result
        self.model_ = CrnnModel.from_state(cfg, result.best_state)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return [features.decode_peak(self.model_.predict(i.x), i.gt_track.active)
                for i in _check_items(X)]
