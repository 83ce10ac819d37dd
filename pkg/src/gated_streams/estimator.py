"""scikit-learn style wrapper around the two-stream transformer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import GatingMode, ModelConfig
from .data import video_from_arrays
from .evaluation import predict_proba_video
from .model import GatedStreamTransformer
from .training import TrainConfig, train
from .validation import check_videos


class GatedStreamClassifier(ClassifierMixin, BaseEstimator):
    """Online per-frame step classifier for videos.

    ``X`` is a list of videos, each ``[T, H, W, C]`` with pixels in ``[0, 1]``;
    ``y`` is a matching list of per-frame label arrays. Every frame is
    predicted from a causal window that ends at that frame.

    If no validation videos are given, the training videos double as the
    validation set used to pick the best epoch.
    """

    def __init__(self, patch_size=8, embed_dim=64, num_heads=4, depth=2, n_st=4, n_lt=4,
                 sampling_period=4, gating_mode="Feature", learning_rate=1e-3, batch_size=16,
                 epochs=10, windows_per_epoch=0, eval_batch_size=64, random_state=0):
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.depth = depth
        self.n_st = n_st
        self.n_lt = n_lt
        self.sampling_period = sampling_period
        self.gating_mode = gating_mode
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.windows_per_epoch = windows_per_epoch
        self.eval_batch_size = eval_batch_size
        self.random_state = random_state

    def _model_config(self, frame_shape, n_classes) -> ModelConfig:
        H, W, C = frame_shape
        return ModelConfig(
            H=H, W=W, C=C, Q=self.patch_size, K=self.embed_dim, A=self.num_heads, L=self.depth,
            n_st=self.n_st, n_lt=self.n_lt, s=self.sampling_period, num_classes=n_classes,
            gating_mode=GatingMode(self.gating_mode),
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
            windows_per_epoch=self.windows_per_epoch, eval_batch_size=self.eval_batch_size,
            seed=self.random_state,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        videos, labels = check_videos(X, y)
        self.classes_ = np.unique(np.concatenate(labels))
        if len(self.classes_) < 2:
            raise ValueError("need at least two distinct step labels")
        encode = lambda lab: np.searchsorted(self.classes_, lab)  # noqa: E731
        train_set = [video_from_arrays(v, encode(lab), f"train_{i}") for i, (v, lab) in enumerate(zip(videos, labels))]
        if X_val is not None:
            vv, vl = check_videos(X_val, y_val)
            unseen = set(np.concatenate(vl).tolist()) - set(self.classes_.tolist())
            if unseen:
                raise ValueError(f"validation labels {sorted(unseen)} never occur in training")
            val_set = [video_from_arrays(v, encode(lab), f"val_{i}") for i, (v, lab) in enumerate(zip(vv, vl))]
        else:
            val_set = train_set
        cfg = self._model_config(videos[0].shape[1:], len(self.classes_))
        self.model_ = GatedStreamTransformer(cfg, seed=self.random_state)
        result = train(self.model_, train_set, val_set, self._train_config())
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = int(np.prod(videos[0].shape[1:]))
        return self

    def predict_proba(self, X):
        """List of ``[T, n_classes]`` per-frame probability arrays."""
        check_is_fitted(self, "model_")
        videos, _ = check_videos(X)
        cfg = self.model_.config
        for v in videos:
            if v.shape[1:] != (cfg.H, cfg.W, cfg.C):
                raise ValueError(f"frames are {v.shape[1:]}, model was fit on {(cfg.H, cfg.W, cfg.C)}")
        return [predict_proba_video(self.model_, v, self.eval_batch_size) for v in videos]

    def predict(self, X):
        """List of per-frame label arrays."""
        return [self.classes_[p.argmax(axis=1)] for p in self.predict_proba(X)]

    def score(self, X, y, sample_weight=None):
        """Mean over videos of the per-frame accuracy (fraction, not percent)."""
        _, labels = check_videos(X, y)
        preds = self.predict(X)
        return float(np.mean([np.mean(p == np.asarray(lab)) for p, lab in zip(preds, labels)]))
