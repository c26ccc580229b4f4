"""scikit-learn compatible wrapper around the MReg trainer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_bags, check_grades
from .trainer import TrainConfig, fit_arrays, model_from_checkpoint, predict_outputs


class MRegEstimator(ClassifierMixin, BaseEstimator):
    """Grade MR severity (0, 1, 2) from bags of video clips.

    ``X`` is a uint8 array ``[n_videos, I, T, 3, H, W]`` of MIL bags as built
    by :func:`mreg.dataio.make_bag`; ``y`` holds grades. ``predict`` returns
    the discretised regression value of the selected instance.

    Parameters mirror :class:`mreg.trainer.TrainConfig`; clip geometry
    (``I``, ``T``, ``H``, ``W``) is taken from the data at ``fit`` time.
    """

    def __init__(self, epochs=100, learning_rate=1e-5, weight_decay=0.01, seed=0, dim=64,
                 n_patches=16, beta=2.0, thresholds=(0.5, 1.5), lambdas=(0.01, 0.001),
                 focal_gamma=2.0, grad_clip=5.0, use_fs=True, use_amp=True, use_moe=True,
                 use_lexpert=True, regression_or_classification="regression",
                 freeze_encoder=False, dtype="float32"):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed
        self.dim = dim
        self.n_patches = n_patches
        self.beta = beta
        self.thresholds = thresholds
        self.lambdas = lambdas
        self.focal_gamma = focal_gamma
        self.grad_clip = grad_clip
        self.use_fs = use_fs
        self.use_amp = use_amp
        self.use_moe = use_moe
        self.use_lexpert = use_lexpert
        self.regression_or_classification = regression_or_classification
        self.freeze_encoder = freeze_encoder
        self.dtype = dtype

    def _config(self, X) -> TrainConfig:
        return TrainConfig(n_instances=X.shape[1], clip_len=X.shape[2], frame_hw=X.shape[-2:],
                           **self.get_params())

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_bags(X)
        y = check_grades(y, len(X))
        if X_val is not None:
            X_val = check_bags(X_val, X.shape[1], X.shape[2], X.shape[-2:])
            y_val = check_grades(y_val, len(X_val))
        self.config_ = self._config(X)
        result = fit_arrays(self.config_, X, y, X_val, y_val)
        self.checkpoint_ = result.checkpoint
        self.history_ = result.history
        self.epoch_history_ = result.epoch_history
        self.model_ = model_from_checkpoint(result.checkpoint, self.config_)
        self.classes_ = np.array([0, 1, 2])
        return self

    @classmethod
    def from_checkpoint(cls, ckpt):
        cfg = TrainConfig.from_dict(ckpt.config)
        params = {k: v for k, v in cfg.to_dict().items()
                  if k in cls._get_param_names()}
        est = cls(**params)
        est.config_ = cfg
        est.checkpoint_ = ckpt
        est.history_, est.epoch_history_ = [], []
        est.model_ = model_from_checkpoint(ckpt, cfg)
        est.classes_ = np.array([0, 1, 2])
        return est

    def forward(self, X):
        """Full :class:`~mreg.model.ModelOutput` per bag."""
        check_is_fitted(self, "model_")
        cfg = self.config_
        X = check_bags(X, cfg.n_instances, cfg.clip_len, cfg.frame_hw)
        return predict_outputs(self.model_, X, cfg, tag=3)

    def predict(self, X):
        return np.array([o.grade_pred for o in self.forward(X)], dtype=np.int64)

    def predict_regression(self, X):
        return np.array([float(o.regression_value) for o in self.forward(X)])

    def select_instances(self, X):
        return np.array([o.alpha for o in self.forward(X)], dtype=np.int64)

    def predict_mr_proba(self, X):
        """Stage-I MR probability of the selected instance."""
        outs = self.forward(X)
        return np.array([float(o.probs2[o.alpha, 1]) for o in outs])

    def _more_tags(self):
        return {"X_types": ["3darray"], "requires_y": True}

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.target_tags.required = True
        return tags

