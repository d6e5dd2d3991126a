"""scikit-learn style wrapper: ``fit(X, y)`` on past/future motion windows."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .errors import ShapeError
from .network import NetworkConfig, init_parameters
from .training import TrainConfig, mpjpe, train


def check_motion(X, name: str = "X", frames: Optional[int] = None,
                 joints: Optional[int] = None) -> np.ndarray:
    """Validate a batch of sequences shaped ``(n_samples, frames, joints, 3)``."""
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64, input_name=name)
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ShapeError(f"{name} must have shape (n_samples, frames, joints, 3), got {X.shape}")
    if frames is not None and X.shape[1] != frames:
        raise ShapeError(f"{name} has {X.shape[1]} frames, expected {frames}")
    if joints is not None and X.shape[2] != joints:
        raise ShapeError(f"{name} has {X.shape[2]} joints, expected {joints}")
    return X


def check_motion_pair(X, y):
    X = check_motion(X, "X")
    y = check_motion(y, "y", joints=X.shape[2])
    if len(X) != len(y):
        raise ShapeError(f"X has {len(X)} samples but y has {len(y)}")
    return X, y


class GraphGuidedMixer(RegressorMixin, BaseEstimator):
    """Motion forecaster predicting ``y`` (future frames) from ``X`` (observed frames).

    Frame counts and the joint count are read from the data at ``fit`` time.
    ``score`` returns the negative MPJPE so that larger is better.
    """

    def __init__(self, middle_blocks=2, coupling_mode="axis-identity", self_loops=True,
                 trainable_mask=False, branch_a_start="spatial", edges=None, variant="abcdef",
                 layout="default", iterations=2000, batch_size=32, lr_initial=5e-4,
                 lr_final=5e-6, lr_drop_iteration=None, augment_prob=0.5,
                 velocity_loss=False, random_state=0):
        self.middle_blocks = middle_blocks
        self.coupling_mode = coupling_mode
        self.self_loops = self_loops
        self.trainable_mask = trainable_mask
        self.branch_a_start = branch_a_start
        self.edges = edges
        self.variant = variant
        self.layout = layout
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr_initial = lr_initial
        self.lr_final = lr_final
        self.lr_drop_iteration = lr_drop_iteration
        self.augment_prob = augment_prob
        self.velocity_loss = velocity_loss
        self.random_state = random_state

    def _configs(self, frames: int, future: int, joints: int):
        seed = int(self.random_state or 0)
        net = NetworkConfig(joints=joints, input_frames=frames, output_frames=future,
                            middle_blocks=self.middle_blocks, coupling_mode=self.coupling_mode,
                            self_loops=self.self_loops, trainable_mask=self.trainable_mask,
                            branch_a_start=self.branch_a_start, seed=seed,
                            edges=None if self.edges is None else [list(e) for e in self.edges],
                            variant=self.variant, layout=self.layout)
        trn = TrainConfig(iterations=self.iterations, batch_size=self.batch_size,
                          lr_initial=self.lr_initial, lr_final=self.lr_final,
                          lr_drop_iteration=self.lr_drop_iteration, seed=seed,
                          augment_prob=self.augment_prob, velocity_loss=self.velocity_loss)
        return net, trn

    def fit(self, X, y):
        X, y = check_motion_pair(X, y)
        net_cfg, trn_cfg = self._configs(X.shape[1], y.shape[1], X.shape[2])
        self.model_ = init_parameters(net_cfg)
        result = train(self.model_, Dataset(X, y, "train"), trn_cfg)
        self.loss_curve_ = list(result.history)
        self.n_features_in_ = X.shape[2] * 3
        self.input_frames_ = X.shape[1]
        self.output_frames_ = y.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        cfg = self.model_.config
        X = check_motion(X, "X", cfg.input_frames, cfg.joints)
        return self.model_.predict(X)

    def score(self, X, y, sample_weight=None):
        """Negative mean per-joint position error."""
        if sample_weight is not None:
            raise ValueError("sample_weight is not supported")
        X, y = check_motion_pair(X, y)
        return -mpjpe(self.predict(X), y)
