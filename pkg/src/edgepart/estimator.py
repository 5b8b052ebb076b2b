"""scikit-learn style wrapper: fit a configuration to observed rates, predict latencies."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .allocator import STRATEGIES, allocate
from .analytic import ALPHA_MODES, SystemState, predict as predict_latency
from .profiles import HardwareSpec


def check_rates(X, n_models: int) -> np.ndarray:
    """Validate a rate matrix of shape (n_samples, n_models); a 1-d vector is one sample."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = np.reshape(X, (1, -1))
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] != n_models:
        raise ValueError(f"X has {X.shape[1]} columns, expected one per model ({n_models})")
    if (X < 0).any():
        raise ValueError("rates must be >= 0")
    return X


class PartitionAllocator(BaseEstimator):
    """Choose partition points and CPU cores for a set of models.

    ``fit`` takes request rates (one column per model, rows averaged) and runs
    the selected strategy; ``predict`` returns the expected end-to-end latency
    of each model under the fitted configuration for each row of rates.

    Parameters
    ----------
    models : sequence of ModelProfile
    hardware : HardwareSpec, default HardwareSpec()
    strategy : {"greedy", "brute", "compiler", "threshold", "alpha-zero"}
    alpha_mode : {"full", "zero"}
        Miss-probability model used by ``predict``.
    threshold_pct : float
        Tolerance of the threshold strategy.
    """

    def __init__(self, models=(), hardware=None, strategy="greedy", alpha_mode="full",
                 threshold_pct=10.0):
        self.models = models
        self.hardware = hardware
        self.strategy = strategy
        self.alpha_mode = alpha_mode
        self.threshold_pct = threshold_pct

    def _hw(self) -> HardwareSpec:
        return self.hardware if self.hardware is not None else HardwareSpec()

    def fit(self, X, y=None):
        if not self.models:
            raise ValueError("models must be a non-empty sequence of ModelProfile")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
        X = check_rates(X, len(self.models))
        self.n_features_in_ = X.shape[1]
        self.rates_ = X.mean(axis=0)
        self.result_ = allocate(self.strategy, list(self.models), self.rates_.tolist(), self._hw(),
                                self.threshold_pct)
        self.config_ = self.result_.config
        self.objective_ = self.result_.objective
        return self

    def _estimates(self, X):
        check_is_fitted(self, "config_")
        X = check_rates(X, self.n_features_in_)
        hw = self._hw()
        return [predict_latency(SystemState(tuple(self.models), tuple(row), hw, self.config_,
                                            self.alpha_mode)) for row in X]

    def predict(self, X) -> np.ndarray:
        """Per-model expected latency, shape (n_samples, n_models); inf when unstable."""
        return np.array([e.per_model_e2e_s for e in self._estimates(X)])

    def score(self, X, y=None) -> float:
        """Negative mean request-weighted latency over the rows of ``X``."""
        vals = []
        for e, row in zip(self._estimates(X), check_rates(X, self.n_features_in_)):
            total = row.sum()
            vals.append(e.objective / total if total > 0 else 0.0)
        return -float(np.mean(vals))
