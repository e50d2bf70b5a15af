"""scikit-learn style wrappers: fit on an observed trajectory, predict states at times.

``X`` holds sample times (shape ``(n,)`` or ``(n, 1)``) and ``y`` the observed
states (shape ``(n, 2)``). The first sample is the initial condition; predictions
are rollouts from it, so ``predict`` accepts any times at or after ``t0``.

>>> est = UDERegressor(adam_iters=50, rmsprop_iters=0)      # doctest: +SKIP
>>> est.fit(truth.times, truth.states).predict([12.0, 15.0])  # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .dynamics import LvParams, Trajectory
from .models import RolloutConfig, neural_ode, recovered_interaction, rollout, ude
from .optim import neural_ode_schedule, run_schedule, ude_schedule


def _check_times(X) -> np.ndarray:
    t = check_array(X, ensure_2d=False, dtype=float)
    if t.ndim == 2:
        if t.shape[1] != 1:
            raise ValueError(f"X must hold one time column, got shape {t.shape}")
        t = t[:, 0]
    if t.ndim != 1:
        raise ValueError(f"X must be 1-d times, got shape {t.shape}")
    return t


class _TrajectoryRegressor(RegressorMixin, BaseEstimator):

    def _build(self):
        raise NotImplementedError

    def fit(self, X, y):
        t = _check_times(X)
        states = check_array(y, dtype=float)
        check_consistent_length(t, states)
        if states.shape[1] != 2:
            raise ValueError(f"y must have 2 state columns, got {states.shape[1]}")
        if len(t) < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("X must hold at least 2 strictly increasing times")
        model, schedule = self._build()
        data = Trajectory(t, states)
        params, trace = run_schedule(model, model.init_params(self.random_state), data, schedule, self.substeps)
        self.model_ = model
        self.params_ = params
        self.trace_ = trace
        self.t0_ = float(t[0])
        self.y0_ = states[0].copy()
        self.max_step_ = float(np.min(np.diff(t))) / self.substeps
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        t = _check_times(X)
        if np.any(t < self.t0_ - 1e-12):
            raise ValueError(f"cannot predict before the initial time {self.t0_}")
        # refine the requested times so no RK4 step exceeds the training step
        uniq, inverse = np.unique(np.concatenate([[self.t0_], t]), return_inverse=True)
        pieces = [uniq[:1]]
        for a, b in zip(uniq[:-1], uniq[1:]):
            k = max(1, int(np.ceil((b - a) / self.max_step_ - 1e-9)))
            pieces.append(np.linspace(a, b, k + 1)[1:])
        grid = np.concatenate(pieces)
        pred = rollout(self.model_, self.params_, self.y0_, RolloutConfig(grid, 1))
        at = np.searchsorted(grid, uniq)
        return pred.states[at][inverse[1:]]


class NeuralODERegressor(_TrajectoryRegressor):
    """Fully learned vector field ``du/dt = NN(u)``, trained with Adam then L-BFGS."""

    def __init__(self, hidden=(100, 100, 100), activation="rbf", adam_iters=400, lbfgs_iters=100, lr=1e-3,
                 substeps=4, random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.adam_iters = adam_iters
        self.lbfgs_iters = lbfgs_iters
        self.lr = lr
        self.substeps = substeps
        self.random_state = random_state

    def _build(self):
        model = neural_ode(tuple(self.hidden), self.activation)
        return model, neural_ode_schedule(self.adam_iters, self.lbfgs_iters, self.lr)


class UDERegressor(_TrajectoryRegressor):
    """Lotka-Volterra with known growth/death rates and learned interaction terms."""

    def __init__(self, hidden=(10, 10, 10), activation="relu", alpha=1.5, delta=2.0, adam_iters=20_000,
                 rmsprop_iters=5_000, lr=1e-2, rms_lr=1e-3, horizons=10, substeps=4, random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.alpha = alpha
        self.delta = delta
        self.adam_iters = adam_iters
        self.rmsprop_iters = rmsprop_iters
        self.lr = lr
        self.rms_lr = rms_lr
        self.horizons = horizons
        self.substeps = substeps
        self.random_state = random_state

    def _build(self):
        known = LvParams(alpha=self.alpha, delta=self.delta)
        model = ude(tuple(self.hidden), self.activation, known)
        schedule = ude_schedule(self.adam_iters, self.rmsprop_iters, self.lr, self.rms_lr, self.horizons)
        return model, schedule

    def interaction(self, X):
        """Learned ``(NN1, NN2)`` at states ``X`` of shape ``(n, 2)``."""
        check_is_fitted(self, "params_")
        pts = check_array(X, dtype=float)
        r = recovered_interaction(self.model_, self.params_, pts)
        return np.column_stack([r["nn1"], r["nn2"]])
