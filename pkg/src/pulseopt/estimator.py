"""scikit-learn style wrappers.

The library is organised around problems and configs rather than data
matrices, so these classes are a convenience layer only.  Rows of ``X`` are
flat pulse-parameter vectors ``(t0, sigma, omega0, delta)`` per channel.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .autodiff import grad_dual
from .loss import LossConfig, Problem
from .model import SystemSpec
from .ode import IntegratorConfig
from .optim import OptimConfig, best_of, multistart
from .pulses import N_PARAMS


def _problem(est):
    spec = SystemSpec(n_levels=est.n_levels, gamma_natural=est.gamma_natural,
                      gamma_collisional=est.gamma_collisional)
    integ = IntegratorConfig(rel_tol=est.rel_tol, abs_tol=est.abs_tol, horizon=est.horizon)
    return Problem(spec, integ, est.loss if est.loss is not None else LossConfig(), est.bounds)


def _check_rows(est, X, prob):
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != prob.n_params:
        raise ValueError(f"X has {X.shape[1]} columns, expected {prob.n_params} "
                         f"({N_PARAMS} per channel)")
    return X


class PulseSimulator(TransformerMixin, BaseEstimator):
    """Maps parameter rows to final populations ``rho_ii(T)``."""

    def __init__(self, n_levels=5, gamma_natural=1.0, gamma_collisional=0.0,
                 horizon=45.0, rel_tol=1e-8, abs_tol=1e-10, loss=None, bounds=None):
        self.n_levels = n_levels
        self.gamma_natural = gamma_natural
        self.gamma_collisional = gamma_collisional
        self.horizon = horizon
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.loss = loss
        self.bounds = bounds

    def fit(self, X=None, y=None):
        self.problem_ = _problem(self)
        self.n_features_in_ = self.problem_.n_params
        return self

    def transform(self, X):
        check_is_fitted(self, "problem_")
        X = _check_rows(self, X, self.problem_)
        return np.array([self.problem_.simulate(x).final_state.populations for x in X])


class PulseSequenceOptimizer(BaseEstimator):
    """Multi-start pulse design; ``fit`` ignores its arguments.

    After fitting, ``best_params_`` holds the winning vector and
    ``predict(X)`` returns the loss of each parameter row.
    """

    def __init__(self, n_levels=5, gamma_natural=1.0, gamma_collisional=0.0,
                 horizon=45.0, rel_tol=1e-8, abs_tol=1e-10, loss=None, bounds=None,
                 starts=8, seed=42, mode="lbfgsb", max_iters=500):
        self.n_levels = n_levels
        self.gamma_natural = gamma_natural
        self.gamma_collisional = gamma_collisional
        self.horizon = horizon
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.loss = loss
        self.bounds = bounds
        self.starts = starts
        self.seed = seed
        self.mode = mode
        self.max_iters = max_iters

    def fit(self, X=None, y=None):
        prob = _problem(self)

        def fg(x):
            r = grad_dual(x, prob)
            return r.loss_value, r.gradient

        cfg = OptimConfig(mode=self.mode, max_iters=self.max_iters, bounds=prob.bounds)
        self.reports_ = multistart(fg, prob.bounds, self.starts, self.seed, cfg)
        best = best_of(self.reports_)
        self.problem_ = prob
        self.best_params_ = best.best_params
        self.best_loss_ = best.best_loss
        self.n_iter_ = len(best.iterates) - 1
        self.n_features_in_ = prob.n_params
        return self

    def predict(self, X):
        check_is_fitted(self, "best_params_")
        X = _check_rows(self, X, self.problem_)
        return np.array([self.problem_(x) for x in X])

    def score(self, X, y=None):
        """Negative mean loss (higher is better, as sklearn expects)."""
        return -float(np.mean(self.predict(X)))
