"""Estimator-style wrappers around the two variance routes.

``fit`` takes a :class:`~sdaevar.grid.SystemModel`; fitted quantities end
in an underscore, following the scikit-learn conventions.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from sdaevar import lem, mc
from sdaevar.exceptions import InvalidParameter
from sdaevar.grid import SystemModel


def _check_model(model):
    if not isinstance(model, SystemModel):
        raise InvalidParameter(f"expected a SystemModel, got {type(model).__name__}")


def _scaled(model, sigma_scale):
    if sigma_scale == 1.0:
        return model
    return model.with_noise(model.noise.scaled(sigma_scale))


class LyapunovVariance(BaseEstimator):
    """Stationary standard deviations from the linearized model.

    Parameters
    ----------
    sigma_scale : float, default=1.0
        Multiplier on all OU noise standard deviations.

    Attributes
    ----------
    report_ : CovarianceReport
    C_, K_ : ndarray
        State (incl. noise) and algebraic covariance matrices.
    sigma_ : ndarray
        Standard deviations ordered as ``names_``.
    names_, classes_ : list of str
    """

    def __init__(self, sigma_scale=1.0):
        self.sigma_scale = sigma_scale

    def fit(self, model, y=None):
        _check_model(model)
        model = _scaled(model, self.sigma_scale)
        rep = lem.analyze(model)
        self.report_ = rep
        self.C_, self.K_ = rep.C, rep.K
        table = rep.sigma_table()
        self.names_ = [r[0] for r in table]
        self.classes_ = [r[1] for r in table]
        self.sigma_ = np.array([r[2] for r in table])
        self.degenerate_ = np.array([r[3] for r in table])
        return self

    def sigma_of(self, name):
        check_is_fitted(self, "sigma_")
        return float(self.sigma_[self.names_.index(name)])


class MonteCarloVariance(BaseEstimator):
    """Ensemble standard deviations of the nonlinear model at ``t_f``.

    Parameters mirror :class:`~sdaevar.mc.McConfig`; ``t_f=None`` uses
    ``2 / min(alpha)``.
    """

    def __init__(self, n_realizations=1000, t_f=None, dt=0.01, root_seed=0,
                 sigma_scale=1.0, workers=None):
        self.n_realizations = n_realizations
        self.t_f = t_f
        self.dt = dt
        self.root_seed = root_seed
        self.sigma_scale = sigma_scale
        self.workers = workers

    def fit(self, model, y=None):
        _check_model(model)
        model = _scaled(model, self.sigma_scale)
        cfg = mc.McConfig(n_realizations=self.n_realizations, t_f=self.t_f, dt=self.dt,
                          root_seed=self.root_seed)
        res = mc.run_ensemble(model, cfg, workers=self.workers)
        self.result_ = res
        self.names_ = list(res.names)
        self.classes_ = list(res.classes)
        self.sigma_ = res.sigma
        self.n_completed_ = res.n_completed
        return self

    def compare(self, lem_estimator):
        """Closeness report against a fitted :class:`LyapunovVariance`."""
        check_is_fitted(self, "sigma_")
        check_is_fitted(lem_estimator, "sigma_")
        pos = {nm: i for i, nm in enumerate(lem_estimator.names_)}
        idx = [pos[nm] for nm in self.names_]
        return mc.closeness(self.sigma_, lem_estimator.sigma_[idx], self.names_, self.classes_,
                            lem_estimator.degenerate_[idx])
