"""Stationary variances of stochastic power-system DAE models.

Two routes to the same quantities: a Lyapunov-equation method on the
linearized system (:mod:`sdaevar.lem`) and a Monte Carlo ensemble of the
nonlinear model (:mod:`sdaevar.mc`).
"""

__version__ = "0.1.0"

from sdaevar.estimators import LyapunovVariance, MonteCarloVariance  # noqa: E402
from sdaevar.io import load_bundled, load_model  # noqa: E402

__all__ = ["LyapunovVariance", "MonteCarloVariance", "load_bundled", "load_model", "__version__"]
