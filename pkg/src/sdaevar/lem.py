"""Lyapunov-equation method for stationary variances.

The SDAE is linearized at its equilibrium, the algebraic variables are
eliminated through ``g_y^{-1}`` to give ``dz = A_o z dt + B_o dW`` with
``z = [x; eta]``, the state covariance ``C`` solves
``A_o C + C A_o^T = -B_o B_o^T``, and the algebraic covariance is
``K = G_o C G_o^T`` with ``G_o = -g_y^{-1} [g_x, g_eta]``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from sdaevar import densela
from sdaevar._validation import as_square, as_vector
from sdaevar.exceptions import DegenerateCovariance, SingularGy, SingularMatrix
from sdaevar.grid import jacobians
from sdaevar.lyap import solve_lyapunov

DEGENERACY_RTOL = 1e-14


@dataclass(frozen=True)
class LinearizedSystem:
    A_o: np.ndarray
    B_o: np.ndarray
    G_o: np.ndarray
    n: int
    m: int
    p: int
    q: int
    state_names: list = field(default_factory=list)
    algebraic_names: list = field(default_factory=list)
    gy_rcond: float = float("nan")
    gy_residual: float = float("nan")


@dataclass(frozen=True)
class CovarianceReport:
    C: np.ndarray
    K: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    state_names: list
    algebraic_names: list
    degenerate_states: list
    degenerate_algebraics: list
    diagnostics: dict

    def sigma_table(self):
        """Rows ``(name, class, sigma, degenerate)`` for states then algebraics."""
        rows = []
        ds, da = set(self.degenerate_states), set(self.degenerate_algebraics)
        for (name, cls), s in zip(self.state_names, self.sigma_x):
            rows.append((name, cls, float(s), name in ds))
        for (name, cls), s in zip(self.algebraic_names, self.sigma_y):
            rows.append((name, cls, float(s), name in da))
        return rows


def reduce(jac, b_eta, state_names=(), algebraic_names=()):
    """Eliminate the algebraic variables from the linearized SDAE.

    Parameters
    ----------
    jac : Jacobians
        ``f_x, f_y, f_eta, g_x, g_y, g_eta, a_eta`` at the equilibrium.
    b_eta : array_like, shape (p, q)
        Diffusion matrix evaluated at the equilibrium noise state.

    Returns
    -------
    LinearizedSystem
    """
    n = jac.f_x.shape[0]
    m = jac.g_y.shape[0]
    p = jac.a_eta.shape[0]
    b_eta = np.asarray(b_eta, dtype=float).reshape(p, -1)
    q = b_eta.shape[1]
    rhs = np.hstack([jac.g_x, jac.g_eta])
    if m:
        try:
            fact = densela.lu_factor(jac.g_y)
        except SingularMatrix as exc:
            raise SingularGy(f"g_y is singular (DAE is not index-1): {exc}") from exc
        g_o = -fact.solve(rhs)
        rcond = fact.rcond()
        scale = max(np.abs(rhs).max(initial=0.0), 1.0)
        resid = float(np.abs(jac.g_y @ g_o + rhs).max(initial=0.0) / scale)
    else:
        g_o = np.zeros((0, n + p))
        rcond, resid = float("inf"), 0.0

    a_o = np.zeros((n + p, n + p))
    a_o[:n, :n] = jac.f_x + jac.f_y @ g_o[:, :n]
    a_o[:n, n:] = jac.f_eta + jac.f_y @ g_o[:, n:]
    a_o[n:, n:] = jac.a_eta
    b_o = np.zeros((n + p, q))
    b_o[n:] = b_eta
    return LinearizedSystem(
        A_o=a_o, B_o=b_o, G_o=g_o, n=n, m=m, p=p, q=q,
        state_names=list(state_names), algebraic_names=list(algebraic_names),
        gy_rcond=rcond, gy_residual=resid,
    )


def linearize(model):
    """Linearized system of ``model`` at its Method-I equilibrium."""
    x, y, eta = model.equilibrium
    jac = jacobians(model, x, y, eta)
    b = np.diag(model.noise.diffusion(eta)) if model.p else np.zeros((0, 0))
    return reduce(jac, b, model.state_names + model.noise_names, model.algebraic_names)


def state_covariance(ls):
    """Stationary covariance ``C`` of ``z = [x; eta]``; see :func:`lyap.solve_lyapunov`."""
    return solve_lyapunov(ls.A_o, ls.B_o)


def algebraic_covariance(ls, c):
    g = ls.G_o
    k = g @ c @ g.T
    return 0.5 * (k + k.T)


def _degenerate_mask(c, tol=None):
    d = np.diag(c)
    if d.size == 0:
        return np.zeros(0, dtype=bool)
    if tol is None:
        tol = DEGENERACY_RTOL * max(d.max(), 0.0)
    return d <= tol


def degeneracy_report(c, k, tol=None, state_names=None, algebraic_names=None):
    """Variables whose variance is ``<= tol``.

    ``tol`` defaults to ``1e-14`` times the largest diagonal entry of each
    matrix. Returns ``(states, algebraics)`` as index lists, or names when
    name tables are given.
    """
    ms = _degenerate_mask(np.asarray(c), tol)
    mk = _degenerate_mask(np.asarray(k), tol)
    si = [int(i) for i in np.flatnonzero(ms)]
    ai = [int(i) for i in np.flatnonzero(mk)]
    if state_names is not None:
        si = [state_names[i] for i in si]
    if algebraic_names is not None:
        ai = [algebraic_names[i] for i in ai]
    return si, ai


def stationary_pdf(c, z, rtol=1e-12):
    """Gaussian density ``det(2 pi C)^(-1/2) exp(-z^T C^-1 z / 2)``.

    For singular ``C`` the density is taken on the range of ``C`` (the
    non-degenerate subspace); a ``z`` with a component outside that range
    raises :class:`DegenerateCovariance`.
    """
    c = as_square(c, "C")
    z = as_vector(z, "z", size=c.shape[0])
    lam, vec = np.linalg.eigh(0.5 * (c + c.T))
    top = max(lam.max(), 0.0)
    keep = lam > rtol * top
    if not np.any(keep):
        raise DegenerateCovariance("covariance is identically zero")
    coords = vec.T @ z
    off = coords[~keep]
    if off.size and np.abs(off).max() > rtol * max(1.0, np.abs(z).max()):
        raise DegenerateCovariance("z has a component along a zero-variance direction")
    lk = lam[keep]
    ck = coords[keep]
    quad = float(np.sum(ck * ck / lk))
    log_det = float(np.sum(np.log(2.0 * math.pi * lk)))
    return math.exp(-0.5 * log_det - 0.5 * quad)


def covariance_report(ls, noise_tags=()):
    sol = state_covariance(ls)
    c = sol.C
    k = algebraic_covariance(ls, c)
    sigma_x = np.sqrt(np.clip(np.diag(c), 0.0, None))
    sigma_y = np.sqrt(np.clip(np.diag(k), 0.0, None))
    snames = [nm for nm, _ in ls.state_names] if ls.state_names else None
    anames = [nm for nm, _ in ls.algebraic_names] if ls.algebraic_names else None
    ds, da = degeneracy_report(c, k, state_names=snames, algebraic_names=anames)
    diag = {
        "spectral_abscissa": sol.hurwitz.spectral_abscissa,
        "lyapunov_rcond": sol.rcond_estimate,
        "lyapunov_residual": sol.residual_norm,
        "gy_rcond": ls.gy_rcond,
        "gy_residual": ls.gy_residual,
        "n": ls.n, "m": ls.m, "p": ls.p, "q": ls.q,
    }
    return CovarianceReport(
        C=c, K=k, sigma_x=sigma_x, sigma_y=sigma_y,
        state_names=list(ls.state_names), algebraic_names=list(ls.algebraic_names),
        degenerate_states=ds, degenerate_algebraics=da, diagnostics=diag,
    )


def analyze(model):
    """Full pipeline: equilibrium, Jacobians, reduction, ``C`` and ``K``."""
    return covariance_report(linearize(model))


def noise_only_system(noise):
    """Linear system of a bank of processes with no grid attached."""
    p = len(noise)
    eta = noise.means
    names = [(f"eta[{t}]", "eta") for t in noise.tags]
    return LinearizedSystem(
        A_o=np.diag(-noise.alphas), B_o=np.diag(noise.diffusion(eta)),
        G_o=np.zeros((0, p)), n=0, m=0, p=p, q=p, state_names=names, algebraic_names=[],
    )

