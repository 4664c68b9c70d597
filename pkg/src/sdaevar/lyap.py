"""Bartels-Stewart solver for ``A C + C A^T = -B B^T`` and stability checks."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from sdaevar._validation import as_matrix, as_square, check_rows
from sdaevar.densela import RCOND_WARN, diagonal_blocks, real_schur
from sdaevar.exceptions import IllConditioned, NotHurwitz

HURWITZ_MARGIN = 1e-10


@dataclass(frozen=True)
class HurwitzReport:
    """Outcome of a Hurwitz test; truthy iff the matrix is stable."""

    stable: bool
    eigenvalues: np.ndarray
    margin: float = HURWITZ_MARGIN

    def __bool__(self):
        return self.stable

    @property
    def spectral_abscissa(self):
        if self.eigenvalues.size == 0:
            return -np.inf
        return float(self.eigenvalues.real.max())

    @property
    def offending(self):
        return self.eigenvalues[self.eigenvalues.real >= -self.margin]


def is_hurwitz(a, margin=HURWITZ_MARGIN, schur=None):
    """Check that every eigenvalue of ``a`` has real part below ``-margin``.

    The eigenvalues in the report are sorted by ascending real part.
    """
    if schur is None:
        schur = real_schur(as_square(a))
    lam = np.asarray(schur.eigenvalues, dtype=complex)
    lam = lam[np.lexsort((lam.imag, lam.real))]
    stable = bool(np.all(lam.real < -margin))
    return HurwitzReport(stable=stable, eigenvalues=lam, margin=margin)


@dataclass(frozen=True)
class LyapunovSolution:
    C: np.ndarray
    residual_norm: float
    rcond_estimate: float
    hurwitz: HurwitzReport = field(repr=False)


def _small_sylvester(tii, tjj, r):
    """Solve ``tii Y + Y tjj^T = r`` for blocks of size 1 or 2."""
    a, b = tii.shape[0], tjj.shape[0]
    if a == 1 and b == 1:
        return r / (tii[0, 0] + tjj[0, 0])
    op = np.kron(np.eye(b), tii) + np.kron(tjj, np.eye(a))
    y = np.linalg.solve(op, r.reshape(-1, order="F"))
    return y.reshape(a, b, order="F")


def solve_quasi_triangular_lyapunov(t, f):
    """Solve ``T Y + Y T^T = F`` for quasi-upper-triangular ``T``, symmetric ``F``.

    Column blocks are processed from the last one backwards; blocks strictly
    below the diagonal are filled from symmetry.
    """
    n = t.shape[0]
    y = np.zeros((n, n))
    blocks = diagonal_blocks(t)
    for jb in range(len(blocks) - 1, -1, -1):
        j0, js = blocks[jb]
        jsl = slice(j0, j0 + js)
        rhs = f[:, jsl].copy()
        if j0 + js < n:
            rhs -= y[:, j0 + js :] @ t[jsl, j0 + js :].T
            y[j0 + js :, jsl] = y[jsl, j0 + js :].T
        for ib in range(jb, -1, -1):
            i0, is_ = blocks[ib]
            isl = slice(i0, i0 + is_)
            r = rhs[isl]
            if i0 + is_ < n:
                r = r - t[isl, i0 + is_ :] @ y[i0 + is_ :, jsl]
            y[isl, jsl] = _small_sylvester(t[isl, isl], t[jsl, jsl], r)
            if ib != jb:
                y[jsl, isl] = y[isl, jsl].T
    return y


def solve_lyapunov(a, b):
    """Stationary covariance of ``dz = A z dt + B dW``.

    Solves ``A C + C A^T = -B B^T`` by the Bartels-Stewart method on the real
    Schur form of ``A``.

    Parameters
    ----------
    a : array_like, shape (s, s)
        Hurwitz state matrix.
    b : array_like, shape (s, q)
        Diffusion matrix.

    Returns
    -------
    LyapunovSolution
        Symmetrized covariance ``C``, the Frobenius norm of the residual
        ``A C + C A^T + B B^T`` and a spectral-separation condition estimate
        ``min |l_i + l_j| / (2 ||A||_F)``.

    Raises
    ------
    NotHurwitz
        If an eigenvalue of ``A`` has real part ``>= -1e-10``.
    """
    a = as_square(a)
    b = as_matrix(b, "B")
    check_rows(a, b)
    schur = real_schur(a)
    report = is_hurwitz(a, schur=schur)
    if not report:
        bad = ", ".join(f"{z:.6g}" for z in report.offending[:10])
        raise NotHurwitz(
            f"state matrix is not Hurwitz; offending eigenvalues: {bad}",
            eigenvalues=report.offending,
        )
    q, t = schur.Q, schur.T
    bbt = b @ b.T
    f = -(q.T @ bbt @ q)
    f = 0.5 * (f + f.T)
    y = solve_quasi_triangular_lyapunov(t, f)
    c = q @ y @ q.T
    c = 0.5 * (c + c.T)

    resid = np.linalg.norm(a @ c + c @ a.T + bbt)
    lam = report.eigenvalues
    sep = np.abs(lam[:, None] + lam[None, :]).min()
    anorm = np.linalg.norm(a)
    rcond = float(sep / (2.0 * anorm)) if anorm > 0 else 0.0
    if rcond < RCOND_WARN:
        warnings.warn(
            f"Lyapunov operator is ill-conditioned (rcond estimate {rcond:.3g})",
            IllConditioned,
            stacklevel=2,
        )
    return LyapunovSolution(C=c, residual_norm=float(resid), rcond_estimate=rcond, hurwitz=report)
