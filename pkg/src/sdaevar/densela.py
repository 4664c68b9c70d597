"""Dense real linear algebra.

LU factorization with a 1-norm condition estimate, a real Schur
decomposition (Householder Hessenberg reduction followed by Francis
double-shift QR) and a brute-force Kronecker Lyapunov solver that exists
only to check the production solver in :mod:`sdaevar.lyap`.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from sdaevar._validation import as_matrix, as_square, check_rows
from sdaevar.exceptions import IllConditioned, NoConvergence, SingularMatrix

PIVOT_FLOOR = 1e-300
RCOND_WARN = 1e-12


@dataclass(frozen=True)
class LUFactorization:
    """Partial-pivoting LU factors of a square matrix."""

    lu: np.ndarray
    piv: np.ndarray
    anorm1: float

    @property
    def n(self):
        return self.lu.shape[0]

    def solve(self, b, trans=False):
        """Solve ``A x = b`` (or ``A^T x = b`` when ``trans``)."""
        return scipy.linalg.lu_solve(
            (self.lu, self.piv), b, trans=1 if trans else 0, check_finite=False
        )

    def rcond(self):
        """Reciprocal 1-norm condition number estimate."""
        if self.anorm1 == 0.0:
            return 0.0
        inv_norm = estimate_inverse_norm1(self)
        if inv_norm == 0.0:
            return np.inf
        return 1.0 / (self.anorm1 * inv_norm)


def estimate_inverse_norm1(fact, max_iter=5):
    """Hager/Higham power-iteration estimate of ``||A^{-1}||_1``."""
    n = fact.n
    x = np.full(n, 1.0 / n)
    est = 0.0
    last_j = -1
    for it in range(max_iter):
        y = fact.solve(x)
        est = max(est, np.abs(y).sum())
        xi = np.where(y >= 0.0, 1.0, -1.0)
        z = fact.solve(xi, trans=True)
        j = int(np.argmax(np.abs(z)))
        if it > 0 and (np.abs(z[j]) <= z @ x or j == last_j):
            break
        x = np.zeros(n)
        x[j] = 1.0
        last_j = j
    # alternating-sign probe guards against the estimator's known blind spots
    if n > 1:
        alt = np.array([(-1.0) ** i * (1.0 + i / (n - 1)) for i in range(n)])
        est = max(est, 2.0 * np.abs(fact.solve(alt)).sum() / (3.0 * n))
    return est


def lu_factor(a, warn=True):
    """Factor a square matrix, raising :class:`SingularMatrix` on a zero pivot.

    An :class:`IllConditioned` warning is emitted when the reciprocal
    condition estimate drops below 1e-12.
    """
    a = as_square(a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    pivots = np.abs(np.diag(lu))
    k = int(np.argmin(pivots))
    if not pivots[k] >= PIVOT_FLOOR:
        raise SingularMatrix(f"zero pivot at position {k} (|u_kk| = {pivots[k]:.3g})")
    fact = LUFactorization(lu, piv, float(np.abs(a).sum(axis=0).max()))
    if warn:
        rc = fact.rcond()
        if rc < RCOND_WARN:
            warnings.warn(
                f"matrix is ill-conditioned (rcond estimate {rc:.3g})",
                IllConditioned,
                stacklevel=2,
            )
    return fact


def lu_solve(a, b):
    """Solve ``A X = B`` for square ``A`` with partial pivoting.

    ``b`` may be a vector or a matrix of right-hand sides; the result has the
    same shape as ``b``.
    """
    a = as_square(a)
    b_arr = np.asarray(b, dtype=np.float64)
    bm = as_matrix(b_arr, "B")
    check_rows(a, bm)
    x = lu_factor(a).solve(bm)
    return x.reshape(b_arr.shape)


# ---------------------------------------------------------------------------
# real Schur form


@dataclass(frozen=True)
class SchurForm:
    """``A = Q T Q^T`` with ``T`` real quasi-upper-triangular."""

    Q: np.ndarray
    T: np.ndarray
    eigenvalues: np.ndarray

    def blocks(self):
        """Return ``(start, size)`` of the 1x1 and 2x2 diagonal blocks of T."""
        return diagonal_blocks(self.T)


def diagonal_blocks(t):
    n = t.shape[0]
    out = []
    i = 0
    while i < n:
        if i + 1 < n and t[i + 1, i] != 0.0:
            out.append((i, 2))
            i += 2
        else:
            out.append((i, 1))
            i += 1
    return out


def _reflector(x):
    """Householder vector ``v`` and ``beta`` with ``(I - beta v v^T) x = -+|x| e1``."""
    sigma = np.sqrt(x @ x)
    if sigma == 0.0:
        return x, 0.0
    v = x.copy()
    v[0] += np.copysign(sigma, x[0])
    return v, 2.0 / (v @ v)


def hessenberg(a):
    """Orthogonal reduction ``A = Q H Q^T`` with ``H`` upper Hessenberg."""
    h = as_square(a).copy()
    n = h.shape[0]
    q = np.eye(n)
    for k in range(n - 2):
        v, beta = _reflector(h[k + 1 :, k].copy())
        if beta == 0.0:
            continue
        h[k + 1 :, k:] -= beta * np.outer(v, v @ h[k + 1 :, k:])
        h[:, k + 1 :] -= beta * np.outer(h[:, k + 1 :] @ v, v)
        q[:, k + 1 :] -= beta * np.outer(q[:, k + 1 :] @ v, v)
        h[k + 2 :, k] = 0.0
    return h, q


def _split_2x2(h, q, i):
    """Triangularize the 2x2 block at ``i`` if its eigenvalues are real.

    Returns the block's two eigenvalues.
    """
    a, b, c, d = h[i, i], h[i, i + 1], h[i + 1, i], h[i + 1, i + 1]
    p = 0.5 * (a - d)
    disc = p * p + b * c
    mid = 0.5 * (a + d)
    if disc < 0.0:
        im = np.sqrt(-disc)
        return complex(mid, im), complex(mid, -im)
    r = np.sqrt(disc)
    # larger-magnitude root first to avoid cancellation
    lam1 = mid + np.copysign(r, mid) if mid != 0.0 else mid + r
    u1 = np.array([b, lam1 - a])
    u2 = np.array([lam1 - d, c])
    u = u1 if np.abs(u1).sum() >= np.abs(u2).sum() else u2
    nu = np.hypot(u[0], u[1])
    if nu == 0.0:
        # scalar multiple of identity: already triangular
        h[i + 1, i] = 0.0
        return complex(a), complex(d)
    cs, sn = u / nu
    g = np.array([[cs, -sn], [sn, cs]])
    h[i : i + 2, i:] = g.T @ h[i : i + 2, i:]
    h[: i + 2, i : i + 2] = h[: i + 2, i : i + 2] @ g
    q[:, i : i + 2] = q[:, i : i + 2] @ g
    h[i + 1, i] = 0.0
    return complex(h[i, i]), complex(h[i + 1, i + 1])


def real_schur(a):
    """Real Schur decomposition via Francis double-shift QR.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Square matrix with finite entries.

    Returns
    -------
    SchurForm
        ``Q`` orthogonal, ``T`` quasi-upper-triangular whose 2x2 diagonal
        blocks carry complex-conjugate pairs, and the eigenvalues in the
        order they appear along the diagonal of ``T``.

    Raises
    ------
    NoConvergence
        If the QR iteration needs more than ``40 n`` sweeps in total.
    """
    a = as_square(a)
    n = a.shape[0]
    h, q = hessenberg(a)
    eps = np.finfo(float).eps
    anorm = max(np.abs(h).sum(), np.finfo(float).tiny)
    # absolute floor: a subdiagonal below eps ||H|| is a backward-stable zero;
    # without it clusters of tiny repeated eigenvalues never meet the local test
    floor = eps * max(np.linalg.norm(h), np.finfo(float).tiny)
    eig = [0j] * n
    max_sweeps = 40 * n
    sweeps = 0
    its = 0
    hi = n - 1
    while hi >= 0:
        # locate the active unreduced window [lo, hi]
        lo = hi
        while lo > 0:
            s = abs(h[lo - 1, lo - 1]) + abs(h[lo, lo])
            if s == 0.0:
                s = anorm
            if abs(h[lo, lo - 1]) <= eps * s or abs(h[lo, lo - 1]) <= floor:
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eig[hi] = complex(h[hi, hi])
            hi -= 1
            its = 0
            continue
        if lo == hi - 1:
            eig[hi - 1], eig[hi] = _split_2x2(h, q, hi - 1)
            hi -= 2
            its = 0
            continue

        sweeps += 1
        its += 1
        if sweeps > max_sweeps:
            raise NoConvergence(f"real Schur QR did not converge in {max_sweeps} sweeps")
        m = hi
        if its % 10 == 0:
            # exceptional shift breaks symmetric stalls
            w = abs(h[m, m - 1]) + abs(h[m - 1, m - 2])
            s, t = 1.5 * w, w * w
        else:
            s = h[m - 1, m - 1] + h[m, m]
            t = h[m - 1, m - 1] * h[m, m] - h[m - 1, m] * h[m, m - 1]
        x = h[lo, lo] ** 2 + h[lo, lo + 1] * h[lo + 1, lo] - s * h[lo, lo] + t
        y = h[lo + 1, lo] * (h[lo, lo] + h[lo + 1, lo + 1] - s)
        z = h[lo + 1, lo] * h[lo + 2, lo + 1]
        for k in range(lo, m - 1):
            v, beta = _reflector(np.array([x, y, z]))
            if beta != 0.0:
                r = max(lo, k - 1)
                h[k : k + 3, r:] -= beta * np.outer(v, v @ h[k : k + 3, r:])
                rr = min(k + 4, m + 1)
                h[:rr, k : k + 3] -= beta * np.outer(h[:rr, k : k + 3] @ v, v)
                q[:, k : k + 3] -= beta * np.outer(q[:, k : k + 3] @ v, v)
            if k > lo:
                h[k + 1, k - 1] = 0.0
                h[k + 2, k - 1] = 0.0
            x = h[k + 1, k]
            y = h[k + 2, k]
            if k < m - 2:
                z = h[k + 3, k]
        v, beta = _reflector(np.array([x, y]))
        if beta != 0.0:
            h[m - 1 : m + 1, m - 2 :] -= beta * np.outer(v, v @ h[m - 1 : m + 1, m - 2 :])
            h[: m + 1, m - 1 : m + 1] -= beta * np.outer(h[: m + 1, m - 1 : m + 1] @ v, v)
            q[:, m - 1 : m + 1] -= beta * np.outer(q[:, m - 1 : m + 1] @ v, v)
        h[m, m - 2] = 0.0

    h[np.tril_indices(n, -2)] = 0.0
    return SchurForm(Q=q, T=h, eigenvalues=np.array(eig, dtype=complex))


def eigenvalues(a):
    """Eigenvalues of a real square matrix from its real Schur form."""
    return real_schur(a).eigenvalues


# ---------------------------------------------------------------------------
# test oracle


def kron_lyap_oracle(a, q):
    """Solve ``A C + C A^T = -Q`` by vectorization; O(n^6), test use only.

    The Kronecker operator ``I (x) A + A (x) I`` is assembled explicitly and
    factored by :func:`lu_solve`.
    """
    a = as_square(a)
    q = as_square(q, "Q")
    n = a.shape[0]
    if q.shape != a.shape:
        raise ValueError("A and Q must have the same shape")
    if n > 64:
        raise ValueError("kron_lyap_oracle is limited to n <= 64")
    lam = np.linalg.eigvals(a)
    gap = np.abs(lam[:, None] + lam[None, :]).min()
    if gap <= 1e-12 * max(1.0, np.abs(a).max()):
        raise SingularMatrix("A has eigenvalue pairs with lambda_i + lambda_j = 0")
    eye = np.eye(n)
    op = np.kron(eye, a) + np.kron(a, eye)
    # column-major vec
    c = lu_solve(op, -q.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (c + c.T)
