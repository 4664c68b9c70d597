import numpy as np


def random_stable(rng, n, shift=0.5):
    """Random dense matrix shifted so its spectral abscissa is -shift."""
    a = rng.standard_normal((n, n))
    lam = np.linalg.eigvals(a).real.max()
    return a - (lam + shift) * np.eye(n)
