"""Noise processes driving the stochastic DAEs.

Two families are supported, both with the mean-reverting drift
``a(eta) = alpha (mu - eta)``:

* Ornstein-Uhlenbeck: constant diffusion ``b``, Gaussian stationary law with
  variance ``b**2 / (2 alpha)``.
* Weibull-stationary: state-dependent diffusion chosen so that the
  stationary law is Weibull(kappa, lambda); used for wind speed.

Realizations are driven by Wiener increments drawn from a counter-based
Philox stream keyed by ``(root_seed, realization, process)`` and mapped to
normals with Box-Muller, so any realization can be regenerated on its own.
"""

import math
from dataclasses import dataclass

import numpy as np

from sdaevar.exceptions import DomainError, InvalidParameter

WEIBULL_FLOOR = 1e-9


@dataclass(frozen=True)
class OuSpec:
    alpha: float
    mu: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidParameter(f"alpha must be positive, got {self.alpha!r}")
        if not (np.isfinite(self.b) and self.b >= 0):
            raise InvalidParameter(f"b must be non-negative, got {self.b!r}")
        if not np.isfinite(self.mu):
            raise InvalidParameter("mu must be finite")

    kind = "ou"

    @property
    def mean(self):
        return self.mu

    @property
    def sigma(self):
        return self.b / math.sqrt(2.0 * self.alpha)

    @property
    def stationary_variance(self):
        return self.b * self.b / (2.0 * self.alpha)


@dataclass(frozen=True)
class WeibullSpec:
    alpha: float
    kappa: float
    lam: float

    def __post_init__(self):
        for name in ("alpha", "kappa", "lam"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParameter(f"{name} must be positive, got {v!r}")

    kind = "weibull"

    @property
    def mean(self):
        return self.lam * gamma_fn(1.0 + 1.0 / self.kappa)

    @property
    def stationary_variance(self):
        g1 = gamma_fn(1.0 + 1.0 / self.kappa)
        return self.lam**2 * (gamma_fn(1.0 + 2.0 / self.kappa) - g1 * g1)

    @property
    def sigma(self):
        return math.sqrt(self.stationary_variance)


def ou_from_sigma(alpha, mu, sigma):
    """OU spec whose stationary standard deviation is ``sigma``; ``b = sigma sqrt(2 alpha)``."""
    if not (np.isfinite(alpha) and alpha > 0):
        raise InvalidParameter(f"alpha must be positive, got {alpha!r}")
    if not (np.isfinite(sigma) and sigma >= 0):
        raise InvalidParameter(f"sigma must be non-negative, got {sigma!r}")
    return OuSpec(alpha=float(alpha), mu=float(mu), b=float(sigma) * math.sqrt(2.0 * alpha))


def drift(spec, eta):
    return spec.alpha * (spec.mean - np.asarray(eta, dtype=float))


def diffusion(spec, eta):
    """Diffusion amplitude at ``eta``; constant for OU."""
    eta = np.asarray(eta, dtype=float)
    if spec.kind == "ou":
        return np.full_like(eta, spec.b)
    if np.any(eta <= 0):
        raise DomainError("Weibull diffusion is undefined for eta <= 0")
    return weibull_diffusion(eta, spec.alpha, spec.kappa, spec.lam)


# ---------------------------------------------------------------------------
# Gamma functions


def gamma_fn(x):
    if not x > 0:
        raise DomainError(f"gamma_fn requires x > 0, got {x!r}")
    return math.gamma(x)


_MAX_TERMS = 500
_TINY = 1e-300


def _lower_series_scaled(s, x):
    """``exp(x) * gamma_lower(s, x)`` by the power series (vectorized)."""
    term = np.ones_like(x) / s
    total = term.copy()
    ap = np.full_like(x, s)
    for _ in range(_MAX_TERMS):
        ap = ap + 1.0
        term = term * x / ap
        total = total + term
        if np.all(np.abs(term) <= np.abs(total) * 1e-17):
            break
    return total * np.power(x, s)


def _upper_cf_scaled(s, x):
    """``exp(x) * Gamma(s, x)`` by Lentz's continued fraction (vectorized)."""
    b = x + 1.0 - s
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _MAX_TERMS):
        an = -i * (i - s)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) <= 4e-16):
            break
    return h * np.power(x, s)


def upper_incomplete_gamma(s, x):
    """Upper incomplete Gamma function ``Gamma(s, x) = int_x^inf t^(s-1) e^-t dt``.

    Uses the series for ``x < s + 1`` and a continued fraction otherwise.
    Accepts scalar or array ``x``.
    """
    if not s > 0:
        raise DomainError(f"upper_incomplete_gamma requires s > 0, got {s!r}")
    xa = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(xa)) or np.any(xa < 0):
        raise DomainError("upper_incomplete_gamma requires finite x >= 0")
    out = _scaled_upper_gamma(s, xa) * np.exp(-xa)
    return float(out) if out.ndim == 0 else out


def _scaled_upper_gamma(s, x):
    """``exp(x) Gamma(s, x)`` without overflow for large ``x``."""
    xa = np.asarray(x, dtype=float)
    flat = xa.reshape(-1)
    out = np.empty_like(flat)
    lo = flat < s + 1.0
    if np.any(lo):
        xl = flat[lo]
        out[lo] = np.exp(xl) * math.gamma(s) - _lower_series_scaled(s, xl)
    if np.any(~lo):
        out[~lo] = _upper_cf_scaled(s, flat[~lo])
    return out.reshape(xa.shape)


def weibull_diffusion(eta, alpha, kappa, lam):
    """Diffusion ``sqrt(b1 b2)`` making Weibull(kappa, lam) stationary.

    ``b1 = 2 alpha eta c1 (lam / kappa) c2**(-kappa)`` and
    ``b2 = kappa exp(c2**kappa) Gamma(1 + c1, c2**kappa) - Gamma(c1)`` with
    ``c1 = 1/kappa`` and ``c2 = eta / lam``.
    """
    eta_in = np.asarray(eta, dtype=float)
    eta = eta_in.reshape(-1)
    c1 = 1.0 / kappa
    c2 = eta / lam
    u = c2**kappa
    s = 1.0 + c1
    b1 = 2.0 * alpha * eta * c1 * (lam / kappa) * c2 ** (-kappa)
    # b2 / kappa = exp(u) Gamma(s, u) - Gamma(s); expanded on the series branch
    # to avoid cancellation as u -> 0
    b2k = np.empty_like(u)
    lo = u < s + 1.0
    if np.any(lo):
        ul = u[lo]
        b2k[lo] = np.expm1(ul) * math.gamma(s) - _lower_series_scaled(s, ul)
    if np.any(~lo):
        b2k[~lo] = _upper_cf_scaled(s, u[~lo]) - math.gamma(s)
    b2 = kappa * b2k
    return np.sqrt(np.maximum(b1 * b2, 0.0)).reshape(eta_in.shape)


def _weibull_diffusion_scalar(eta, alpha, kappa, lam, gs):
    # pure-float twin of weibull_diffusion for long single trajectories
    c1 = 1.0 / kappa
    c2 = eta / lam
    u = c2**kappa
    s = 1.0 + c1
    b1 = 2.0 * alpha * eta * c1 * (lam / kappa) / u
    if u < s + 1.0:
        term = total = 1.0 / s
        ap = s
        for _ in range(_MAX_TERMS):
            ap += 1.0
            term *= u / ap
            total += term
            if abs(term) <= abs(total) * 1e-17:
                break
        b2k = math.expm1(u) * gs - total * u**s
    else:
        b = u + 1.0 - s
        c = 1.0 / _TINY
        d = 1.0 / b
        h = d
        for i in range(1, _MAX_TERMS):
            an = -i * (i - s)
            b += 2.0
            d = an * d + b
            d = d if abs(d) >= _TINY else _TINY
            c = b + an / c
            c = c if abs(c) >= _TINY else _TINY
            d = 1.0 / d
            delta = d * c
            h *= delta
            if abs(delta - 1.0) <= 4e-16:
                break
        b2k = h * u**s - gs
    return math.sqrt(max(b1 * kappa * b2k, 0.0))


# ---------------------------------------------------------------------------
# Euler-Maruyama


def em_step(spec, eta, h, dw, clamp=True):
    """One Euler-Maruyama step ``eta + a(eta) h + b(eta) dW``.

    Weibull states are clamped to ``1e-9 * lam`` after the step; with
    ``clamp=False`` a non-positive result raises :class:`DomainError`.
    """
    if not h > 0:
        raise InvalidParameter("step h must be positive")
    eta = np.asarray(eta, dtype=float)
    new = eta + drift(spec, eta) * h + diffusion(spec, eta) * dw
    if spec.kind == "weibull":
        floor = WEIBULL_FLOOR * spec.lam
        if clamp:
            new = np.maximum(new, floor)
        elif np.any(new <= 0):
            raise DomainError("Weibull state driven to a non-positive value")
    return new if new.ndim else float(new)


def em_path(spec, eta0, h, dw, every=1):
    """Single Euler-Maruyama trajectory driven by the increments ``dw``.

    Returns the state after every ``every``-th step. Runs on Python floats,
    which is far faster than array code for one long path.
    """
    if not h > 0:
        raise InvalidParameter("step h must be positive")
    every = max(int(every), 1)
    dw = np.asarray(dw, dtype=float).tolist()
    eta = float(eta0)
    out = []
    a, mean = spec.alpha, spec.mean
    if spec.kind == "ou":
        b = spec.b
        for k, w in enumerate(dw, 1):
            eta += a * (mean - eta) * h + b * w
            if k % every == 0:
                out.append(eta)
    else:
        kap, lam = spec.kappa, spec.lam
        gs = math.gamma(1.0 + 1.0 / kap)
        floor = WEIBULL_FLOOR * lam
        for k, w in enumerate(dw, 1):
            bw = _weibull_diffusion_scalar(eta, a, kap, lam, gs)
            eta = max(eta + a * (mean - eta) * h + bw * w, floor)
            if k % every == 0:
                out.append(eta)
    return np.array(out)


# ---------------------------------------------------------------------------
# random streams


def _generator(root_seed, realization_index, process_index):
    ss = np.random.SeedSequence(
        int(root_seed), spawn_key=(int(realization_index), int(process_index))
    )
    return np.random.Generator(np.random.Philox(ss))


class WienerStream:
    """Sequential N(0, h) draws for one ``(seed, realization, process)`` key.

    Draws are produced in even-sized chunks so that the concatenation of
    chunks equals a single long request.
    """

    def __init__(self, root_seed, realization_index, process_index, h):
        if not h > 0:
            raise InvalidParameter("step h must be positive")
        self._gen = _generator(root_seed, realization_index, process_index)
        self._scale = math.sqrt(h)
        self._spare = None

    def _pairs(self, npairs):
        u = self._gen.random(2 * npairs)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * npairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z

    def draw(self, count):
        out = np.empty(count)
        k = 0
        if self._spare is not None and count > 0:
            out[0] = self._spare
            self._spare = None
            k = 1
        rest = count - k
        if rest > 0:
            z = self._pairs((rest + 1) // 2)
            out[k:] = z[:rest]
            if z.size > rest:
                self._spare = z[-1]
        return out * self._scale


def wiener_increments(root_seed, realization_index, process_index, step_count, h):
    """The first ``step_count`` Wiener increments of a keyed stream."""
    return WienerStream(root_seed, realization_index, process_index, h).draw(int(step_count))


def stationary_draw(spec, root_seed, realization_index, process_index):
    """One draw from the stationary law of ``spec``, keyed like the Wiener streams.

    Uses a stream distinct from the Wiener increments of the same key.
    """
    ss = np.random.SeedSequence(
        int(root_seed), spawn_key=(int(realization_index), int(process_index), 1)
    )
    u = 1.0 - np.random.Generator(np.random.Philox(ss)).random()
    if spec.kind == "weibull":
        return spec.lam * (-math.log(u)) ** (1.0 / spec.kappa)
    u2 = np.random.Generator(np.random.Philox(ss.spawn(1)[0])).random()
    return spec.mu + spec.sigma * math.sqrt(-2.0 * math.log(u)) * math.cos(2.0 * math.pi * u2)


# ---------------------------------------------------------------------------
# bank of processes


@dataclass(frozen=True)
class NoiseBank:
    """Ordered, mutually uncorrelated noise processes.

    The order of ``processes`` fixes the index of each process in the
    stochastic state vector.
    """

    processes: tuple
    rng_root_seed: int = 0

    def __post_init__(self):
        procs = tuple((str(t), s) for t, s in self.processes)
        tags = [t for t, _ in procs]
        if len(set(tags)) != len(tags):
            raise InvalidParameter("noise tags must be unique")
        object.__setattr__(self, "processes", procs)

    def __len__(self):
        return len(self.processes)

    @property
    def tags(self):
        return [t for t, _ in self.processes]

    @property
    def specs(self):
        return [s for _, s in self.processes]

    def index(self, tag):
        for i, (t, _) in enumerate(self.processes):
            if t == tag:
                return i
        raise KeyError(tag)

    def spec(self, tag):
        return self.processes[self.index(tag)][1]

    @property
    def alphas(self):
        return np.array([s.alpha for s in self.specs])

    @property
    def means(self):
        return np.array([s.mean for s in self.specs])

    def scaled(self, factor):
        """Copy with every standard deviation multiplied by ``factor``.

        OU diffusions scale linearly. Weibull processes are left unchanged,
        their spread being fixed by the shape and scale parameters.
        """
        if not factor >= 0:
            raise InvalidParameter("sigma scale must be non-negative")
        new = []
        for tag, s in self.processes:
            if s.kind == "ou":
                s = OuSpec(alpha=s.alpha, mu=s.mu, b=s.b * factor)
            new.append((tag, s))
        return NoiseBank(tuple(new), self.rng_root_seed)

    def drift(self, eta):
        return self.alphas * (self.means - eta)

    def diffusion(self, eta):
        """Diffusion of every process; ``eta`` has shape (..., p)."""
        eta = np.asarray(eta, dtype=float)
        out = np.empty_like(eta)
        for k, s in enumerate(self.specs):
            if s.kind == "ou":
                out[..., k] = s.b
            else:
                col = eta[..., k]
                if np.any(col <= 0):
                    raise DomainError(f"Weibull process {self.tags[k]!r} left its domain")
                out[..., k] = weibull_diffusion(col, s.alpha, s.kappa, s.lam)
        return out

    def em_step(self, eta, h, dw):
        """Advance every process by one Euler-Maruyama step; shapes (..., p)."""
        new = eta + self.drift(eta) * h + self.diffusion(eta) * dw
        for k, s in enumerate(self.specs):
            if s.kind == "weibull":
                new[..., k] = np.maximum(new[..., k], WEIBULL_FLOOR * s.lam)
        return new
