"""Monte Carlo reference for the stationary variances.

Realizations of the nonlinear SDAE are integrated with Euler-Maruyama for
the noise processes and the implicit trapezoidal rule for ``(x, y)``: each
step first advances ``eta``, then solves

    x+ - x - dt/2 (f(x, y, eta) + f(x+, y+, eta+)) = 0,   g(x+, y+, eta+) = 0

by a Newton iteration. Realizations are processed in fixed-size chunks,
each chunk vectorized across its realizations; a realization's noise stream
depends only on ``(root_seed, realization, process)`` and its Newton
iteration only on its own residual, so results do not depend on how chunks
are scheduled over workers. Across-realization statistics are accumulated
at checkpoint times with Welford/Chan updates.
"""

import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from sdaevar import densela
from sdaevar.exceptions import (
    EmptyInput,
    EnsembleFailure,
    InvalidParameter,
    MismatchedVariables,
    NewtonDivergence,
)
from sdaevar.grid import dae_jacobian, jacobians
from sdaevar.stochastic import WienerStream, stationary_draw

WORKERS_ENV = "SDAEVAR_WORKERS"
MAX_FAILURE_FRACTION = 0.01
_DRAW_BLOCK = 500


def heuristic_tf(noise):
    """Simulation horizon ``2 / min(alpha)`` letting every process reach stationarity."""
    if len(noise) == 0:
        raise EmptyInput("heuristic_tf needs at least one process")
    return 2.0 / float(np.min(noise.alphas))


@dataclass
class McConfig:
    """Monte Carlo settings.

    ``t_f=None`` selects :func:`heuristic_tf`. ``h`` must equal ``dt``.
    Checkpoints default to every ``checkpoint_every`` seconds plus ``t_f``.
    ``weibull_init`` is ``"mean"`` (start Weibull processes at their mean)
    or ``"stationary"`` (draw the start from the Weibull law).
    """

    n_realizations: int = 1000
    t_f: float | None = None
    dt: float = 0.01
    h: float | None = None
    root_seed: int = 0
    checkpoint_times: list | None = None
    checkpoint_every: float = 1.0
    newton_tol: float = 1e-8
    newton_max_iter: int = 20
    chunk_size: int = 1000
    weibull_init: str = "mean"

    def resolved(self, noise):
        t_f = heuristic_tf(noise) if self.t_f is None else float(self.t_f)
        h = self.dt if self.h is None else float(self.h)
        if self.n_realizations < 1:
            raise InvalidParameter("N must be at least 1")
        if not t_f > 0 or not self.dt > 0:
            raise InvalidParameter("t_f and dt must be positive")
        if self.weibull_init not in ("mean", "stationary"):
            raise InvalidParameter("weibull_init must be 'mean' or 'stationary'")
        if not math.isclose(h, self.dt, rel_tol=1e-12):
            raise InvalidParameter("the noise step h must equal dt")
        nsteps = int(round(t_f / self.dt))
        if not math.isclose(nsteps * self.dt, t_f, rel_tol=1e-9, abs_tol=1e-12):
            raise InvalidParameter("t_f must be an integer multiple of dt")
        if self.checkpoint_times is None:
            every = max(int(round(self.checkpoint_every / self.dt)), 1)
            steps = sorted(set(range(0, nsteps + 1, every)) | {nsteps})
        else:
            steps = []
            for t in self.checkpoint_times:
                if t < 0 or t > t_f + 1e-12:
                    raise InvalidParameter(f"checkpoint {t} outside [0, t_f]")
                steps.append(int(round(t / self.dt)))
            steps = sorted(set(steps) | {nsteps})
        return _Resolved(
            n=int(self.n_realizations), t_f=t_f, dt=float(self.dt), nsteps=nsteps,
            steps=np.array(steps, dtype=int), seed=int(self.root_seed),
            tol=float(self.newton_tol), max_iter=int(self.newton_max_iter),
            chunk=max(int(self.chunk_size), 1), weibull_init=self.weibull_init,
        )


@dataclass(frozen=True)
class _Resolved:
    n: int
    t_f: float
    dt: float
    nsteps: int
    steps: np.ndarray
    seed: int
    tol: float
    max_iter: int
    chunk: int
    weibull_init: str = "mean"

    @property
    def times(self):
        return self.steps * self.dt


# ---------------------------------------------------------------------------
# streaming statistics


class EnsembleStats:
    """Across-realization count/mean/M2 per checkpoint and variable."""

    def __init__(self, times, names):
        self.times = np.asarray(times, dtype=float)
        self.names = list(names)
        k, d = self.times.size, len(self.names)
        self.count = np.zeros(k, dtype=np.int64)
        self.mean = np.zeros((k, d))
        self.m2 = np.zeros((k, d))

    def _merge_at(self, i, nb, mean_b, m2_b):
        na = self.count[i]
        if nb == 0:
            return
        if na == 0:
            self.count[i], self.mean[i], self.m2[i] = nb, mean_b, m2_b
            return
        n = na + nb
        delta = mean_b - self.mean[i]
        self.mean[i] = self.mean[i] + delta * (nb / n)
        self.m2[i] = self.m2[i] + m2_b + delta * delta * (na * nb / n)
        self.count[i] = n

    def push(self, i, values):
        """Fold a batch of samples (rows) into checkpoint ``i``."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] == 0:
            return
        # shift by the first sample so identical rows give exactly zero spread
        shifted = values - values[0]
        ms = shifted.mean(axis=0)
        dev = shifted - ms
        self._merge_at(i, values.shape[0], values[0] + ms, (dev * dev).sum(axis=0))

    def merge(self, other):
        """In-place Chan merge with statistics of a disjoint realization set."""
        if other.times.shape != self.times.shape or other.names != self.names:
            raise MismatchedVariables("cannot merge statistics with different layouts")
        for i in range(self.times.size):
            self._merge_at(i, other.count[i], other.mean[i], other.m2[i])
        return self

    def variance(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            var = self.m2 / (self.count[:, None] - 1)
        return np.where(self.count[:, None] > 1, np.maximum(var, 0.0), 0.0)

    def std(self):
        return np.sqrt(self.variance())

    @property
    def final_std(self):
        return self.std()[-1]


@dataclass
class EnsembleResult:
    stats: EnsembleStats
    names: list
    classes: list
    final_values: np.ndarray
    realization_ids: np.ndarray
    failures: list
    n_requested: int
    t_f: float
    dt: float
    seed: int
    wall_time: float
    cpu_time_per_realization: float
    warnings: list = field(default_factory=list)

    @property
    def n_completed(self):
        return int(self.final_values.shape[0])

    @property
    def sigma(self):
        return self.stats.final_std


# ---------------------------------------------------------------------------
# integration kernels


def _initial_eta(noise, res, realizations):
    eta = np.tile(noise.means, (len(realizations), 1))
    if res.weibull_init == "stationary":
        for k, (_, spec) in enumerate(noise.processes):
            if spec.kind == "weibull":
                eta[:, k] = [stationary_draw(spec, res.seed, r, k) for r in realizations]
    return eta


class _NoiseDraws:
    """Blocks of Wiener increments for a chunk of realizations."""

    def __init__(self, seed, realizations, p, h, block=_DRAW_BLOCK):
        self.streams = [[WienerStream(seed, r, k, h) for k in range(p)] for r in realizations]
        self.p = p
        self.block = block
        self.buf = np.zeros((0, len(realizations), p))
        self.pos = 0

    def next(self):
        if self.pos >= self.buf.shape[0]:
            b = self.block
            buf = np.empty((b, len(self.streams), self.p))
            for j, row in enumerate(self.streams):
                for k, st in enumerate(row):
                    buf[:, j, k] = st.draw(b)
            self.buf, self.pos = buf, 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


class _Trapezoid:
    """Chord-Newton trapezoidal step for a batch of realizations.

    The iteration matrix is factored once at the equilibrium; each row
    iterates until its own residual is below ``tol``.
    """

    def __init__(self, model, dt, tol, max_iter):
        self.model = model
        self.comp = model._compiled
        self.n, self.m = model.n, model.m
        self.dt, self.tol, self.max_iter = dt, tol, max_iter
        x0, y0, eta0 = model.equilibrium
        jac = dae_jacobian(model, x0, y0, eta0)
        n = self.n
        it = jac.copy()
        it[:n] *= -0.5 * dt
        it[:n, :n] += np.eye(n)
        fact = densela.lu_factor(it)
        # explicit inverse: a matmul per iteration beats a triangular solve here
        self.inv_t = fact.solve(np.eye(n + self.m)).T.copy()
        # linear predictor from f_k and the noise increment
        jeta = jacobians(model, x0, y0, eta0)
        self.pred_x = 0.5 * dt * jeta.f_eta.T
        self.pred_g = -jeta.g_eta.T

    def predict(self, z, fk, deta, rows):
        rhs = np.empty((rows.size, self.n + self.m))
        rhs[:, : self.n] = self.dt * fk[rows] + deta[rows] @ self.pred_x
        rhs[:, self.n :] = deta[rows] @ self.pred_g
        z[rows] += rhs @ self.inv_t

    def step(self, z, fk, eta, alive, deta=None):
        """Advance rows ``alive`` of ``z`` in place; returns indices that failed.

        ``deta`` is the noise increment of this step, used for the predictor.
        """
        n, half = self.n, 0.5 * self.dt
        xk = z[:, :n].copy()
        idx = np.flatnonzero(alive)
        if deta is not None:
            self.predict(z, fk, deta, idx)
        failed = []
        for it in range(self.max_iter + 1):
            za = z[idx]
            f, g = self.comp.evaluate(za[:, :n], za[:, n:], eta[idx])
            r = np.empty_like(za)
            r[:, :n] = za[:, :n] - xk[idx] - half * (fk[idx] + f)
            r[:, n:] = g
            err = np.abs(r).max(axis=1)
            ok = err < self.tol
            fk[idx[ok]] = f[ok]
            lost = ~np.isfinite(err)
            failed.extend(idx[lost])
            keep = ~ok & ~lost
            idx, r = idx[keep], r[keep]
            if idx.size == 0:
                break
            if it == self.max_iter:
                failed.extend(idx)
                break
            z[idx] -= r @ self.inv_t
        return np.array(sorted(failed), dtype=int)


def consistent_algebraics(model, x, eta, y_guess=None, tol=1e-12, max_iter=30):
    """Solve ``g(x, y, eta) = 0`` for ``y`` by Newton (single point)."""
    y = model.equilibrium.y.copy() if y_guess is None else np.array(y_guess, dtype=float)
    for _ in range(max_iter):
        _, g = model.evaluate(x[None], y[None], eta[None])
        if np.abs(g).max() < tol:
            return y
        gy = jacobians(model, x, y, eta).g_y
        y = y - densela.lu_solve(gy, g[0])
    raise NewtonDivergence("could not find consistent algebraic variables")


def _run_chunk(model, cfg, realizations, record_path=False):
    t0 = time.process_time()
    n, m, p = model.n, model.m, model.p
    bsz = len(realizations)
    x0, y0, eta0 = model.equilibrium
    z = np.tile(np.concatenate([x0, y0]), (bsz, 1))
    eta = _initial_eta(model.noise, cfg, realizations)
    moved = np.flatnonzero(np.any(eta != eta0, axis=1))
    for j in moved:
        z[j, n:] = consistent_algebraics(model, x0, eta[j], y0)
    fk, _ = model.evaluate(z[:, :n], z[:, n:], eta)
    alive = np.ones(bsz, dtype=bool)
    failures = []
    names = model.state_names + model.algebraic_names + model.noise_names
    stats = EnsembleStats(cfg.times, [nm for nm, _ in names])
    stepper = _Trapezoid(model, cfg.dt, cfg.tol, cfg.max_iter)
    draws = _NoiseDraws(cfg.seed, realizations, p, cfg.dt) if p else None
    bank = model.noise
    path = [] if record_path else None

    def record(i):
        vals = np.concatenate([z[alive], eta[alive]], axis=1)
        stats.push(i, vals)
        if path is not None:
            path.append(np.concatenate([z, eta], axis=1).copy())

    ck = 0
    if cfg.steps[0] == 0:
        record(0)
        ck = 1
    for k in range(1, cfg.nsteps + 1):
        if p:
            dw = draws.next()
            eta_new = bank.em_step(eta, cfg.dt, dw)
            deta, eta = eta_new - eta, eta_new
        else:
            deta = None
        bad = stepper.step(z, fk, eta, alive, deta)
        if bad.size:
            for j in bad:
                failures.append((int(realizations[j]), k))
            alive[bad] = False
        if ck < cfg.steps.size and cfg.steps[ck] == k:
            record(ck)
            ck += 1
    final = np.concatenate([z[alive], eta[alive]], axis=1)
    ids = np.asarray(realizations)[alive]
    cpu = time.process_time() - t0
    return stats, final, ids, failures, cpu, path


def _chunk_task(args):
    model, cfg, realizations = args
    stats, final, ids, failures, cpu, _ = _run_chunk(model, cfg, realizations)
    return stats, final, ids, failures, cpu


def _worker_count(workers):
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(int(workers), 1)


def run_ensemble(model, cfg, workers=None):
    """Integrate ``cfg.n_realizations`` realizations and gather statistics.

    Raises :class:`EnsembleFailure` if more than 1% of realizations fail.
    """
    res = cfg.resolved(model.noise)
    wall0 = time.perf_counter()
    ids = np.arange(res.n)
    chunks = [ids[i : i + res.chunk] for i in range(0, res.n, res.chunk)]
    tasks = [(model, res, c) for c in chunks]
    nw = min(_worker_count(workers), len(chunks))
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            outs = list(pool.map(_chunk_task, tasks))
    else:
        outs = [_chunk_task(t) for t in tasks]
    return _assemble(model, res, outs, time.perf_counter() - wall0)


def _assemble(model, res, outs, wall):
    names = model.state_names + model.algebraic_names + model.noise_names
    stats = EnsembleStats(res.times, [nm for nm, _ in names])
    finals, rids, failures, cpu = [], [], [], 0.0
    for st, fin, rid, fail, c in outs:
        stats.merge(st)
        finals.append(fin)
        rids.append(rid)
        failures.extend(fail)
        cpu += c
    msgs = []
    if len(failures) > MAX_FAILURE_FRACTION * res.n:
        raise EnsembleFailure(
            f"{len(failures)} of {res.n} realizations failed "
            f"(first: realization {failures[0][0]} at step {failures[0][1]})"
        )
    if res.n - len(failures) < 2:
        msgs.append("insufficient samples: standard deviations reported as 0")
        warnings.warn(msgs[-1], RuntimeWarning, stacklevel=3)
    return EnsembleResult(
        stats=stats, names=[nm for nm, _ in names], classes=[c for _, c in names],
        final_values=np.concatenate(finals, axis=0), realization_ids=np.concatenate(rids),
        failures=failures, n_requested=res.n, t_f=res.t_f, dt=res.dt, seed=res.seed,
        wall_time=wall, cpu_time_per_realization=cpu / res.n, warnings=msgs,
    )


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    eta: np.ndarray
    names: list


def integrate_sdae(model, realization_index, cfg):
    """Integrate one realization and return its values at the checkpoints."""
    res = cfg.resolved(model.noise)
    _, _, _, failures, _, path = _run_chunk(model, res, np.array([realization_index]), record_path=True)
    if failures:
        r, k = failures[0]
        raise NewtonDivergence(f"Newton failed for realization {r} at step {k}", step=k)
    arr = np.concatenate(path, axis=0)
    n, m = model.n, model.m
    names = model.state_names + model.algebraic_names + model.noise_names
    return Trajectory(times=res.times, x=arr[:, :n], y=arr[:, n : n + m], eta=arr[:, n + m :],
                      names=[nm for nm, _ in names])


def simulate_deterministic(model, x_init, t_f, dt, tol=1e-10, max_iter=20):
    """Noise-free trapezoidal integration from ``x_init`` (eta held at its mean).

    Returns ``(times, states)``; the algebraic variables are made
    consistent with ``x_init`` first.
    """
    x_init = np.asarray(x_init, dtype=float)
    eta = model.equilibrium.eta
    y = consistent_algebraics(model, x_init, eta)
    stepper = _Trapezoid(model, dt, tol, max_iter)
    z = np.concatenate([x_init, y])[None].copy()
    f0, _ = model.evaluate(z[:, : model.n], z[:, model.n :], eta[None])
    fk = f0.copy()
    alive = np.ones(1, dtype=bool)
    nsteps = int(round(t_f / dt))
    out = np.empty((nsteps + 1, model.n))
    out[0] = x_init
    eta_b = eta[None]
    for k in range(1, nsteps + 1):
        if stepper.step(z, fk, eta_b, alive, np.zeros_like(eta_b)).size:
            raise NewtonDivergence("deterministic step failed", step=k)
        out[k] = z[0, : model.n]
    return np.arange(nsteps + 1) * dt, out


# ---------------------------------------------------------------------------
# noise-only ensembles


def _noise_chunk(args):
    noise, res, realizations = args
    t0 = time.process_time()
    p = len(noise)
    names = [f"eta[{t}]" for t in noise.tags]
    stats = EnsembleStats(res.times, names)
    eta = _initial_eta(noise, res, realizations)
    draws = _NoiseDraws(res.seed, realizations, p, res.dt)
    ck = 0
    if res.steps[0] == 0:
        stats.push(0, eta)
        ck = 1
    for k in range(1, res.nsteps + 1):
        eta = noise.em_step(eta, res.dt, draws.next())
        if ck < res.steps.size and res.steps[ck] == k:
            stats.push(ck, eta)
            ck += 1
    return stats, eta.copy(), np.asarray(realizations), [], time.process_time() - t0


def run_noise_ensemble(noise, cfg, workers=None):
    """Ensemble of the noise processes alone, started at their means."""
    res = cfg.resolved(noise)
    wall0 = time.perf_counter()
    ids = np.arange(res.n)
    chunks = [ids[i : i + res.chunk] for i in range(0, res.n, res.chunk)]
    tasks = [(noise, res, c) for c in chunks]
    nw = min(_worker_count(workers), len(chunks))
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            outs = list(pool.map(_noise_chunk, tasks))
    else:
        outs = [_noise_chunk(t) for t in tasks]
    names = [f"eta[{t}]" for t in noise.tags]
    stats = EnsembleStats(res.times, names)
    finals, rids, cpu = [], [], 0.0
    for st, fin, rid, _, c in outs:
        stats.merge(st)
        finals.append(fin)
        rids.append(rid)
        cpu += c
    return EnsembleResult(
        stats=stats, names=names, classes=["eta"] * len(names),
        final_values=np.concatenate(finals), realization_ids=np.concatenate(rids), failures=[],
        n_requested=res.n, t_f=res.t_f, dt=res.dt, seed=res.seed,
        wall_time=time.perf_counter() - wall0, cpu_time_per_realization=cpu / res.n,
    )


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ClosenessReport:
    names: list
    classes: list
    sigma_mc: np.ndarray
    sigma_lem: np.ndarray
    epsilon: np.ndarray
    flags: list
    boxplots: dict

    def rows(self):
        return list(zip(self.names, self.classes, self.sigma_mc, self.sigma_lem, self.epsilon, self.flags))

    def comparable(self):
        return np.array([f == "" for f in self.flags])


def closeness(sigma_mc, sigma_lem, names=None, classes=None, degenerate=None):
    """Percent gap ``100 (sigma_mc - sigma_lem) / sigma_mc`` per variable.

    Flags: ``degenerate`` when both deviations vanish (or the LEM marked the
    variable degenerate), ``incomparable`` when only the MC deviation is 0.
    Box-plot summaries are computed per class over unflagged variables.
    """
    smc = np.asarray(sigma_mc, dtype=float).reshape(-1)
    slem = np.asarray(sigma_lem, dtype=float).reshape(-1)
    if smc.shape != slem.shape:
        raise MismatchedVariables(f"{smc.size} MC sigmas vs {slem.size} LEM sigmas")
    if names is not None and len(names) != smc.size:
        raise MismatchedVariables("name table does not match sigma vectors")
    names = list(names) if names is not None else [str(i) for i in range(smc.size)]
    classes = list(classes) if classes is not None else ["all"] * smc.size
    deg = np.zeros(smc.size, dtype=bool) if degenerate is None else np.asarray(degenerate, dtype=bool)
    eps = np.zeros(smc.size)
    flags = []
    for i in range(smc.size):
        if deg[i] or (smc[i] == 0 and slem[i] == 0):
            flags.append("degenerate")
            eps[i] = 0.0 if smc[i] == 0 or slem[i] == 0 else (smc[i] - slem[i]) / smc[i] * 100.0
        elif smc[i] == 0:
            flags.append("incomparable")
            eps[i] = np.nan
        else:
            flags.append("")
            eps[i] = (smc[i] - slem[i]) / smc[i] * 100.0
    boxes = {}
    for cls in dict.fromkeys(classes):
        vals = [eps[i] for i in range(smc.size) if classes[i] == cls and flags[i] == ""]
        if vals:
            boxes[cls] = boxplot_stats(vals)
    return ClosenessReport(names, classes, smc, slem, eps, flags, boxes)


def boxplot_stats(values):
    """Median, 5th/95th percentiles (linear interpolation) and outliers outside them."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise EmptyInput("boxplot_stats needs at least one value")
    med, p5, p95 = np.percentile(v, [50.0, 5.0, 95.0])
    out = v[(v < p5) | (v > p95)]
    return {"median": float(med), "p5": float(p5), "p95": float(p95),
            "outliers": [float(o) for o in out], "n": int(v.size)}


def sigma_convergence(result, n_values=None):
    """Tables of sigma versus time and versus number of realizations.

    ``sigma_vs_t``: one row per checkpoint, columns = variables.
    ``sigma_vs_N``: sigma at ``t_f`` over the first ``N`` realizations
    (by realization index) for nested prefixes.
    """
    std_t = result.stats.std()
    order = np.argsort(result.realization_ids, kind="stable")
    final = result.final_values[order]
    total = final.shape[0]
    if n_values is None:
        n_values = []
        k = 10
        while k < total:
            n_values.extend(v for v in (k, 2 * k, 5 * k) if v < total)
            k *= 10
        n_values.append(total)
        n_values = sorted(set(n_values))
    rows = []
    for nv in n_values:
        nv = int(min(nv, total))
        sub = final[:nv]
        rows.append(sub.std(axis=0, ddof=1) if nv > 1 else np.zeros(final.shape[1]))
    return {
        "times": result.stats.times.copy(),
        "sigma_vs_t": std_t,
        "n_values": np.array([int(min(nv, total)) for nv in n_values]),
        "sigma_vs_N": np.array(rows),
        "names": list(result.names),
    }
