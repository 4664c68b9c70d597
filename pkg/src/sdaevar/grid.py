"""Power-system DAE model.

The model is the index-1 system ``x' = f(x, y, eta)``, ``0 = g(x, y, eta)``
built from

* two-axis synchronous machines (delta, omega, e'_q, e'_d) with a first-order
  AVR (state ``e_fd``) and a droop governor with first-order lag (``p_m``),
* voltage-dependent loads ``p = (p0 + eta_p) (v / v0)**gamma`` and the same
  for ``q``,
* wind plants whose power-curve output at wind speed ``v_w0 + eta_w`` is
  filtered through one time constant (state ``p_w``),
* a pi-model network in polar form, with branch-end flows kept as explicit
  algebraic variables.

Rotor angles are measured in the frame of the machine at the slack bus,
whose angle is frozen at its equilibrium value and is not a state. All
evaluation routines are vectorized over a leading batch axis.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from sdaevar import densela
from sdaevar.exceptions import (
    InitializationInfeasible,
    ModelError,
    NoConvergence,
    SingularMatrix,
)
from sdaevar.stochastic import NoiseBank

PF_TOL = 1e-8
PF_MAX_ITER = 50
EQ_TOL = 1e-8

STATE_CLASSES = ("delta", "omega", "e_q", "e_d", "e_fd", "p_m", "p_w")
ALGEBRAIC_CLASSES = (
    "v", "theta", "p_g", "q_g", "I_d", "I_q", "p_e", "p_fr", "q_fr", "p_to", "q_to",
)


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str = "PQ"
    v0: float = 1.0
    theta0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("slack", "PV", "PQ"):
            raise ModelError(f"bus {self.id}: kind must be slack, PV or PQ")
        if not self.v0 > 0:
            raise ModelError(f"bus {self.id}: v0 must be positive")


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    r: float
    x: float
    b_sh: float = 0.0
    tap: float = 1.0
    id: str = ""

    def __post_init__(self):
        if self.x == 0:
            raise ModelError(f"branch {self.from_bus}-{self.to_bus}: x must be non-zero")
        if self.from_bus == self.to_bus:
            raise ModelError(f"branch {self.from_bus}-{self.to_bus}: from and to bus coincide")
        if not self.tap > 0:
            raise ModelError(f"branch {self.from_bus}-{self.to_bus}: tap must be positive")
        if not self.id:
            object.__setattr__(self, "id", f"{self.from_bus}-{self.to_bus}")


@dataclass(frozen=True)
class Machine:
    """Two-axis machine with AVR (K_a, T_a) and governor (R, T_g).

    ``p0`` is the active-power dispatch used by the power flow; it is ignored
    at the slack bus.
    """

    bus: str
    M: float
    D: float
    xd: float
    xq: float
    xd1: float
    xq1: float
    Td01: float
    Tq01: float
    Ka: float
    Ta: float
    R: float
    Tg: float
    p0: float = 0.0
    id: str = ""

    def __post_init__(self):
        name = self.id or self.bus
        if not self.id:
            object.__setattr__(self, "id", f"G{self.bus}")
        for attr in ("M", "Td01", "Tq01", "Ta", "Tg", "R", "Ka"):
            if not getattr(self, attr) > 0:
                raise ModelError(f"machine {name}: {attr} must be positive")
        if not (self.xd >= self.xd1 > 0 and self.xq >= self.xq1 > 0):
            raise ModelError(f"machine {name}: need xd >= xd1 > 0 and xq >= xq1 > 0")
        if self.D < 0:
            raise ModelError(f"machine {name}: D must be non-negative")


@dataclass(frozen=True)
class Load:
    bus: str
    p0: float
    q0: float
    gamma: float = 2.0
    noise_p: str | None = None
    noise_q: str | None = None
    id: str = ""

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", f"L{self.bus}")
        if not np.isfinite(self.gamma):
            raise ModelError(f"load {self.id}: gamma must be finite")
        if self.p0 < 0 or self.q0 < 0:
            raise ModelError(f"load {self.id}: p0 and q0 must be non-negative")


@dataclass(frozen=True)
class PowerCurve:
    """Cubic between cut-in and rated speed, flat to cut-out, zero outside."""

    rated_power: float
    cut_in: float = 3.0
    rated_speed: float = 12.0
    cut_out: float = 25.0

    def __post_init__(self):
        if not (0 <= self.cut_in < self.rated_speed <= self.cut_out):
            raise ModelError("power curve needs 0 <= cut_in < rated_speed <= cut_out")
        if self.rated_power < 0:
            raise ModelError("power curve rated_power must be non-negative")

    def __call__(self, vw):
        vw = np.asarray(vw, dtype=float)
        ci3 = self.cut_in**3
        frac = (np.clip(vw, self.cut_in, self.rated_speed) ** 3 - ci3) / (self.rated_speed**3 - ci3)
        return np.where(vw > self.cut_out, 0.0, self.rated_power * frac)


@dataclass(frozen=True)
class WindPlant:
    bus: str
    vw0: float
    noise_w: str | None
    curve: PowerCurve
    T_f: float = 1.0
    q_set: float = 0.0
    id: str = ""

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", f"W{self.bus}")
        if not self.T_f > 0:
            raise ModelError(f"wind plant {self.id}: T_f must be positive")


@dataclass(frozen=True)
class Base:
    frequency: float = 60.0
    mva: float = 100.0

    @property
    def omega_b(self):
        return 2.0 * np.pi * self.frequency


@dataclass(frozen=True)
class PowerFlowResult:
    v: np.ndarray
    theta: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    mismatch: np.ndarray
    iterations: int
    bus_ids: tuple

    @property
    def max_mismatch(self):
        return float(np.abs(self.mismatch).max())


@dataclass(frozen=True)
class Equilibrium:
    """Method-I equilibrium: ``f = 0``, ``g = 0`` and zero noise drift."""

    x: np.ndarray
    y: np.ndarray
    eta: np.ndarray
    power_flow: PowerFlowResult = field(repr=False)

    def __iter__(self):
        return iter((self.x, self.y, self.eta))


@dataclass(frozen=True)
class Jacobians:
    f_x: np.ndarray
    f_y: np.ndarray
    f_eta: np.ndarray
    g_x: np.ndarray
    g_y: np.ndarray
    g_eta: np.ndarray
    a_eta: np.ndarray


@dataclass(frozen=True)
class _Setpoints:
    v_ref: np.ndarray
    p_ref: np.ndarray
    delta_ref: float
    load_v0: np.ndarray


@dataclass(frozen=True)
class SystemModel:
    """Full grid description; immutable.

    Derived quantities (index maps, the power flow and the equilibrium with
    controller setpoints) are computed on first use and cached.
    """

    buses: tuple
    branches: tuple
    machines: tuple = ()
    loads: tuple = ()
    wind_plants: tuple = ()
    noise: NoiseBank = field(default_factory=lambda: NoiseBank(()))
    base: Base = field(default_factory=Base)
    name: str = ""

    def __post_init__(self):
        for attr in ("buses", "branches", "machines", "loads", "wind_plants"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        self._validate()

    # -- validation --------------------------------------------------------

    def _validate(self):
        ids = [b.id for b in self.buses]
        if not ids:
            raise ModelError("model has no buses")
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate bus ids")
        slacks = [b.id for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise ModelError(
                f"exactly one slack bus required, found {len(slacks)}"
                + (f": {', '.join(slacks)}" if slacks else "")
            )
        known = set(ids)
        for group in (self.branches, self.machines, self.loads, self.wind_plants):
            dev_ids = [d.id for d in group]
            if len(set(dev_ids)) != len(dev_ids):
                raise ModelError(f"duplicate device ids: {sorted(dev_ids)}")
        for br in self.branches:
            for bid in (br.from_bus, br.to_bus):
                if bid not in known:
                    raise ModelError(f"branch {br.id}: unknown bus {bid!r}")
        for dev in (*self.machines, *self.loads, *self.wind_plants):
            if dev.bus not in known:
                raise ModelError(f"{type(dev).__name__.lower()} {dev.id}: unknown bus {dev.bus!r}")
        gen_buses = [m.bus for m in self.machines]
        if len(set(gen_buses)) != len(gen_buses):
            raise ModelError("at most one machine per bus is supported")
        kinds = {b.id: b.kind for b in self.buses}
        for m in self.machines:
            if kinds[m.bus] == "PQ":
                raise ModelError(f"machine {m.id} sits on PQ bus {m.bus}")
        tags = set(self.noise.tags)
        for ld in self.loads:
            for t in (ld.noise_p, ld.noise_q):
                if t is not None and t not in tags:
                    raise ModelError(f"load {ld.id}: unknown noise tag {t!r}")
        for w in self.wind_plants:
            if w.noise_w is not None and w.noise_w not in tags:
                raise ModelError(f"wind plant {w.id}: unknown noise tag {w.noise_w!r}")
        self._check_connected()

    def _check_connected(self):
        idx = {b.id: i for i, b in enumerate(self.buses)}
        adj = [[] for _ in self.buses]
        for br in self.branches:
            i, j = idx[br.from_bus], idx[br.to_bus]
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        if len(seen) != len(self.buses):
            lost = [self.buses[i].id for i in range(len(self.buses)) if i not in seen]
            raise ModelError(f"network is not connected; isolated buses: {', '.join(lost)}")

    # -- dimensions and names ---------------------------------------------

    @cached_property
    def bus_index(self):
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def slack_index(self):
        return next(i for i, b in enumerate(self.buses) if b.kind == "slack")

    @cached_property
    def ref_machine(self):
        slack_id = self.buses[self.slack_index].id
        for k, m in enumerate(self.machines):
            if m.bus == slack_id:
                return k
        raise ModelError("dynamic model needs a machine at the slack bus (angle reference)")

    @property
    def n(self):
        ng = len(self.machines)
        return (6 * ng - 1 if ng else 0) + len(self.wind_plants)

    @property
    def m(self):
        return 2 * len(self.buses) + 4 * len(self.machines) + len(self.wind_plants) + 4 * len(self.branches)

    @property
    def p(self):
        return len(self.noise)

    @cached_property
    def state_names(self):
        """``(name, class)`` for every differential state, in vector order."""
        out = []
        ref = self.ref_machine if self.machines else None
        out += [(f"delta[{m.id}]", "delta") for k, m in enumerate(self.machines) if k != ref]
        for cls in ("omega", "e_q", "e_d", "e_fd", "p_m"):
            out += [(f"{cls}[{m.id}]", cls) for m in self.machines]
        out += [(f"p_w[{w.id}]", "p_w") for w in self.wind_plants]
        return out

    @cached_property
    def algebraic_names(self):
        out = [(f"v[{b.id}]", "v") for b in self.buses]
        out += [(f"theta[{b.id}]", "theta") for b in self.buses]
        for cls in ("p_g", "q_g", "I_d", "I_q"):
            out += [(f"{cls}[{m.id}]", cls) for m in self.machines]
        out += [(f"p_e[{w.id}]", "p_e") for w in self.wind_plants]
        for cls in ("p_fr", "q_fr", "p_to", "q_to"):
            out += [(f"{cls}[{br.id}]", cls) for br in self.branches]
        return out

    @cached_property
    def noise_names(self):
        return [(f"eta[{t}]", "eta") for t in self.noise.tags]

    def with_noise(self, noise):
        return replace(self, noise=noise)

    # -- static data -------------------------------------------------------

    @cached_property
    def _static(self):
        return _Static(self)

    def ybus(self):
        nb = len(self.buses)
        y = np.zeros((nb, nb), dtype=complex)
        for br in self.branches:
            i, j = self.bus_index[br.from_bus], self.bus_index[br.to_bus]
            ys = 1.0 / complex(br.r, br.x)
            ytt = ys + 0.5j * br.b_sh
            y[i, i] += ytt / br.tap**2
            y[j, j] += ytt
            y[i, j] -= ys / br.tap
            y[j, i] -= ys / br.tap
        return y

    # -- cached analyses ---------------------------------------------------

    @cached_property
    def power_flow_result(self):
        return _power_flow(self)

    @cached_property
    def _init(self):
        return _initialize(self)

    @property
    def setpoints(self):
        return self._init[1]

    @property
    def equilibrium(self):
        return self._init[0]

    @cached_property
    def _compiled(self):
        return _Compiled(self, self.setpoints)

    # -- evaluation --------------------------------------------------------

    def evaluate(self, x, y, eta):
        """Return ``(f, g)`` for batched points of shape (B, n), (B, m), (B, p)."""
        return self._compiled.evaluate(x, y, eta)


def _pad_index(lists, pad):
    width = max([len(lst) for lst in lists] + [1])
    out = np.full((len(lists), width), pad, dtype=int)
    for i, lst in enumerate(lists):
        out[i, : len(lst)] = lst
    return out


class _Static:
    """Setpoint-independent parameter arrays."""

    def __init__(self, model):
        bi = model.bus_index
        ms, ls, ws, brs = model.machines, model.loads, model.wind_plants, model.branches
        self.nb, self.ng, self.nl, self.nw, self.nbr = len(model.buses), len(ms), len(ls), len(ws), len(brs)
        self.p = len(model.noise)
        self.omega_b = model.base.omega_b

        def arr(seq, attr):
            return np.array([getattr(d, attr) for d in seq], dtype=float)

        self.gen_bus = np.array([bi[m.bus] for m in ms], dtype=int)
        for attr in ("M", "D", "xd", "xq", "xd1", "xq1", "Td01", "Tq01", "Ka", "Ta", "R", "Tg"):
            setattr(self, attr, arr(ms, attr))

        self.load_bus = np.array([bi[ld.bus] for ld in ls], dtype=int)
        self.pL0, self.qL0, self.gamma = arr(ls, "p0"), arr(ls, "q0"), arr(ls, "gamma")
        tag_idx = {t: k for k, t in enumerate(model.noise.tags)}
        none = self.p  # index of the zero pad column
        self.lp_eta = np.array([tag_idx.get(ld.noise_p, none) for ld in ls], dtype=int)
        self.lq_eta = np.array([tag_idx.get(ld.noise_q, none) for ld in ls], dtype=int)

        self.w_bus = np.array([bi[w.bus] for w in ws], dtype=int)
        self.vw0 = arr(ws, "vw0")
        self.Tf = arr(ws, "T_f")
        self.q_set = arr(ws, "q_set")
        self.w_eta = np.array([tag_idx.get(w.noise_w, none) for w in ws], dtype=int)
        self.curves = [w.curve for w in ws]

        self.fb = np.array([bi[b.from_bus] for b in brs], dtype=int)
        self.tb = np.array([bi[b.to_bus] for b in brs], dtype=int)
        z2 = arr(brs, "r") ** 2 + arr(brs, "x") ** 2
        self.gs = arr(brs, "r") / z2
        self.bs = -arr(brs, "x") / z2
        self.bsh = arr(brs, "b_sh")
        self.tap = arr(brs, "tap")

        # bus balance: contributions laid out as
        # [gen (ng) | wind (nw) | load (nl) | from-ends (nbr) | to-ends (nbr) | 0]
        off_w = self.ng
        off_l = off_w + self.nw
        off_f = off_l + self.nl
        off_t = off_f + self.nbr
        self.n_contrib = off_t + self.nbr
        lists = [[] for _ in range(self.nb)]
        for k, b in enumerate(self.gen_bus):
            lists[b].append(k)
        for k, b in enumerate(self.w_bus):
            lists[b].append(off_w + k)
        for k, b in enumerate(self.load_bus):
            lists[b].append(off_l + k)
        for k in range(self.nbr):
            lists[self.fb[k]].append(off_f + k)
            lists[self.tb[k]].append(off_t + k)
        self.bal_idx = _pad_index(lists, self.n_contrib)

    def curve(self, vw):
        out = np.empty_like(vw)
        for k, c in enumerate(self.curves):
            out[..., k] = c(vw[..., k])
        return out

    def flows(self, v, th):
        vf, vt = v[..., self.fb], v[..., self.tb]
        d = th[..., self.fb] - th[..., self.tb]
        cs, sn = np.cos(d), np.sin(d)
        vv = vf * vt / self.tap
        bself = self.bs + 0.5 * self.bsh
        pfr = self.gs / self.tap**2 * vf * vf - vv * (self.gs * cs + self.bs * sn)
        qfr = -bself / self.tap**2 * vf * vf - vv * (self.gs * sn - self.bs * cs)
        pto = self.gs * vt * vt - vv * (self.gs * cs - self.bs * sn)
        qto = -bself * vt * vt + vv * (self.gs * sn + self.bs * cs)
        return pfr, qfr, pto, qto


class _Compiled:
    """Vectorized residual evaluation for a model with fixed setpoints."""

    def __init__(self, model, sp):
        self.s = s = model._static
        self.sp = sp
        self.n, self.m, self.p = model.n, model.m, model.p
        ng, nb, nw, nbr = s.ng, s.nb, s.nw, s.nbr
        self.ref = model.ref_machine if ng else 0
        self.nonref = np.array([k for k in range(ng) if k != self.ref], dtype=int)
        o = 0
        self.xs = {}
        for name, size in (("delta", max(ng - 1, 0)), ("omega", ng), ("e_q", ng), ("e_d", ng),
                           ("e_fd", ng), ("p_m", ng), ("p_w", nw)):
            self.xs[name] = slice(o, o + size)
            o += size
        o = 0
        self.ys = {}
        for name, size in (("v", nb), ("theta", nb), ("p_g", ng), ("q_g", ng), ("I_d", ng),
                           ("I_q", ng), ("p_e", nw), ("p_fr", nbr), ("q_fr", nbr),
                           ("p_to", nbr), ("q_to", nbr)):
            self.ys[name] = slice(o, o + size)
            o += size

    def evaluate(self, x, y, eta):
        s, sp, xs, ys = self.s, self.sp, self.xs, self.ys
        bsz = x.shape[0]
        eta_pad = np.concatenate([eta, np.zeros((bsz, 1))], axis=1)

        omega = x[:, xs["omega"]]
        eq, ed = x[:, xs["e_q"]], x[:, xs["e_d"]]
        efd, pm, pw = x[:, xs["e_fd"]], x[:, xs["p_m"]], x[:, xs["p_w"]]
        v, th = y[:, ys["v"]], y[:, ys["theta"]]
        pg, qg = y[:, ys["p_g"]], y[:, ys["q_g"]]
        i_d, i_q = y[:, ys["I_d"]], y[:, ys["I_q"]]
        pe = y[:, ys["p_e"]]

        delta = np.empty((bsz, s.ng))
        delta[:, self.nonref] = x[:, xs["delta"]]
        delta[:, self.ref] = sp.delta_ref
        vg, thg = v[:, s.gen_bus], th[:, s.gen_bus]
        ang = delta - thg
        vd, vq = vg * np.sin(ang), vg * np.cos(ang)

        dw = omega - 1.0
        f = np.empty((bsz, self.n))
        f[:, xs["delta"]] = s.omega_b * (omega[:, self.nonref] - omega[:, [self.ref]])
        f[:, xs["omega"]] = (pm - pg - s.D * dw) / s.M
        f[:, xs["e_q"]] = (-eq - (s.xd - s.xd1) * i_d + efd) / s.Td01
        f[:, xs["e_d"]] = (-ed + (s.xq - s.xq1) * i_q) / s.Tq01
        f[:, xs["e_fd"]] = (s.Ka * (sp.v_ref - vg) - efd) / s.Ta
        f[:, xs["p_m"]] = (sp.p_ref - dw / s.R - pm) / s.Tg
        f[:, xs["p_w"]] = (s.curve(s.vw0 + eta_pad[:, s.w_eta]) - pw) / s.Tf

        scale = (v[:, s.load_bus] / sp.load_v0) ** s.gamma
        pl = (s.pL0 + eta_pad[:, s.lp_eta]) * scale
        ql = (s.qL0 + eta_pad[:, s.lq_eta]) * scale
        pfr_c, qfr_c, pto_c, qto_c = s.flows(v, th)
        pfr, qfr = y[:, ys["p_fr"]], y[:, ys["q_fr"]]
        pto, qto = y[:, ys["p_to"]], y[:, ys["q_to"]]

        zero = np.zeros((bsz, 1))
        pc = np.concatenate([pg, pe, -pl, -pfr, -pto, zero], axis=1)
        qc = np.concatenate([qg, np.broadcast_to(s.q_set, (bsz, s.nw)), -ql, -qfr, -qto, zero], axis=1)
        nb = s.nb
        g = np.empty((bsz, self.m))
        g[:, :nb] = pc[:, s.bal_idx].sum(axis=-1)
        g[:, nb : 2 * nb] = qc[:, s.bal_idx].sum(axis=-1)
        g[:, ys["p_g"]] = pg - (vd * i_d + vq * i_q)
        g[:, ys["q_g"]] = qg - (vq * i_d - vd * i_q)
        g[:, ys["I_d"]] = eq - vq - s.xd1 * i_d
        g[:, ys["I_q"]] = ed - vd + s.xq1 * i_q
        g[:, ys["p_e"]] = pe - pw
        g[:, ys["p_fr"]] = pfr - pfr_c
        g[:, ys["q_fr"]] = qfr - qfr_c
        g[:, ys["p_to"]] = pto - pto_c
        g[:, ys["q_to"]] = qto - qto_c
        return f, g


# ---------------------------------------------------------------------------
# power flow


def _spec_injections(model):
    s = model._static
    nb = s.nb
    p = np.zeros(nb)
    q = np.zeros(nb)
    for m in model.machines:
        p[model.bus_index[m.bus]] += m.p0
    mu = model.noise.means
    for k, w in enumerate(model.wind_plants):
        eta_w = mu[s.w_eta[k]] if s.w_eta[k] < s.p else 0.0
        b = model.bus_index[w.bus]
        p[b] += float(w.curve(w.vw0 + eta_w))
        q[b] += w.q_set
    for ld in model.loads:
        b = model.bus_index[ld.bus]
        eta_p = mu[model.noise.index(ld.noise_p)] if ld.noise_p else 0.0
        eta_q = mu[model.noise.index(ld.noise_q)] if ld.noise_q else 0.0
        p[b] -= ld.p0 + eta_p
        q[b] -= ld.q0 + eta_q
    return p, q


def _power_flow(model, max_iter=PF_MAX_ITER, tol=PF_TOL):
    ybus = model.ybus()
    kinds = np.array([b.kind for b in model.buses])
    pv = np.flatnonzero(kinds == "PV")
    pq = np.flatnonzero(kinds == "PQ")
    pvpq = np.concatenate([pv, pq])
    p_spec, q_spec = _spec_injections(model)
    vm = np.array([b.v0 for b in model.buses], dtype=float)
    va = np.array([b.theta0 for b in model.buses], dtype=float)
    ids = tuple(b.id for b in model.buses)

    def mismatch(vm, va):
        vc = vm * np.exp(1j * va)
        s = vc * np.conj(ybus @ vc)
        return s, np.concatenate([s.real[pvpq] - p_spec[pvpq], s.imag[pq] - q_spec[pq]])

    s, mis = mismatch(vm, va)
    it = 0
    while np.abs(mis).max(initial=0.0) >= tol:
        if it >= max_iter:
            k = int(np.argmax(np.abs(mis)))
            bus = ids[pvpq[k]] if k < pvpq.size else ids[pq[k - pvpq.size]]
            raise NoConvergence(
                f"power flow did not converge in {max_iter} iterations; "
                f"worst mismatch {np.abs(mis).max():.3e} at bus {bus}"
            )
        vc = vm * np.exp(1j * va)
        ibus = ybus @ vc
        dva = 1j * np.diag(vc) @ np.conj(np.diag(ibus) - ybus @ np.diag(vc))
        dvm = np.diag(vc) @ np.conj(ybus @ np.diag(vc / vm)) + np.conj(np.diag(ibus)) @ np.diag(vc / vm)
        jac = np.block([
            [dva.real[np.ix_(pvpq, pvpq)], dvm.real[np.ix_(pvpq, pq)]],
            [dva.imag[np.ix_(pq, pvpq)], dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = densela.lu_solve(jac, -mis)
        except SingularMatrix as exc:
            raise NoConvergence(f"singular power-flow Jacobian: {exc}") from exc
        va[pvpq] += dx[: pvpq.size]
        vm[pq] += dx[pvpq.size :]
        it += 1
        s, mis = mismatch(vm, va)

    full = np.zeros(len(ids))
    full[pvpq] = np.abs(s.real[pvpq] - p_spec[pvpq])
    full[pq] = np.maximum(full[pq], np.abs(s.imag[pq] - q_spec[pq]))
    return PowerFlowResult(
        v=vm, theta=va, p_inj=s.real.copy(), q_inj=s.imag.copy(), mismatch=full,
        iterations=it, bus_ids=ids,
    )


def power_flow(model):
    """Newton-Raphson power flow in polar coordinates (cached on the model)."""
    return model.power_flow_result


# ---------------------------------------------------------------------------
# equilibrium


def machine_internal_angle(v, theta, p, q, xq):
    """Rotor angle placing ``V + j xq I`` on the q axis (zero stator resistance)."""
    return theta + np.arctan2(xq * p, v * v + xq * q)


def _initialize(model):
    if not model.machines:
        raise ModelError("dynamic model needs at least one machine")
    pf = model.power_flow_result
    s = model._static
    ng = s.ng
    v, th = pf.v, pf.theta
    mu = model.noise.means
    eta0 = mu.copy()
    eta_pad = np.append(eta0, 0.0)

    # generator injections = bus injection + local load - local wind
    p_bus, q_bus = pf.p_inj.copy(), pf.q_inj.copy()
    for k, ld in enumerate(model.loads):
        b = s.load_bus[k]
        p_bus[b] += ld.p0 + eta_pad[s.lp_eta[k]]
        q_bus[b] += ld.q0 + eta_pad[s.lq_eta[k]]
    pw0 = s.curve((s.vw0 + eta_pad[s.w_eta])[None, :])[0] if s.nw else np.zeros(0)
    for k in range(s.nw):
        p_bus[s.w_bus[k]] -= pw0[k]
        q_bus[s.w_bus[k]] -= s.q_set[k]

    pg = p_bus[s.gen_bus]
    qg = q_bus[s.gen_bus]
    vg, thg = v[s.gen_bus], th[s.gen_bus]
    delta = machine_internal_angle(vg, thg, pg, qg, s.xq)
    cur = np.conj((pg + 1j * qg) / (vg * np.exp(1j * thg)))
    rot = np.exp(-1j * (delta - np.pi / 2))
    idq = cur * rot
    i_d, i_q = idq.real, idq.imag
    vdq = vg * np.exp(1j * thg) * rot
    vd, vq = vdq.real, vdq.imag
    eq = vq + s.xd1 * i_d
    ed = vd - s.xq1 * i_q
    efd = eq + (s.xd - s.xd1) * i_d
    for k, m in enumerate(model.machines):
        if not efd[k] > 0:
            raise InitializationInfeasible(
                f"machine {m.id}: required field voltage {efd[k]:.4g} is not positive; "
                "AVR setpoint unreachable"
            )
        if not np.cos(delta[k] - thg[k]) > 0:
            raise InitializationInfeasible(f"machine {m.id}: load angle beyond 90 degrees")
    v_ref = vg + efd / s.Ka
    ref = model.ref_machine
    sp = _Setpoints(
        v_ref=v_ref, p_ref=pg.copy(), delta_ref=float(delta[ref]),
        load_v0=v[s.load_bus].copy() if s.nl else np.zeros(0),
    )

    nonref = [k for k in range(ng) if k != ref]
    x0 = np.concatenate([delta[nonref], np.ones(ng), eq, ed, efd, pg.copy(), pw0])
    pfr, qfr, pto, qto = s.flows(v, th)
    y0 = np.concatenate([v, th, pg, qg, i_d, i_q, pw0, pfr, qfr, pto, qto])

    comp = _Compiled(model, sp)
    f, g = comp.evaluate(x0[None], y0[None], eta0[None])
    res = max(np.abs(f).max(initial=0.0), np.abs(g).max(initial=0.0))
    if res >= EQ_TOL:
        x0, y0, res = _polish(comp, x0, y0, eta0)
    if res >= EQ_TOL:
        raise InitializationInfeasible(f"equilibrium residual {res:.3e} exceeds {EQ_TOL:g}")
    return Equilibrium(x=x0, y=y0, eta=eta0, power_flow=pf), sp


def _polish(comp, x, y, eta, iters=10):
    n = x.size
    z = np.concatenate([x, y])
    res = np.inf

    def fun(pts):
        etas = np.broadcast_to(eta, (pts.shape[0], eta.size))
        return np.concatenate(comp.evaluate(pts[:, :n], pts[:, n:], etas), axis=1)

    for _ in range(iters):
        jac = _fd_jacobian(fun, z)
        f, g = comp.evaluate(z[None, :n], z[None, n:], eta[None])
        r = np.concatenate([f[0], g[0]])
        res = np.abs(r).max()
        if res < 1e-12:
            break
        z = z - densela.lu_solve(jac, r)
    return z[:n], z[n:], res


def initialize_equilibrium(model):
    """Equilibrium ``(x_o, y_o, eta_o)`` with ``f = 0``, ``g = 0``, ``a(eta_o) = 0``."""
    return model.equilibrium


# ---------------------------------------------------------------------------
# residuals and Jacobians


def _as_batch(a, size):
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != size:
        raise ValueError(f"expected trailing dimension {size}, got shape {a.shape}")
    return a.reshape(1, size) if a.ndim == 1 else a


def residual_f(model, x, y, eta):
    """Right-hand side of the differential equations, ``x' = f(x, y, eta)``."""
    single = np.ndim(x) == 1
    f, _ = model.evaluate(_as_batch(x, model.n), _as_batch(y, model.m), _as_batch(eta, model.p))
    return f[0] if single else f


def residual_g(model, x, y, eta):
    """Algebraic residuals ``g(x, y, eta)``."""
    single = np.ndim(x) == 1
    _, g = model.evaluate(_as_batch(x, model.n), _as_batch(y, model.m), _as_batch(eta, model.p))
    return g[0] if single else g


def fd_steps(z):
    return np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(z))


def _fd_jacobian(fun, z, steps=None):
    """Central-difference Jacobian of a batched function at point ``z``."""
    d = z.size
    hs = fd_steps(z) if steps is None else steps
    pts = np.repeat(z[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    pts[idx, idx] += hs
    pts[d + idx, idx] -= hs
    vals = fun(pts)
    return ((vals[:d] - vals[d:]) / (2.0 * hs)[:, None]).T


def jacobians(model, x, y, eta, step_scale=1.0):
    """Central finite-difference Jacobians at ``(x, y, eta)``.

    Each variable is perturbed by ``step_scale * sqrt(eps) * max(1, |z_i|)``.
    ``a_eta`` is the exact drift derivative ``diag(-alpha)``.
    """
    n, m, p = model.n, model.m, model.p
    z = np.concatenate([np.asarray(x, float), np.asarray(y, float), np.asarray(eta, float)])

    def fun(pts):
        f, g = model.evaluate(pts[:, :n], pts[:, n : n + m], pts[:, n + m :])
        return np.concatenate([f, g], axis=1)

    jac = _fd_jacobian(fun, z, step_scale * fd_steps(z))
    fj, gj = jac[:n], jac[n:]
    return Jacobians(
        f_x=fj[:, :n], f_y=fj[:, n : n + m], f_eta=fj[:, n + m :],
        g_x=gj[:, :n], g_y=gj[:, n : n + m], g_eta=gj[:, n + m :],
        a_eta=np.diag(-model.noise.alphas) if p else np.zeros((0, 0)),
    )


def dae_jacobian(model, x, y, eta):
    """FD Jacobian of ``[f; g]`` with respect to ``(x, y)`` (eta held fixed)."""
    n = model.n
    z = np.concatenate([x, y])
    eta = np.asarray(eta, dtype=float)

    def fun(pts):
        f, g = model.evaluate(pts[:, :n], pts[:, n:], np.broadcast_to(eta, (pts.shape[0], eta.size)))
        return np.concatenate([f, g], axis=1)

    return _fd_jacobian(fun, z)
