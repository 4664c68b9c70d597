"""JSON system-description files.

A file holds ``buses``, ``branches``, ``machines``, ``loads``,
``wind_plants``, ``noise`` and ``base`` sections. OU noise entries accept
either a diffusion ``b`` or a stationary standard deviation ``sigma``
(converted with ``b = sigma sqrt(2 alpha)``); serialization always writes
``b`` so that parse/serialize/parse is exact.
"""

import json
from importlib import resources
from pathlib import Path

import jsonschema

from sdaevar.exceptions import ModelError
from sdaevar.grid import Base, Branch, Bus, Load, Machine, PowerCurve, SystemModel, WindPlant
from sdaevar.stochastic import NoiseBank, OuSpec, WeibullSpec, ou_from_sigma

_NUM = {"type": "number"}
_ID = {"type": "string", "minLength": 1}

SCHEMA = {
    "type": "object",
    "required": ["buses", "branches"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "base": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"frequency": _NUM, "mva": _NUM},
        },
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "kind"],
                "additionalProperties": False,
                "properties": {
                    "id": _ID,
                    "kind": {"enum": ["slack", "PV", "PQ"]},
                    "v0": _NUM,
                    "theta0": _NUM,
                },
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "x"],
                "additionalProperties": False,
                "properties": {
                    "id": _ID, "from": _ID, "to": _ID,
                    "r": _NUM, "x": _NUM, "b_sh": _NUM, "tap": _NUM,
                },
            },
        },
        "machines": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["bus", "M", "D", "xd", "xq", "xd1", "xq1", "Td01", "Tq01",
                             "Ka", "Ta", "R", "Tg"],
                "additionalProperties": False,
                "properties": {
                    "id": _ID, "bus": _ID, "p0": _NUM,
                    **{k: _NUM for k in ("M", "D", "xd", "xq", "xd1", "xq1", "Td01",
                                         "Tq01", "Ka", "Ta", "R", "Tg")},
                },
            },
        },
        "loads": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["bus", "p0", "q0"],
                "additionalProperties": False,
                "properties": {
                    "id": _ID, "bus": _ID, "p0": _NUM, "q0": _NUM, "gamma": _NUM,
                    "noise_p": {"type": ["string", "null"]},
                    "noise_q": {"type": ["string", "null"]},
                },
            },
        },
        "wind_plants": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["bus", "vw0", "curve"],
                "additionalProperties": False,
                "properties": {
                    "id": _ID, "bus": _ID, "vw0": _NUM, "T_f": _NUM, "q_set": _NUM,
                    "noise_w": {"type": ["string", "null"]},
                    "curve": {
                        "type": "object",
                        "required": ["rated_power"],
                        "additionalProperties": False,
                        "properties": {
                            "rated_power": _NUM, "cut_in": _NUM,
                            "rated_speed": _NUM, "cut_out": _NUM,
                        },
                    },
                },
            },
        },
        "noise": {
            "type": "array",
            "items": {
                "oneOf": [
                    {
                        "type": "object",
                        "required": ["tag", "kind", "alpha"],
                        "additionalProperties": False,
                        "properties": {
                            "tag": _ID, "kind": {"const": "ou"}, "alpha": _NUM,
                            "mu": _NUM, "b": _NUM, "sigma": _NUM,
                        },
                        "oneOf": [{"required": ["b"]}, {"required": ["sigma"]}],
                    },
                    {
                        "type": "object",
                        "required": ["tag", "kind", "alpha", "kappa", "lambda"],
                        "additionalProperties": False,
                        "properties": {
                            "tag": _ID, "kind": {"const": "weibull"}, "alpha": _NUM,
                            "kappa": _NUM, "lambda": _NUM,
                        },
                    },
                ]
            },
        },
    },
}


def _noise_from_dict(d):
    if d["kind"] == "ou":
        if "sigma" in d:
            return ou_from_sigma(d["alpha"], d.get("mu", 0.0), d["sigma"])
        return OuSpec(alpha=float(d["alpha"]), mu=float(d.get("mu", 0.0)), b=float(d["b"]))
    return WeibullSpec(alpha=float(d["alpha"]), kappa=float(d["kappa"]), lam=float(d["lambda"]))


def model_from_dict(data):
    """Build a :class:`SystemModel` from a parsed JSON document."""
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ModelError(f"schema violation at {where}: {exc.message}") from None
    try:
        noise = NoiseBank(
            tuple((n["tag"], _noise_from_dict(n)) for n in data.get("noise", [])),
            rng_root_seed=int(data.get("seed", 0)),
        )
        buses = [Bus(id=b["id"], kind=b["kind"], v0=float(b.get("v0", 1.0)),
                     theta0=float(b.get("theta0", 0.0))) for b in data["buses"]]
        branches = [
            Branch(from_bus=b["from"], to_bus=b["to"], r=float(b.get("r", 0.0)), x=float(b["x"]),
                   b_sh=float(b.get("b_sh", 0.0)), tap=float(b.get("tap", 1.0)), id=b.get("id", ""))
            for b in data["branches"]
        ]
        machines = [
            Machine(**{k: (float(v) if isinstance(v, (int, float)) else v) for k, v in m.items()})
            for m in data.get("machines", [])
        ]
        loads = [
            Load(bus=ld["bus"], p0=float(ld["p0"]), q0=float(ld["q0"]),
                 gamma=float(ld.get("gamma", 2.0)), noise_p=ld.get("noise_p"),
                 noise_q=ld.get("noise_q"), id=ld.get("id", ""))
            for ld in data.get("loads", [])
        ]
        winds = [
            WindPlant(bus=w["bus"], vw0=float(w["vw0"]), noise_w=w.get("noise_w"),
                      curve=PowerCurve(**{k: float(v) for k, v in w["curve"].items()}),
                      T_f=float(w.get("T_f", 1.0)), q_set=float(w.get("q_set", 0.0)),
                      id=w.get("id", ""))
            for w in data.get("wind_plants", [])
        ]
        base = Base(**{k: float(v) for k, v in data.get("base", {}).items()})
    except ModelError:
        raise
    except (ValueError, TypeError) as exc:
        raise ModelError(str(exc)) from None
    return SystemModel(buses=buses, branches=branches, machines=machines, loads=loads,
                       wind_plants=winds, noise=noise, base=base, name=data.get("name", ""))


def model_to_dict(model):
    noise = []
    for tag, s in model.noise.processes:
        if s.kind == "ou":
            noise.append({"tag": tag, "kind": "ou", "alpha": s.alpha, "mu": s.mu, "b": s.b})
        else:
            noise.append({"tag": tag, "kind": "weibull", "alpha": s.alpha,
                          "kappa": s.kappa, "lambda": s.lam})
    machine_keys = ("id", "bus", "M", "D", "xd", "xq", "xd1", "xq1", "Td01", "Tq01",
                    "Ka", "Ta", "R", "Tg", "p0")
    return {
        "name": model.name,
        "seed": model.noise.rng_root_seed,
        "base": {"frequency": model.base.frequency, "mva": model.base.mva},
        "buses": [{"id": b.id, "kind": b.kind, "v0": b.v0, "theta0": b.theta0} for b in model.buses],
        "branches": [{"id": b.id, "from": b.from_bus, "to": b.to_bus, "r": b.r, "x": b.x,
                      "b_sh": b.b_sh, "tap": b.tap} for b in model.branches],
        "machines": [{k: getattr(m, k) for k in machine_keys} for m in model.machines],
        "loads": [{"id": ld.id, "bus": ld.bus, "p0": ld.p0, "q0": ld.q0, "gamma": ld.gamma,
                   "noise_p": ld.noise_p, "noise_q": ld.noise_q} for ld in model.loads],
        "wind_plants": [
            {"id": w.id, "bus": w.bus, "vw0": w.vw0, "noise_w": w.noise_w, "T_f": w.T_f,
             "q_set": w.q_set,
             "curve": {"rated_power": w.curve.rated_power, "cut_in": w.curve.cut_in,
                       "rated_speed": w.curve.rated_speed, "cut_out": w.curve.cut_out}}
            for w in model.wind_plants
        ],
        "noise": noise,
    }


def loads_model(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return model_from_dict(data)


def load_model(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelError(f"cannot read {path}: {exc.strerror}") from None
    return loads_model(text)


def dumps_model(model):
    return json.dumps(model_to_dict(model), indent=2)


def save_model(model, path):
    Path(path).write_text(dumps_model(model) + "\n")


BUNDLED = {"micro3": "micro3.json", "wscc9": "wscc9.json"}


def bundled_path(name):
    """Filesystem path of a bundled reference model (``micro3`` or ``wscc9``)."""
    return resources.files("sdaevar") / "data" / BUNDLED[name]


def load_bundled(name):
    return loads_model(bundled_path(name).read_text())
