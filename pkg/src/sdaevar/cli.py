"""Command-line front end.

Subcommands ``pf``, ``lem``, ``mc``, ``compare`` and ``convergence`` write
CSV tables plus a ``run_manifest.json`` into ``--out``. Exit codes: 0 ok,
1 input error, 2 power flow, 3 LEM, 4 Monte Carlo, 5 compare.
"""

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from sdaevar import __version__, lem, mc
from sdaevar.exceptions import (
    EmptyInput,
    EnsembleFailure,
    InitializationInfeasible,
    InvalidParameter,
    MismatchedVariables,
    ModelError,
    NewtonDivergence,
    NoConvergence,
    NotHurwitz,
    SdaeVarError,
    SingularMatrix,
)
from sdaevar.io import BUNDLED, load_bundled, load_model

EXIT_OK, EXIT_INPUT, EXIT_PF, EXIT_LEM, EXIT_MC, EXIT_COMPARE = range(6)


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1), not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _Fail(EXIT_INPUT, f"{self.prog}: {message}")


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def write_manifest(out, data):
    path = Path(out) / "run_manifest.json"
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------


def _load(args):
    src = args.model
    path = Path(src)
    if not path.exists() and src in BUNDLED:
        model = load_bundled(src)
    elif not path.exists():
        raise _Fail(EXIT_INPUT, f"model file not found: {src}")
    else:
        model = load_model(path)
    if args.sigma_scale != 1.0:
        model = model.with_noise(model.noise.scaled(args.sigma_scale))
    return model


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base_manifest(args, model, command):
    return {
        "command": command,
        "model": str(args.model),
        "model_name": model.name,
        "sigma_scale": args.sigma_scale,
        "version": __version__,
    }


def cmd_pf(args):
    model = _load(args)
    out = _out(args)
    t0 = time.perf_counter()
    try:
        pf = model.power_flow_result
    except NoConvergence as exc:
        raise _Fail(EXIT_PF, str(exc)) from None
    wall = time.perf_counter() - t0
    rows = zip(pf.bus_ids, pf.v, pf.theta, pf.p_inj, pf.q_inj, np.abs(pf.mismatch))
    write_csv(out / "pf.csv", ["bus", "v", "theta", "p_inj", "q_inj", "mismatch"], rows)
    man = _base_manifest(args, model, "pf")
    man.update(wall_clock_s=wall, iterations=pf.iterations, max_mismatch=pf.max_mismatch)
    write_manifest(out, man)
    return EXIT_OK


def _lem_report(model):
    try:
        model.equilibrium
    except NoConvergence as exc:
        raise _Fail(EXIT_PF, str(exc)) from None
    except InitializationInfeasible as exc:
        raise _Fail(EXIT_LEM, str(exc)) from None
    try:
        return lem.analyze(model)
    except NotHurwitz as exc:
        lines = [str(exc), "eigenvalues with non-negative real part:"]
        lines += [f"  {z.real:.6g}{z.imag:+.6g}j" for z in exc.eigenvalues if z.real >= 0]
        raise _Fail(EXIT_LEM, "\n".join(lines)) from None
    except SingularMatrix as exc:
        raise _Fail(EXIT_LEM, str(exc)) from None


def cmd_lem(args):
    model = _load(args)
    out = _out(args)
    t0 = time.perf_counter()
    rep = _lem_report(model)
    wall = time.perf_counter() - t0
    rows = rep.sigma_table()
    ns = len(rep.state_names)
    header = ["variable", "class", "sigma", "degenerate"]
    write_csv(out / "sigma_states.csv", header, rows[:ns])
    write_csv(out / "sigma_algebraics.csv", header, rows[ns:])
    if args.dump_cov:
        sn = [nm for nm, _ in rep.state_names]
        an = [nm for nm, _ in rep.algebraic_names]
        write_csv(out / "cov_C.csv", ["variable"] + sn, ([nm] + list(r) for nm, r in zip(sn, rep.C)))
        write_csv(out / "cov_K.csv", ["variable"] + an, ([nm] + list(r) for nm, r in zip(an, rep.K)))
    man = _base_manifest(args, model, "lem")
    d = rep.diagnostics
    man.update(
        wall_clock_s=wall,
        spectral_abscissa=d["spectral_abscissa"],
        rcond=d["lyapunov_rcond"],
        lyapunov_residual=d["lyapunov_residual"],
        gy_rcond=d["gy_rcond"],
        dimensions={"n": model.n, "m": model.m, "p": model.p},
        degenerate=list(rep.degenerate_states) + list(rep.degenerate_algebraics),
    )
    write_manifest(out, man)
    return EXIT_OK


def _mc_config(args, noise, default_n):
    return mc.McConfig(
        n_realizations=args.n if args.n is not None else default_n,
        t_f=args.tf,
        dt=args.dt,
        root_seed=args.seed if args.seed is not None else noise.rng_root_seed,
    )


def _sigma_tables(out, conv, classes):
    names = conv["names"]
    rows = []
    for k, t in enumerate(conv["times"]):
        rows.extend((nm, cl, t, conv["sigma_vs_t"][k, j]) for j, (nm, cl) in enumerate(zip(names, classes)))
    write_csv(out / "sigma_vs_t.csv", ["variable", "class", "t", "sigma"], rows)
    rows = []
    for k, nv in enumerate(conv["n_values"]):
        rows.extend((nm, cl, nv, conv["sigma_vs_N"][k, j]) for j, (nm, cl) in enumerate(zip(names, classes)))
    write_csv(out / "sigma_vs_N.csv", ["variable", "class", "N", "sigma"], rows)


def cmd_mc(args):
    model = _load(args)
    out = _out(args)
    t0 = time.perf_counter()
    try:
        model.equilibrium
    except NoConvergence as exc:
        raise _Fail(EXIT_PF, str(exc)) from None
    except InitializationInfeasible as exc:
        raise _Fail(EXIT_MC, str(exc)) from None
    cfg = _mc_config(args, model.noise, 1000)
    try:
        res = mc.run_ensemble(model, cfg, workers=args.workers)
    except (EnsembleFailure, NewtonDivergence) as exc:
        raise _Fail(EXIT_MC, str(exc)) from None
    wall = time.perf_counter() - t0
    sig = res.sigma
    write_csv(out / "mc_sigma_final.csv", ["variable", "class", "sigma_mc", "N"],
              ((nm, cl, s, res.n_completed) for nm, cl, s in zip(res.names, res.classes, sig)))
    _sigma_tables(out, mc.sigma_convergence(res), res.classes)
    man = _base_manifest(args, model, "mc")
    man.update(
        wall_clock_s=wall, seed=res.seed, N=res.n_requested, N_completed=res.n_completed,
        t_f=res.t_f, dt=res.dt, cpu_time_per_realization_s=res.cpu_time_per_realization,
        failures=[list(f) for f in res.failures], warnings=res.warnings,
        workers=mc._worker_count(args.workers),
    )
    write_manifest(out, man)
    return EXIT_OK


def _read_lem(path):
    rows = []
    for fname in ("sigma_states.csv", "sigma_algebraics.csv"):
        rows += read_csv(Path(path) / fname)
    return {r["variable"]: (r["class"], float(r["sigma"]), r["degenerate"] == "true") for r in rows}


def cmd_compare(args):
    lem_dir = Path(args.lem_dir or args.out)
    mc_dir = Path(args.mc_dir or args.out)
    out = _out(args)
    t0 = time.perf_counter()
    try:
        lem_tab = _read_lem(lem_dir)
        mc_rows = read_csv(mc_dir / "mc_sigma_final.csv")
    except (OSError, KeyError, ValueError) as exc:
        raise _Fail(EXIT_COMPARE, f"cannot read result tables: {exc}") from None
    mc_names = [r["variable"] for r in mc_rows]
    missing = sorted(set(mc_names) ^ set(lem_tab))
    try:
        if missing:
            raise MismatchedVariables(f"variable tables differ: {', '.join(missing[:10])}")
        classes = [r["class"] for r in mc_rows]
        rep = mc.closeness(
            [float(r["sigma_mc"]) for r in mc_rows],
            [lem_tab[nm][1] for nm in mc_names],
            names=mc_names, classes=classes,
            degenerate=[lem_tab[nm][2] for nm in mc_names],
        )
    except (MismatchedVariables, EmptyInput) as exc:
        raise _Fail(EXIT_COMPARE, str(exc)) from None
    write_csv(out / "epsilon_sigma.csv",
              ["variable", "class", "sigma_mc", "sigma_lem", "epsilon_pct", "flags"], rep.rows())
    write_csv(out / "epsilon_boxplot.csv", ["class", "median", "p5", "p95", "n_outliers"],
              ((cl, b["median"], b["p5"], b["p95"], len(b["outliers"])) for cl, b in rep.boxplots.items()))
    eps = rep.epsilon[rep.comparable()]
    man = {
        "command": "compare", "lem_dir": str(lem_dir), "mc_dir": str(mc_dir),
        "wall_clock_s": time.perf_counter() - t0, "version": __version__,
        "max_abs_epsilon_pct": float(np.abs(eps).max()) if eps.size else 0.0,
        "flagged": {nm: fl for nm, fl in zip(rep.names, rep.flags) if fl},
    }
    write_manifest(out, man)
    return EXIT_OK


def cmd_convergence(args):
    model = _load(args)
    out = _out(args)
    noise = model.noise
    if len(noise) == 0:
        raise _Fail(EXIT_INPUT, "model has no noise processes")
    t0 = time.perf_counter()
    cfg = _mc_config(args, noise, 5000)
    res = mc.run_noise_ensemble(noise, cfg, workers=args.workers)
    wall = time.perf_counter() - t0
    conv = mc.sigma_convergence(res)
    _sigma_tables(out, conv, res.classes)
    rows = []
    for j, (tag, spec) in enumerate(noise.processes):
        for k, t in enumerate(conv["times"]):
            ref = spec.sigma * math.sqrt(-math.expm1(-2.0 * spec.alpha * t)) if spec.kind == "ou" else math.nan
            rows.append((res.names[j], t, conv["sigma_vs_t"][k, j], ref))
    write_csv(out / "sigma_vs_t_reference.csv", ["variable", "t", "sigma_mc", "sigma_ou_analytic"], rows)
    man = _base_manifest(args, model, "convergence")
    man.update(wall_clock_s=wall, seed=res.seed, N=res.n_requested, t_f=res.t_f, dt=res.dt,
               heuristic_tf=mc.heuristic_tf(noise),
               cpu_time_per_realization_s=res.cpu_time_per_realization)
    write_manifest(out, man)
    return EXIT_OK


COMMANDS = {"pf": cmd_pf, "lem": cmd_lem, "mc": cmd_mc, "compare": cmd_compare,
            "convergence": cmd_convergence}


def build_parser():
    p = _Parser(prog="sdaevar", description="Stationary variances of stochastic power-grid DAEs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (("pf", "power flow"), ("lem", "Lyapunov-equation variances"),
                           ("mc", "Monte Carlo ensemble"), ("compare", "MC vs LEM closeness"),
                           ("convergence", "noise-only sigma vs t and N")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--out", default=".", help="output directory")
        if name == "compare":
            s.add_argument("--lem-dir", help="directory with LEM tables (default: --out)")
            s.add_argument("--mc-dir", help="directory with MC tables (default: --out)")
            continue
        s.add_argument("--model", default="wscc9",
                       help="system file, or a bundled name (micro3, wscc9)")
        s.add_argument("--sigma-scale", type=float, default=1.0,
                       help="multiplier on all OU noise standard deviations")
        if name == "lem":
            s.add_argument("--dump-cov", action="store_true", help="write full C and K")
        if name in ("mc", "convergence"):
            s.add_argument("--seed", type=int, help="root seed (default: from the model file)")
            s.add_argument("--n", type=int, help="number of realizations")
            s.add_argument("--tf", type=float, help="final time in s (default: 2/min alpha)")
            s.add_argument("--dt", type=float, default=0.01, help="time step in s")
            s.add_argument("--workers", type=int,
                           help=f"worker processes (default: ${mc.WORKERS_ENV} or 1)")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except _Fail as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except (ModelError, InvalidParameter) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SdaeVarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
