"""Command-line front end: specs -> averaging -> analysis -> simulation artifacts.

Exit codes: 0 success, 2 invalid input (bad spec, unknown preset, constraint
violation), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
import tempfile

import numpy as np

from . import __version__
from . import analysis as an
from .averaging import AveragingError, average_first, average_second
from .sde import (DriftTarget, LockingTarget, SimConfig, SimulationError, ensemble, simulate,
                  terminal_fraction)
from .sde.metrics import WindowError
from .sysdef import presets
from .sysdef.envelope import EnvelopeDomainError
from .sysdef.parser import ParseError
from .sysdef.system import CartesianSpec, ValidationError, cartesian_to_polar, load_spec

log = logging.getLogger("isores")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
CSV_ROWS = 5000


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- serialization
_FMARK = re.compile(r'"@@F:([^@]*)@@"')


def _fmt(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return "%.17g" % x


def _prep(obj):
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return "@@F:" + _fmt(float(obj)) + "@@"
    if isinstance(obj, complex):
        return {"re": _prep(obj.real), "im": _prep(obj.imag)}
    if isinstance(obj, dict):
        return {str(k): _prep(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_prep(v) for v in obj]
    if hasattr(obj, "to_json"):
        return _prep(obj.to_json())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON with sorted keys and floats at 17 significant digits."""
    text = json.dumps(_prep(obj), sort_keys=True, indent=2, ensure_ascii=False)
    return _FMARK.sub(lambda m: m.group(1).replace('\\"', '"'), text) + "\n"


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows, provenance=None) -> str:
    lines = []
    if provenance is not None:
        compact = json.dumps(_prep(provenance), sort_keys=True, ensure_ascii=False)
        lines.append("# " + _FMARK.sub(lambda m: m.group(1), compact))
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(float(v)).strip('"') if not isinstance(v, str) else v
                              for v in row))
    return "\n".join(lines) + "\n"


def provenance(args, extra=None) -> dict:
    # settings that cannot change the numbers are left out so reruns stay byte-identical
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("func", "out", "workers", "verbose")}
    out = {"tool": "isores", "version": __version__, "config": cfg,
           "seed": getattr(args, "seed", None)}
    if extra:
        out["resolved"] = extra
    return out


# ---------------------------------------------------------------- inputs
def _parse_sets(items) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise UsageError(f"--set expects K=V, got {it!r}")
        k, v = it.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--set {k}: {v!r} is not a number") from None
    return out


def load_system(args):
    """``(cartesian or None, polar SystemSpec, label)`` from a preset name or ``--spec``."""
    sets = _parse_sets(getattr(args, "set", None))
    spec_file = getattr(args, "spec", None)
    name = getattr(args, "preset", None)
    if spec_file:
        try:
            with open(spec_file, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed spec JSON: {exc}") from None
        except OSError as exc:
            raise ValidationError(f"cannot read spec: {exc}") from None
        if sets:
            if "eps" in sets:
                data["eps"] = sets.pop("eps")
            params = data.setdefault("params", {})
            unknown = set(sets) - set(params)
            if unknown:
                raise ValidationError(f"--set names undeclared parameter(s) {sorted(unknown)}")
            params.update(sets)
        system = load_spec(data)
        label = data.get("name", os.path.splitext(os.path.basename(spec_file))[0])
    elif name:
        system = presets.resolve(name, **sets)
        label = name
    else:
        raise UsageError("give a preset name or --spec FILE")
    if isinstance(system, CartesianSpec):
        return system, cartesian_to_polar(system), label
    return None, system, label


def _order(args, spec) -> int:
    return int(args.order) if getattr(args, "order", None) else spec.n


# ---------------------------------------------------------------- analysis bundle
def run_analysis(spec, N: int, r_lo: float | None = None) -> dict:
    """Averaging plus every applicable regime check; returns plain data and objects."""
    r_range = (r_lo if r_lo is not None else spec.r_min, spec.R_max)
    avg = average_first(spec, N)
    out = {"averaged": avg, "second": None, "fixed_points": [], "drift": [], "lyapunov": [],
           "particular": [], "q": avg.q}
    if avg.q is None:
        return out
    env = spec.envelope
    reps = an.analyze_locking(avg, env, r_range)
    out["fixed_points"] = reps
    for r in reps:
        if r.verdict == "locking_stable":
            sol = an.particular_solution(r, avg, env)
            out["particular"].append(sol)
            try:
                out["lyapunov"].append(an.lyapunov_check(r, avg, env, sol=sol))
            except ValueError as exc:
                log.warning("Lyapunov check skipped: %s", exc)
        else:
            out["particular"].append(None)
    if avg.n > avg.q and 2 * avg.p > avg.q and avg.s_at(avg.q) != 0:
        out["second"] = average_second(avg)
    out["drift"] = an.classify_drift(avg, env, out["second"], r_range)
    return out


def analysis_json(res) -> dict:
    avg = res["averaged"]
    fps = []
    for r, sol, in zip(res["fixed_points"], res["particular"]):
        d = r.to_json()
        d["particular_solution"] = sol.to_json() if sol is not None else None
        fps.append(d)
    stable = [r for r in res["fixed_points"] if r.verdict == "locking_stable"]
    primary = None
    if stable:
        best = min(stable, key=lambda r: (round(r.phi0 % r.period, 9), r.rho0))
        primary = {"rho0": best.rho0, "phi0": best.phi0 % best.period, "period": best.period}
    return {
        "q": avg.q, "n": avg.n, "p": avg.p, "N": avg.N,
        "averaged": avg.to_json(),
        "second": res["second"].to_json() if res["second"] is not None else None,
        "fixed_points": fps,
        "locking": primary,
        "drift": [d.to_json() for d in res["drift"]],
        "lyapunov": [c.to_json() for c in res["lyapunov"]],
    }


# ---------------------------------------------------------------- subcommands
def _emit(args, filename, text):
    if getattr(args, "out", None):
        path = os.path.join(args.out, filename)
        atomic_write(path, text)
        print(path)
    else:
        sys.stdout.write(text)


def cmd_validate(args):
    cs, spec, label = load_system(args)
    spec.validate()
    info = {"ok": True, "name": label, "frame": "cartesian" if cs is not None else "polar",
            "n": spec.n, "p": spec.p, "eps": spec.eps,
            "resonance": {"kappa": spec.resonance.kappa, "varkappa": spec.resonance.varkappa},
            "envelope": spec.envelope.to_json(), "m_chi": list(spec.envelope.params())}
    sys.stdout.write(dumps(info))
    return EXIT_OK


def cmd_average(args):
    _, spec, label = load_system(args)
    avg = average_first(spec, _order(args, spec))
    doc = {"provenance": provenance(args, spec.to_json()), "averaged": avg.to_json(),
           "Lambda": {str(k): v.to_string() for k, v in sorted(avg.Lambda.items())},
           "Omega": {str(k): v.to_string() for k, v in sorted(avg.Omega.items())}}
    if avg.q is not None and avg.n > avg.q and 2 * avg.p > avg.q and avg.s_at(avg.q) != 0:
        sec = average_second(avg)
        doc["F"] = {str(k): v.to_string() for k, v in sorted(sec.F.items())}
        doc["second"] = sec.to_json()
    _emit(args, "averaged.json", dumps(doc))
    return EXIT_OK


def cmd_analyze(args):
    _, spec, label = load_system(args)
    res = run_analysis(spec, _order(args, spec), args.r_lo)
    doc = analysis_json(res)
    doc["provenance"] = provenance(args, spec.to_json())
    _emit(args, "analysis.json", dumps(doc))
    return EXIT_OK


def _parse_grid(items, names):
    axes = {}
    for it in items or []:
        m = re.fullmatch(r"\s*(\w+)\s*=\s*([-+0-9.eE]+):([-+0-9.eE]+):(\d+)\s*", it)
        if not m:
            raise UsageError(f"--grid expects NAME=lo:hi:count, got {it!r}")
        lo, hi, cnt = float(m.group(2)), float(m.group(3)), int(m.group(4))
        if cnt < 2 or not hi > lo:
            raise UsageError(f"--grid {m.group(1)}: need hi > lo and count >= 2")
        axes[m.group(1)] = np.linspace(lo, hi, cnt)
    if set(axes) != set(names):
        raise UsageError(f"--grid must give exactly the axes {names}")
    return axes[names[0]], axes[names[1]]


def cmd_partition(args):
    base = args.preset
    if base not in an.PARTITION_AXES:
        raise ValidationError(f"partition needs preset ex0 or ex2, got {base!r}")
    names = an.PARTITION_AXES[base]
    if args.grid:
        xs, ys = _parse_grid(args.grid, names)
    else:
        xs, ys = ((np.linspace(-0.5, 0.1, 81), np.linspace(-1, 1, 81)) if base == "ex0"
                  else (np.linspace(-1, 0.5, 61), np.linspace(-1, 1, 61)))
    if args.C0 >= 0:
        raise ValidationError("partition scans need C0 < 0")
    from .sde.simulate import worker_count
    rows = an.partition_scan(base, xs, ys, args.eps, args.C0, worker_count(args.workers))
    bad = an.partition_mismatches(base, rows, xs, ys, args.eps)
    out_rows = []
    for x, y, a, b in rows:
        if base == "ex0":
            label = "D+-" if a and b else "D+" if a else "D-" if b else "D0"
        else:
            label = "D" if a else "D0"
        out_rows.append((x, y, label, str(int(a)), str(int(b))))
    prov = provenance(args)
    text = csv_text(["param1", "param2", "label", "has_stable_plus", "has_stable_minus"],
                    out_rows, prov)
    _emit(args, "partition.csv", text)
    summary = {"provenance": prov, "axes": list(names), "cells": len(rows),
               "off_boundary_mismatches": len(bad),
               "mismatches": [{"x": x, "y": y, "got": list(g), "closed_form": list(e)}
                              for x, y, g, e in bad]}
    if args.out:
        atomic_write(os.path.join(args.out, "partition.json"), dumps(summary))
    else:
        sys.stderr.write(f"off-boundary mismatches: {len(bad)}\n")
    return EXIT_OK


def _ics(args, spec, default="lattice"):
    if args.ic:
        out = []
        for s in args.ic:
            try:
                r, p = (float(v) for v in s.split(","))
            except ValueError:
                raise UsageError(f"--ic expects RHO,PSI, got {s!r}") from None
            out.append((r, p))
        return out
    return presets.ic_lattice()


def _sim_config(args, spec, frame, n_paths, rows=CSV_ROWS):
    t_start = args.t_start
    if t_start is None:
        sc = presets.SCENARIOS.get(getattr(args, "preset", None) or "")
        t_start = sc.t_start if sc is not None else max(spec.envelope.t0, 1.0)
    cfg = SimConfig(t_start=t_start, t_end=args.t_end, dt=args.dt, frame=frame, seed=args.seed,
                    n_paths=n_paths, r_min=spec.r_min, record_stride=args.stride,
                    workers=args.workers)
    if cfg.record_stride is None:
        cfg.record_stride = max(1, math.ceil(cfg.n_steps(spec.resonance.nu0) / rows))
    return cfg


def _path_rows(path, ratio, S_of):
    if path.frame == "cartesian":
        return (["t", "x1", "x2", "rho", "psi"],
                [(t, a, b, r, p) for t, (a, b), r, p in zip(path.times, path.states, path.rho,
                                                          path.psi) if math.isfinite(r)])
    if path.frame == "polar":
        return (["t", "rho", "phi", "psi"],
                [(t, r, p + ratio * s, p) for t, r, p, s in zip(path.times, path.rho, path.psi,
                                                                 S_of(path.times)) if math.isfinite(r)])
    return (["t", "rho", "psi"],
            [(t, r, p) for t, r, p in zip(path.times, path.rho, path.psi) if math.isfinite(r)])


def write_paths(outdir, paths, spec, prov):
    from .sde.simulate import phase_values
    ratio = spec.resonance.kappa / spec.resonance.varkappa
    S_of = lambda t: phase_values(spec.envelope, spec.phase, t)
    for p in paths:
        header, rows = _path_rows(p, ratio, S_of)
        meta = dict(prov, path_index=p.index, status=p.status)
        atomic_write(os.path.join(outdir, "paths", f"{p.index:03d}.csv"),
                     csv_text(header, rows, meta))


def cmd_simulate(args):
    cs, spec, label = load_system(args)
    frame = args.frame
    ics = _ics(args, spec)
    n_paths = args.paths or len(ics)
    avg = second = None
    system = cs if frame == "cartesian" else spec
    if frame == "cartesian" and cs is None:
        raise ValidationError("the Cartesian frame needs a Cartesian preset or spec")
    if frame in ("truncated", "limiting", "truncated2"):
        avg = average_first(spec, _order(args, spec))
        if frame == "truncated2":
            second = average_second(avg)
    cfg = _sim_config(args, spec, frame, n_paths)
    if frame in ("truncated", "limiting", "truncated2"):
        ics = [ics[i % len(ics)] for i in range(n_paths)]
    paths = simulate(system, cfg, ics, avg=avg, second=second)
    prov = provenance(args, {"sim": cfg.to_json(), "system": spec.to_json()})
    out = args.out or os.path.join("out", label)
    write_paths(out, paths, spec, prov)
    summary = {"provenance": prov, "paths": [{"index": p.index, "status": p.status,
                                             "final_rho": float(p.rho[p.n_valid - 1])}
                                            for p in paths]}
    atomic_write(os.path.join(out, "simulate.json"), dumps(summary))
    print(out)
    return EXIT_OK


def _target(spec, res, mode):
    avg = res["averaged"]
    if mode == "locking":
        stable = [(r, s) for r, s in zip(res["fixed_points"], res["particular"])
                  if r.verdict == "locking_stable"]
        if not stable:
            raise SimulationError("no locking_stable fixed point to measure against")
        r, sol = min(stable, key=lambda x: (round(x[0].phi0 % x[0].period, 9), x[0].rho0))
        return LockingTarget(sol, avg.n, avg.p, avg.q, r.period), (r.rho0, r.phi0 % r.period)
    ok = [d for d in res["drift"] if d.condition_ok] or res["drift"]
    if not ok:
        raise SimulationError("no phase-drift radius to measure against")
    d = ok[0]
    return DriftTarget(d, avg.n, avg.p, avg.q), (d.rho0, 0.0)


def _ensemble_ics(center, mode, count=8, radius=0.1):
    if mode == "locking":
        return presets.ic_ring(center[0], center[1], radius, count)
    return [(center[0] + radius * math.cos(2 * math.pi * i / count), 2 * math.pi * i / count)
            for i in range(count)]


def cmd_ensemble(args):
    cs, spec, label = load_system(args)
    res = run_analysis(spec, _order(args, spec), args.r_lo)
    target, center = _target(spec, res, args.mode)
    frame = "cartesian" if cs is not None and args.frame == "cartesian" else "polar"
    system = cs if frame == "cartesian" else spec
    t_start = args.t_start if args.t_start is not None else 50.0
    cfg = SimConfig(t_start=t_start, t_end=args.t_end, dt=args.dt, frame=frame, seed=args.seed,
                    n_paths=args.paths or 200, r_min=spec.r_min, workers=args.workers)
    ics = _ensemble_ics(center, args.mode) if not args.ic else _ics(args, spec)
    st = ensemble(system, cfg, ics, target, args.eps1, l=args.l)
    doc = {"provenance": provenance(args, {"sim": cfg.to_json(), "system": spec.to_json(),
                                           "center": list(center)}),
           "stats": st.to_json(),
           "terminal_within_0.15": terminal_fraction(st, center[0], 0.15)}
    out = args.out or os.path.join("out", label)
    atomic_write(os.path.join(out, "stats.json"), dumps(doc))
    atomic_write(os.path.join(out, "sups.csv"),
                 csv_text(["path", "sup_metric", "final_rho", "status"],
                          [(str(i), s, r, stt) for i, (s, r, stt) in
                           enumerate(zip(st.sups, st.terminal_rho, st.statuses))],
                          doc["provenance"]))
    print(out)
    return EXIT_OK


def cmd_reproduce(args):
    name = args.figure
    if name not in presets.SCENARIOS:
        raise ValidationError(f"unknown figure preset {name!r}; available: "
                              f"{', '.join(presets.SCENARIOS)}")
    sc = presets.SCENARIOS[name]
    out_root = args.out or os.path.join("out", name)
    eps_values = sc.eps_values or (None,)
    for eps in eps_values:
        cs = sc.spec(eps)
        spec = cartesian_to_polar(cs)
        out = out_root if eps is None else os.path.join(out_root, f"eps_{eps:g}")
        res = run_analysis(spec, spec.n, 1e-3)
        prov = provenance(args, {"scenario": sc.name, "system": spec.to_json()})
        doc = analysis_json(res)
        doc["provenance"] = prov
        atomic_write(os.path.join(out, "analysis.json"), dumps(doc))
        t_end = args.t_end if args.t_end is not None else sc.t_end
        ics = presets.ic_lattice()
        cfg = SimConfig(t_start=sc.t_start, t_end=t_end, dt=args.dt, frame="cartesian",
                        seed=args.seed, n_paths=len(ics), r_min=spec.r_min, workers=args.workers)
        cfg.record_stride = args.stride or max(1, math.ceil(cfg.n_steps() / CSV_ROWS))
        paths = simulate(cs, cfg, ics)
        write_paths(out, paths, spec, dict(prov, sim=cfg.to_json()))
        if sc.mode in ("locking", "drift") and cs.eps > 0:
            try:
                target, center = _target(spec, res, sc.mode)
            except SimulationError as exc:
                log.warning("%s: no ensemble statistics (%s)", name, exc)
                continue
            ecfg = SimConfig(t_start=sc.t_start, t_end=t_end, dt=args.dt, frame="cartesian",
                             seed=args.seed, n_paths=args.paths or 200, r_min=spec.r_min,
                             workers=args.workers)
            st = ensemble(cs, ecfg, _ensemble_ics(center, sc.mode), target, args.eps1)
            atomic_write(os.path.join(out, "stats.json"),
                         dumps({"provenance": dict(prov, sim=ecfg.to_json()), "stats": st.to_json(),
                                "center": list(center),
                                "terminal_within_0.15": terminal_fraction(st, center[0], 0.15)}))
        print(out)
    return EXIT_OK


# ---------------------------------------------------------------- parser
def _common(p, preset=True):
    if preset:
        p.add_argument("preset", nargs="?", help="built-in preset or figure name")
        p.add_argument("--spec", help="system definition JSON")
        p.add_argument("--set", action="append", metavar="K=V", help="override a parameter")
    p.add_argument("--out", help="output directory")


def _sim_flags(p, t_end=1000.0):
    p.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
    p.add_argument("--paths", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-start", type=float)
    p.add_argument("--t-end", type=float, default=t_end)
    p.add_argument("--stride", type=int, help="record every STRIDE steps")
    p.add_argument("--workers", type=int)
    p.add_argument("--ic", action="append", metavar="RHO,PSI")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isores", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"isores {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a system definition")
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("average", help="averaged coefficients as JSON")
    _common(p)
    p.add_argument("--order", type=int, help="averaging order N (default n)")
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("analyze", help="fixed points, verdicts, drift radii, Lyapunov checks")
    _common(p)
    p.add_argument("--order", type=int)
    p.add_argument("--r-lo", type=float, help="lower radius for root searches")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("partition", help="parameter-plane scan for ex0/ex2")
    p.add_argument("preset", choices=sorted(an.PARTITION_AXES))
    p.add_argument("--eps", type=float, default=0.4)
    p.add_argument("--C0", type=float, default=-1.0)
    p.add_argument("--grid", nargs=2, metavar="NAME=lo:hi:n")
    p.add_argument("--workers", type=int)
    _common(p, preset=False)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("simulate", help="write per-path CSVs")
    _common(p)
    _sim_flags(p)
    p.add_argument("--frame", default="cartesian",
                   choices=["cartesian", "polar", "truncated", "limiting", "truncated2"])
    p.add_argument("--order", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ensemble", help="exceedance statistics over the stability horizon")
    _common(p)
    _sim_flags(p, t_end=3000.0)
    p.add_argument("--mode", choices=["locking", "drift"], default="locking")
    p.add_argument("--frame", choices=["cartesian", "polar"], default="cartesian")
    p.add_argument("--eps1", type=float, default=0.5)
    p.add_argument("--l", type=float, default=0.5, help="horizon exponent parameter in (0, 1)")
    p.add_argument("--order", type=int)
    p.add_argument("--r-lo", type=float)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("reproduce", help="full pipeline for a figure preset")
    p.add_argument("figure")
    _common(p, preset=False)
    p.add_argument("--seed", type=int, default=20240601)
    p.add_argument("--paths", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--eps1", type=float, default=0.5)
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and not (0 <= args.seed < 2 ** 64):
        sys.stderr.write("error: --seed must be an unsigned 64-bit integer\n")
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ValidationError, ParseError, UsageError, EnvelopeDomainError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except (AveragingError, SimulationError, WindowError, np.linalg.LinAlgError,
            FloatingPointError, ArithmeticError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
