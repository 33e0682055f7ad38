"""Command-line front end.

Every command resolves its full configuration first (JSON ``--config`` file,
then flags, flags winning), validates it, and only then computes. Results go
to ``--output`` (create-or-fail unless ``--force``) or to stdout. JSON output
carries {config, results, meta}; CSV output gets the same metadata in a
``<output>.meta.json`` sidecar.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, PspinError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("beta-crit", "rho", "criticality", "free-energy", "tv", "recovery", "overlap", "gt-bound", "test")


class ConfigError(ValueError):
    pass


def _floats(text):
    try:
        return [float(t) for t in str(text).split(",") if t.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common(sp, seeded=True):
    sp.add_argument("--config", help="JSON file whose keys mirror the flag names")
    sp.add_argument("--output", "-o", help="output path (create-or-fail); stdout if omitted")
    sp.add_argument("--format", choices=("csv", "json"), default="json")
    sp.add_argument("--force", action="store_true", help="overwrite an existing output file")
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    if seeded:
        sp.add_argument("--seed", type=int, help="master seed; random (and recorded) if omitted")
    sp.add_argument("--quad-nodes", type=int, default=None, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pspin", description="Spiked p-tensor detection and pure p-spin numerics.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="command")

    sp = sub.add_parser("beta-crit", help="critical inverse temperature beta_p")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--grid-size", type=int, default=4096)
    _common(sp, seeded=False)

    sp = sub.add_parser("rho", help="rho_beta(s) on a grid of s")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--s", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    _common(sp, seeded=False)

    sp = sub.add_parser("criticality", help="high-temperature criterion S(beta)")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--beta", type=_floats, required=True)
    sp.add_argument("--grid-size", type=int, default=4096)
    sp.add_argument("--curve", action="store_true", help="emit the whole Phi(r) curve (single beta)")
    _common(sp, seeded=False)

    sp = sub.add_parser("free-energy", help="exact finite-N free energies over disorder replicas")
    sp.add_argument("--kind", choices=("F", "AF", "L", "CF"), default="F")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--x", type=float)
    sp.add_argument("--v", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--replicas", type=int, default=16)
    _common(sp)

    sp = sub.add_parser("tv", help="total-variation distance between noise and spiked tensor")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--beta", type=_floats, required=True)
    sp.add_argument("--replicas", type=int, default=256)
    sp.add_argument("--side", choices=("null", "alt", "both"), default="both")
    _common(sp)

    sp = sub.add_parser("recovery", help="posterior overlap statistic and likelihood-ratio test")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--beta", type=_floats, required=True)
    sp.add_argument("--replicas", type=int, default=64)
    sp.add_argument("--threshold", type=float, default=0.0)
    _common(sp)

    sp = sub.add_parser("overlap", help="two-replica overlap moments and tails by MCMC")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--eps", type=float, default=0.4)
    sp.add_argument("--replicas", type=int, default=16)
    sp.add_argument("--sweeps", type=int, default=20_000)
    sp.add_argument("--burnin", type=int, default=5_000)
    sp.add_argument("--thin", type=int, default=5)
    sp.add_argument("--ladder", type=_floats, default=None, help="ascending beta ladder for replica exchange")
    sp.add_argument("--trace", action="store_true", help="also export the first replica's overlap trace (CSV)")
    _common(sp)

    sp = sub.add_parser("gt-bound", help="one-step RSB bound on the coupled free energy")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--v", type=_floats, required=True)
    sp.add_argument("--m1", type=_floats, default=None, help="m1 values; minimised over a grid if omitted")
    _common(sp, seeded=False)

    sp = sub.add_parser("test", help="fast self-test of invariants and small-n oracles")
    sp.add_argument("--cache-file", default=None, help=argparse.SUPPRESS)
    _common(sp, seeded=False)
    return ap


def _prescan(argv):
    """Find the command and any --config path before the full parse."""
    command = next((t for t in argv if t in COMMANDS), None)
    path = None
    for i, t in enumerate(argv):
        if t == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif t.startswith("--config="):
            path = t.split("=", 1)[1]
    return command, path


def _apply_config(parser, command, path):
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest == "command":
            # emitted configs record their command; it must agree
            if value != command:
                raise ConfigError(f"config file is for command {value!r}, not {command!r}")
            continue
        if dest not in actions or dest in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r} for command {command}")
        act = actions[dest]
        if act.type is not None and value is not None:
            # string defaults go through the flag's own type conversion
            value = ",".join(str(v) for v in value) if isinstance(value, list) else str(value)
        defaults[dest] = value
        act.required = False
    sub.set_defaults(**defaults)


def _resolve(parser: argparse.ArgumentParser, argv):
    argv = list(sys.argv[1:] if argv is None else argv)
    command, path = _prescan(argv)
    if command is not None and path:
        _apply_config(parser, command, path)
    args = parser.parse_args(argv)
    if args.command is None:
        raise ConfigError("no command given; choose one of " + ", ".join(COMMANDS))
    return args


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _validate(a) -> None:
    if hasattr(a, "p"):
        _check(a.p >= 2, "--p must be >= 2")
    if hasattr(a, "n"):
        _check(a.n >= 1, "--n must be >= 1")
    for name in ("replicas", "threads"):
        if hasattr(a, name):
            _check(getattr(a, name) >= 1, f"--{name} must be >= 1")
    beta = getattr(a, "beta", None)
    if beta is not None:
        vals = beta if isinstance(beta, list) else [beta]
        _check(len(vals) > 0 and all(math.isfinite(b) and b >= 0 for b in vals), "--beta must be finite and >= 0")
    if a.quad_nodes is not None:
        _check(a.quad_nodes >= 1, "--quad-nodes must be >= 1")
    cmd = a.command
    if cmd == "beta-crit":
        _check(a.tol >= 1e-6, "--tol must be >= 1e-6")
        _check(a.grid_size >= 64, "--grid-size must be >= 64")
    if cmd == "criticality":
        _check(a.grid_size >= 64, "--grid-size must be >= 64")
        _check(not a.curve or len(a.beta) == 1, "--curve takes a single --beta")
    if cmd == "rho":
        _check(all(0 <= s <= 1 for s in a.s), "--s values must lie in [0, 1]")
    if cmd == "free-energy":
        need = {"F": set(), "AF": set(), "L": {"x"}, "CF": {"v", "eps"}}[a.kind]
        for name in ("x", "v", "eps"):
            given = getattr(a, name) is not None
            _check(given == (name in need),
                   f"--kind {a.kind} {'requires' if name in need else 'does not take'} --{name}")
        from .freeenergy import PAIR_CAP, SINGLE_CAP
        _check(a.n <= (PAIR_CAP if a.kind == "CF" else SINGLE_CAP), "--n exceeds the enumeration cap")
    if cmd in ("tv", "recovery"):
        from .freeenergy import SINGLE_CAP
        _check(a.n <= SINGLE_CAP, "--n exceeds the enumeration cap")
    if cmd == "overlap":
        _check(0 <= a.burnin < a.sweeps, "need 0 <= --burnin < --sweeps")
        _check(a.thin >= 1 and a.k >= 1, "--thin and --k must be >= 1")
        if a.ladder is not None:
            _check(any(abs(b - a.beta) < 1e-12 for b in a.ladder), "--beta must be one of the --ladder values")
    if cmd == "gt-bound":
        _check(all(0 <= v <= 1 for v in a.v), "--v values must lie in [0, 1]")
        _check(a.m1 is None or all(0 < m <= 1 for m in a.m1), "--m1 values must lie in (0, 1]")


def _rule(a):
    from .analytic import QuadratureRule

    return QuadratureRule(a.quad_nodes) if a.quad_nodes else None


def _cmd_beta_crit(a):
    from .analytic import MixtureSpec, beta_crit

    b = beta_crit(MixtureSpec(a.p), tol=a.tol, grid_size=a.grid_size, rule=_rule(a))
    return {"rows": [{"p": a.p, "beta_crit": b, "tol": a.tol}]}


def _cmd_rho(a):
    from .analytic import MixtureSpec, rho

    spec, rule = MixtureSpec(a.p), _rule(a)
    return {"rows": [{"p": a.p, "beta": a.beta, "s": s, "rho": rho(a.beta, s, spec, rule)} for s in a.s]}


def _cmd_criticality(a):
    from .analytic import MixtureSpec, criticality_curve, sup_criticality

    spec, rule = MixtureSpec(a.p), _rule(a)
    if a.curve:
        r, phi = criticality_curve(a.beta[0], spec, a.grid_size, rule)
        return {"rows": [{"r": float(x), "phi": float(y)} for x, y in zip(r, phi)]}
    rows = []
    for b in a.beta:
        rep = sup_criticality(b, spec, a.grid_size, rule)
        rows.append({"p": a.p, "beta": b, "sup_integral": rep.sup_integral,
                     "r_argmax": rep.r_argmax, "in_high_temp": rep.in_high_temp})
    return {"rows": rows}


def _cmd_free_energy(a):
    from .freeenergy import FreeEnergySpec, disorder_sweep

    h = "random" if a.kind in ("AF", "L") else None
    spec = FreeEnergySpec(a.kind, a.beta, x=a.x, v=a.v, eps=a.eps, h=h)
    res = disorder_sweep(spec, a.n, a.p, a.replicas, a.seed, a.threads)
    rows = [{"replica_seed": s.seed, "kind": a.kind, "n": a.n, "p": a.p, "beta": a.beta,
             "x": a.x, "v": a.v, "eps": a.eps, "value": s.value} for s in res.samples]
    summary = {"mean": res.mean, "std_error": res.std_error, "replicas": res.replicas}
    out = {"rows": rows, "summary": summary}
    if a.kind != "CF":
        from .analytic import MixtureSpec, l_limit, rs_free_energy

        spec_p, rule = MixtureSpec(a.p), _rule(a)
        if a.kind == "F":
            summary["limit_rs"] = rs_free_energy(a.beta, 0.0, spec_p, rule).free_energy
        else:
            lim = l_limit(a.beta if a.kind == "AF" else a.x, a.beta, spec_p, rule)
            summary["limit_rs"], summary["limit_argmax_m"] = lim.value, lim.m
        out["rs_ansatz"] = True
    return out


def _cmd_tv(a):
    from .detection import tv_mc_alt, tv_mc_null

    rows = []
    for b in a.beta:
        for side, fn in (("null", tv_mc_null), ("alt", tv_mc_alt)):
            if a.side in (side, "both"):
                est = fn(a.n, a.p, b, a.replicas, a.seed, a.threads)
                rows.append({"side": side, "n": a.n, "p": a.p, "beta": b, "d_tv": est.value,
                             "std_error": est.std_error, "replicas": est.replicas})
    return {"rows": rows}


def _cmd_recovery(a):
    from .detection import generate_instance, hypothesis_test, instance_seed, recovery_statistic
    from .seeding import parallel_map

    rows = []
    for b in a.beta:
        stats = parallel_map(
            lambda k: recovery_statistic(generate_instance(a.n, a.p, b, instance_seed(a.seed, 1, k))),
            range(a.replicas), a.threads)
        q1, med, q3 = np.percentile(stats, [25, 50, 75])
        err = hypothesis_test(a.n, a.p, b, a.threshold, a.replicas, a.seed, a.threads)
        rows.append({"n": a.n, "p": a.p, "beta": b, "recovery_median": med, "recovery_q1": q1,
                     "recovery_q3": q3, "recovery_mean": float(np.mean(stats)),
                     "type1": err.type1, "type1_lo": err.type1_ci[0], "type1_hi": err.type1_ci[1],
                     "type2": err.type2, "type2_lo": err.type2_ci[0], "type2_hi": err.type2_ci[1],
                     "replicas": a.replicas})
    return {"rows": rows}


def _cmd_overlap(a):
    from .sampler import SamplerConfig, overlap_trace, tail_probability, two_replica_moments
    from .core import sample_couplings
    from .freeenergy import replica_seed

    cfg = SamplerConfig(a.sweeps, a.burnin, a.thin, 0, tuple(a.ladder) if a.ladder else None)
    m = two_replica_moments(a.n, a.p, a.beta, a.k, cfg, a.replicas, a.seed, a.threads)
    t = tail_probability(a.n, a.p, a.beta, a.eps, cfg, a.replicas, a.seed, a.threads)
    rows = [{"n": a.n, "p": a.p, "beta": a.beta, "k": a.k, "even_moment": m.even_moment,
             "even_moment_se": m.even_moment_se, "p_moment": m.p_moment, "p_moment_se": m.p_moment_se,
             "eps": a.eps, "tail": t.value, "tail_se": t.std_error, "replicas": a.replicas,
             "flagged": m.flagged}]
    out = {"rows": rows}
    if a.trace:
        c = sample_couplings(a.n, a.p, replica_seed(a.seed, 0))
        ov = overlap_trace(c, a.beta, cfg, (a.seed, 0, cfg.seed))
        first = (cfg.burnin // a.thin + 1) * a.thin
        out["trace"] = [{"sweep": first + a.thin * i, "overlap": float(o)} for i, o in enumerate(ov)]
    return out


def _cmd_gt_bound(a):
    from .analytic import GTBoundParams, MixtureSpec, gt_bound, gt_bound_min

    spec, rule = MixtureSpec(a.p), _rule(a)
    rows = []
    for v in a.v:
        if a.m1 is None:
            val, m1 = gt_bound_min(v, a.beta, spec, rule=rule)
            rows.append({"p": a.p, "beta": a.beta, "v": v, "m1": m1, "bound": val, "minimised": True})
        else:
            for m1 in a.m1:
                rows.append({"p": a.p, "beta": a.beta, "v": v, "m1": m1,
                             "bound": gt_bound(GTBoundParams(v, m1, a.beta), spec, rule), "minimised": False})
    return {"rows": rows}


HANDLERS = {
    "beta-crit": _cmd_beta_crit,
    "rho": _cmd_rho,
    "criticality": _cmd_criticality,
    "free-energy": _cmd_free_energy,
    "tv": _cmd_tv,
    "recovery": _cmd_recovery,
    "overlap": _cmd_overlap,
    "gt-bound": _cmd_gt_bound,
}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def to_csv(rows) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0].keys())
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _open_output(path: str, force: bool):
    p = Path(path)
    try:
        return open(p, "w" if force else "x", encoding="utf-8", newline="")
    except FileExistsError:
        raise ConfigError(f"output {p} already exists (use --force to overwrite)")
    except OSError as exc:
        raise ConfigError(f"cannot write output {p}: {exc.strerror or exc}")


def _emit(a, result, meta, out):
    rows, summary, trace = result["rows"], result.get("summary"), result.get("trace")
    config = {k: v for k, v in vars(a).items() if k not in ("config", "output", "force", "quad_nodes", "cache_file")}
    doc = _jsonable({"config": config, "results": rows, "meta": meta})
    if summary:
        doc["summary"] = _jsonable(summary)
    if a.format == "json":
        if trace is not None:
            doc["trace"] = trace
        text = json.dumps(doc, indent=2) + "\n"
        if a.output:
            with _open_output(a.output, a.force) as fh:
                fh.write(text)
        else:
            out.write(text)
        return
    text = to_csv(rows)
    if not a.output:
        out.write(text)
        if summary:
            out.write(to_csv([summary]))
        return
    sidecar = {k: doc[k] for k in ("config", "meta", "summary") if k in doc}
    files = [(a.output, text), (a.output + ".meta.json", json.dumps(sidecar, indent=2) + "\n")]
    if trace is not None:
        files.append((a.output + ".trace.csv", to_csv(trace)))
    handles = [(_open_output(path, a.force), body) for path, body in files]
    for fh, body in handles:
        with fh:
            fh.write(body)


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        a = _resolve(parser, argv)
        _validate(a)
    except SystemExit as exc:  # argparse errors and --help
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    except (ConfigError, ValueError) as exc:
        print(f"pspin: configuration error: {exc}", file=err)
        return EXIT_CONFIG

    if a.command == "test":
        from .selftest import run_selftest

        report = run_selftest(quad_nodes=a.quad_nodes, cache_file=a.cache_file)
        for line in report.lines():
            print(line, file=out)
        return EXIT_OK if report.ok else report.exit_code

    if hasattr(a, "seed") and a.seed is None:
        from .seeding import random_seed

        a.seed = random_seed()
        print(f"pspin: using seed {a.seed}", file=err)
    if hasattr(a, "seed") and a.seed < 0:
        print("pspin: configuration error: --seed must be >= 0", file=err)
        return EXIT_CONFIG

    t0 = time.perf_counter()
    try:
        result = HANDLERS[a.command](a)
    except NumericalError as exc:
        print(f"pspin: numerical failure: {exc}", file=err)
        return EXIT_NUMERIC
    except (PspinError, ValueError) as exc:
        print(f"pspin: configuration error: {exc}", file=err)
        return EXIT_CONFIG
    wall = time.perf_counter() - t0
    meta = {"version": __version__, "seed": getattr(a, "seed", None), "wall_time_seconds": wall}
    if result.get("rs_ansatz"):
        meta["rs_ansatz"] = True
    if result.get("summary") is not None:
        result["summary"]["wall_time_seconds"] = wall
    try:
        _emit(a, result, meta, out)
    except ConfigError as exc:
        print(f"pspin: configuration error: {exc}", file=err)
        return EXIT_CONFIG
    if a.command == "beta-crit" and a.output:
        print(format(result["rows"][0]["beta_crit"], ".6f"), file=out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
