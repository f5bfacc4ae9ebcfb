"""Command-line entry point: ``heavywalk <command> [options]``.

Options may also come from a flat ``key = value`` file given with
``--config``; explicit command-line flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .green import enumerate_paths, gamma_exact, gamma_x_exact, lambda_of, qs_exact, solve_green
from .harness import ExperimentConfig, manifest, run_limits, run_slln, run_variance
from .heavy import default_horizon, uv_counts
from .hitting import (
    gamma_infinity, gamma_n, gamma_x, identity_residuals, oracle_qs, race, total_local_time_law,
    two_point_occupation, z_law,
)
from .results import render, write_tables
from .walk import WalkConfig, dump_trajectory, max_local_time, simulate

COMMANDS = ("walk", "gamma", "hit", "heavy", "oracle", "slln", "limits", "variance", "identities")


def _count(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    return int(value)


def _grid(text: str) -> tuple[int, ...]:
    return tuple(_count(t) for t in text.split(",") if t.strip())


def _point(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(","))


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heavywalk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--dim", dest="d", type=int, default=3)
    common.add_argument("--seed", type=_count, default=0)
    common.add_argument("--replicas", type=_count, default=20)
    common.add_argument("--out", help="result file (default: stdout, manifest on stderr)")
    common.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
    common.add_argument("--workers", type=int, default=1)

    ensemble = argparse.ArgumentParser(add_help=False)
    ensemble.add_argument("--grid", type=_grid, default=(10**4, 10**5, 10**6))
    ensemble.add_argument("--B", type=float, default=3.0)
    ensemble.add_argument("--epsilon", type=float, default=1.0)
    ensemble.add_argument("--c", type=float, default=4.0, help="horizon factor, N = c n")

    p = sub.add_parser("walk", parents=[common], help="simulate one walk and summarize its ledger")
    p.add_argument("--n", type=_count, default=1000)
    p.add_argument("--trajectory", help="also dump 'i x_1 ... x_d' lines to this file")

    p = sub.add_parser("gamma", parents=[common], help="Monte Carlo escape probability")
    p.add_argument("--horizon", type=_count, default=10**6)
    p.add_argument("--n", type=_count, help="estimate the truncated gamma(n) instead")

    p = sub.add_parser("hit", parents=[common], help="two-point hitting experiments")
    p.add_argument("--x", type=_point, default=None, help="target, e.g. 1,0,0 (default e_1)")
    p.add_argument("--horizon", type=_count, default=10**6)
    p.add_argument("--what", choices=("race", "gamma-x", "local-time", "occupation", "z"), default="race")

    p = sub.add_parser("heavy", parents=[common], help="Q, U, R, V, M for one walk")
    p.add_argument("--n", type=_count, default=10**5)
    p.add_argument("--N", type=_count, default=None)
    p.add_argument("--B", type=float, default=3.0)
    p.add_argument("--replica", type=int, default=0)

    p = sub.add_parser("oracle", parents=[common], help="Green's function constants")
    p.add_argument("--radius", type=int, default=None)
    p.add_argument("--enumerate", type=int, default=0, metavar="N",
                   help="instead export exact path statistics up to length N")

    for name, text in (("slln", "uniform strong law convergence table"),
                       ("limits", "maximal local time and the lower bound"),
                       ("variance", "variance diagnostic for V(t, n)")):
        sub.add_parser(name, parents=[common, ensemble], help=text)

    p = sub.add_parser("identities", parents=[common], help="hitting identity residuals")
    p.add_argument("--x", type=_point, action="append", default=None)
    p.add_argument("--horizon", type=_count, default=10**6)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and argv and argv[0] in COMMANDS:
        values = read_config_file(known.config)
        values.pop("config", None)
        if "dim" in values:
            values["d"] = values.pop("dim")
        if "format" in values:
            values["fmt"] = values.pop("format")
        subparser = parser._subparsers._group_actions[0].choices[argv[0]]
        known_dests = {a.dest for a in subparser._actions}
        unknown = sorted(set(values) - known_dests)
        if unknown:
            parser.error(f"unknown keys in {known.config}: {', '.join(unknown)}")
        subparser.set_defaults(**values)
    return parser.parse_args(argv)


def _experiment(args, kind) -> ExperimentConfig:
    return ExperimentConfig(kind=kind, d=args.d, grid=args.grid, replicas=args.replicas, seed=args.seed,
                            B=args.B, epsilon=args.epsilon, c=args.c, out=args.out, fmt=args.fmt,
                            workers=args.workers)


def _emit(args, tables: dict[str, list[dict]], meta: dict) -> None:
    if args.out:
        write_tables(args.out, tables, meta, args.fmt)
        return
    for tag, rows in tables.items():
        if len(tables) > 1:
            sys.stdout.write(f"# {tag}\n")
        sys.stdout.write(render(rows, args.fmt))
    sys.stderr.write(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def _meta(args, command: str, oracle: dict | None = None, **config) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("out", "workers", "config", "command")}
    cfg.update(config)
    out = {
        "code_version": __version__,
        "command": command,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.items())},
        "seeds": {"master": args.seed,
                  "derivation": "Philox key=(seed, blake2b-64(purpose)), counter=(0, 0, replica, 0)"},
    }
    if oracle:
        out["oracle"] = oracle
    return out


def _oracle_constants(d: int) -> dict:
    table = solve_green(d)
    g = gamma_exact(table)
    return {"gamma": g, "lambda": lambda_of(g), "radius": table.radius}


def cmd_walk(args):
    config = WalkConfig(args.d, args.n, args.seed)
    if args.trajectory:
        with open(args.trajectory, "w") as fh:
            ledger = dump_trajectory(config, fh)
    else:
        ledger = simulate(config)
    top, site = max_local_time(ledger)
    rows = [{"n": args.n, "k": k, "Q": v} for k, v in sorted(ledger.histogram.items())]
    summary = [{"n": args.n, "distinct_sites": ledger.distinct_sites, "max_local_time": top,
                "argmax": " ".join(map(str, site)), "origin_local_time": ledger.local_time([0] * args.d)}]
    _emit(args, {"histogram": rows, "summary": summary}, _meta(args, "walk"))


def cmd_gamma(args):
    if args.n is not None:
        est = gamma_n(args.d, args.n, args.replicas, args.seed, args.workers)
    else:
        est = gamma_infinity(args.d, args.horizon, args.replicas, args.seed, args.workers)
    row = est.row()
    oracle = _oracle_constants(args.d)
    row["oracle_gamma"] = oracle["gamma"]
    row["bias_bound_exponent"] = est.bias_bound_exponent
    _emit(args, {"estimate": [row]}, _meta(args, "gamma", oracle))


def cmd_hit(args):
    d = args.d
    x = args.x or tuple([1] + [0] * (d - 1))
    g, gx, q, s = oracle_qs(d, x)
    oracle = {"gamma": g, "gamma_x": gx, "q_x": q, "s_x": s}
    if args.what == "race":
        res = race(d, x, args.horizon, args.replicas, args.seed, args.workers)
        rows = res.rows()
        rows[0]["oracle"], rows[1]["oracle"] = q, s
        tables = {"estimate": rows}
    elif args.what == "gamma-x":
        est = gamma_x(d, x, args.horizon, args.replicas, args.seed, args.workers)
        tables = {"estimate": [{**est.row(), "oracle": gx}]}
    else:
        if args.what == "local-time":
            hist = total_local_time_law(d, args.horizon, args.replicas, args.seed, g, args.workers)
        elif args.what == "occupation":
            hist = two_point_occupation(d, x, args.horizon, args.replicas, args.seed, q + s, args.workers)
        else:
            hist = z_law(d, x, args.horizon, args.replicas, args.seed, args.workers)
        rows = [{"j": j, "count": int(c), "mass": c / hist.replicas} for j, c in enumerate(hist.counts)]
        fit = {}
        if hist.fit is not None:
            fit = {"ratio": hist.fit.ratio, "chi2": hist.fit.chi_square.statistic,
                   "dof": hist.fit.chi_square.dof, "p_value": hist.fit.chi_square.p_value}
        tables = {"histogram": rows,
                  "fit": [{"label": hist.label, "replicas": hist.replicas, "censored": hist.censored, **fit}]}
    _emit(args, tables, _meta(args, "hit", oracle, x=list(x)))


def cmd_heavy(args):
    g = _oracle_constants(args.d)
    N = args.N or default_horizon(args.n)
    hc = uv_counts(args.d, args.n, N, args.seed, B=args.B, lam=g["lambda"], replica=args.replica)
    _emit(args, {"counts": hc.rows(g["gamma"])}, _meta(args, "heavy", g, N=N))


def cmd_oracle(args):
    if args.enumerate:
        res = enumerate_paths(args.d, args.enumerate)
        rows = [{"quantity": q, "m": m, "k": k, "value": v} for q, m, k, v in res.rows()]
        _emit(args, {"enumeration": rows}, _meta(args, "oracle"))
        return
    table = solve_green(args.d, args.radius)
    g = gamma_exact(table)
    summary = [{"d": args.d, "radius": table.radius, "G0": table.g0, "G0_error": float(table.errors[0]),
                "gamma": g, "return_probability": 1.0 - g, "lambda": lambda_of(g),
                "harmonic_residual": max(table.coarse.harmonic_residual, table.fine.harmonic_residual)}]
    values = [{"d": r[0], "x": " ".join(map(str, r[1:-2])), "G": r[-2], "error": r[-1]} for r in table.rows()]
    _emit(args, {"constants": summary, "green": values},
          _meta(args, "oracle", {"gamma": g, "lambda": lambda_of(g), "radius": table.radius}))


def cmd_ensemble(args):
    cfg = _experiment(args, args.command)
    meta = manifest(cfg)
    if args.command == "slln":
        tables = run_slln(cfg).tables()
    elif args.command == "limits":
        tables = run_limits(cfg)
    else:
        tables = {"variance": run_variance(cfg)}
    _emit(args, tables, meta)


def cmd_identities(args):
    d = args.d
    xs = args.x or [tuple([1] + [0] * (d - 1)), tuple([2] + [0] * (d - 1))]
    rows = []
    g_mc = gamma_infinity(d, args.horizon, args.replicas, args.seed, args.workers)
    for x in xs:
        g, gx, q, s = oracle_qs(d, x)
        neighbor = sum(abs(c) for c in x) == 1
        exact = identity_residuals(g, gx, q, s, neighbor=neighbor)
        gx_mc = gamma_x(d, x, args.horizon, args.replicas, args.seed, args.workers)
        rc = race(d, x, args.horizon, args.replicas, args.seed, args.workers)
        mc = identity_residuals(g_mc.value, gx_mc.value, rc.q, rc.s, se_gamma=g_mc.std_error,
                                se_gamma_x=gx_mc.std_error, se_q=rc.q_se, se_s=rc.s_se,
                                cov_qs=rc.cov_qs, neighbor=neighbor)
        for name in exact.residuals:
            rows.append({"x": " ".join(map(str, x)), "identity": name, "source": "oracle",
                         "residual": exact.residuals[name], "std_error": 0.0})
        for name in mc.residuals:
            rows.append({"x": " ".join(map(str, x)), "identity": name, "source": "monte-carlo",
                         "residual": mc.residuals[name], "std_error": mc.std_errors[name]})
    _emit(args, {"residuals": rows}, _meta(args, "identities", _oracle_constants(d),
                                           x=[list(x) for x in xs]))


HANDLERS = {"walk": cmd_walk, "gamma": cmd_gamma, "hit": cmd_hit, "heavy": cmd_heavy,
            "oracle": cmd_oracle, "slln": cmd_ensemble, "limits": cmd_ensemble,
            "variance": cmd_ensemble, "identities": cmd_identities}


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        HANDLERS[args.command](args)
    except ValueError as exc:
        sys.stderr.write(f"heavywalk {args.command}: error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
