"""Command-line front end.

Subcommands: ``iterate``, ``lowerbound``, ``pep gen``, ``pep solve``,
``pgextra`` and ``demo``.  Output files go to ``--out-dir`` (default:
``$IDVKIT_OUT`` or the current directory).  Every CSV is a pure function of
its arguments, so reruns are byte-identical.

Exit codes: 0 ok, 1 audit failure (only with ``--strict``), 2 usage error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import re
import sys
from dataclasses import replace

import numpy as np

from . import analysis, lowerbound, operators, pep, pgextra, schedules
from .linalg import ConvergenceError, make_rng

EXIT_OK, EXIT_AUDIT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "IDVKIT_OUT"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parsing helpers


def _kv(text: str) -> dict[str, str]:
    """``a=1,b=0,0,1`` -> {"a": "1", "b": "0,0,1"} (values may contain commas)."""
    if not text:
        return {}
    parts = re.split(r",(?=[A-Za-z_]\w*=)", text)
    out = {}
    for part in parts:
        if "=" not in part:
            raise UsageError(f"expected key=value, got {part!r}")
        key, val = part.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc


def parse_operator(spec: str) -> tuple[operators.OperatorSpec, np.ndarray]:
    """Operator from a short spec string, with its default starting point.

    ``rotation-shift``, ``worst-case:k=10[,v_norm=1][,alpha=...]``,
    ``translation:v=0,0,1``, ``config:path.ini``.
    """
    kind, _, rest = spec.partition(":")
    if kind == "config":
        with open(rest) as fh:
            op = operators.from_config(fh.read())
        return op, np.zeros(op.dimension)
    args = _kv(rest)

    def take(allowed):
        bad = set(args) - set(allowed)
        if bad:
            raise UsageError(f"unknown parameters for {kind}: {sorted(bad)}")

    if kind == "rotation-shift":
        take(())
        return operators.make_counterexample(), np.array([1.0, 0.0, 0.0])
    if kind == "worst-case":
        take(("k", "v_norm", "alpha"))
        if "k" not in args:
            raise UsageError("worst-case needs k=")
        k = int(args["k"])
        if k < 1:
            raise UsageError("worst-case needs k >= 1")
        op = operators.make_worst_case(
            k,
            float(args.get("v_norm", 1.0)),
            float(args["alpha"]) if "alpha" in args else None,
        )
        return op, np.zeros(op.dimension)
    if kind == "translation":
        take(("v",))
        if "v" not in args:
            raise UsageError("translation needs v=")
        v = _floats(args["v"])
        return operators.translation(v), np.zeros(v.size)
    raise UsageError(f"unknown operator {spec!r}")


def parse_schedule(spec: str) -> schedules.Schedule:
    """``picard``, ``ohm``, ``km:0.5``, ``halpern:0.1``."""
    kind, _, arg = spec.partition(":")
    try:
        if kind == "picard" and not arg:
            return schedules.picard()
        if kind == "ohm" and not arg:
            return schedules.ohm()
        if kind == "km":
            return schedules.km(float(arg))
        if kind == "halpern":
            return schedules.halpern(float(arg))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    raise UsageError(f"unknown schedule {spec!r}")


def parse_k_range(text: str) -> list[int]:
    """``5`` or ``1..20`` (inclusive)."""
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", text)
    if not m:
        raise UsageError(f"bad k range {text!r}")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.group(2) else lo
    if lo < 1 or hi < lo:
        raise UsageError(f"k range must satisfy 1 <= lo <= hi, got {text!r}")
    return list(range(lo, hi + 1))


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", text).strip("_")


def _out_dir(args) -> str:
    d = args.out_dir or os.environ.get(OUT_ENV) or "."
    os.makedirs(d, exist_ok=True)
    return d


def _write(path: str, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------- commands


def cmd_iterate(args, out=None) -> int:
    out = out or sys.stdout
    op, x0 = parse_operator(args.op)
    if args.x0:
        x0 = _floats(args.x0)
    sched = parse_schedule(args.schedule)
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    traj = schedules.run(op, sched, x0, args.k)
    d = _out_dir(args)
    stem = args.name or f"iterate_{_slug(args.op)}_{_slug(sched.name)}_k{args.k}"
    path = os.path.join(d, stem + ".csv")
    traj.to_csv(path)
    print(f"wrote {path}", file=out)
    failed = False
    for env_id in args.audit or []:
        audit = analysis.audit_rate(traj, env_id, **({"dist_sq": args.dist_sq} if args.dist_sq else {}))
        _write(os.path.join(d, f"{stem}_audit_{_slug(env_id)}.csv"), audit.to_csv())
        print(audit.summary(), file=out)
        failed |= not audit.passed
    return EXIT_AUDIT if failed and args.strict else EXIT_OK


def cmd_lowerbound(args, out=None) -> int:
    out = out or sys.stdout
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    k = args.k
    rows = []
    failed = False
    if args.resist:
        algos = {
            "picard": lowerbound.picard_algorithm,
            "ohm": lowerbound.ohm_algorithm,
            "heavy-ball": lowerbound.heavy_ball_algorithm(),
        }
        if args.resist not in algos:
            raise UsageError(f"--resist must be one of {sorted(algos)}")
        dim = args.dim or 2 * k - 1
        inner = lowerbound.default_inner(k, args.v_norm)
        v = np.zeros(dim)
        v[0] = args.v_norm
        res = lowerbound.resisting_rotation(algos[args.resist], inner, np.zeros(dim), v, dim, k, seed=args.seed)
        ambient = lowerbound.verify_lower_bound(res.op, res.trace, mode="unchecked")
        pulled = lowerbound.verify_lower_bound(res.inner, res.pulled_back, mode="zero_respecting")
        for label, rep in (("ambient", ambient), ("pulled_back", pulled)):
            rows.append([f"resist-{args.resist}", label, k, rep.distance_lhs, rep.distance_rhs, rep.normgap_lhs, rep.normgap_rhs, rep.passed])
            print(f"{args.resist} {label}: {rep}", file=out)
            failed |= not rep.passed
    else:
        rng = make_rng(args.seed)
        op = lowerbound.default_inner(k, args.v_norm)
        n_fail = 0
        for draw in range(args.draws):
            algo = lowerbound.random_span_algorithm(seed=args.seed * 100_003 + draw)
            w = lowerbound.random_convex_weights(k, rng)
            tr = lowerbound.trace_from_algorithm(op, algo, np.zeros(op.dimension), k, w)
            rep = lowerbound.verify_lower_bound(op, tr, mode="span")
            rows.append(["span", draw, k, rep.distance_lhs, rep.distance_rhs, rep.normgap_lhs, rep.normgap_rhs, rep.passed])
            n_fail += not rep.passed
        print(f"span audit k={k}: {args.draws - n_fail}/{args.draws} draws pass", file=out)
        failed = n_fail > 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["audit", "case", "k", "dist_lhs", "dist_rhs", "normgap_lhs", "normgap_rhs", "passed"])
    for r in rows:
        w.writerow(r[:3] + [f"{x:.17g}" for x in r[3:7]] + [int(r[7])])
    d = _out_dir(args)
    tag = f"resist_{args.resist}" if args.resist else "span"
    path = os.path.join(d, f"lowerbound_{tag}_k{k}.csv")
    _write(path, buf.getvalue())
    print(f"wrote {path}", file=out)
    return EXIT_AUDIT if failed and args.strict else EXIT_OK


def cmd_pep_gen(args, out=None) -> int:
    out = out or sys.stdout
    ks = parse_k_range(args.k)
    d = _out_dir(args)
    for k in ks:
        prob = pep.build_pep(k, args.cap)
        if args.out and len(ks) == 1:
            path = args.out if os.path.dirname(args.out) else os.path.join(d, args.out)
        else:
            path = os.path.join(d, f"pep{k}.dat-s")
        pep.export_sdpa(prob, path)
        print(f"wrote {path} ({len(prob.constraints)} constraints, order {prob.order})", file=out)
    return EXIT_OK


def cmd_pep_solve(args, out=None) -> int:
    out = out or sys.stdout
    ks = parse_k_range(args.k)
    rows = []
    failed = inaccurate = False
    for k in ks:
        prob = pep.build_pep(k, args.cap)
        sol = pep.solve_pep(prob, tol=args.tol, max_iter=args.max_iter)
        rep = pep.verify_pep_bounds(k, sol.value, tol=args.tol)
        rows.append((k, sol.value, (k + 1) ** 2 * sol.value, rep.lower, rep.upper, rep.passed, sol.accurate, sol.diagnostics["iterations"]))
        print(f"{rep}  (k+1)^2*value={(k + 1) ** 2 * sol.value:.6g} accurate={sol.accurate}", file=out)
        failed |= not rep.passed
        inaccurate |= not sol.accurate
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "value", "scaled_value", "lower", "upper", "in_bracket", "accurate", "iterations"])
    for k, val, sc, lo, hi, ok, acc, its in rows:
        w.writerow([k, f"{val:.17g}", f"{sc:.17g}", f"{lo:.17g}", f"{hi:.17g}", int(ok), int(acc), its])
    d = _out_dir(args)
    path = args.out or os.path.join(d, f"pep_solve_{ks[0]}_{ks[-1]}.csv")
    _write(path, buf.getvalue())
    print(f"wrote {path}", file=out)
    if args.strict and inaccurate:
        return EXIT_NUMERIC
    return EXIT_AUDIT if failed and args.strict else EXIT_OK


def cmd_pgextra(args, out=None) -> int:
    out = out or sys.stdout
    base = pgextra.PgExtraConfig.reduced() if args.reduced else pgextra.PgExtraConfig()
    cfg = base
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file {args.config!r} not found")
        with open(args.config) as fh:
            try:
                cfg = pgextra.load_config(fh.read(), base)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
    if args.horizon:
        cfg = replace(cfg, horizon=args.horizon)
    if cfg.graph.startswith("file:") and not os.path.isfile(cfg.graph[5:]):
        raise UsageError(f"graph file {cfg.graph[5:]!r} not found")
    d = cfg.output_dir or _out_dir(args)
    res = pgextra.run_experiment(replace(cfg, output_dir=None))
    for path in res.write(d):
        print(f"wrote {path}", file=out)
    K = cfg.horizon
    failed = False
    for name in cfg.variants:
        c = res.columns[name]
        worst = min(float(np.min(m)) for m in res.tail_margins[name].values()) / res.v_hat_norm_sq
        ok = worst >= -1e-3
        failed |= not ok
        print(
            f"{name}: norm_iter_norm_sq={c['norm_iter_norm_sq'][K]:.6g} "
            f"fpr_mnorm_sq={c['fpr_mnorm_sq'][K]:.6g} tail projection margin={worst:.3g} "
            f"[{'PASS' if ok else 'FAIL'}]",
            file=out,
        )
    print(f"v_hat_norm_sq={res.v_hat_norm_sq:.6g}", file=out)
    return EXIT_AUDIT if failed and args.strict else EXIT_OK


def cmd_demo(args, out=None) -> int:
    """A quick tour: counterexample, tight instance, lower bound, small PEP."""
    out = out or sys.stdout
    op, x0 = parse_operator("rotation-shift")
    traj = schedules.run(op, schedules.picard(), x0, 100)
    print(f"rotation-shift: residual distance^2 to v stays {traj.metrics['fpr_dist_v_sq'][-1]:.3g}", file=out)
    print(f"  normalized iterate distance^2 at k=100: {traj.metrics['norm_iter_dist_v_sq'][-1]:.3g}", file=out)
    for k in (2, 10, 50):
        op = operators.make_worst_case(k)
        traj = schedules.run(op, schedules.picard(), np.zeros(op.dimension), k)
        audit = analysis.audit_rate(traj, "picard-normalized")
        print(f"worst-case k={k}: {audit.summary()}", file=out)
    res = lowerbound.resisting_rotation(
        lowerbound.heavy_ball_algorithm(), lowerbound.default_inner(6), np.zeros(11), np.eye(11)[0], 11, 6
    )
    print(f"resisting rotation vs heavy ball: {lowerbound.verify_lower_bound(res.op, res.trace, mode='unchecked')}", file=out)
    for cap in (1.0, None):
        sol = pep.solve_pep(pep.build_pep(2, cap), max_iter=20_000)
        label = "||v||^2 <= 1" if cap else "uncapped"
        print(f"pep k=2 ({label}, accurate={sol.accurate}): {pep.verify_pep_bounds(2, sol.value)}", file=out)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--strict", action="store_true", help="exit 1 on any audit failure")

    p = argparse.ArgumentParser(prog="idvkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    it = sub.add_parser("iterate", parents=[common], help="run an operator x schedule and audit rates")
    it.add_argument("--op", required=True)
    it.add_argument("--schedule", default="picard")
    it.add_argument("--k", type=int, required=True)
    it.add_argument("--x0", help="comma-separated starting point")
    it.add_argument("--audit", action="append", choices=sorted(analysis.ENVELOPES))
    it.add_argument("--dist-sq", type=float, help="override ||x0 - x_star||^2 for audits")
    it.add_argument("--name", help="output file stem")
    it.set_defaults(func=cmd_iterate)

    lb = sub.add_parser("lowerbound", parents=[common], help="audit the span lower bound")
    lb.add_argument("--k", type=int, required=True)
    lb.add_argument("--draws", type=int, default=100)
    lb.add_argument("--v-norm", type=float, default=1.0)
    lb.add_argument("--resist", help="picard | ohm | heavy-ball: run the resisting rotation instead")
    lb.add_argument("--dim", type=int, help="ambient dimension for --resist (default 2K-1)")
    lb.set_defaults(func=cmd_lowerbound)

    pp = sub.add_parser("pep", help="performance estimation SDPs")
    psub = pp.add_subparsers(dest="pep_command", required=True)
    gen = psub.add_parser("gen", parents=[common], help="write SDPA files")
    gen.add_argument("--k", required=True, help="k or lo..hi")
    gen.add_argument("--cap", type=float, help="cap on ||v||^2")
    gen.add_argument("--out", help="output file (single k only)")
    gen.set_defaults(func=cmd_pep_gen)
    solve = psub.add_parser("solve", parents=[common], help="solve and bracket")
    solve.add_argument("--k", required=True, help="k or lo..hi")
    solve.add_argument("--tol", type=float, default=1e-6)
    solve.add_argument("--max-iter", type=int, default=60_000)
    solve.add_argument("--cap", type=float, help="cap on ||v||^2")
    solve.add_argument("--out", help="CSV path for the value table")
    solve.set_defaults(func=cmd_pep_solve)

    pg = sub.add_parser("pgextra", parents=[common], help="decentralized SDP infeasibility experiment")
    pg.add_argument("config", nargs="?", help="INI config with [instance] [graph] [algo] [output]")
    pg.add_argument("--reduced", action="store_true", help="start from the small test-suite instance")
    pg.add_argument("--horizon", type=int)
    pg.set_defaults(func=cmd_pgextra)

    demo = sub.add_parser("demo", parents=[common], help="short tour of the package")
    demo.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, schedules.NonFiniteIterate, schedules.DegenerateNormalization, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
