"""Command-line front end: ``maxent-doe {init,propose,record,benchmark,wave}``.

Exit codes: 0 success, 2 usage or data error, 3 session state error,
4 numerical or solver failure.
"""

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .benchmark import METHODS, run_benchmark
from .doe import DoeConfig
from .errors import MaxentDoeError, ParameterError
from .geometry import Domain
from .session import (DoeSession, parse_seed_design, read_points_csv, session_lock,
                      write_points_csv)
from .testbed import SQUARE, NoiseModel
from .timedep import WaveProblem, run_timedep_doe

log = logging.getLogger("maxent_doe")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_config_flags(p, with_budget: bool = True):
    g = p.add_argument_group("DoE settings")
    if with_budget:
        g.add_argument("--np", type=int, help="points per batch N_p (default 8)")
        g.add_argument("--iters", type=int, help="outer iterations (default 1)")
    g.add_argument("--r0", type=float, help="spacing support factor R0 (default 1.25)")
    g.add_argument("--gamma0", type=float, help="locality gamma0 at p0=2 (default 0.8)")
    g.add_argument("--order", type=int, help="consistency order (default 3)")
    g.add_argument("--p", type=float, help="distance-norm exponent (default 3)")
    g.add_argument("--grid", type=int, help="search grid points per dimension (default 41)")
    g.add_argument("--margin", type=float, help="boundary margin as a fraction of the extent (default 0.02)")
    g.add_argument("--kde-k", type=int, help="KDE neighbours k (default 50)")
    g.add_argument("--n-sigma", type=float, help="KDE width divisor N_sigma (default 3)")


def _add_noise_flags(p):
    p.add_argument("--noise", choices=["none", "multiplicative", "additive"], default="none",
                   help="noise model for analytic measurements")
    p.add_argument("--zeta", type=float, default=0.0, help="noise level")
    p.add_argument("--seed-rng", type=int, help="noise / replicate seed (required with noise or LHS)")


def _config(args, base: DoeConfig = DoeConfig()) -> DoeConfig:
    hol = {}
    for flag, key in (("gamma0", "gamma0"), ("order", "order"), ("p", "p")):
        if getattr(args, flag, None) is not None:
            hol[key] = getattr(args, flag)
    kde = {}
    if getattr(args, "kde_k", None) is not None:
        kde["k"] = args.kde_k
    if getattr(args, "n_sigma", None) is not None:
        kde["n_sigma"] = args.n_sigma
    top = {}
    for flag, key in (("np", "n_per_batch"), ("iters", "n_outer"), ("r0", "R0"), ("grid", "search_grid"),
                      ("margin", "boundary_margin")):
        if getattr(args, flag, None) is not None:
            top[key] = getattr(args, flag)
    holmes = replace(base.holmes, **hol) if hol else base.holmes
    kdec = replace(base.kde, **kde) if kde else base.kde
    return replace(base, holmes=holmes, kde=kdec, **top)


def _noise(args):
    if args.noise == "none" or args.zeta == 0:
        return None
    if args.seed_rng is None:
        raise ParameterError("noisy measurements need an explicit --seed-rng")
    return NoiseModel(args.noise, args.zeta, args.seed_rng)


def _emit(text: str, out=None):
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text, encoding="utf-8")


def cmd_init(args):
    domain = Domain.parse(args.domain)
    cfg = _config(args)
    path = Path(args.out)
    if path.exists() and not args.force:
        raise ParameterError(f"{path} already exists (use --force to overwrite)")
    if args.function is None and args.noise != "none":
        raise ParameterError("--noise only applies to analytic sessions (--function)")
    if args.function is not None and domain != SQUARE:
        raise ParameterError("analytic test functions are posed on -1,1;-1,1")
    s = DoeSession(domain, cfg, function=args.function.upper() if args.function else None, noise=_noise(args))
    P = parse_seed_design(args.seed, domain)
    s.add_seed(P, evaluate=s.function is not None)
    with session_lock(path):
        s.save(path)
    if s.function:
        print(f"{path}: {P.shape[0]} seed points evaluated")
        return
    # the seed points are the first batch the experimenter has to measure
    sheet = Path(f"{path}.proposals.csv")
    sheet.write_text(write_points_csv(P), encoding="utf-8")
    print(f"{path}: {P.shape[0]} seed points pending in {sheet}")


def cmd_propose(args):
    with session_lock(args.session):
        s = DoeSession.load(args.session)
        batch = s.propose(args.np)
        s.save(args.session)
    _emit(write_points_csv(batch), args.out or f"{args.session}.proposals.csv")


def cmd_record(args):
    with session_lock(args.session):
        s = DoeSession.load(args.session)
        if args.csv is None:
            n = s.record_analytic()
        else:
            P, v = read_points_csv(args.csv)
            n = s.record(P, v)
        s.save(args.session)
    print(f"{args.session}: recorded {n} points, {len(s.pending)} pending, iteration {s.iteration}")


def cmd_benchmark(args):
    cfg = _config(args)
    if args.iters is None:
        cfg = replace(cfg, n_outer=10)
    if "lhs" in args.method and args.seed_rng is None:
        raise ParameterError("the LHS baseline needs an explicit --seed-rng")
    seed = 0 if args.seed_rng is None else args.seed_rng
    P = parse_seed_design(args.seed, SQUARE)
    rows = run_benchmark([f.upper() for f in args.function], args.method, cfg, P, seed=seed,
                         replicates=args.replicates, noise=_noise(args))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["function", "method", "n_points", "l2", "R0", "seed"])
    for r in rows:
        w.writerow([r.function, r.method, r.n_points, f"{r.l2:.17g}", f"{r.R0:.17g}", r.seed])
    _emit(buf.getvalue(), args.out)


def cmd_wave(args):
    cfg = _config(args)
    res = run_timedep_doe(WaveProblem(), cfg, dt=args.dt, t_end=args.t_end,
                          update_interval=args.update_interval, method=args.method)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "l2", "n_nodes", "method"])
    for t, e, n in zip(res.times, res.l2, res.n_nodes):
        w.writerow([f"{t:.17g}", f"{e:.17g}", int(n), res.method])
    w.writerow(["integrated", f"{res.integrated:.17g}", "", res.method])
    _emit(buf.getvalue(), args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="maxent-doe", description="Maximum-entropy adaptive design of experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("init", help="create a session from a seed design")
    q.add_argument("--domain", default="-1,1;-1,1", help="box as 'lo,hi;lo,hi'")
    q.add_argument("--seed", required=True, help="ff:5x5, lhs:25:seed=7 or points:FILE.csv")
    q.add_argument("--function", help="analytic mode: test function T0..T9")
    q.add_argument("--out", default="session.json", help="session file")
    q.add_argument("--force", action="store_true", help="overwrite an existing session file")
    _add_config_flags(q)
    _add_noise_flags(q)
    q.set_defaults(func=cmd_init)

    q = sub.add_parser("propose", help="propose the next batch of points")
    q.add_argument("session")
    q.add_argument("--np", type=int, help="points in this batch (default from the session)")
    q.add_argument("--out", help="CSV file for the proposals (default SESSION.proposals.csv)")
    q.set_defaults(func=cmd_propose)

    q = sub.add_parser("record", help="record measured values for pending points")
    q.add_argument("session")
    q.add_argument("csv", nargs="?", help="CSV with header x1,...,xd,value (omit in analytic mode)")
    q.set_defaults(func=cmd_record)

    q = sub.add_parser("benchmark", help="error curves on the analytic test functions")
    q.add_argument("--function", nargs="+", default=["T1"], help="test function ids")
    q.add_argument("--method", nargs="+", default=["adaptive"], choices=METHODS)
    q.add_argument("--seed", default="ff:5x5", help="seed design (ff:AxB, lhs:N:seed=S, points:FILE)")
    q.add_argument("--replicates", type=int, default=100, help="LHS replicates")
    q.add_argument("--out", help="also write the CSV here")
    _add_config_flags(q)
    _add_noise_flags(q)
    q.set_defaults(func=cmd_benchmark)

    q = sub.add_parser("wave", help="time-dependent DoE on the vibrating drum")
    q.add_argument("--method", default="fe", choices=["ff", "none", "fe", "be", "me"])
    q.add_argument("--dt", type=float, default=0.1)
    q.add_argument("--update-interval", type=int, default=1, help="timesteps between re-proposals")
    q.add_argument("--t-end", type=float, default=20.0)
    q.add_argument("--out", help="also write the CSV here")
    _add_config_flags(q, with_budget=False)
    q.set_defaults(func=cmd_wave)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(f"maxent-doe: error: {exc}\n")
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MaxentDoeError as exc:
        sys.stderr.write(f"maxent-doe: {type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        sys.stderr.write(f"maxent-doe: error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
