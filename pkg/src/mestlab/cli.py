"""Command-line entry point.

Exit codes: 0 success, 2 invalid input (bad flags, missing files, invalid
specs), 3 numerical failure (rank deficiency, non-convergence). Coordinates on
the command line are 1-based.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__, kernels, noise
from .core import DesignMatrix, SolverOptions, fit
from .designs import DesignSpec, Thresholds, check_assumptions, generate
from .exceptions import InvalidSpec, NumericalFailure
from .harness import (jackknife_variance, load_config, parse_coords, run_coverage,
                      run_ks_comparison, write_coverage, write_ks, write_manifest)
from .io import read_matrix, read_vector, write_json, write_matrix, write_table
from .losses import parse_loss
from .loo import deterministic_bounds
from .sensitivity import sopi_moments

log = logging.getLogger("mestlab")


def _design(args) -> DesignMatrix:
    return DesignMatrix(read_matrix(args.design), has_intercept=getattr(args, "intercept", False))


def _opts(args) -> SolverOptions:
    return SolverOptions(tol=args.tol, max_iter=args.max_iter)


def _finish(args, outputs, t0, extra=None):
    outdir = os.path.dirname(os.path.abspath(args.out))
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    path = write_manifest(outdir, args.command, config, outputs, time.perf_counter() - t0, extra)
    # keep one manifest per output file when several commands share a directory
    target = os.path.abspath(args.out) + ".manifest.json"
    os.replace(path, target)


def cmd_fit(args):
    t0 = time.perf_counter()
    dm = _design(args)
    y = read_vector(args.response)
    loss = parse_loss(args.loss)
    res = fit(dm, y, loss, _opts(args))
    out = res.to_dict()
    out["loss"] = str(loss)
    write_json(args.out, out)
    _finish(args, [args.out], t0)
    log.info("converged in %d iterations, grad_norm=%.3e", res.iterations, res.grad_norm)


def cmd_loo(args):
    t0 = time.perf_counter()
    dm = _design(args)
    y = read_vector(args.response)
    loss = parse_loss(args.loss)
    coords = parse_coords(args.coords, dm.p)
    if dm.has_intercept and 0 in coords:
        raise InvalidSpec("coordinate 1 is the intercept and cannot be analysed")
    errors = noise.parse_errors(args.errors) if args.errors else None
    rep = deterministic_bounds(dm, y, loss, coords, error_model=errors, opts=_opts(args),
                               threads=args.threads)
    rows = []
    for k, l in enumerate(rep.loos):
        rows.append({
            "j": l.j + 1, "bj": l.bj, "beta_j": rep.full_fit.beta_hat[l.j], "Nj": l.Nj, "xij": l.xij,
            "delta_c_contrib": max(l.h0_ratio, float(l.h1_ratio.max())),
            "bound_i_pass": int(rep.bounds["i"]["pass"]),
            "bound_ii_pass": int(rep.bounds["ii"]["per_coord_pass"][k]),
            "bound_iii_pass": int(rep.bounds["iii"]["per_coord_pass"][k]),
            "bound_iv_pass": int(rep.bounds["iv"]["per_coord_pass"][k]),
        })
    cols = ["j", "bj", "beta_j", "Nj", "xij", "delta_c_contrib",
            "bound_i_pass", "bound_ii_pass", "bound_iii_pass", "bound_iv_pass"]
    write_table(args.out, rows, cols)
    summary = {name: {k: v for k, v in b.items() if k in ("quantity", "bound", "slack", "pass")}
               for name, b in rep.bounds.items()}
    _finish(args, [args.out], t0, {"bounds": summary, "delta_c": rep.delta_c, "T": rep.T, "E": rep.E})


def cmd_sensitivity(args):
    t0 = time.perf_counter()
    dm = _design(args)
    loss = parse_loss(args.loss)
    model = noise.parse_errors(args.errors)
    coords = parse_coords(args.coords, dm.p)
    rep = sopi_moments(dm, loss, model, coords, reps=args.reps, seed=args.seed,
                       opts=_opts(args), threads=args.threads)
    cols = ["j", "kappa0", "kappa1", "kappa2", "Mj", "var_hat", "sopi_bound",
            "se_kappa0", "se_kappa1", "se_kappa2", "se_Mj"]
    write_table(args.out, list(rep.rows()), cols)
    _finish(args, [args.out], t0, {"bound_checks": rep.bound_checks, "failures": rep.failures})


def _spec_from_args(args) -> DesignSpec:
    kw = dict(family=args.family, n=args.n or 1, p=args.p or 1, seed=args.seed, dist=args.dist,
              factor_dist=args.factor_dist, include_intercept=args.intercept)
    if args.group_sizes:
        kw["group_sizes"] = [int(g) for g in args.group_sizes.split(",")]
    elif args.family != "anova" and (args.n is None or args.p is None):
        raise InvalidSpec("--n and --p are required for this family")
    if args.truncate:
        kw["truncate"] = tuple(float(t) for t in args.truncate.split(","))
    return DesignSpec(**kw)


def cmd_design_gen(args):
    t0 = time.perf_counter()
    dm = generate(_spec_from_args(args))
    write_matrix(args.out, dm.X)
    _finish(args, [args.out], t0, {"shape": list(dm.X.shape)})


def cmd_design_check(args):
    t0 = time.perf_counter()
    dm = _design(args)
    loss = parse_loss(args.loss)
    model = noise.parse_errors(args.errors)
    coords = parse_coords(args.coords, dm.p)
    rep = check_assumptions(dm, loss, model, coords, reps=args.reps, seed=args.seed,
                            thresholds=Thresholds(), threads=args.threads, opts=_opts(args))
    d = rep.to_dict()
    d["Jn"] = [j + 1 for j in d["Jn"]]
    write_json(args.out, d)
    _finish(args, [args.out], t0, {"verdicts": {k: v["verdict"] for k, v in rep.verdicts.items()}})
    for k, v in rep.verdicts.items():
        log.info("%-10s %s", k, v["verdict"])


def cmd_coverage(args):
    cfg = load_config(args.config)
    cfg.threads = args.threads
    rep = run_coverage(cfg)
    write_coverage(rep, args.out)
    for c in rep.cells:
        log.info("n=%d mean coverage %.4f", c.n, c.summary()["mean_coverage"])


def cmd_ks(args):
    cfg = load_config(args.config)
    cfg.threads = args.threads
    rep = run_ks_comparison(cfg)
    write_ks(rep, cfg, args.out)
    for k in cfg.kappas:
        log.info("kappa=%g: KS2 < KS1 in %.0f%% of seeds", k, 100 * rep.fraction_ks2_smaller(k))


def cmd_jackknife(args):
    t0 = time.perf_counter()
    dm = _design(args)
    y = read_vector(args.response)
    loss = parse_loss(args.loss)
    coords = parse_coords(args.coords, dm.p)
    rows = [{"j": j + 1, "jackknife_var": jackknife_variance(dm, y, loss, j, _opts(args), args.threads)}
            for j in coords]
    write_table(args.out, rows, ["j", "jackknife_var"])
    _finish(args, [args.out], t0)


def _add_solver(p):
    p.add_argument("--tol", type=float, default=1e-10, help="relative gradient tolerance")
    p.add_argument("--max-iter", type=int, default=200)


def _add_design_in(p, response=True):
    p.add_argument("--design", required=True, help="headerless CSV design matrix")
    if response:
        p.add_argument("--response", required=True, help="CSV response vector")
    p.add_argument("--intercept", action="store_true", help="column 1 is an all-ones intercept")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mestlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"mestlab {__version__} (kernels: {kernels.BACKEND}, numpy {np.__version__})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (default: available cores)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit an M-estimator")
    _add_design_in(p)
    p.add_argument("--loss", default="huber")
    p.add_argument("--out", required=True)
    _add_solver(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("loo", parents=[common], help="leave-one-predictor-out quantities and bounds")
    _add_design_in(p)
    p.add_argument("--loss", default="huber")
    p.add_argument("--coords", default="all")
    p.add_argument("--errors", default=None, help="error model, used for E psi(eps) in U and U0")
    p.add_argument("--out", required=True)
    _add_solver(p)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("sensitivity", parents=[common], help="derivative moments and normality bound")
    _add_design_in(p, response=False)
    p.add_argument("--loss", default="huber")
    p.add_argument("--errors", default="gaussian")
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", default="1")
    p.add_argument("--out", required=True)
    _add_solver(p)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("design", help="generate or check designs")
    dsub = p.add_subparsers(dest="design_command", required=True)
    g = dsub.add_parser("gen", parents=[common], help="generate a design")
    g.add_argument("--family", default="iid",
                   choices=["iid", "elliptical", "matrix_normal", "partial_hadamard", "anova"])
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dist", default="gaussian")
    g.add_argument("--factor-dist", default="gaussian")
    g.add_argument("--group-sizes", default=None, help="comma-separated ANOVA group sizes")
    g.add_argument("--truncate", default=None, help="lo,hi quantiles of |zeta| (elliptical)")
    g.add_argument("--intercept", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_design_gen, command="design gen")
    c = dsub.add_parser("check", parents=[common], help="check design assumptions")
    _add_design_in(c, response=False)
    c.add_argument("--loss", default="huber")
    c.add_argument("--errors", default="gaussian")
    c.add_argument("--coords", default="all")
    c.add_argument("--reps", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    _add_solver(c)
    c.set_defaults(func=cmd_design_check, command="design check")

    for name, func, helptext in (("coverage", cmd_coverage, "interval coverage experiment"),
                                 ("ks", cmd_ks, "p-fixed vs p/n-fixed KS comparison")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--config", required=True, help="key = value experiment file")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)

    p = sub.add_parser("jackknife", parents=[common], help="delete-one jackknife variance")
    _add_design_in(p)
    p.add_argument("--loss", default="huber")
    p.add_argument("--coords", default="1")
    p.add_argument("--out", required=True)
    _add_solver(p)
    p.set_defaults(func=cmd_jackknife)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except InvalidSpec as err:
        print(f"mestlab: error: {err}", file=sys.stderr)
        return 2
    except NumericalFailure as err:
        print(f"mestlab: numerical failure: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"mestlab: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
