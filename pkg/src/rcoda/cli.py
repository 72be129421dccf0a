"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Results go to stdout as JSON; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import ExperimentSpec, list_presets, run_experiment
from .hmrf import HmrfSettings, MixturePriors, fit_hmrf, posterior_predictive_check
from .inference import McmcSettings, Prior, sample_posterior
from .io import dump_json, read_field, read_image, write_field, write_manifest
from .lattice import build_geometry, build_plan
from .likelihood import BACKENDS, CapacityError, IncompatibleBackend, RangeError, TdiTable, build_tdi_table, default_tdi_grid, make_likelihood
from .potts import PottsModel, check_field, gibbs_sample

logger = logging.getLogger("rcoda")

BETA_MAX = 4.0


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    sys.stdout.write(dump_json(obj) + "\n")


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def cmd_simulate(args) -> dict:
    if not 0.0 <= args.beta <= BETA_MAX:
        raise UsageError(f"--beta must lie in [0, {BETA_MAX}], got {args.beta}")
    if args.q < 2 or args.q > 255:
        raise UsageError("--q must lie in [2, 255]")
    started = time.time()
    geom = build_geometry(args.rows, args.cols, args.order)
    z = gibbs_sample(PottsModel(geom, args.q, args.beta), args.sweeps, args.seed)
    out = Path(args.out)
    write_field(out, z, args.q)
    config = {k: getattr(args, k) for k in ("rows", "cols", "q", "beta", "order", "sweeps", "seed")}
    write_manifest(_manifest_path(out), "simulate", config, {"seed": args.seed}, {"field": out}, started)
    return {"field": str(out), "bond_count": int((z.ravel()[geom.edges[:, 0]] == z.ravel()[geom.edges[:, 1]]).sum())}


def cmd_fit(args) -> dict:
    started = time.time()
    z, q_file = read_field(args.field)
    q = args.q or q_file or max(2, int(z.max()) + 1)
    geom = build_geometry(z.shape[0], z.shape[1], args.order)
    z = check_field(z, geom, q)
    table = None
    if args.backend == "tdi":
        if not args.table:
            raise UsageError("backend tdi requires --table")
        table = TdiTable.from_csv(args.table)
    lik = make_likelihood(
        args.backend, z, geom, q, T=args.T, table=table,
        terminal=args.terminal, terminal_exponent=args.terminal_exponent,
    )
    prior = Prior(args.prior_lo, args.prior_hi)
    settings = McmcSettings(
        iterations=args.iterations, burn_in=args.burn_in, seed=args.seed,
        proposal_sd_beta=args.sd_beta, proposal_sd_alpha=args.sd_alpha, adapt=not args.no_adapt,
    )
    chain = sample_posterior(lik, prior, settings)
    result = chain.to_dict(args.level)
    result.update(field=str(args.field), q=q, order=geom.order.value)
    artifacts = {}
    if args.trace:
        Path(args.trace).write_text(chain.trace_csv())
        artifacts["trace"] = args.trace
    if args.summary:
        dump_json(result, args.summary)
        artifacts["summary"] = args.summary
    manifest_at = Path(args.summary or args.trace or args.field)
    if args.summary or args.trace:
        write_manifest(_manifest_path(manifest_at), "fit", vars_json(args), {"seed": args.seed}, artifacts, started)
    return result


def cmd_tdi_table(args) -> dict:
    started = time.time()
    geom = build_geometry(args.rows, args.cols, args.order)
    grid = default_tdi_grid(geom.order, args.beta_max, args.step)
    table = build_tdi_table(geom, args.q, grid, args.sweeps, args.burn_in, args.seed)
    out = Path(args.out)
    table.to_csv(out)
    write_manifest(_manifest_path(out), "tdi-table", vars_json(args), {"seed": args.seed}, {"table": out}, started)
    return {"table": str(out), "geometry": table.geometry_key, "n_points": len(grid), "beta_max": table.beta_max}


def cmd_experiment(args) -> dict:
    started = time.time()
    if bool(args.spec) == bool(args.preset):
        raise UsageError("give exactly one of --spec or --preset")
    spec = ExperimentSpec.from_json(args.spec) if args.spec else ExperimentSpec.preset(args.preset)
    if args.replicates:
        spec.replicates = args.replicates
    if args.seed is not None:
        spec.master_seed = args.seed
    report = run_experiment(spec, workers=args.workers)
    paths = report.write(args.outdir)
    write_manifest(Path(args.outdir) / "manifest.json", "experiment",
                   {"spec": spec.to_dict(), "workers": args.workers}, {"master_seed": spec.master_seed}, paths, started)
    return {"outdir": str(args.outdir), "cells": report.cells}


def cmd_hmrf(args) -> dict:
    started = time.time()
    y = read_image(args.image)
    table = TdiTable.from_csv(args.table) if args.table else None
    if args.backend == "tdi" and table is None:
        raise UsageError("backend tdi requires --table")
    if args.backend in ("rcoda-m", "rcoda-c") and args.order != "second":
        raise UsageError(f"backend {args.backend} needs --order second")
    if args.backend == "rcoda" and args.order != "first":
        raise UsageError("use rcoda-c or rcoda-m with --order second")
    priors = MixturePriors(beta_hi=args.prior_hi)
    settings = HmrfSettings(iterations=args.iterations, burn_in=args.burn_in, seed=args.seed,
                            n_snapshots=args.snapshots)
    res = fit_hmrf(y, args.K, args.backend, args.order, priors, settings, table=table)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trace": out / "trace.csv", "labels": out / "labels.csv", "predictive": out / "predictive.json",
             "summary": out / "summary.json"}
    paths["trace"].write_text(res.trace_csv())
    np.savetxt(paths["labels"], res.label_map() + 1, fmt="%d", delimiter=",")
    result = res.to_dict()
    try:
        ppc = posterior_predictive_check(y, res, refresh_sweeps=args.refresh_sweeps, seed=args.seed)
    except ValueError as exc:
        ppc = {"error": str(exc)}
    dump_json(ppc, paths["predictive"])
    result["predictive"] = ppc
    dump_json(result, paths["summary"])
    write_manifest(out / "manifest.json", "hmrf", vars_json(args), {"seed": args.seed}, paths, started)
    return result


def cmd_plan_dump(args) -> dict:
    geom = build_geometry(args.rows, args.cols, args.order)
    plan = build_plan(geom, args.T)
    d = plan.to_dict()
    if args.out:
        started = time.time()
        dump_json(d, args.out)
        write_manifest(_manifest_path(Path(args.out)), "plan-dump", vars_json(args), {}, {"plan": args.out}, started)
    return d


def cmd_presets(args) -> dict:
    return {"presets": list_presets()}


def vars_json(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcoda", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON file of flag defaults (flags override it)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a Potts field by Gibbs sampling")
    s.add_argument("--rows", type=int, required=True)
    s.add_argument("--cols", type=int, required=True)
    s.add_argument("--q", type=int, default=2)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--order", choices=["first", "second"], default="first")
    s.add_argument("--sweeps", type=int, default=5000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output path; .bin for binary, otherwise CSV")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="posterior for beta (and alpha) given a field")
    f.add_argument("--field", required=True)
    f.add_argument("--q", type=int, help="number of states (default: stored value, else max label, at least 2)")
    f.add_argument("--order", choices=["first", "second"], default="first")
    f.add_argument("--backend", choices=BACKENDS, default="rcoda")
    f.add_argument("--table", help="TDI table CSV (backend tdi)")
    f.add_argument("--T", type=int, help="recursion depth (default: terminal <= 4x4)")
    f.add_argument("--terminal", choices=["exact", "independent"], default="exact")
    f.add_argument("--terminal-exponent", type=int, help="decay exponent of the terminal term (default T)")
    f.add_argument("--prior-lo", type=float, default=0.0)
    f.add_argument("--prior-hi", type=float, default=0.9)
    f.add_argument("--iterations", type=int, default=6000)
    f.add_argument("--burn-in", type=int, default=2000)
    f.add_argument("--sd-beta", type=float, default=0.05)
    f.add_argument("--sd-alpha", type=float, default=0.1)
    f.add_argument("--no-adapt", action="store_true")
    f.add_argument("--level", type=float, default=0.95)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--trace", help="write the chain trace CSV here")
    f.add_argument("--summary", help="write the summary JSON here")
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("tdi-table", help="build a thermodynamic-integration lookup table")
    t.add_argument("--rows", type=int, required=True)
    t.add_argument("--cols", type=int, required=True)
    t.add_argument("--q", type=int, default=2)
    t.add_argument("--order", choices=["first", "second"], default="first")
    t.add_argument("--beta-max", type=float)
    t.add_argument("--step", type=float, default=0.01)
    t.add_argument("--sweeps", type=int, default=2000)
    t.add_argument("--burn-in", type=int, default=500)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tdi_table)

    e = sub.add_parser("experiment", help="run a replicated simulation study")
    e.add_argument("--spec", help="experiment spec JSON")
    e.add_argument("--preset", help="name of a bundled spec (see 'rcoda presets')")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--replicates", type=int, help="override the spec's replicate count")
    e.add_argument("--seed", type=int, help="override the spec's master seed")
    e.add_argument("--outdir", default="experiment_out")
    e.set_defaults(func=cmd_experiment)

    h = sub.add_parser("hmrf", help="fit the hidden-Potts Gaussian mixture to an image")
    h.add_argument("--image", required=True, help="grayscale PGM (P5) or CSV matrix")
    h.add_argument("--K", type=int, default=2)
    h.add_argument("--backend", choices=["pl", "rcoda", "rcoda-m", "rcoda-c", "tdi"], default="rcoda")
    h.add_argument("--order", choices=["first", "second"], default="first")
    h.add_argument("--table")
    h.add_argument("--prior-hi", type=float, default=4.0)
    h.add_argument("--iterations", type=int, default=6000)
    h.add_argument("--burn-in", type=int, default=2000)
    h.add_argument("--snapshots", type=int, default=200)
    h.add_argument("--refresh-sweeps", type=int, default=1)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--outdir", default="hmrf_out")
    h.set_defaults(func=cmd_hmrf)

    d = sub.add_parser("plan-dump", help="print a decomposition plan as JSON")
    d.add_argument("--rows", type=int, required=True)
    d.add_argument("--cols", type=int, required=True)
    d.add_argument("--order", choices=["first", "second"], default="first")
    d.add_argument("--T", type=int)
    d.add_argument("--out")
    d.set_defaults(func=cmd_plan_dump)

    ps = sub.add_parser("presets", help="list bundled experiment specs")
    ps.set_defaults(func=cmd_presets)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = json.loads(Path(args.config).read_text())
    section = cfg.get(args.command, cfg)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    subparser.set_defaults(**{k.replace("-", "_"): v for k, v in section.items() if k.replace("-", "_") in known})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _emit(args.func(args))
    except (UsageError, CapacityError, RangeError, IncompatibleBackend) as exc:
        print(f"rcoda {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"rcoda {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        logger.exception("command failed")
        print(f"rcoda {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
