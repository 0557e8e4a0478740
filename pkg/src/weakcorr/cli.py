"""Command-line entry point: ``weakcorr <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error
(unreadable, version-mismatched or grid-mismatched input), 4 fit failure,
1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from weakcorr import __version__, io, recipes
from weakcorr import config as cfgmod
from weakcorr.fitting import FitError
from weakcorr.model import InvalidArgument

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_FIT = 4

log = logging.getLogger("weakcorr")


def _config(args):
    cfg = cfgmod.load(args.config)
    return cfgmod.apply_overrides(cfg, getattr(args, "shots", None), getattr(args, "seed", None))


def cmd_simulate(args):
    cfg = _config(args)
    ens = recipes.simulate(cfg, args.workers)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = io.write(out, recipes.ensembles_to_container(ens, cfg))
    print(f"wrote {out} sha256={digest}")
    return EXIT_OK


def cmd_analyze(args):
    cfg = _config(args)
    ens = recipes.container_to_ensembles(io.read(args.ensemble), cfg)
    products = recipes.analyze(cfg, ens, release=True)
    physics = {g: m[0].physics for g, m in recipes.groups(ens).items()}
    recipes.write_products(Path(args.output), products, cfg, physics, not args.no_plots)
    print(f"wrote analysis products to {args.output}")
    return EXIT_OK


def cmd_qwv(args):
    cfg = _config(args)
    ens = recipes.container_to_ensembles(io.read(args.ensemble), cfg)
    rep = recipes.qwv_report(cfg, ens, release=True)
    recipes.write_qwv(Path(args.output), rep, cfg, not args.no_plots)
    print(f"wrote weak-value tables to {args.output}")
    return EXIT_OK


def cmd_fit(args):
    cfg = _config(args)
    vhs = recipes.container_to_van_hove(io.read(args.products), cfg)
    physics = {lab_grp: phys for _, lab_grp, phys, _ in cfg.sequences()}
    reports = {}
    for g, vh in vhs.items():
        if g not in physics:
            raise recipes.DataError(f"group {g!r} is not described by the configuration")
        reports[g] = recipes.fit_van_hove(cfg, vh, physics[g])
    rows = recipes.write_fits(Path(args.output), reports, cfg)
    for r in rows:
        print(f"{r['group']:>12s} {r['mode']:>10s} c = {r['c'] * 1e3:.4f} +/- {r['c_se'] * 1e3:.4f} mm/s")
    return EXIT_OK


def cmd_reproduce(args):
    if args.config:
        cfg = cfgmod.apply_overrides(cfgmod.load(args.config), args.shots, args.seed)
    else:
        cfg = cfgmod.apply_overrides(cfgmod.bundled(args.figure), args.shots, args.seed)
    summary = recipes.reproduce(args.figure, args.output, cfg, args.workers, not args.no_plots)
    (Path(args.output) / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    print(f"{args.figure}: outputs in {args.output} (config {summary['config_hash']})")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="weakcorr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"weakcorr {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeded=False):
        sp.add_argument("--workers", type=int, default=None,
                        help=f"worker threads (default: ${recipes.WORKERS_ENV} or CPU count)")
        sp.add_argument("--no-plots", action="store_true")
        if seeded:
            sp.add_argument("--shots", type=int, default=None, help="override simulation.shots")
            sp.add_argument("--seed", type=int, default=None, help="override simulation.seed")

    sp = sub.add_parser("simulate", help="simulate an ensemble and write a container")
    sp.add_argument("config")
    sp.add_argument("-o", "--output", required=True)
    common(sp, seeded=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="CCF, Van Hove and structure factor from an ensemble")
    sp.add_argument("ensemble")
    sp.add_argument("-c", "--config", required=True)
    sp.add_argument("-o", "--output", required=True)
    common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("qwv", help="weak-value tables from an ensemble")
    sp.add_argument("ensemble")
    sp.add_argument("-c", "--config", required=True)
    sp.add_argument("-o", "--output", required=True)
    common(sp)
    sp.set_defaults(func=cmd_qwv)

    sp = sub.add_parser("fit", help="line-shape fits of analysis products")
    sp.add_argument("products")
    sp.add_argument("-c", "--config", required=True)
    sp.add_argument("-o", "--output", required=True)
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("reproduce", help="run a bundled figure recipe end to end")
    sp.add_argument("figure", choices=recipes.FIGURES)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("-c", "--config", default=None, help="use this config instead of the bundled one")
    common(sp, seeded=True)
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (io.ContainerError, recipes.DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FitError as exc:
        print(f"fit error: {exc} (best so far: {exc.best})", file=sys.stderr)
        return EXIT_FIT
    except InvalidArgument as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
