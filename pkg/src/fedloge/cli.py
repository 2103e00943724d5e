"""Command-line entry point: ``fedloge run|compare|ssec-build|probe``.

Exit codes: 0 success, 2 configuration/validation error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys

from .errors import ConfigError, ValidationError
from . import experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _overrides(args):
    return {"experiment.seed": getattr(args, "seed", None),
            "experiment.workers": getattr(args, "workers", None)}


def _cmd_run(args):
    result, out = experiment.run_experiment(args.config, _overrides(args), args.out)
    m = result.metrics
    print(f"{out}: gm={m['gm_accuracy']:.4f} few={m['gm_few']} pm={m['pm_accuracy']:.4f}")


def _cmd_compare(args):
    rows = experiment.compare(args.runs, args.out)
    csv.writer(sys.stdout).writerows(rows)


def _cmd_ssec_build(args):
    res, out = experiment.ssec_build(args.config, _overrides(args), args.out)
    d = res.diagnostics
    print(f"{out}: norm_mean={d.norm_mean:.6f} norm_var={d.norm_var:.3e} "
          f"angle_mean={d.angle_mean_deg:.3f} min_angle={d.min_angle_deg:.3f}")


def _cmd_probe(args):
    _, out = experiment.probe(args.run_dir, args.klass, args.out)
    print(out)


def build_parser():
    p = argparse.ArgumentParser(prog="fedloge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a full experiment from a config file")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, help="parallel client updates per round")
    r.add_argument("--out", help="run directory (overrides experiment.out)")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="side-by-side metrics of finished runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--out", help="write the comparison CSV here as well")
    c.set_defaults(func=_cmd_compare)

    s = sub.add_parser("ssec-build", help="construct the sparse ETF head only")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_ssec_build)

    pr = sub.add_parser("probe", help="feature degeneration profile of one class")
    pr.add_argument("run_dir")
    pr.add_argument("--class", dest="klass", type=int, required=True)
    pr.add_argument("--out")
    pr.set_defaults(func=_cmd_probe)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 -- report any stage failure with exit code 3
        print(f"runtime failure in {args.command}: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
