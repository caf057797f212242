"""Command-line entry point.

    natvi run <spec.toml | preset-name> [--seed N] [--iterations N] [--out DIR]
    natvi verify --level fast|full
    natvi presets list
    natvi presets show <name>
"""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .verify import verify_suite


def _cmd_run(args):
    try:
        if Path(args.spec).is_file():
            spec = ex.parse_spec(args.spec)
        elif args.spec in ex.PRESETS:
            spec = ex.load_preset(args.spec)
        else:
            print(f"error: {args.spec!r} is neither a spec file nor a preset "
                  f"({', '.join(ex.PRESETS)})", file=sys.stderr)
            return 2
    except ex.SpecError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    run = spec.run
    if args.seed is not None:
        run = dataclasses.replace(run, seed=args.seed)
    if args.iterations is not None:
        if args.iterations < 1:
            print("error: --iterations must be at least 1", file=sys.stderr)
            return 2
        run = dataclasses.replace(run, iterations=args.iterations)
    spec = dataclasses.replace(spec, run=run)
    status = ex.run_experiment(spec, out=args.out)
    if status == 0:
        outdir = ex._output_dir(spec, args.out)
        print(f"wrote {outdir / spec.output['trace']} and {outdir / spec.output['summary']}")
    return status


def _cmd_verify(args):
    report = verify_suite(args.level, seed=args.seed, stream=sys.stdout)
    if report.ok:
        print(f"all {len(report.results)} properties passed ({args.level})")
        return 0
    for r in report.failures:
        print(f"FAILED: {r.name} (residual {r.residual:.3e}, tolerance {r.tolerance:.1e})",
              file=sys.stderr)
    return 1


def _cmd_presets(args):
    if args.action == "list":
        for name in ex.PRESETS:
            print(name)
        return 0
    if args.name not in ex.PRESETS:
        print(f"error: unknown preset {args.name!r}", file=sys.stderr)
        return 2
    print(ex.PRESETS[args.name].strip())
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="natvi", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment spec or preset")
    r.add_argument("spec", help="path to a TOML spec, or a preset name")
    r.add_argument("--seed", type=int)
    r.add_argument("--iterations", type=int)
    r.add_argument("--out", help="output directory (overrides [output] directory)")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("verify", help="run the property self-check suite")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=_cmd_verify)

    ps = sub.add_parser("presets", help="list or print reproduction presets")
    ps.add_argument("action", choices=("list", "show"))
    ps.add_argument("name", nargs="?")
    ps.set_defaults(func=_cmd_presets)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "action", None) == "show" and not args.name:
        print("error: presets show needs a preset name", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
