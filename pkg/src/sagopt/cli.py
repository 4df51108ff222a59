"""Command-line front end: ``sagopt <subcommand> [flags]``.

Every subcommand writes one CSV table (stdout when ``--out`` is omitted,
otherwise the file plus a ``.meta.json`` sidecar).  Values are taken from
``--config`` first and then overridden by explicit flags.

Exit codes: 0 success, 1 when the only outcome was divergence (or a
verification check failed), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__, bench
from .exceptions import SagOptError

log = logging.getLogger("sagopt")

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2
DESCRIPTION = "Seeded experiments for accelerated gradient schemes, emitted as CSV."

PRECEDENCE = ("configuration precedence: built-in defaults < --config file < "
              "explicit flags")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """One-line diagnosis, then the full help of the offending (sub)command."""

    def error(self, message):
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        self.print_help(sys.stderr)
        sys.exit(EXIT_USAGE)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", metavar="PATH", help="flat key=value file; flags override it")
    g.add_argument("--seed", type=int, help="64-bit seed (default 0, or the desk seed for matcomp)")
    g.add_argument("--out", metavar="PATH", help="CSV destination (default: stdout)")
    g.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    g.add_argument("-q", "--quiet", action="store_true", help="errors only")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="sagopt", description=DESCRIPTION,
                     epilog=PRECEDENCE)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    parser.subcommands = {}

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text,
                            parents=[common], epilog=PRECEDENCE)
        parser.subcommands[name] = sp
        return sp

    p = add("order", "truncation-error ladders and fitted orders")
    p.add_argument("--scheme", choices=["nag", "sag", "both"])
    p.add_argument("--objective", choices=["quadratic", "logistic"])
    p.add_argument("--t", type=_positive_float, help="evaluation time (default 2)")
    p.add_argument("--h-max", type=_positive_float, help="largest step of the ladder (default 0.04)")
    p.add_argument("--ladder-len", type=int, help="number of dyadic steps, >= 5 (default 6)")
    p.set_defaults(handler=cmd_order)

    p = add("stability", "absolute-stability scans and parameter invariance")
    p.add_argument("--scheme", choices=["nag", "sag", "both"])
    p.add_argument("--z-max", type=_positive_float, help="scan upper end (default 6)")
    p.add_argument("--grid", type=_positive_float, help="z grid step (default 1e-3)")
    p.add_argument("--params", metavar="K,M1,M2;...",
                   help="scheme parameter triples for the invariance check; '' disables it")
    p.set_defaults(handler=cmd_stability)

    p = add("probe", "run the real iteration on mu x^2/2 and classify growth")
    p.add_argument("--scheme", choices=["nag", "sag", "both"])
    p.add_argument("--mu", type=_positive_float, help="curvature (default 1)")
    p.add_argument("--s-grid", metavar="S1,S2,...", help="step sizes to probe")
    p.add_argument("--iters", type=_positive_int, help="iterations per run (default 10000)")
    p.add_argument("--burn-in", type=_positive_int, help="reference iteration (default 100)")
    p.set_defaults(handler=cmd_probe)

    p = add("matcomp", "nuclear-norm matrix completion runs")
    p.add_argument("--method", choices=["fista", "apg", "sfista", "all"])
    p.add_argument("--rows", type=_positive_int)
    p.add_argument("--cols", type=_positive_int)
    p.add_argument("--rank", type=_positive_int)
    p.add_argument("--fraction", type=float, help="observed fraction in (0, 1]")
    p.add_argument("--lambda", dest="lam", type=float, help="nuclear-norm weight (default 1)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--s", type=_positive_float, help="fixed step: objective curves")
    mode.add_argument("--s-grid", metavar="S1,S2,...|STEP:TOP",
                      help="feasible-step scan over a list or a uniform grid (default 0.1:6)")
    mode.add_argument("--backtrack-beta", type=float, metavar="BETA",
                      help="backtracking comparison with shrink factor BETA")
    p.add_argument("--s-init", type=_positive_float,
                   help="initial step for backtracking (default 8)")
    p.add_argument("--iters", type=_positive_int, help="iterations per run (default 200)")
    p.set_defaults(handler=cmd_matcomp)

    p = add("verify", "lemma matrices, Gronwall fuzz and coefficient identities")
    p.add_argument("--n-max", type=int, help="largest n (default 50)")
    p.set_defaults(handler=cmd_verify)
    return parser


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------

def _load_config(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            return bench.parse_config(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(f"bad config {path}: {exc}") from None


def _config(args, kind, keys, default_seed=0):
    params = _load_config(args.config)
    seed = params.pop("seed", None)
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    if args.seed is not None:
        seed = args.seed
    try:
        seed = default_seed if seed is None else int(seed)
    except ValueError:
        raise UsageError(f"seed must be an integer, got {seed!r}") from None
    if not 0 <= seed < 1 << 64:
        raise UsageError("seed must fit in 64 unsigned bits")
    return bench.ExperimentConfig(kind, seed, params, args.out)


def _emit(table, out):
    if out:
        table.write(out)
        log.info("wrote %s (%d rows)", out, len(table.rows))
    else:
        sys.stdout.write(table.to_csv_text())
        sys.stdout.flush()


def _status(table):
    if table.metadata.get("all_diverged"):
        return EXIT_DIVERGED
    if table.metadata.get("all_ok") is False:
        return EXIT_DIVERGED
    return EXIT_OK


def _run(experiment, cfg):
    try:
        table = experiment(cfg)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    _emit(table, cfg.output)
    return _status(table)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_order(args):
    cfg = _config(args, "order", ["scheme", "objective", "t", "h_max", "ladder_len"])
    return _run(bench.order_experiment, cfg)


def cmd_stability(args):
    cfg = _config(args, "stability", ["scheme", "z_max", "grid", "params"])
    return _run(bench.stability_experiment, cfg)


def cmd_probe(args):
    cfg = _config(args, "probe", ["scheme", "mu", "s_grid", "iters", "burn_in"])
    return _run(bench.probe_experiment, cfg)


def cmd_matcomp(args):
    keys = ["method", "rows", "cols", "rank", "fraction", "lam", "s", "s_grid",
            "iters", "s_init"]
    cfg = _config(args, "matcomp", keys, default_seed=bench.DESK["seed"])
    if args.backtrack_beta is not None:
        cfg.params["beta"] = args.backtrack_beta
    modes = [k for k in ("s", "s_grid", "beta") if cfg.get(k) is not None]
    if len(modes) > 1:
        # only reachable through the config file; argparse guards the flags
        raise UsageError("config selects more than one of --s, --s-grid, --backtrack-beta")
    grid_arg = cfg.get("s_grid")
    if isinstance(grid_arg, str) and ":" in grid_arg:
        step, _, top = grid_arg.partition(":")
        cfg.params.pop("s_grid")
        cfg.params["grid"], cfg.params["s_top"] = float(step), float(top)
    if cfg.get("s") is not None:
        kind, experiment = "matcomp-fixed", bench.fixed_step_experiment
    elif cfg.get("beta") is not None:
        kind, experiment = "matcomp-backtrack", bench.backtrack_experiment
    else:
        kind, experiment = "matcomp-feasible", bench.feasible_experiment
    cfg.kind = kind
    return _run(experiment, cfg)


def cmd_verify(args):
    cfg = _config(args, "verify", ["n_max"])
    if int(cfg.get("n_max", 50)) < 4:
        raise UsageError("--n-max must be >= 4")
    return _run(bench.verify_experiment, cfg)


# --------------------------------------------------------------------------

def _setup_logging(args):
    level = logging.ERROR if args.quiet else (logging.INFO if args.verbose else logging.WARNING)
    if args.verbose > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args, extras = parser.parse_known_args(argv)
        if extras:
            target = parser.subcommands.get(args.command, parser)
            target.error(f"unrecognized arguments: {' '.join(extras)}")
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    _setup_logging(args)
    try:
        bench.workers()
        return args.handler(args)
    except UsageError as exc:
        sys.stderr.write(f"sagopt {args.command}: error: {exc}\n")
        parser.subcommands[args.command].print_help(sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # bad SAG_OPTIM_THREADS and similar environment problems
        sys.stderr.write(f"sagopt: error: {exc}\n")
        return EXIT_USAGE
    except SagOptError as exc:
        sys.stderr.write(f"sagopt {args.command}: {type(exc).__name__}: {exc}\n")
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
