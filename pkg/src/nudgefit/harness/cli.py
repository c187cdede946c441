"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical blowup,
4 permanent degeneracy of the parameter update.
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigurationError, IntegrationBlowup, NudgeFitError, PermanentDegeneracy
from .config import ExperimentConfig, from_preset, load_config, normalize_algorithm, parse_axes
from .records import format_value

__all__ = ["main", "build_parser", "config_from_args"]

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_DEGENERATE = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="INI-style config file")
    p.add_argument("--preset", choices=("l96-default", "rbc-default", "scalar-toy"))
    p.add_argument("--algorithm", choices=("rni", "rni+", "rni-plus", "rls", "none"))
    p.add_argument("--mu", type=float, help="nudging gain (ODE presets)")
    p.add_argument("--mu1", type=float, help="vorticity gain (rbc)")
    p.add_argument("--mu2", type=float, help="temperature gain (rbc)")
    p.add_argument("--n-obs", type=int, dest="n_obs", help="observed modes per direction (rbc)")
    p.add_argument("--update-interval", type=float, dest="update_interval")
    p.add_argument("--fd-order", type=int, choices=(1, 2, 3), dest="fd_order")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-final", type=float, dest="t_final")
    p.add_argument("--seed", type=int)
    p.add_argument("--unknowns", help='parameter slots, e.g. "slow:0-19"')
    p.add_argument("--out", metavar="DIR", dest="output_dir")
    p.add_argument("--test-mode", action="store_true", default=None, dest="test_mode",
                   help="inject the true parameters to report parameter errors")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any config field or model constant (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nudgefit", description="Nudging-based parameter recovery experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("simulate", "integrate the reference system only"),
                       ("assimilate", "nudged copy with fixed parameters"),
                       ("estimate", "nudged copy with scheduled parameter updates")):
        _common(sub.add_parser(name, help=text))
    sw = sub.add_parser("sweep", help="Cartesian product of runs with a summary table")
    _common(sw)
    sw.add_argument("--axis", action="append", default=[], metavar="KEY=V1,V2,...")
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--sweep-mode", choices=("assimilate", "estimate"), default="estimate", dest="sweep_mode")
    b = sub.add_parser("bounds", help="print two-layer Lorenz 96 bound diagnostics")
    b.add_argument("--mu", type=float, default=50.0, help="slow-variable gain")
    b.add_argument("--mu-fast", type=float, default=None, dest="mu_fast")
    b.add_argument("--delta", type=float, default=1.0)
    b.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _pairs(items) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"expected KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


_FLAG_FIELDS = ("algorithm", "mu", "mu1", "mu2", "n_obs", "update_interval", "fd_order", "dt", "t_final",
                "seed", "unknowns", "output_dir", "test_mode")


def config_from_args(args, mode: str):
    """Returns ``(config, sweep_axes)``; precedence preset < file < --set < flags."""
    changes = _pairs(args.set)
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = normalize_algorithm(value) if name == "algorithm" else value
    changes["mode"] = mode
    if args.config:
        cfg, axes = load_config(args.config, preset=args.preset, **changes)
    else:
        cfg, axes = from_preset(args.preset or "l96-default", **changes), {}
    return cfg, axes


def _print_summary(cfg: ExperimentConfig, record, stream):
    final = record.final
    keys = [k for k in ("t", "state_error_rel", "param_error_rel", "Ra", "Pr") if k in final]
    stream.write(" ".join(f"{k}={format_value(final[k])}" for k in keys) + "\n")


def _bounds(args) -> int:
    from .. import l96
    over = _pairs(args.set)
    params = l96.default_params(K=int(over.get("K", 40)), J=int(over.get("J", 5)), F=float(over.get("F", 5.0)))
    b = l96.bounds(params)
    print(f"K = {params.K}")
    print(f"J = {params.J}")
    print(f"F = {params.F!r}")
    print(f"d_star = {b.d_star!r}")
    print(f"rho_star_sq = {b.rho_star_sq!r}")
    print(f"rho_star = {b.rho_star!r}")
    print(f"rho_dot_star_sq = {b.rho_dot_star_sq!r}")
    eta = l96.bound_eta(params, args.mu, args.mu_fast, args.delta)
    print(f"eta_star = {eta.eta_star!r}")
    print(f"eta_dot_star = {eta.eta_dot_star!r}")
    print(f"mu_star = {eta.mu_star!r}")
    for name, ok in eta.conditions.items():
        print(f"condition {name} = {'PASS' if ok else 'FAIL'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .runner import run, sweep
    try:
        if args.command == "bounds":
            return _bounds(args)
        if args.command == "sweep":
            cfg, axes = config_from_args(args, args.sweep_mode)
            axes = dict(axes)
            axes.update(parse_axes(_pairs(args.axis)))
            _, summary = sweep(cfg, axes, out_dir=cfg.output_dir or None, workers=args.workers)
            for row in summary.rows:
                print(" ".join(f"{k}={format_value(row.get(k))}" for k in summary.columns))
            return EXIT_OK
        cfg, _ = config_from_args(args, args.command)
        record = run(cfg)
        _print_summary(cfg, record, sys.stdout)
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationBlowup as exc:
        print(f"numerical blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except PermanentDegeneracy as exc:
        print(f"permanent degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except NudgeFitError as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
