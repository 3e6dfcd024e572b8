"""Command-line interface.

Subcommands: sweep-blocksize, sweep-distance, landscape, multiplex,
simulate, keylen. Exit codes: 0 success, 2 audit abort, 1 usage or model
error. Every output file is accompanied by a <file>.manifest.json carrying
the config hash, seed and tool version.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import TIER_NAMES, load_config
from .errors import ModelError
from .protocol import run_protocol, simulate_block, salvage, postprocess_tally
from .security import key_length
from .sweeps import SweepSpec, run_sweep, write_csv, write_manifest

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this tool reserves 2 for audit aborts."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, *, tier_default=None, mode=False) -> None:
    p.add_argument("--config", default=None, help="preset file (default: packaged)")
    p.add_argument("--tier", default=tier_default, choices=TIER_NAMES)
    p.add_argument("--seed", type=int, default=0, help="unsigned RNG seed")
    p.add_argument("--out", required=True, help="output path")
    if mode:
        p.add_argument("--mode", default="analytic", choices=("analytic", "simulate"))


def build_parser() -> _Parser:
    parser = _Parser(prog="diqkd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for kind, name in (
        ("blocksize", "sweep-blocksize"),
        ("distance", "sweep-distance"),
        ("landscape", "landscape"),
        ("multiplex", "multiplex"),
    ):
        p = sub.add_parser(name, help=f"run the {kind} sweep")
        _add_common(p, mode=kind in ("blocksize", "distance"))
        p.add_argument("--l-km", type=float, default=None, help="override fixed distance")
        p.set_defaults(kind=kind)

    p = sub.add_parser("simulate", help="one Monte Carlo protocol block")
    _add_common(p, tier_default="target")
    p.add_argument("--l-km", type=float, default=10.0)
    p.add_argument("--attempts", type=int, default=None, help="override block attempts")
    p.add_argument("--no-salvage", action="store_true")

    p = sub.add_parser("keylen", help="closed-form key length from given inputs")
    _add_common(p, tier_default="target")
    p.add_argument("--n", type=int, required=True, help="raw key rounds")
    p.add_argument("--s-final", type=float, required=True)
    p.add_argument("--q", type=float, required=True, help="key-basis QBER")

    return parser


def _cmd_sweep(args, cfg) -> int:
    spec = SweepSpec(
        kind=args.kind,
        tier=args.tier,
        seed=args.seed,
        mode=getattr(args, "mode", "analytic"),
        L_km=args.l_km,
        out=args.out,
    )
    rows = run_sweep(cfg, spec)
    write_csv(rows, spec.kind, args.out)
    write_manifest(
        args.out,
        cfg,
        kind=spec.kind,
        mode=spec.mode,
        seed=spec.seed,
        tier=spec.tier,
        n_rows=len(rows),
        command=sys.argv[1:] or [args.kind],
    )
    return EXIT_OK


def _cmd_simulate(args, cfg) -> int:
    tier = cfg.tier(args.tier)
    protocol = cfg.protocol(args.seed)
    if args.attempts is not None:
        protocol = protocol.replace(block_size_N=args.attempts)
    tally = simulate_block(
        protocol, tier.budget, cfg.timing(args.l_km), cfg.schedule(), cfg.channel(tier)
    )
    if not args.no_salvage:
        tally = salvage(tally, 0.2).tally
    report = postprocess_tally(
        tally, protocol, tier.budget, cfg.epsilons(), cfg.penalty(tier),
        f_EC=cfg.f_EC, v=cfg.v, C_EAT=cfg.C_EAT,
    )
    payload = {"report": report.to_dict(), "tally": tally.to_dict()}
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    write_manifest(
        args.out,
        cfg,
        kind="simulate",
        mode="simulate",
        seed=args.seed,
        tier=args.tier,
        n_rows=1,
        command=sys.argv[1:] or ["simulate"],
    )
    return EXIT_ABORT if report.abort else EXIT_OK


def _cmd_keylen(args, cfg) -> int:
    report = key_length(
        args.n, args.s_final, args.q, cfg.f_EC, cfg.epsilons(), cfg.v, cfg.C_EAT
    )
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    write_manifest(
        args.out,
        cfg,
        kind="keylen",
        mode="analytic",
        seed=args.seed,
        tier=args.tier,
        n_rows=1,
        command=sys.argv[1:] or ["keylen"],
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command in ("sweep-blocksize", "sweep-distance", "landscape", "multiplex"):
            return _cmd_sweep(args, cfg)
        if args.command == "simulate":
            return _cmd_simulate(args, cfg)
        return _cmd_keylen(args, cfg)
    except (ModelError, ValueError, OSError) as exc:
        print(f"diqkd: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
