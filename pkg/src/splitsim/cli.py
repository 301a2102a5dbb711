"""Command line entry point: partition, train, attack, report.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, FormatError, SplitSimError
from .experiment import (
    apply_seed_overrides,
    cmd_attack,
    cmd_partition,
    cmd_report,
    cmd_train,
    load_config,
)


def _parse_seed_overrides(pairs) -> dict[str, int]:
    overrides = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"config.seeds: override {pair!r} is not K=V")
        key, value = pair.split("=", 1)
        try:
            overrides[key] = int(value)
        except ValueError as exc:
            raise ConfigError(f"config.seeds.{key}: override value {value!r} is not an integer") from exc
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitsim",
        description="Deterministic multi-client split learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--seed-override", action="append", metavar="K=V",
            help="override a root seed (data/init/scheduler/attack); repeatable",
        )

    p = sub.add_parser("partition", help="write client shards and a summary")
    common(p)

    p = sub.add_parser("train", help="run the configured training scheme")
    common(p)
    p.add_argument("--verbose-ledger", action="store_true",
                   help="persist message payloads (required for later attack)")
    p.add_argument("--deterministic", action="store_true",
                   help="force the single-thread simulated scheduler")

    p = sub.add_parser("attack", help="invert a stored run's smashed data")
    p.add_argument("--config", help="optional config carrying the attack scenario")
    p.add_argument("--run-dir", required=True, help="directory written by `train`")
    p.add_argument("--out", required=True)
    p.add_argument("--seed-override", action="append", metavar="K=V")
    p.add_argument("--dump-samples", type=int, default=4,
                   help="reconstructed samples to dump as PGM per victim")

    p = sub.add_parser("report", help="comparison tables and plots for runs")
    p.add_argument("run_dirs", nargs="+", help="one or more train output directories")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = _parse_seed_overrides(getattr(args, "seed_override", None))
        if args.command == "partition":
            config = apply_seed_overrides(load_config(args.config), overrides)
            summary = cmd_partition(config, args.out)
            print(json.dumps(summary["counts"], sort_keys=True))
        elif args.command == "train":
            config = apply_seed_overrides(load_config(args.config), overrides)
            manifest = cmd_train(
                config, args.out,
                verbose_ledger=args.verbose_ledger,
                deterministic=args.deterministic or not config.scheme.threaded,
            )
            print(manifest["manifest_hash"])
        elif args.command == "attack":
            config = None
            if args.config:
                config = apply_seed_overrides(load_config(args.config), overrides)
            leakage = cmd_attack(config, args.run_dir, args.out, dump_samples=args.dump_samples)
            print(json.dumps({
                "self_ssim": leakage["self_ssim"],
                "cross_ssim_mean": leakage["cross_ssim_mean"],
            }))
        elif args.command == "report":
            cmd_report(args.run_dirs, args.out)
            print(f"report written to {args.out}")
    except (ConfigError, FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SplitSimError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
