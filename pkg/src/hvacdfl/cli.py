"""Command-line front end.

    hvacdfl prepare          --config run.toml [--set key=value ...]
    hvacdfl train            --config run.toml
    hvacdfl evaluate         --config run.toml [--checkpoint path] [--seed k]
    hvacdfl bench-tightness  --config run.toml
    hvacdfl ablate           --config run.toml --axis {sigma,samples}
    hvacdfl export-instance  --config run.toml [--day-rank r] [--out path]

Without ``--config`` the built-in defaults apply; ``--set`` overrides
individual keys either way.  The output root can also be forced with the
``HVACDFL_OUT`` environment variable.  Exit codes: 0 success, 2 bad
configuration, 3 solver failure.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (
    ConfigError,
    SolverFailure,
    cmd_ablate,
    cmd_bench_tightness,
    cmd_evaluate,
    cmd_export_instance,
    cmd_prepare,
    cmd_train,
    load_config,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hvacdfl", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="TOML experiment config")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")

    common(sub.add_parser("prepare", help="generate weather, clusters, scenarios, dataset"))
    common(sub.add_parser("train", help="pretrain and run the configured DFL method"))
    sp = sub.add_parser("evaluate", help="score a checkpoint on the medoid days")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--seed", type=int, default=None)
    common(sub.add_parser("bench-tightness", help="paired solves with/without tightening"))
    sp = sub.add_parser("ablate", help="sweep noise intensity or sample count")
    common(sp)
    sp.add_argument("--axis", choices=("sigma", "samples"), required=True)
    sp = sub.add_parser("export-instance", help="dump one day's model as LP text")
    common(sp)
    sp.add_argument("--day-rank", type=int, default=0)
    sp.add_argument("--out", default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        if args.command == "prepare":
            out = cmd_prepare(config)
            print(f"prepared data in {out}")
        elif args.command == "train":
            summary = cmd_train(config)
            print(f"trained seeds {[r['seed'] for r in summary['seeds']]}; "
                  f"best seed {summary['best_seed']}")
        elif args.command == "evaluate":
            record = cmd_evaluate(config, checkpoint=args.checkpoint, seed=args.seed)
            print(f"expost_plus={record.expost_plus:.3f} expost_cost={record.expost_cost:.3f} "
                  f"temp_penalty={record.temp_penalty:.3f}")
        elif args.command == "bench-tightness":
            text = cmd_bench_tightness(config)
            print(text, end="")
        elif args.command == "ablate":
            text = cmd_ablate(config, args.axis)
            print(text, end="")
        elif args.command == "export-instance":
            path = cmd_export_instance(config, day_rank=args.day_rank, path=args.out)
            print(f"wrote {path}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
