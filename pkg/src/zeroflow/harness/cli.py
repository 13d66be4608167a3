"""``zeroflow`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from ..errors import ConfigError, ZeroflowError
from .commands import run
from .config import EXPERIMENTS, build_config, load_config
from .io import emit, to_jsonable


def _threads(arg, cfg_threads) -> int:
    if arg is not None:
        return arg
    if cfg_threads is not None:
        return cfg_threads
    env = os.environ.get("ZEROFLOW_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"ZEROFLOW_THREADS must be an integer, got {env!r}", field="ZEROFLOW_THREADS") from None
        if n < 1:
            raise ConfigError("ZEROFLOW_THREADS must be positive", field="ZEROFLOW_THREADS")
        return n
    return 1


def _positive(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _seed(text):
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zeroflow", description="Random polynomial zero ensembles on the sphere.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON configuration file (defaults are used when omitted)")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=_positive, help="worker processes (fallback: ZEROFLOW_THREADS)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config, args.experiment, seed=args.seed, output=args.out)
        else:
            cfg = build_config(args.experiment, {}, seed=args.seed, output=args.out)
        threads = _threads(args.threads, cfg.threads)
        t0 = time.perf_counter()
        report, tables, stages = run(cfg, threads)
        timing = {"experiment": cfg.experiment, "wall_clock_s": time.perf_counter() - t0, "threads": threads,
                  "stages": stages, "output": str(cfg["output"])}
        out = emit(Path(cfg["output"]), report, tables, timing, dat=cfg["dat"])
    except ConfigError as exc:
        print(f"zeroflow: config error: {exc}", file=sys.stderr)
        return 2
    except ZeroflowError as exc:
        print(f"zeroflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"experiment": cfg.experiment, "output": str(out), "summary": to_jsonable(report["summary"])},
                     sort_keys=True, default=str)[:4000])
    return 0


if __name__ == "__main__":
    sys.exit(main())
