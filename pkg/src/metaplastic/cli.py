"""Command-line entry point: ``metaplastic {train,eval,sweep,gradcheck,inspect}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, default_config, dump_config, load_config, override
from .tasks import DatasetError, InvalidCueCountError

log = logging.getLogger("metaplastic")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NAN = 0, 1, 2, 3, 4


def _cmd_train(args) -> int:
    if args.print_config:
        sys.stdout.write(dump_config(default_config()))
        return EXIT_OK
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = override(cfg, train__seed=args.seed)
    if args.updates is not None:
        cfg = override(cfg, train__outer_updates=args.updates)
    if args.workers is not None:
        cfg = override(cfg, train__workers=args.workers)

    def sink(rec):
        print(rec.to_json(), flush=True)

    _, ck, _ = harness.train(cfg, out_dir=args.out, resume=args.resume, metrics_sink=sink)
    log.info("finished %d updates", ck.update)
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = load_config(args.task) if args.task else None
    res = harness.evaluate(args.ckpt, args.episodes, cfg=cfg, seed=args.seed, M=args.m,
                           plastic=False if args.non_plastic else None, workers=args.workers)
    print(json.dumps({
        "accuracy": res.accuracy, "ci_low": res.ci_low, "ci_high": res.ci_high,
        "n": res.n, "ties": res.ties, "mean_loss": res.mean_loss,
    }))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    if args.m_min < 1:
        raise InvalidCueCountError(f"cue count must be >= 1, got {args.m_min}")
    ms = list(range(args.m_min, args.m_max + 1)) if not args.m else args.m
    rows = harness.sweep_cues(args.ckpt, ms, args.episodes, csv_path=args.csv, seed=args.seed, workers=args.workers)
    if args.csv is None:
        print("M,accuracy,ci_low,ci_high,n")
        for r in rows:
            print(f"{r['M']},{r['accuracy']:.4f},{r['ci_low']:.4f},{r['ci_high']:.4f},{r['n']}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradcheck import random_program_suite

    n = 50 if args.size == "small" else 10
    worst = random_program_suite(n, seed=args.seed)
    ok = bool(worst < args.tol)
    print(json.dumps({"programs": n, "max_rel_err": float(worst), "tolerance": args.tol, "passed": ok}))
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_inspect(args) -> int:
    ck = load_checkpoint(args.ckpt)
    info = {
        "version": ck.version,
        "update": ck.update,
        "optimizer_step": ck.optimizer_step,
        "task": ck.config.get("train", {}).get("task"),
        "params": {k: {"shape": list(v.shape), "mean": float(np.mean(v)), "absmax": float(np.max(np.abs(v)))}
                   for k, v in sorted(ck.params.items())},
    }
    print(json.dumps(info, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metaplastic", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="meta-train plasticity and modulation parameters")
    t.add_argument("--config", type=Path)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", type=Path)
    t.add_argument("--resume", type=Path)
    t.add_argument("--updates", type=int, help="override train.outer_updates")
    t.add_argument("--workers", type=int)
    t.add_argument("--print-config", action="store_true", help="print the default config and exit")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="accuracy on fresh test episodes")
    e.add_argument("--ckpt", type=Path, required=True)
    e.add_argument("--task", type=Path, help="task config overriding the checkpoint's")
    e.add_argument("--episodes", type=int, default=1000)
    e.add_argument("--m", type=int, help="cue count override")
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--non-plastic", action="store_true", help="evaluate with plasticity switched off")
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("sweep", help="cue-count generalization table")
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--m-min", type=int, default=1)
    s.add_argument("--m-max", type=int, default=15)
    s.add_argument("--m", type=int, nargs="*", help="explicit cue counts instead of a range")
    s.add_argument("--episodes", type=int, default=500)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--csv", type=Path)
    s.set_defaults(func=_cmd_sweep)

    g = sub.add_parser("gradcheck", help="finite-difference check of random smooth-mode programs")
    g.add_argument("--size", choices=("small", "tiny"), default="small")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=_cmd_gradcheck)

    i = sub.add_parser("inspect", help="summarize a checkpoint")
    i.add_argument("--ckpt", type=Path, required=True)
    i.set_defaults(func=_cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidCueCountError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (harness.NumericDivergenceError, FloatingPointError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NAN
    except harness.TrainingError as exc:
        cause = getattr(exc, "cause", None) or exc.__cause__
        print(f"training failed: {exc}", file=sys.stderr)
        if isinstance(cause, (harness.NumericDivergenceError, FloatingPointError)):
            return EXIT_NAN
        if isinstance(cause, (DatasetError,)):
            return EXIT_DATA
        return EXIT_FAIL
    except harness.ShapeMismatchError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
