"""Produce the long-running acceptance artifacts (cue and character runs).

Usage::

    python scripts/run_acceptance.py character   # plastic + non-plastic training, ~1 h
    python scripts/run_acceptance.py cue         # M=3 training, eval and cue sweep, ~2 h

Each run writes its training directory under ``artifacts/<task>/`` and a
summary JSON (``artifacts/<task>.json``) that ``tests/test_acceptance.py``
reads. Re-running overwrites the summary.
"""

from __future__ import annotations

import argparse
import json
import shutil
import time
from pathlib import Path

from metaplastic import harness
from metaplastic.config import load_config, override, to_dict

ROOT = Path(__file__).resolve().parents[1]
ARTIFACTS = ROOT / "artifacts"


def _eval_dict(res: harness.EvalResult) -> dict:
    return {
        "accuracy": res.accuracy, "error": res.error, "ci_low": res.ci_low, "ci_high": res.ci_high,
        "half_width": res.half_width, "n": res.n, "ties": res.ties, "mean_loss": res.mean_loss,
    }


def _train(cfg, out: Path, label: str):
    if out.exists():
        shutil.rmtree(out)
    t0 = time.perf_counter()

    def sink(rec):
        if rec.update % 10 == 0:
            print(f"[{label}] update {rec.update} loss {rec.loss:.4f} acc {rec.accuracy:.3f} "
                  f"hidden {rec.hidden_rate:.3f} output {rec.output_rate:.3f}", flush=True)

    system, _, _ = harness.train(cfg, out_dir=out, metrics_sink=sink)
    return system, time.perf_counter() - t0


def run_character(args):
    cfg = load_config(args.config)
    if args.updates is not None:
        cfg = override(cfg, train__outer_updates=args.updates)
    summary = {"config": to_dict(cfg)}
    n = args.episodes

    untrained = harness.init_system(cfg)
    summary["untrained_plastic"] = _eval_dict(harness.evaluate(untrained, n))

    plastic, secs = _train(cfg, ARTIFACTS / "character" / "plastic", "plastic")
    summary["plastic"] = _eval_dict(harness.evaluate(plastic, n))
    summary["plastic"]["train_seconds"] = secs

    # identical outer training of every remaining parameter, modulation off
    ablation_cfg = override(cfg, train__plastic=False)
    ablation, secs = _train(ablation_cfg, ARTIFACTS / "character" / "non_plastic", "non-plastic")
    summary["non_plastic"] = _eval_dict(harness.evaluate(ablation, n))
    summary["non_plastic"]["train_seconds"] = secs

    (ARTIFACTS / "character.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=2))


def run_cue(args):
    cfg = load_config(args.config)
    if args.updates is not None:
        cfg = override(cfg, train__outer_updates=args.updates)
    summary = {"config": to_dict(cfg)}
    system, secs = _train(cfg, ARTIFACTS / "cue", "cue")
    t0 = time.perf_counter()
    summary["eval"] = _eval_dict(harness.evaluate(system, args.episodes))
    summary["eval"]["train_seconds"] = secs
    summary["eval"]["eval_seconds"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    rows = harness.sweep_cues(ARTIFACTS / "cue" / "final.bin", [1, 3, 5, 7, 15], args.sweep_episodes,
                              csv_path=ARTIFACTS / "cue_sweep.csv")
    summary["sweep"] = rows
    summary["trained_m"] = cfg.cue.n_cues
    summary["sweep_seconds"] = time.perf_counter() - t0
    (ARTIFACTS / "cue.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=2))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="task", required=True)
    c = sub.add_parser("character")
    c.add_argument("--config", type=Path, default=ROOT / "configs" / "character.toml")
    c.add_argument("--episodes", type=int, default=1000)
    c.add_argument("--updates", type=int)
    c.set_defaults(func=run_character)
    q = sub.add_parser("cue")
    q.add_argument("--config", type=Path, default=ROOT / "configs" / "cue.toml")
    q.add_argument("--episodes", type=int, default=1000)
    q.add_argument("--sweep-episodes", type=int, default=300)
    q.add_argument("--updates", type=int)
    q.set_defaults(func=run_cue)
    args = p.parse_args(argv)
    ARTIFACTS.mkdir(exist_ok=True)
    args.func(args)


if __name__ == "__main__":
    main()
