"""Config-driven command line: gen, train, eval, compare, attn.

Every subcommand reads a UTF-8 JSON config (--config), with --seed and --out
overriding the config's seed and output directory. Exit code 0 on success,
nonzero with a diagnostic on any error.
"""

import argparse
import json
import sys
from pathlib import Path

from . import synthetic, train as harness
from .autodiff import NonFiniteError, ShapeError
from .train import RunConfig, TrainingError


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _apply_common(cfg: dict, args, seed_key="seed", out_key=None) -> dict:
    cfg = dict(cfg)
    if args.seed is not None:
        cfg[seed_key] = args.seed
    if out_key and args.out is not None:
        cfg[out_key] = args.out
    return cfg


def cmd_gen(args) -> int:
    cfg_dict = _apply_common(_load_config(args.config), args)
    out = args.out or cfg_dict.pop("out", None)
    if out is None:
        raise ValueError("gen needs an output directory (--out or config 'out')")
    cfg_dict.pop("out", None)
    cohort_cfg = synthetic.CohortConfig.from_json_dict(cfg_dict)
    path = synthetic.generate_cohort(cohort_cfg, out)
    print(f"cohort of {cohort_cfg.subjects} subjects written to {path}")
    return 0


def cmd_train(args) -> int:
    cfg_dict = _apply_common(_load_config(args.config), args, out_key="out_dir")
    run_cfg = RunConfig.from_dict(cfg_dict)
    result = harness.train(run_cfg)
    final = result.summary["final"]["val"]
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    print(f"val mean BA {final['mean_ba']}, mean ECE {final['mean_ece']}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    checkpoint = args.checkpoint or cfg.get("checkpoint")
    dataset = args.dataset or cfg.get("dataset")
    split = cfg.get("split", "all")
    if checkpoint is None:
        raise ValueError("eval needs a checkpoint (--checkpoint or config)")
    report = harness.evaluate_checkpoint(checkpoint, dataset, split=split)
    out = args.out or cfg.get("out")
    if out:
        harness.write_report(report, out)
        print(f"report written to {Path(out) / 'metrics.json'}")
    for h in report.horizons:
        if h.n == 0:
            print(f"t={h.horizon}: absent (all targets masked)")
        else:
            mauc = "" if h.mauc is None else f" mAUC={h.mauc:.4f}"
            print(f"t={h.horizon}: n={h.n} BA={h.ba:.4f} ECE={h.ece:.4f}{mauc}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    run_dict = dict(cfg.get("run", {}))
    if args.seed is not None:
        run_dict["seed"] = args.seed
    run_cfg = RunConfig.from_dict(run_dict)
    loss_kinds = cfg.get("losses", ["club", "ce"])
    seeds = cfg.get("seeds", [0, 1, 2])
    out = args.out or cfg.get("out")
    comparison = harness.compare_losses(run_cfg, loss_kinds, seeds, out_dir=out)
    for kind, agg in comparison.aggregates.items():
        mean_ba = sum(agg["ba_mean"]) / len(agg["ba_mean"])
        mean_ece = sum(agg["ece_mean"]) / len(agg["ece_mean"])
        print(f"{kind}: mean BA {mean_ba:.4f}, mean ECE {mean_ece:.4f}")
    for pair, entry in comparison.pairwise.items():
        print(f"{pair}: p(BA)={entry['ba']['p_value']} p(ECE)={entry['ece']['p_value']}")
    return 0


def cmd_attn(args) -> int:
    cfg = _load_config(args.config)
    checkpoint = args.checkpoint or cfg.get("checkpoint")
    dataset = args.dataset or cfg.get("dataset")
    subject = cfg.get("subject", 0) if args.subject is None else args.subject
    horizon = cfg.get("horizon", 0) if args.horizon is None else args.horizon
    out = args.out or cfg.get("out")
    if checkpoint is None or out is None:
        raise ValueError("attn needs a checkpoint and an output directory")
    result = harness.export_attention(checkpoint, dataset, subject, int(horizon), out)
    for name, path in result["paths"].items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="climatlab",
        description="Desk-scale multi-agent transformer lab for calibrated "
                    "disease-trajectory forecasting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=str, default=None, help="override output directory")

    p = sub.add_parser("gen", help="generate a synthetic cohort")
    common(p)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a model from a run config")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--dataset", type=str, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", help="train and compare several losses")
    common(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("attn", help="export attention maps for one subject")
    common(p)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--dataset", type=str, default=None)
    p.add_argument("--subject", type=str, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.set_defaults(fn=cmd_attn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, ShapeError, NonFiniteError, TrainingError,
            FileNotFoundError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
