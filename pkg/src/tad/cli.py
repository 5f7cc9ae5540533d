"""Command line interface: train, eval, score, synth, ablate."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from tad.config import TrainConfig, load_train_config
from tad.data import SyntheticWorldConfig, build_benchmark, load_clip, load_dataset
from tad.scoring import plot_score_curve, write_scores_csv
from tad.training import evaluate, model_from_checkpoint, run_ablation, train


def _parse_set_overrides(pairs: list[str]) -> dict:
    """Parse repeated --set field=value flags using the config field types."""
    out = {}
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    for pair in pairs or []:
        if "=" not in pair:
            raise SystemExit(f"--set expects field=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        if key not in types:
            raise SystemExit(f"unknown config field {key!r}")
        typ = types[key]
        if key == "betas":
            out[key] = tuple(float(p) for p in raw.split(","))
        elif typ == "bool":
            out[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif typ == "int":
            out[key] = int(raw)
        elif typ == "float":
            out[key] = float(raw)
        else:
            out[key] = raw
    return out


def _cmd_train(args) -> int:
    overrides = _parse_set_overrides(args.set)
    for name in ("epochs", "seed", "variant", "batch_size", "lr"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    cfg = load_train_config(args.config, overrides)
    clips = load_dataset(args.data)
    print(f"training variant={cfg.variant} on {len(clips)} clips "
          f"(epochs={cfg.epochs}, seed={cfg.seed})")
    result = train(cfg, clips, out=args.out, log=print)
    print(f"checkpoint written to {args.out} "
          f"(final total loss {result.history[-1].total:.5f})")
    return 0


def _cmd_eval(args) -> int:
    model, cfg = model_from_checkpoint(args.ckpt)
    if args.alpha is not None:
        cfg = dataclasses.replace(cfg, alpha=args.alpha)
    if args.delta is not None:
        cfg = dataclasses.replace(cfg, delta=args.delta)
    if args.per_clip:
        cfg = dataclasses.replace(cfg, normalize_per_clip=True)
    clips = load_dataset(args.data)
    result = evaluate(model, clips, cfg)
    report_dir = Path(args.report)
    report_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "auc": result.auc,
        "report": result.report,
        "clips": len(clips),
        "frames": int(sum(len(s.frames) for s in result.series)),
        "warm_frames": result.warm_frames,
        "memory_fallback_rows": result.mem_fallbacks,
        "variant": cfg.variant,
        "alpha": cfg.alpha,
    }
    with open(report_dir / "report.json", "w") as fh:
        json.dump(payload, fh, indent=1)
    for series in result.series:
        write_scores_csv(report_dir / "scores" / f"{series.clip_id}.csv", series)
    auc_text = f"{result.auc:.4f}" if result.auc is not None else "n/a (one class)"
    print(f"frame AUC {auc_text} over {payload['frames']} frames "
          f"({len(clips)} clips); report in {report_dir}")
    return 0


def _cmd_score(args) -> int:
    model, cfg = model_from_checkpoint(args.ckpt)
    cfg = dataclasses.replace(cfg, normalize_per_clip=True)
    clip = load_clip(args.clip)
    result = evaluate(model, [clip], cfg)
    series = result.series[0]
    write_scores_csv(args.csv, series)
    print(f"scores for {clip.meta.clip_id} written to {args.csv}")
    if args.plot:
        out = Path(args.plot) / f"{clip.meta.clip_id}.png"
        plot_score_curve(series, out)
        print(f"score curve written to {out}")
    return 0


def _cmd_synth(args) -> int:
    world = SyntheticWorldConfig.from_toml(args.config) if args.config \
        else SyntheticWorldConfig()
    built = build_benchmark(args.out, world, n_train=args.clips,
                            n_test_normal=args.test_normal,
                            n_test_anomalous=args.test_anomalous, seed=args.seed)
    print(f"wrote {args.clips} training clips to {built['train_dir']} and "
          f"{args.test_normal + args.test_anomalous} test clips to {built['test_dir']}")
    return 0


def _cmd_ablate(args) -> int:
    with open(args.grid, "rb") as fh:
        grid = tomllib.load(fh)
    for key in ("train_data", "test_data"):
        if key not in grid:
            raise SystemExit(f"{args.grid}: missing key {key!r}")
    cells = list(grid.get("cells", []))
    for variant in grid.get("variants", []):
        cells.append({"name": variant, "variant": variant})
    seeds = [int(s) for s in grid.get("seeds", [0, 1, 2])]
    base_cfg = TrainConfig(**grid.get("config", {}))
    train_clips = load_dataset(grid["train_data"])
    test_clips = load_dataset(grid["test_data"])
    report = run_ablation(train_clips, test_clips, base_cfg, cells, seeds,
                          log=print)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.json", "w") as fh:
        json.dump(report, fh, indent=1)
    lines = ["| cell | " + " | ".join(f"seed {s}" for s in seeds) + " | mean |",
             "|---" * (len(seeds) + 2) + "|"]
    for name in report["cells"]:
        row = [name] + [f"{report['auc'][name][s]:.4f}" for s in seeds]
        row.append(f"{report['mean_auc'][name]:.4f}")
        lines.append("| " + " | ".join(row) + " |")
    (out / "ablation.md").write_text("\n".join(lines) + "\n")
    print(f"ablation report in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tad",
        description="Traffic accident detection from optical flow and object tracks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model on normal clips")
    p_train.add_argument("--config", default=None, help="TOML config file")
    p_train.add_argument("--data", required=True, help="directory of training clips")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--variant", default=None)
    p_train.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--set", action="append", metavar="FIELD=VALUE",
                         help="override any config field; repeatable")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="score a labeled clip set and report AUC")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--report", required=True, help="report output directory")
    p_eval.add_argument("--alpha", type=float, default=None)
    p_eval.add_argument("--delta", type=int, default=None)
    p_eval.add_argument("--per-clip", action="store_true",
                        help="normalize scores within each clip")
    p_eval.set_defaults(func=_cmd_eval)

    p_score = sub.add_parser("score", help="write per-frame scores for one clip")
    p_score.add_argument("--ckpt", required=True)
    p_score.add_argument("--clip", required=True, help="clip directory")
    p_score.add_argument("--csv", required=True, help="output CSV path")
    p_score.add_argument("--plot", default=None, help="directory for the score curve")
    p_score.set_defaults(func=_cmd_score)

    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark")
    p_synth.add_argument("--config", default=None, help="world TOML config")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--clips", type=int, default=200, help="training clips")
    p_synth.add_argument("--test-normal", type=int, default=50)
    p_synth.add_argument("--test-anomalous", type=int, default=50)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=_cmd_synth)

    p_ablate = sub.add_parser("ablate", help="train and compare variants")
    p_ablate.add_argument("--grid", required=True, help="TOML grid description")
    p_ablate.add_argument("--out", required=True, help="report output directory")
    p_ablate.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
