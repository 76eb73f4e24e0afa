"""Command-line entry points: train, eval, ablate, probe, dump-attention.

Every verb exits 0 on success and nonzero with a one-line diagnostic on
stderr otherwise.  Runs write their resolved configuration next to their
outputs so any result can be reproduced from the directory alone.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import VARIANTS, RunConfig, apply_variant, load_config
from .evaluation import eval_seeds_for, evaluate, run_ablation
from .figures import (
    render_attention_heatmap,
    render_metrics_comparison,
    render_training_curves,
)
from .metrics import reports_to_csv, write_summary
from .risk import build_bias, load_predictor
from .training import run_training


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossguard")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")

    p = sub.add_parser("train", help="run the training loop")
    common(p)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="full")
    p.add_argument("--resume", type=Path, default=None, help="directory of a prior run")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="score a controller on fresh worlds")
    common(p)
    p.add_argument("--controller", choices=("policy", "fcfs"), required=True)
    p.add_argument("--checkpoint", type=Path, default=None, help="sac checkpoint prefix")

    p = sub.add_parser("ablate", help="train and score all config variants")
    common(p)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("probe", help="sweep the last action of stored windows")
    p.add_argument("--checkpoint", type=Path, required=True, help="predictor .npz")
    p.add_argument("--scenario", type=Path, required=True, help="window snapshot .npz")
    p.add_argument("--grid", default="-1,0,1", help="comma-separated raw actions")
    p.add_argument("--out", type=Path, default=None, help="output CSV path")

    p = sub.add_parser("dump-attention", help="emit score matrices for one window")
    p.add_argument("--checkpoint", type=Path, required=True, help="predictor .npz")
    p.add_argument("--scenario", type=Path, required=True, help="window snapshot .npz")
    p.add_argument("--index", type=int, default=0, help="which stored window")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    return parser


def _load_cfg(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = str(args.out)
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = apply_variant(_load_cfg(args), args.variant)
    echo = None if args.quiet else lambda msg: print(msg, flush=True)
    artifacts = run_training(cfg, resume_from=args.resume, echo=echo)
    png = render_training_curves(artifacts.curves_path)
    print(f"wrote {artifacts.curves_path} and {png}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    if args.controller == "policy" and args.checkpoint is None:
        raise SystemExit("error: --controller policy requires --checkpoint")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = evaluate(cfg, args.controller, agent_prefix=args.checkpoint)
    rows = [(args.controller, rep) for rep in reports]
    csv_path = out_dir / f"metrics_{args.controller}.csv"
    reports_to_csv(rows, csv_path)
    write_summary(rows, out_dir / f"metrics_{args.controller}.json")
    for rep in reports:
        cr = "n/a" if rep.cr is None else f"{rep.cr:.2f}"
        print(
            f"world {rep.seed}: awt {rep.awt:.2f} aql {rep.aql:.2f} "
            f"cr {cr} throughput {rep.throughput}"
        )
    print(f"wrote {csv_path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(cfg.out)
    echo = None if args.quiet else lambda msg: print(msg, flush=True)
    run_ablation(cfg, sorted(VARIANTS), [cfg.seed], out_dir, echo=echo)
    png = render_metrics_comparison(out_dir / "ablation_metrics.csv")
    print(f"wrote {out_dir / 'ablation_metrics.csv'} and {png}")
    return 0


def _load_scenarios(path: Path):
    blob = np.load(path)
    if "x" not in blob.files:
        raise SystemExit(f"error: {path} is not a window snapshot (missing 'x')")
    return blob["x"]


def cmd_probe(args) -> int:
    model = load_predictor(args.checkpoint)
    windows = _load_scenarios(args.scenario)
    try:
        grid = [float(tok) for tok in str(args.grid).split(",") if tok.strip() != ""]
    except ValueError:
        raise SystemExit(f"error: unparseable action grid '{args.grid}'")
    if not grid:
        raise SystemExit("error: empty action grid")
    out_path = args.out or args.scenario.with_name("probe.csv")
    wrote = 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "action", "risk"])
        for i in range(windows.shape[0]):
            window = windows[i]
            if window.shape != (model.n, model.input_dim) or not np.all(
                np.isfinite(window)
            ):
                print(f"warning: scenario {i} skipped: malformed window", file=sys.stderr)
                continue
            for action, risk in model.sensitivity_probe(window, grid):
                writer.writerow([i, f"{action:.10g}", f"{risk:.10g}"])
            wrote += 1
    print(f"wrote {out_path} ({wrote} scenarios x {len(grid)} actions)")
    return 0


def _write_matrix(path: Path, mat: np.ndarray):
    # repr round-trips float64 exactly; the bias dump is checked bit-for-bit
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(mat):
            writer.writerow([repr(float(v)) for v in row])


def cmd_dump_attention(args) -> int:
    model = load_predictor(args.checkpoint)
    windows = _load_scenarios(args.scenario)
    if not (0 <= args.index < windows.shape[0]):
        raise SystemExit(f"error: scenario index {args.index} out of range")
    out_dir = args.out or args.scenario.parent / "attention"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_matrix(out_dir / "bias.csv", build_bias(model.n, model.beta))
    maps = model.attention_maps(windows[args.index])
    for li, entry in enumerate(maps):
        raw, biased = entry["raw"][0], entry["biased"][0]
        for hi in range(raw.shape[0]):
            _write_matrix(out_dir / f"raw_l{li}_h{hi}.csv", raw[hi])
            _write_matrix(out_dir / f"biased_l{li}_h{hi}.csv", biased[hi])
            render_attention_heatmap(
                raw[hi], biased[hi], out_dir / f"scores_l{li}_h{hi}.png"
            )
    print(f"wrote {out_dir} ({len(maps)} layers x {maps[0]['raw'].shape[1]} heads)")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "probe": cmd_probe,
    "dump-attention": cmd_dump_attention,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SystemExit:
        raise
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
