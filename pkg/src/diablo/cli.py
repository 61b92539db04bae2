"""Command-line harness: train, evaluate, ablate, gradcheck, gen-data.

Exit codes are a stable contract: 0 success, 2 config error (message names
the offending field), 3 I/O failure, 4 gradient-check failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import checks, harness
from .config import RunConfig, load_config
from .data import generate_synthetic, save_idx
from .errors import ConfigError, FormatError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_GRADCHECK = 4


def _parse_int_list(text: str, flag: str):
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{flag}: expected a comma-separated list of integers")
    if not values:
        raise ConfigError(f"{flag}: expected at least one value")
    return values


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out_dir = cfg.out_dir or "run"
    result = harness.train_run(cfg, out_dir)
    print(f"trained {len(result.epoch_losses)} epochs -> {result.out_dir}")
    print(f"final loss {result.epoch_losses[-1]:.6f}, val R@1 {result.final_r1:.4f}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    ks = _parse_int_list(args.k, "--k") if args.k else None
    rows = harness.evaluate_run(args.checkpoint, ks)
    for k, recall in rows:
        print(f"R@{k} = {recall:.4f}")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "recall.csv", "w", encoding="utf-8", newline="") as f:
        f.write("k,recall\n")
        for k, recall in rows:
            f.write(f"{k},{recall!r}\n")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    branch_values = tuple(_parse_int_list(args.n, "--n")) if args.n else (1, 2, 4, 8, 16)
    result = harness.ablate(cfg, axes, branch_values=branch_values, seeds=args.seeds,
                            out_dir=cfg.out_dir or "ablation", threads=args.threads)
    print(f"{len(result.cells)} cells x {args.seeds} seeds -> {result.out_dir}/summary.csv")
    for name, _, _, median, spread in result.cells:
        print(f"{name}: median R@1 {median:.4f} (iqr {spread:.4f})")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    ok, rows = checks.run_suite(seed=args.seed if args.seed is not None else 0)
    for name, report in rows:
        status = "pass" if report.passed else "FAIL"
        print(f"{status}  {name}  (max rel err {report.max_rel_err:.3e})")
    if not ok:
        failing = [name for name, report in rows if not report.passed]
        print(f"{len(failing)} checks failed: {', '.join(failing)}", file=sys.stderr)
        return EXIT_GRADCHECK
    print(f"all {len(rows)} checks passed")
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    if cfg.idx is not None:
        raise ConfigError("data.idx: gen-data needs a synthetic data section")
    spec = cfg.synthetic
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = Path(cfg.out_dir or "data")
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_synthetic(spec)
    images = out / "images.idx3-ubyte"
    labels = out / "labels.idx1-ubyte"
    save_idx(dataset, images, labels)
    print(f"wrote {len(dataset)} images -> {images} / {labels}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diablo",
        description="Dictionary-based attention blocks: training and evaluation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, include_seed=True):
        p.add_argument("--config", help="JSON run config (defaults apply when omitted)")
        if include_seed:
            p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")

    p_train = sub.add_parser("train", help="train one model, log metrics, save a checkpoint")
    common(p_train)
    p_train.set_defaults(fn=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="Recall@K of a checkpoint on its validation split")
    p_eval.add_argument("checkpoint", help="path to checkpoint.bin")
    p_eval.add_argument("--k", help="comma-separated K list, e.g. 1,2,4,8")
    p_eval.add_argument("--out", help="directory for recall.csv")
    p_eval.set_defaults(fn=_cmd_evaluate)

    p_ablate = sub.add_parser("ablate", help="sweep strategy/mode/N cells with repeated seeds")
    common(p_ablate)
    p_ablate.add_argument("--axes", required=True,
                          help="comma-separated subset of strategy,mode,N")
    p_ablate.add_argument("--n", help="branch counts for the N axis, e.g. 2,4,8,16")
    p_ablate.add_argument("--seeds", type=int, default=5, help="repetitions per cell")
    p_ablate.add_argument("--threads", type=int,
                          help="parallel runs (default: DIABLO_THREADS or 1)")
    p_ablate.set_defaults(fn=_cmd_ablate)

    p_check = sub.add_parser("gradcheck", help="finite-difference check of all ops and pipelines")
    p_check.add_argument("--seed", type=int, help="seed for the random instances")
    p_check.set_defaults(fn=_cmd_gradcheck)

    p_gen = sub.add_parser("gen-data", help="write the synthetic dataset as an IDX file pair")
    common(p_gen)
    p_gen.set_defaults(fn=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
