"""Command-line front end.

Subcommands: gen-synth, train, eval, ablate-topk, gradcheck, oracle. Every
source of randomness is derived from --seed; there are no hidden entropy
sources, so identical invocations produce identical outputs.
"""

from __future__ import annotations

import argparse
import sys

from ..core import FewdescError
from ..train import TrainConfig, evaluate, meta_train
from .gradcheck import run_gradient_check
from .io import load_checkpoint, load_descriptor_file, merge_pools, save_checkpoint, save_descriptor_file
from .oracle import run_oracle_suite
from .synth import generate_synthetic_pool

__all__ = ["main", "entry", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewdesc",
        description="Few-shot classification over local descriptors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic descriptor file")
    p.add_argument("--out", required=True, help="output descriptor file")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--images", type=int, required=True, help="images per class")
    p.add_argument("--d", type=int, default=32, help="descriptor dimension")
    p.add_argument("--m", type=int, default=25, help="descriptors per image")
    p.add_argument("--background-ratio", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="meta-train the threshold network")
    p.add_argument("--data", action="append", required=True, help="descriptor file (repeatable)")
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=5)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--k-percent", type=float, default=2.0, help="percent of support descriptors kept per class")
    p.add_argument("--lambda", dest="sharpness", type=float, default=20.0, help="weights-map sharpness")
    p.add_argument("--score-form", choices=["weighted-sim", "literal"], default="weighted-sim")
    p.add_argument("--mode", choices=["raw", "class-mean"], default="raw")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--episodes-per-epoch", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt", required=True, help="checkpoint output path")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a descriptor file")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=5)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate-topk", help="accuracy across a grid of selection percentages")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--grid", default="1,2,5,10,25,30", help="comma-separated K percentages")
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=5)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=20)

    p = sub.add_parser("oracle", help="library vs brute-force reference")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=100)

    return parser


def _cmd_gen_synth(args) -> int:
    pool = generate_synthetic_pool(
        classes=args.classes, images_per_class=args.images, dim=args.d,
        per_image=args.m, background_ratio=args.background_ratio,
        noise=args.noise, seed=args.seed,
    )
    save_descriptor_file(pool, args.out)
    print(f"wrote {args.out}: {args.classes} classes x {args.images} images, d={args.d}, m={args.m}")
    return 0


def _cmd_train(args) -> int:
    pool = merge_pools([load_descriptor_file(path) for path in args.data])
    cfg = TrainConfig(
        way=args.way, shot=args.shot, queries=args.queries,
        k_fraction=args.k_percent / 100.0, sharpness=args.sharpness,
        score_form=args.score_form, mode=args.mode,
        learning_rate=args.lr, epochs=args.epochs,
        episodes_per_epoch=args.episodes_per_epoch, seed=args.seed,
    )
    mlp, _ = meta_train(pool, cfg, log_fn=print)
    save_checkpoint(
        args.ckpt, mlp, k_fraction=cfg.k_fraction, sharpness=cfg.sharpness,
        score_form=cfg.score_form, mode=cfg.mode, seed=cfg.seed,
    )
    print(f"saved checkpoint {args.ckpt}")
    return 0


def _cmd_eval(args) -> int:
    pool = load_descriptor_file(args.data)
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.eval_config(way=args.way, shot=args.shot, queries=args.queries, seed=args.seed)
    mean, half = evaluate(pool, ckpt.mlp, cfg, episodes=args.episodes, repeats=args.repeats)
    print(f"accuracy {mean:.4f} ± {half:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    pool = load_descriptor_file(args.data)
    ckpt = load_checkpoint(args.ckpt)
    try:
        grid = [float(tok) for tok in args.grid.split(",") if tok.strip()]
    except ValueError:
        print(f"unparseable grid: {args.grid!r}", file=sys.stderr)
        return 2
    print("k_percent\taccuracy")
    for percent in grid:
        cfg = ckpt.eval_config(
            way=args.way, shot=args.shot, queries=args.queries,
            seed=args.seed, k_fraction=percent / 100.0,
        )
        mean, _ = evaluate(pool, ckpt.mlp, cfg, episodes=args.episodes, repeats=args.repeats)
        print(f"{percent:g}\t{mean:.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradient_check(seed=args.seed, cases=args.cases)
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def _cmd_oracle(args) -> int:
    report = run_oracle_suite(seed=args.seed, cases=args.cases)
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate-topk": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
    "oracle": _cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FewdescError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())
