"""``twins`` command line: report, verify, bench, train-toy, infer, gen-dataset."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, checkpoint, verify
from .data import gen_dataset, load_or_generate, read_timg
from .models import BUILTIN_NAMES, ModelConfig, build, predict, resolve_config
from .tensor import TensorError
from .train import TrainConfig, TrainingDiverged, train

EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def _resolution(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"resolution must be positive, got {text!r}")
    return h, w


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config(parser: argparse.ArgumentParser, name: str, num_classes: int | None = None) -> ModelConfig:
    try:
        return resolve_config(name, num_classes)
    except KeyError:
        parser.error(f"unknown model {name!r}; choose from {', '.join(BUILTIN_NAMES)}, micro-<name> or a .json config")
    except (ValueError, OSError) as exc:
        parser.error(f"cannot read config {name!r}: {exc}")


def cmd_report(args, parser) -> int:
    cfg = _config(parser, args.model or args.config)
    try:
        report = analysis.count_model(build(cfg), args.resolution)
    except TensorError as exc:
        parser.error(str(exc))
    if args.format == "csv":
        print(report.to_csv(), end="")
    elif args.format == "json":
        print(report.to_json())
    else:
        print(report.to_table())
    # informational only, never changes the exit status
    if args.model and args.model.lower() in BUILTIN_NAMES and args.format == "table":
        if args.resolution != (224, 224):
            print("note: reference targets are for 224x224", file=sys.stderr)
        for chk in analysis.compare_reference(args.model.lower(), report):
            print(chk.line(args.model.lower()))
    return 0


def cmd_verify(args, parser) -> int:
    results = verify.run_all(args.seed, log=print)
    if args.json:
        Path(args.json).write_text(verify.summary_json(results) + "\n")
    failed = [r.check for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return 0 if not failed else EXIT_FAIL


def cmd_bench(args, parser) -> int:
    if len(args.sizes) < 2:
        parser.error("--sizes needs at least two map sides")
    try:
        res = analysis.scaling_bench(args.op, args.sizes, d=args.dim, k=args.window, seed=args.seed)
    except ValueError as exc:
        parser.error(str(exc))
    print(res.to_table())
    expected = analysis.EXPECTED_SLOPE[args.op]
    status = "PASS" if res.passed else "FAIL"
    print(f"[{status}] {args.op} MAC slope {res.mac_slope:.3f} (expected {expected:.2f} ± {analysis.SLOPE_TOL})")
    print(f"[info] {args.op} wall-time slope {res.time_slope:.3f}")
    return 0 if res.passed else EXIT_FAIL


def cmd_train_toy(args, parser) -> int:
    cfg = _config(parser, args.model, num_classes=10)
    try:
        tcfg = TrainConfig(
            steps=args.steps,
            batch_size=args.batch_size,
            lr=args.lr,
            weight_decay=args.weight_decay,
            seed=args.seed,
            checkpoint=args.checkpoint,
            eval_every=args.eval_every,
            target_accuracy=args.target_accuracy,
        )
    except ValueError as exc:
        parser.error(str(exc))
    data = load_or_generate(args.dataset, args.data_seed, args.samples)
    model = build(cfg, seed=args.seed)
    log = (lambda _: None) if args.quiet else print
    try:
        result = train(model, data, tcfg, resume=args.resume, log=log)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except checkpoint.CheckpointError as exc:
        print(f"error: cannot resume: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if args.checkpoint:
        cfg.save(Path(args.checkpoint).with_suffix(".json"))
    print(f"final loss {result.losses[-1]:.6f}  train accuracy {result.final_accuracy:.4f}  steps {result.steps_run}")
    if args.target_accuracy is not None and result.final_accuracy < args.target_accuracy:
        return EXIT_FAIL
    return 0


def cmd_infer(args, parser) -> int:
    cfg = _config(parser, args.config)
    try:
        tensors = checkpoint.load_checkpoint(args.checkpoint, cfg)
        image = read_timg(args.input)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    model = build(cfg)
    model.load_state_dict(tensors)
    try:
        logits = predict(model, image[None])[0]
    except TensorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    k = min(args.top_k, len(logits))
    order = np.argsort(-logits, kind="stable")[:k]
    print(f"{'rank':>4}  {'class':>5}  {'logit':>10}")
    for rank, c in enumerate(order, 1):
        print(f"{rank:>4}  {c:>5}  {logits[c]:>10.4f}")
    return 0


def cmd_gen_dataset(args, parser) -> int:
    data = gen_dataset(args.seed, args.samples)
    data.save(args.output)
    counts = np.bincount(data.labels, minlength=10)
    print(f"wrote {len(data)} samples to {args.output} (per-class {counts.min()}-{counts.max()})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twins", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("report", help="parameter and multiply-add counts per layer")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="named variant (e.g. svt-s) or micro-<name>")
    src.add_argument("--config", help="model config JSON")
    p.add_argument("--resolution", type=_resolution, default=(224, 224), metavar="HxW")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="run every seeded check; exit 0 iff all pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", metavar="PATH", help="also write results as JSON")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="attention cost scaling over map sizes")
    p.add_argument("--op", choices=tuple(analysis.EXPECTED_SLOPE), required=True)
    p.add_argument("--sizes", type=_int_list, default=[28, 56, 112], help="map sides, e.g. 28,56,112")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--window", type=int, default=7, help="LSA window / GSA summarizing size")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-toy", help="train a model on the synthetic 10-class set")
    p.add_argument("--model", default="micro-svt-s")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--target-accuracy", type=float, help="stop (and succeed) once train accuracy reaches this")
    p.add_argument("--checkpoint", help="write weights, optimizer state and <name>.json config here")
    p.add_argument("--resume", help="continue from a checkpoint written by --checkpoint")
    p.add_argument("--dataset", help="dataset cache file (created if missing)")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--quiet", action="store_true", help="only print the final summary")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("infer", help="top-k classes for one TIMG image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True, help="config JSON or model name")
    p.add_argument("--input", required=True, help="TIMG file")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gen-dataset", help="write the synthetic dataset cache")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen_dataset)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args, parser)


if __name__ == "__main__":
    sys.exit(main())
