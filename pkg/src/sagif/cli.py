"""``sagif`` command-line entry point.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import NumericalError, ValidationError
from .experiment import (ExperimentSpec, cmd_analyze, cmd_encode, cmd_evaluate, cmd_generate,
                         cmd_train)
from .synthetic import SbmSpec
from .training import TrainConfig

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4

# flag dest -> TrainConfig field
_TRAIN_FLAGS = {
    "backbone": "backbone", "epochs": "epochs", "lr": "lr", "weight_decay": "weight_decay",
    "hidden": "hidden", "alpha": "alpha", "inform_alpha": "inform_alpha", "k": "k",
    "lam": "lam", "d_sim": "d_sim", "fusion": "fusion", "encoding_method": "encoding",
    "patience": "patience", "select": "select",
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    # Defaults are None so config-file values survive unless a flag is given.
    p.add_argument("--backbone", choices=("gcn", "sgc"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--alpha", type=float, help="similarity-loss weight")
    p.add_argument("--inform-alpha", type=float, help="pairwise-fairness regularizer weight")
    p.add_argument("--k", type=int, help="neighbours per node in the oracle")
    p.add_argument("--lam", type=float, help="structure/feature balance in topology fusion")
    p.add_argument("--d-sim", type=int, help="similarity-encoding width")
    p.add_argument("--fusion", choices=("topology", "feature"))
    p.add_argument("--encoding-method", choices=("laplacian", "random_walk"))
    p.add_argument("--patience", type=int)
    p.add_argument("--select", choices=("best", "final"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=Path("results"))
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--config", type=Path, help="JSON file with TrainConfig fields")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sagif", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="write a synthetic SBM bundle")
    gen.add_argument("--blocks", type=int, default=3)
    gen.add_argument("--block-size", type=int, default=50)
    gen.add_argument("--p-in", type=float, default=0.3)
    gen.add_argument("--p-out", type=float, default=0.01)
    gen.add_argument("--dim", type=int, default=64)
    gen.add_argument("--noise", type=float, default=0.5)
    gen.add_argument("--mu", type=float, default=1.0,
                     help="1 aligns features with topology, 0 decouples them")

    ana = sub.add_parser("analyze", parents=[common], help="similarity-consistency study")
    ana.add_argument("bundle", type=Path)
    ana.add_argument("--k", type=int, default=10)
    ana.add_argument("--checkpoint", type=Path)
    ana.add_argument("--encoding", type=Path)

    enc = sub.add_parser("encode", parents=[common], help="precompute the similarity encoding")
    enc.add_argument("bundle", type=Path)
    _add_train_flags(enc)

    tr = sub.add_parser("train", parents=[common], help="train and evaluate methods over seeds")
    tr.add_argument("bundle", type=Path)
    tr.add_argument("--methods", default="vanilla,sagif")
    tr.add_argument("--seeds", type=_int_list, help="comma-separated; defaults to --seed")
    tr.add_argument("--eval-k", type=int, default=10)
    tr.add_argument("--grid", action="store_true",
                    help="search lr and d_sim grids, selecting by validation accuracy")
    _add_train_flags(tr)

    ev = sub.add_parser("evaluate", parents=[common], help="fairness metrics for a checkpoint")
    ev.add_argument("bundle", type=Path)
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--encoding", type=Path)
    ev.add_argument("--eval-k", type=int, default=10)
    _add_train_flags(ev)
    return parser


def _train_config(args) -> TrainConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"{args.config}: expected a JSON object")
    for dest, name in _TRAIN_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            data[name] = value
    data.setdefault("seed", args.seed)
    return TrainConfig.from_dict(data)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "generate":
        spec = SbmSpec(args.blocks, args.block_size, args.p_in, args.p_out, args.dim,
                       args.noise, args.mu)
        cmd_generate(spec, args.seed, args.out)
    elif args.command == "analyze":
        cfg = _train_config(args) if args.config else None
        profile = cmd_analyze(args.bundle, args.k, args.out, args.checkpoint, args.encoding, cfg)
        low = sum(c for level, c in profile.histogram.items() if level <= 0.3)
        print(f"{low}/{profile.consistency.size} nodes at consistency <= 0.3")
    elif args.command == "encode":
        cfg = _train_config(args)
        path = cmd_encode(args.bundle, cfg.fusion_config, cfg.encoding, cfg.d_sim, args.out)
        print(path)
    elif args.command == "train":
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        spec = ExperimentSpec(args.bundle, methods, args.seeds or [args.seed],
                              _train_config(args), args.out, args.eval_k, args.grid)
        cmd_train(spec, jobs=args.jobs)
    elif args.command == "evaluate":
        report = cmd_evaluate(args.bundle, args.checkpoint, args.out, args.eval_k,
                              args.encoding, _train_config(args))
        print(report.to_json(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except ValidationError as exc:
        print(f"sagif: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"sagif: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"sagif: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
