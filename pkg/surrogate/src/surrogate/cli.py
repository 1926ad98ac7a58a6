"""Command-line entry point: `surrogate train|predict`.

Both subcommands locate artifacts relative to the dataset manifest by
default, assuming the evaluator's workspace layout:

    <workspace>/dataset/manifest.json      (input, required)
    <workspace>/surrogate/exp<N>/checkpoint.pt
    <workspace>/predictions/exp<N>/model/  (where the evaluator's
                                            evaluate stage looks for an
                                            external model's rasters)
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import SurrogateError
from .model import CONDITIONING_MODES, GeneratorConfig, LOSS_NAMES
from .training import predict, train


def _workspace_of(manifest_path: str) -> str:
    return os.path.dirname(os.path.dirname(os.path.abspath(manifest_path)))


def default_checkpoint_path(manifest_path: str, experiment_id: int) -> str:
    return os.path.join(
        _workspace_of(manifest_path), "surrogate", f"exp{experiment_id}", "checkpoint.pt"
    )


def default_predictions_dir(manifest_path: str, experiment_id: int) -> str:
    return os.path.join(
        _workspace_of(manifest_path), "predictions", f"exp{experiment_id}", "model"
    )


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surrogate",
        description=(
            "Train a U-Net on a propagation raster dataset and emit "
            "predictions the dataset's evaluator can score."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", required=True, metavar="PATH",
                       help="dataset manifest.json")
        p.add_argument("--experiment", required=True, type=int,
                       choices=range(1, 9), help="experiment id")
        p.add_argument("--seed", type=int, default=0, help="RNG seed (u64)")
        p.add_argument("--checkpoint", metavar="PATH",
                       help="checkpoint file (default: derived from the manifest)")

    t = sub.add_parser("train", help="fit the generator on the train split")
    common(t)
    t.add_argument("--epochs", type=int, default=100,
                   help="base epoch count before the experiment multiplier")
    t.add_argument("--depth", type=int, default=4)
    t.add_argument("--base-channels", type=int, default=32)
    t.add_argument("--loss", choices=LOSS_NAMES, default="L1")
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--learning-rate", type=float, default=2e-4)
    t.add_argument("--conditioning", choices=CONDITIONING_MODES,
                   default="input_channel")
    t.add_argument("--no-skips", action="store_true",
                   help="ablate the skip connections")
    t.add_argument("--quiet", action="store_true",
                   help="suppress the per-epoch loss log")

    p = sub.add_parser("predict", help="write test-split predictions")
    common(p)
    p.add_argument("--out", metavar="DIR",
                   help="output directory (default: derived from the manifest)")
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    checkpoint = args.checkpoint or default_checkpoint_path(
        args.manifest, args.experiment
    )
    try:
        if args.command == "train":
            config = GeneratorConfig(
                depth=args.depth,
                base_channels=args.base_channels,
                loss=args.loss,
                epochs=args.epochs,
                batch_size=args.batch_size,
                learning_rate=args.learning_rate,
                seed=args.seed,
                frequency_conditioning=args.conditioning,
                skip_connections=not args.no_skips,
            )
            log = None if args.quiet else lambda line: print(line, flush=True)
            path = train(
                args.manifest, args.experiment, config, checkpoint, log=log
            )
            print(f"checkpoint written to {path}")
        else:
            out_dir = args.out or default_predictions_dir(
                args.manifest, args.experiment
            )
            written = predict(checkpoint, args.manifest, out_dir)
            print(f"{len(written)} predictions written to {out_dir}")
    except (SurrogateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
