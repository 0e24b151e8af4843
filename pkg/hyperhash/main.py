#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
hyperhash - Command Line Entry Point

Spatially aware image retrieval: hyperdimensional scene encoding of
detected objects followed by trainable hyperplane hashing.
"""

import argparse
import dataclasses
import logging
import os
import sys
from typing import List, Optional

from . import __version__, pipeline
from .errors import HyperHashError, InvalidArgumentError
from .hyperplane_hasher import LOSS_TERMS
from .utilities import APP_NAME, ConfigManager, PipelineConfig

logger = logging.getLogger(__name__)

DEFAULT_LENGTH_SCALES = (0.1, 1.0, 10.0)


def check_dependencies() -> bool:
    """Check if all required dependencies are available."""
    try:
        import appdirs  # noqa: F401
        import cachetools  # noqa: F401
        import dotenv  # noqa: F401
        import joblib  # noqa: F401
        import numpy  # noqa: F401
        import scipy  # noqa: F401
        import tqdm  # noqa: F401

        return True
    except ImportError as e:
        logger.error("Missing dependency: %s", e)
        return False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME, description=f"{APP_NAME} v{__version__}")
    parser.add_argument("--config", help="Configuration file (default: per-user config.ini)")
    parser.add_argument("--seed", type=int, help="Root seed, overrides [General] seed")
    parser.add_argument("--out-dir", default=".", help="Directory holding every pipeline artifact")
    parser.add_argument("--workers", type=int, help="Parallel encoding processes")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("synth", help="Generate the synthetic feature dataset")

    sub = commands.add_parser("train-encoder", help="Train the context encoder on pseudo-labels")
    sub.add_argument("--dataset", help="Dataset directory (default: OUT_DIR/dataset)")

    sub = commands.add_parser("encode", help="Encode every image into a scene hypervector")
    sub.add_argument("--dataset", help="Dataset directory (default: OUT_DIR/dataset)")
    sub.add_argument("--encoder", help="Encoder checkpoint")

    sub = commands.add_parser("train-hash", help="Train the hyperplane hash on the database scenes")
    sub.add_argument("--scenes", help="Scene matrix")

    sub = commands.add_parser("hash", help="Compute binary codes of every scene")
    sub.add_argument("--scenes", help="Scene matrix")
    sub.add_argument("--model", help="Hash model checkpoint")

    sub = commands.add_parser("build-index", help="Index the database codes")
    sub.add_argument("--codes", help="Code set")

    sub = commands.add_parser("query", help="Conditional retrieval for one image")
    target = sub.add_mutually_exclusive_group(required=True)
    target.add_argument("--image-id", type=int, help="Query with an image of the dataset")
    target.add_argument("--query-file", help="JSON QuerySpec")
    sub.add_argument("--k", type=int, default=10, help="Number of results")
    sub.add_argument("--eta-glob", type=float, help="Weight of the global term")
    sub.add_argument("--object-etas", type=float, nargs="+", help="Explicit per-object weights")
    sub.add_argument("--focus", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"),
                     help="Focus region in normalised coordinates")
    sub.add_argument("--focus-multiplier", type=float, default=pipeline.DEFAULT_FOCUS_MULTIPLIER)
    sub.add_argument("--w", type=float, help="Length scale the index must have been built with")
    sub.add_argument("--dataset", help="Dataset directory (default: OUT_DIR/dataset)")
    sub.add_argument("--index", help="Index file")
    sub.add_argument("--encoder", help="Encoder checkpoint")
    sub.add_argument("--model", help="Hash model checkpoint")

    sub = commands.add_parser("eval", help="mAP@K and mAP@K_r of the query split")
    sub.add_argument("--k", type=int, help="Cut-off (default: [Eval] k)")
    sub.add_argument("--radii", type=float, nargs="*", help="Matching radii (default: [Eval] radii)")
    sub.add_argument("--index", help="Index file")
    sub.add_argument("--codes", help="Code set")
    sub.add_argument("--ground-truth", help="Directory holding ground_truth.jsonl")
    sub.add_argument("--report", help="Report file (default: OUT_DIR/eval_report.json)")

    sub = commands.add_parser("ablate", help="Loss-term ablation on the synthetic corpus")
    sub.add_argument("--exclude", nargs="*", choices=LOSS_TERMS, default=list(LOSS_TERMS),
                     help="Loss terms to remove one at a time")
    sub.add_argument("--repeats", type=int, default=1, help="Hash seeds per variant")

    sub = commands.add_parser("sweep", help="Retrieval quality per length scale")
    sub.add_argument("--length-scales", type=float, nargs="+", default=list(DEFAULT_LENGTH_SCALES))
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    config = ConfigManager(args.config).get_settings()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    return dataclasses.replace(config, **overrides).validate()


def _path(value: Optional[str], out_dir: str, name: str) -> str:
    return value if value else os.path.join(out_dir, name)


def build_query(args: argparse.Namespace) -> pipeline.QuerySpec:
    if args.query_file:
        return pipeline.QuerySpec.load(args.query_file)
    region = None
    if args.focus:
        region = pipeline.FocusRegion(*args.focus, multiplier=args.focus_multiplier)
    return pipeline.QuerySpec(
        image_id=args.image_id,
        eta_glob=args.eta_glob,
        object_etas=tuple(args.object_etas) if args.object_etas else None,
        focus_region=region,
        w=args.w,
    )


def run(args: argparse.Namespace) -> None:
    config = load_config(args)
    out = args.out_dir
    progress = sys.stderr.isatty()
    dataset_dir = _path(getattr(args, "dataset", None), out, pipeline.DATASET_DIR)

    if args.command == "synth":
        corpus = pipeline.cmd_synth(config, out)
        print(f"wrote {len(corpus.dataset)} images to {os.path.join(out, pipeline.DATASET_DIR)}")
    elif args.command == "train-encoder":
        pipeline.cmd_train_encoder(dataset_dir, config, os.path.join(out, pipeline.ENCODER_FILE), progress)
    elif args.command == "encode":
        pipeline.cmd_encode(dataset_dir, _path(args.encoder, out, pipeline.ENCODER_FILE), config,
                            os.path.join(out, pipeline.SCENES_FILE), progress)
    elif args.command == "train-hash":
        pipeline.cmd_train_hash(_path(args.scenes, out, pipeline.SCENES_FILE), config,
                                os.path.join(out, pipeline.HASH_FILE), progress=progress)
    elif args.command == "hash":
        pipeline.cmd_hash(_path(args.scenes, out, pipeline.SCENES_FILE),
                          _path(args.model, out, pipeline.HASH_FILE), os.path.join(out, pipeline.CODES_FILE))
    elif args.command == "build-index":
        index = pipeline.cmd_build_index(_path(args.codes, out, pipeline.CODES_FILE),
                                         os.path.join(out, pipeline.INDEX_FILE))
        print(f"indexed {len(index)} items with {index.l_bits}-bit codes")
    elif args.command == "query":
        results = pipeline.cmd_query(
            _path(args.index, out, pipeline.INDEX_FILE), build_query(args), args.k,
            _path(args.encoder, out, pipeline.ENCODER_FILE), _path(args.model, out, pipeline.HASH_FILE),
            config, dataset_dir,
        )
        print(pipeline.format_table(("rank", "image_id", "distance"),
                                    [(rank, item_id, distance) for rank, (item_id, distance)
                                     in enumerate(results, start=1)]))
    elif args.command == "eval":
        k = args.k if args.k is not None else config.k
        radii = args.radii if args.radii is not None else config.radii
        report = pipeline.cmd_eval(
            _path(args.index, out, pipeline.INDEX_FILE), _path(args.codes, out, pipeline.CODES_FILE),
            _path(args.ground_truth, out, pipeline.DATASET_DIR), k, radii,
            _path(args.report, out, pipeline.EVAL_REPORT),
        )
        print(report.table())
    elif args.command == "ablate":
        rows = pipeline.cmd_ablate(config, args.exclude, out, args.repeats, progress)
        print(pipeline.ablation_table(rows))
    elif args.command == "sweep":
        rows = pipeline.cmd_sweep(config, args.length_scales, out)
        print(pipeline.sweep_table(rows))


def main(argv: Optional[List[str]] = None) -> int:
    """Command line entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )

    if not check_dependencies():
        logger.error("Required dependencies are missing. Run: pip install -r requirements.txt")
        return 1

    try:
        run(args)
    except HyperHashError as e:
        logger.error("%s", e)
        return e.exit_code
    except (OSError, KeyError) as e:
        logger.error("%s", e)
        return InvalidArgumentError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
