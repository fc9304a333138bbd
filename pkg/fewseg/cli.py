# Copyright (C) fewseg developers 2024-2026

"""The ``fewseg`` command line.

Four subcommands share one :class:`RunConfig` built from ``--config`` and
``--set`` overrides; every artifact they write carries its fingerprint.

    fewseg gen-data --out data/
    fewseg train --out model.ckpt [--resume]
    fewseg eval --checkpoint model.ckpt --out report [--k 5 --fusion mask_or ...]
    fewseg predict --checkpoint model.ckpt --support img.ppm mask.pgm --query q.ppm --out pred/
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from fewseg.checkpoint import load_checkpoint, save_checkpoint
from fewseg.comparison import SupportExample
from fewseg.config import RunConfig
from fewseg.enums import AnnotationMode, FusionMode, Phase, TrainingEvent
from fewseg.episodes import annotate
from fewseg.evaluation import EvalReport, evaluate
from fewseg.exceptions import EmptyForegroundError, FewSegException, IoError
from fewseg.imageio import atomic_write, read_mask, read_ppm, write_mask, write_pgm, write_ppm
from fewseg.ops import resize_array
from fewseg.segmenter import Segmenter, build_model_state
from fewseg.tensor import Tensor
from fewseg.training import Trainer

import argparse
import csv
import io
import logging
import os
import sys

try:
    import ujson as json  # type: ignore
except ImportError:
    import json

if TYPE_CHECKING:
    from fewseg.events import EpochCompleted, StepCompleted
    from fewseg.types import ExampleFiles, Manifest, ManifestEpisode


__all__ = (
    "build_parser",
    "cmd_gen_data",
    "cmd_train",
    "cmd_eval",
    "cmd_predict",
    "main",
)

_LOGGER = logging.getLogger(__name__)

LOSS_HEADER = ("epoch", "step", "loss")


def _dump_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc


def _write_example(directory: str, stem: str, image: Tensor, mask: Any, bbox: Optional[Any] = None) -> ExampleFiles:
    write_ppm(os.path.join(directory, stem + ".ppm"), image.data)
    write_mask(os.path.join(directory, stem + ".pgm"), mask)
    files: ExampleFiles = {"image": stem + ".ppm", "mask": stem + ".pgm"}
    if bbox is not None:
        write_mask(os.path.join(directory, stem + "_bbox.pgm"), bbox)
        files["bbox_mask"] = stem + "_bbox.pgm"
    return files


def cmd_gen_data(config: RunConfig, out_dir: str, phase: str = Phase.TEST) -> Manifest:
    """Writes ``dataset.episodes`` episodes of ``phase`` and their manifest to ``out_dir``.

    Every image is a binary PPM and every mask an 8-bit PGM. In box
    annotation mode each support also gets a ``_bbox`` mask.

    Raises
    ------
    IoError
        The directory cannot be created or written.
    """
    _ensure_dir(out_dir)
    sampler = config.sampler()
    dataset = config.dataset

    def generate(index: int) -> ManifestEpisode:
        episode = sampler.episode(phase, index, dataset.k)
        boxed = annotate(episode, dataset.annotation) if dataset.annotation == AnnotationMode.BBOX else None
        stem = "%s_%05d" % (phase, index)

        support: List[ExampleFiles] = []
        for position, example in enumerate(episode.support):
            bbox = boxed.support[position].mask if boxed is not None else None
            support.append(
                _write_example(out_dir, "%s_support%d" % (stem, position), example.image, example.mask, bbox)
            )
        query = _write_example(out_dir, stem + "_query", episode.query_image, episode.query_mask)
        return {"index": index, "class_id": episode.class_id, "phase": phase, "support": support, "query": query}

    indices = range(dataset.episodes)
    if config.runtime.threads > 1:
        with ThreadPoolExecutor(max_workers=config.runtime.threads) as executor:
            episodes = list(executor.map(generate, indices))
    else:
        episodes = [generate(index) for index in indices]

    split = config.split()
    manifest: Manifest = {
        "fingerprint": config.fingerprint(),
        "seed": dataset.seed,
        "image_size": dataset.image_size,
        "k": dataset.k,
        "annotation": dataset.annotation,  # type: ignore[typeddict-item]
        "train_classes": list(split.train_classes),
        "test_classes": list(split.test_classes),
        "episodes": episodes,
    }
    atomic_write(os.path.join(out_dir, "manifest.json"), _dump_json(manifest))
    _LOGGER.info("Wrote %d %s episodes to %s", len(episodes), phase, out_dir)
    return manifest


def loss_csv_path(checkpoint: str) -> str:
    return os.path.splitext(checkpoint)[0] + "_loss.csv"


def _read_loss_rows(path: str, up_to_epoch: int) -> List[List[str]]:
    try:
        with open(path, "r", newline="", encoding="utf-8") as fp:
            lines = [line for line in fp if not line.startswith("#")]
    except FileNotFoundError:
        _LOGGER.warning("No loss curve at %s; the resumed curve starts after epoch %d", path, up_to_epoch)
        return []
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc

    rows = list(csv.reader(lines))
    return [row for row in rows[1:] if row and int(row[0]) <= up_to_epoch]


def _write_loss_csv(path: str, fingerprint: str, rows: Sequence[Sequence[str]]) -> None:
    buffer = io.StringIO()
    buffer.write("# fingerprint=%s\n" % fingerprint)
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(LOSS_HEADER)
    writer.writerows(rows)
    atomic_write(path, buffer.getvalue())


def cmd_train(config: RunConfig, checkpoint: str, *, resume: bool = False, loss_csv: Optional[str] = None) -> Trainer:
    """Trains a model, writing an epoch checkpoint and the loss CSV after every epoch.

    With ``resume`` the run continues from the epoch checkpoint at
    ``checkpoint`` and keeps the loss rows of the completed epochs.

    Raises
    ------
    CheckpointError
        ``resume`` is set and the checkpoint is unusable.
    IoError
        An output cannot be written.
    """
    fingerprint = config.fingerprint()
    loss_csv = loss_csv if loss_csv is not None else loss_csv_path(checkpoint)

    state = build_model_state(config.model_config(), seed=config.train.seed)
    trainer = Trainer(
        config.train, config.split(), state,
        sampler=config.sampler(config.train.seed),
        checkpoint_path=checkpoint,
        fingerprint=fingerprint,
        threads=config.runtime.threads,
    )

    rows: List[List[str]] = []
    if resume:
        trainer.resume(checkpoint)
        rows.extend(_read_loss_rows(loss_csv, trainer.epoch))

    @trainer.listen(TrainingEvent.STEP_COMPLETED)
    def on_step(event: StepCompleted) -> None:
        rows.append([str(event.epoch), str(event.step), "%.10f" % event.loss])

    @trainer.listen(TrainingEvent.EPOCH_COMPLETED)
    def on_epoch(event: EpochCompleted) -> None:
        _write_loss_csv(loss_csv, fingerprint, rows)

    trainer.run()
    save_checkpoint(trainer.state, checkpoint, fingerprint=fingerprint, epoch=trainer.epoch, cache=trainer.cache)
    _write_loss_csv(loss_csv, fingerprint, rows)
    return trainer


def cmd_eval(config: RunConfig, checkpoint: str, out: Optional[str] = None, phase: str = Phase.TEST) -> EvalReport:
    """Evaluates a checkpoint with the ``eval`` options of ``config``.

    Writes ``<out>.txt`` (the table) and ``<out>.json`` (the structured
    report) when ``out`` is given, and returns the report.
    """
    state = load_checkpoint(checkpoint, expected=config.model_config())
    options = config.eval
    report = evaluate(
        Segmenter(state), config.split(), phase, options.episodes,
        k=options.k,
        fusion_mode=options.fusion,
        annotation_mode=options.annotation,
        scales=options.scales,
        seed=options.seed,
        iterations=options.iterations,
        image_size=config.dataset.image_size,
        max_distractors=config.dataset.max_distractors,
        min_area=config.dataset.min_area,
        max_area_fraction=config.dataset.max_area_fraction,
        threads=config.runtime.threads,
        fingerprint=config.fingerprint(),
    )
    if out is not None:
        atomic_write(out + ".txt", report.table())
        atomic_write(out + ".json", _dump_json(report.to_dict()))
    return report


def _load_support(image_path: str, mask_path: str) -> SupportExample:
    mask = read_mask(mask_path)
    if not mask.any():
        raise EmptyForegroundError(
            "support mask %s has no foreground pixel; mark the target object with values of 128 or more" % mask_path
        )
    image = read_ppm(image_path)
    if image.shape[1:] != mask.shape:
        raise IoError(mask_path, "mask is %r but image %s is %r" % (mask.shape, image_path, image.shape[1:]))
    return SupportExample(Tensor(image), mask)


def cmd_predict(
    config: RunConfig,
    checkpoint: str,
    supports: Sequence[Tuple[str, str]],
    query: str,
    out_dir: str,
    *,
    dump_iterations: bool = False,
) -> Dict[str, Any]:
    """Segments one query image with annotated support images.

    Writes ``mask.pgm``; with ``dump_iterations`` also one foreground
    confidence map per refinement step (``step_0.pgm`` is the initial
    prediction), upsampled to the query resolution. A ``prediction.json``
    lists the files with the configuration fingerprint.

    Raises
    ------
    EmptyForegroundError
        A support mask has no foreground, or none that survives at feature resolution.
    """
    state = load_checkpoint(checkpoint, expected=config.model_config())
    examples = [_load_support(image, mask) for image, mask in supports]
    query_image = read_ppm(query)
    _ensure_dir(out_dir)

    _, height, width = query_image.shape
    prediction = Segmenter(state).predict(
        examples, Tensor(query_image), fusion=config.eval.fusion, iterations=config.eval.iterations
    )

    files: Dict[str, Any] = {"mask": "mask.pgm"}
    write_mask(os.path.join(out_dir, "mask.pgm"), prediction.mask)
    if dump_iterations:
        steps = []
        for step, map in enumerate(prediction.maps):
            name = "step_%d.pgm" % step
            write_pgm(os.path.join(out_dir, name), resize_array(map.probs.data, height, width)[1])
            steps.append(name)
        files["steps"] = steps

    payload = {
        "fingerprint": config.fingerprint(),
        "checkpoint": os.path.basename(checkpoint),
        "query": os.path.basename(query),
        "supports": [[os.path.basename(image), os.path.basename(mask)] for image, mask in supports],
        "fusion": config.eval.fusion,
        "iterations": config.eval.iterations,
        "files": files,
    }
    atomic_write(os.path.join(out_dir, "prediction.json"), _dump_json(payload))
    return payload


def _scales(raw: str) -> Tuple[float, ...]:
    try:
        return tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated numbers, got %r" % raw) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fewseg", description="Few-shot segmentation on synthetic shapes.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug output")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key; may be repeated",
    )

    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", parents=[common], help="write episode images, masks and a manifest")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--phase", choices=Phase.ALL, default=Phase.TEST)

    train = commands.add_parser("train", parents=[common], help="train a model")
    train.add_argument("--out", required=True, help="checkpoint path")
    train.add_argument("--resume", action="store_true", help="continue from the epoch checkpoint at --out")
    train.add_argument("--loss-csv", help="loss curve path (default: <out>_loss.csv)")

    ev = commands.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--out", help="report path prefix; writes <out>.txt and <out>.json")
    ev.add_argument("--phase", choices=Phase.ALL, default=Phase.TEST)
    ev.add_argument("--k", type=int)
    ev.add_argument("--fusion", choices=FusionMode.ALL)
    ev.add_argument("--annotation", choices=AnnotationMode.ALL)
    ev.add_argument("--scales", type=_scales, help="comma separated query scales, e.g. 0.7,1,1.3")
    ev.add_argument("--iterations", type=int, help="refinement steps T")
    ev.add_argument("--episodes", type=int)
    ev.add_argument("--seed", type=int)

    predict = commands.add_parser("predict", parents=[common], help="segment one query image")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument(
        "--support", nargs=2, action="append", required=True, metavar=("IMAGE", "MASK"),
        help="a support PPM image and its PGM mask; repeat for k shots",
    )
    predict.add_argument("--query", required=True, help="query PPM image")
    predict.add_argument("--out", required=True, help="output directory")
    predict.add_argument("--fusion", choices=FusionMode.ALL)
    predict.add_argument("--iterations", type=int)
    predict.add_argument("--dump-iterations", action="store_true", help="write the confidence map of every step")
    return parser


def _eval_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    names = ("k", "fusion", "annotation", "scales", "iterations", "episodes", "seed")
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs the command line and returns the process exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    try:
        config = RunConfig.from_file(args.config, args.overrides)
        overrides = _eval_overrides(args)
        if overrides:
            config = replace(config, eval=replace(config.eval, **overrides))

        if args.command == "gen-data":
            manifest = cmd_gen_data(config, args.out, args.phase)
            print("wrote %d episodes to %s (fingerprint %s)" % (len(manifest["episodes"]), args.out, manifest["fingerprint"]))
        elif args.command == "train":
            trainer = cmd_train(config, args.out, resume=args.resume, loss_csv=args.loss_csv)
            print("trained %d epoch(s), checkpoint %s (fingerprint %s)" % (trainer.epoch, args.out, trainer.fingerprint))
        elif args.command == "eval":
            sys.stdout.write(cmd_eval(config, args.checkpoint, args.out, args.phase).table())
        elif args.command == "predict":
            cmd_predict(
                config, args.checkpoint, [tuple(pair) for pair in args.support], args.query, args.out,
                dump_iterations=args.dump_iterations,
            )
            print("wrote prediction to %s" % args.out)
    except FewSegException as exc:
        _LOGGER.debug("Command failed", exc_info=True)
        print("fewseg: error: %s" % exc, file=sys.stderr)
        return exc.exit_code
    return 0
