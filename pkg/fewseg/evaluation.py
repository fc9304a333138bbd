# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fewseg.backbone import FEATURE_STRIDE
from fewseg.enums import AnnotationMode, FusionMode, Phase
from fewseg.episodes import ClassSplit, Episode, EpisodeSampler, annotate
from fewseg.exceptions import ConfigError
from fewseg.metrics import EpisodeResult, IoUAccumulator, episode_result, mean_iou
from fewseg.ops import resize_array
from fewseg.protocols import SupportsPredict
from fewseg.refinement import ConfidenceMap, predict_mask
from fewseg.tensor import Tensor, no_grad
from fewseg.types import ClassRow, ReportPayload

import logging
import numpy as np

__all__ = (
    "EvalReport",
    "scaled_size",
    "multi_scale_predict",
    "evaluate_episode",
    "evaluate",
    "foreground_baseline",
)

_LOGGER = logging.getLogger(__name__)


@dataclass
class EvalReport:
    """The outcome of evaluating a model on an episode set.

    Attributes
    ----------
    per_class_iou: Dict[:class:`int`, :class:`float`]
        Foreground IoU of every evaluated class.
    mean_iou: :class:`float`
        The unweighted mean of :attr:`per_class_iou`.
    fb_iou: :class:`float`
        The mean of foreground and background IoU over all episodes.
    episodes_evaluated: :class:`int`
        The number of episodes.
    config_fingerprint: :class:`str`
        The fingerprint of the run configuration.
    class_episodes: Dict[:class:`int`, :class:`int`]
        Episodes per class.
    options: Dict[:class:`str`, Any]
        The evaluation options, for display.
    """

    per_class_iou: Dict[int, float]
    mean_iou: float
    fb_iou: float
    episodes_evaluated: int
    config_fingerprint: str = ""
    class_episodes: Dict[int, int] = field(default_factory=dict)
    options: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_results(
        cls,
        results: Sequence[EpisodeResult],
        fingerprint: str = "",
        options: Optional[Dict[str, Any]] = None,
    ) -> EvalReport:
        accumulator = IoUAccumulator()
        counts: Dict[int, int] = {}
        for result in results:
            accumulator.add(result)
            counts[result.class_id] = counts.get(result.class_id, 0) + 1

        per_class, mean = accumulator.mean_iou()
        return cls(
            per_class_iou=per_class,
            mean_iou=mean,
            fb_iou=accumulator.fb_iou(),
            episodes_evaluated=len(accumulator),
            config_fingerprint=fingerprint,
            class_episodes=dict(sorted(counts.items())),
            options=dict(options or {}),
        )

    def table(self) -> str:
        """A human readable table with one row per class."""
        lines = ["fingerprint %s" % self.config_fingerprint]
        for key, value in self.options.items():
            lines.append("%-11s %s" % (key, value))
        lines.append("")
        lines.append("%8s %10s %8s" % ("class", "episodes", "IoU"))
        for class_id, value in self.per_class_iou.items():
            lines.append("%8d %10d %8.4f" % (class_id, self.class_episodes.get(class_id, 0), value))
        lines.append("")
        lines.append("meanIoU  %.4f" % self.mean_iou)
        lines.append("FB-IoU   %.4f" % self.fb_iou)
        lines.append("episodes %d" % self.episodes_evaluated)
        return "\n".join(lines) + "\n"

    def to_dict(self) -> ReportPayload:
        classes: List[ClassRow] = [
            {"class_id": class_id, "iou": value, "episodes": self.class_episodes.get(class_id, 0)}
            for class_id, value in self.per_class_iou.items()
        ]
        return {
            "fingerprint": self.config_fingerprint,
            "mean_iou": self.mean_iou,
            "fb_iou": self.fb_iou,
            "episodes": self.episodes_evaluated,
            "classes": classes,
            "options": dict(self.options),
        }


def scaled_size(height: int, width: int, scale: float) -> Tuple[int, int]:
    """Scales image dimensions and snaps them to the nearest multiple of 8.

    Raises
    ------
    ConfigError
        A scaled dimension falls below 16.
    """
    size = (
        int(round(height * scale / FEATURE_STRIDE)) * FEATURE_STRIDE,
        int(round(width * scale / FEATURE_STRIDE)) * FEATURE_STRIDE,
    )
    if min(size) < 16:
        raise ConfigError("scale %g turns %dx%d into %r, below 16" % (scale, height, width, size), "eval.scales")
    return size


def multi_scale_predict(
    model: SupportsPredict,
    episode: Episode,
    scales: Sequence[float],
    *,
    fusion: str = FusionMode.ATTENTION,
    iterations: Optional[int] = None,
) -> ConfidenceMap:
    """Averages the final predictions for several rescaled copies of the query.

    The support set is left untouched. Every map is resized back to the
    resolution it would have at scale one, averaged, and renormalised.

    Raises
    ------
    ConfigError
        ``scales`` is empty or a scale gives an image smaller than 16 pixels.
    """
    if not scales:
        raise ConfigError("at least one scale is required", "eval.scales")

    _, height, width = episode.query_image.shape
    maps: List[np.ndarray] = []
    for scale in scales:
        size = scaled_size(height, width, scale)
        if size == (height, width):
            scaled = episode
        else:
            image = resize_array(episode.query_image.data, *size)
            scaled = replace(episode, query_image=Tensor(image))

        probs = model.predict_maps(scaled, fusion=fusion, iterations=iterations)[-1].probs.data
        target = (int(round(probs.shape[1] * height / size[0])), int(round(probs.shape[2] * width / size[1])))
        maps.append(resize_array(probs, *target))

    if all(np.array_equal(probs, maps[0]) for probs in maps[1:]):
        return ConfidenceMap(Tensor(maps[0]))

    average = np.mean(maps, axis=0)
    return ConfidenceMap(Tensor(average / average.sum(axis=0, keepdims=True)))


def evaluate_episode(
    model: SupportsPredict,
    episode: Episode,
    *,
    fusion: str = FusionMode.ATTENTION,
    annotation: str = AnnotationMode.PIXEL,
    scales: Sequence[float] = (1.0,),
    iterations: Optional[int] = None,
) -> EpisodeResult:
    """Runs full inference on one episode and counts the pixels of both metrics."""
    episode = annotate(episode, annotation)
    with no_grad():
        final = multi_scale_predict(model, episode, scales, fusion=fusion, iterations=iterations)

    height, width = episode.query_mask.shape
    return episode_result(episode.class_id, predict_mask(final, height, width), episode.query_mask)


def evaluate(
    model: SupportsPredict,
    split: ClassSplit,
    phase: str,
    n_episodes: int,
    k: int = 1,
    fusion_mode: str = FusionMode.ATTENTION,
    annotation_mode: str = AnnotationMode.PIXEL,
    scales: Sequence[float] = (1.0,),
    seed: int = 1,
    *,
    iterations: Optional[int] = None,
    image_size: int = 64,
    max_distractors: int = 2,
    min_area: int = 16,
    max_area_fraction: float = 0.6,
    threads: int = 1,
    fingerprint: str = "",
    sampler: Optional[EpisodeSampler] = None,
    start: int = 0,
) -> EvalReport:
    """Evaluates a model on ``n_episodes`` deterministically sampled episodes.

    Episodes are drawn from an :class:`EpisodeSampler` seeded with ``seed``
    and evaluated on up to ``threads`` worker threads. Results are reduced
    in episode order, so the report does not depend on the thread count.

    Parameters
    ----------
    model: :class:`SupportsPredict`
        The model, usually a :class:`Segmenter`.
    split: :class:`ClassSplit`
        The class partition.
    phase: :class:`str`
        The :class:`Phase` to draw classes from.
    n_episodes: :class:`int`
        The number of episodes.
    k: :class:`int`
        Support examples per episode.
    fusion_mode: :class:`str`
        One of :attr:`FusionMode.ALL`.
    annotation_mode: :class:`str`
        One of :attr:`AnnotationMode.ALL`.
    scales: Sequence[:class:`float`]
        Query scales averaged by :func:`multi_scale_predict`.
    seed: :class:`int`
        The episode stream seed.
    iterations: Optional[:class:`int`]
        Refinement steps; the model's default when ``None``.
    sampler: Optional[:class:`EpisodeSampler`]
        Draw episodes from this sampler instead of one built from
        ``seed`` and the dataset options.
    start: :class:`int`
        The index of the first episode in the stream.

    Raises
    ------
    ConfigError
        ``n_episodes`` is not positive or an option is invalid.
    """
    if n_episodes < 1:
        raise ConfigError("at least one episode is required, got %d" % n_episodes, "eval.episodes")
    if phase not in Phase.ALL:
        raise ConfigError("expected one of %s, got %r" % (", ".join(Phase.ALL), phase), "phase")
    if fusion_mode not in FusionMode.ALL:
        raise ConfigError("expected one of %s, got %r" % (", ".join(FusionMode.ALL), fusion_mode), "eval.fusion")
    if annotation_mode not in AnnotationMode.ALL:
        raise ConfigError(
            "expected one of %s, got %r" % (", ".join(AnnotationMode.ALL), annotation_mode), "eval.annotation"
        )

    if sampler is None:
        sampler = EpisodeSampler(
            split, image_size, seed,
            max_distractors=max_distractors, min_area=min_area, max_area_fraction=max_area_fraction,
        )
    for scale in scales:
        scaled_size(sampler.image_size, sampler.image_size, scale)

    def run(index: int) -> EpisodeResult:
        return evaluate_episode(
            model, sampler.episode(phase, index, k),
            fusion=fusion_mode, annotation=annotation_mode, scales=scales, iterations=iterations,
        )

    _LOGGER.info(
        "Evaluating %d %s episodes (k=%d, fusion=%s, annotation=%s, scales=%s) on %d thread(s)",
        n_episodes, phase, k, fusion_mode, annotation_mode, ",".join("%g" % s for s in scales), threads,
    )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(run, range(start, start + n_episodes)))
    else:
        results = [run(index) for index in range(start, start + n_episodes)]

    options = {
        "phase": phase,
        "k": k,
        "fusion": fusion_mode,
        "annotation": annotation_mode,
        "scales": ",".join("%g" % s for s in scales),
        "iterations": "default" if iterations is None else iterations,
        "seed": sampler.seed,
    }
    report = EvalReport.from_results(results, fingerprint, options)
    _LOGGER.info("meanIoU %.4f, FB-IoU %.4f over %d episodes", report.mean_iou, report.fb_iou, n_episodes)
    return report


def foreground_baseline(episodes: Iterable[Episode]) -> float:
    """The meanIoU of a predictor that marks every pixel as foreground.

    Each episode's IoU is the ground truth area over the frame area, so
    the value follows from the ground truth alone.
    """
    rows = []
    for episode in episodes:
        mask = np.asarray(episode.query_mask) > 0
        rows.append((episode.class_id, int(mask.sum()), int(mask.size)))
    return mean_iou(rows)[1]
