# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple
from fewseg.comparison import BinaryMask
from fewseg.exceptions import ShapeError

import numpy as np

__all__ = (
    "iou",
    "EpisodeResult",
    "episode_result",
    "mean_iou",
    "fb_iou",
    "IoUAccumulator",
)


def _ratio(intersection: float, union: float) -> float:
    # Both masks empty counts as a perfect match.
    if union == 0:
        return 1.0
    return float(intersection) / float(union)


def _check(pred: BinaryMask, gt: BinaryMask) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ShapeError("iou", "masks of shape %r" % (gt.shape,), pred.shape)
    return pred, gt


def iou(pred: BinaryMask, gt: BinaryMask) -> float:
    """Foreground intersection over union of two masks; ``1.0`` when both are empty.

    Raises
    ------
    ShapeError
        The masks have different shapes.
    """
    pred, gt = _check(pred, gt)
    return _ratio(np.logical_and(pred, gt).sum(), np.logical_or(pred, gt).sum())


class EpisodeResult(NamedTuple):
    """The pixel counts of one evaluated episode.

    The first three fields are the ``(class_id, intersection, union)``
    triple consumed by :func:`mean_iou`.
    """

    class_id: int
    intersection: int
    union: int
    bg_intersection: int = 0
    bg_union: int = 0


def episode_result(class_id: int, pred: BinaryMask, gt: BinaryMask) -> EpisodeResult:
    pred, gt = _check(pred, gt)
    return EpisodeResult(
        class_id=int(class_id),
        intersection=int(np.logical_and(pred, gt).sum()),
        union=int(np.logical_or(pred, gt).sum()),
        bg_intersection=int(np.logical_and(~pred, ~gt).sum()),
        bg_union=int(np.logical_or(~pred, ~gt).sum()),
    )


def mean_iou(episode_results: Iterable[Sequence[int]]) -> Tuple[Dict[int, float], float]:
    """Per-class and mean foreground IoU.

    Each class's IoU is the sum of its intersections over the sum of its
    unions; the mean weighs every class with at least one episode equally,
    however many episodes it has.

    Parameters
    ----------
    episode_results: Iterable[Sequence[:class:`int`]]
        ``(class_id, intersection, union, ...)`` rows such as :class:`EpisodeResult`.

    Returns
    -------
    Tuple[Dict[:class:`int`, :class:`float`], :class:`float`]
        The per-class IoU keyed by class ID and their unweighted mean
        (``0.0`` without any episode).
    """
    totals: Dict[int, List[int]] = {}
    for row in episode_results:
        entry = totals.setdefault(int(row[0]), [0, 0])
        entry[0] += int(row[1])
        entry[1] += int(row[2])

    per_class = {class_id: _ratio(inter, union) for class_id, (inter, union) in sorted(totals.items())}
    if not per_class:
        return per_class, 0.0
    return per_class, float(np.mean(list(per_class.values())))


def fb_iou(episode_results: Iterable[EpisodeResult]) -> float:
    """The mean of class-agnostic foreground and background IoU over all episodes."""
    fg_inter = fg_union = bg_inter = bg_union = 0
    for result in episode_results:
        fg_inter += result.intersection
        fg_union += result.union
        bg_inter += result.bg_intersection
        bg_union += result.bg_union
    return 0.5 * (_ratio(fg_inter, fg_union) + _ratio(bg_inter, bg_union))


class IoUAccumulator:
    """Collects :class:`EpisodeResult` rows and reports both metrics.

    Accumulation is order independent, so partial accumulators filled by
    different workers can be merged in any order.
    """

    def __init__(self) -> None:
        self.__results: List[EpisodeResult] = []

    def __len__(self) -> int:
        return len(self.__results)

    def add(self, result: EpisodeResult) -> None:
        self.__results.append(result)

    def merge(self, other: IoUAccumulator) -> None:
        self.__results.extend(other.results())

    def results(self) -> List[EpisodeResult]:
        return list(self.__results)

    def mean_iou(self) -> Tuple[Dict[int, float], float]:
        return mean_iou(self.__results)

    def fb_iou(self) -> float:
        return fb_iou(self.__results)
