# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Iterator, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field, replace
from scipy import ndimage
from fewseg.backbone import FEATURE_STRIDE
from fewseg.comparison import FOREGROUND_EPSILON, BinaryMask, SupportExample
from fewseg.enums import AnnotationMode, Phase
from fewseg.exceptions import ConfigError, EmptyForegroundError, GenerationError
from fewseg.internal.helpers import BBOX_STREAM, PHASE_CODES, WARMUP_STREAM, derive_rng
from fewseg.ops import resize_array
from fewseg.shapes import MAX_ATTEMPTS, MAX_SCENE_CLASSES, Scene, ShapeClass, build_catalogue, generate_scene
from fewseg.tensor import Tensor

import logging
import numpy as np

__all__ = (
    "ClassSplit",
    "Episode",
    "EpisodeSampler",
    "sample_episode",
    "mask_to_bbox_mask",
    "annotate",
    "downsample_labels",
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassSplit:
    """A class-disjoint partition of the catalogue into folds.

    Classes are divided into ``num_splits`` contiguous folds. The fold at
    ``test_split_index`` holds the test classes, the rest are training classes.

    Attributes
    ----------
    num_classes: :class:`int`
        The size of the catalogue.
    num_splits: :class:`int`
        The number of folds.
    test_split_index: :class:`int`
        The held-out fold.
    """

    num_classes: int = 16
    num_splits: int = 4
    test_split_index: int = 0
    train_classes: Tuple[int, ...] = field(init=False)
    test_classes: Tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        if self.num_splits < 2:
            raise ConfigError("at least 2 splits are needed, got %d" % self.num_splits, "dataset.num_splits")
        if self.num_classes < self.num_splits:
            raise ConfigError(
                "%d classes cannot fill %d splits" % (self.num_classes, self.num_splits), "dataset.num_classes"
            )
        if not 0 <= self.test_split_index < self.num_splits:
            raise ConfigError("must lie in [0, %d)" % self.num_splits, "dataset.test_split")

        folds = np.array_split(np.arange(self.num_classes), self.num_splits)
        test = tuple(int(c) for c in folds[self.test_split_index])
        train = tuple(int(c) for c in range(self.num_classes) if c not in test)
        object.__setattr__(self, "train_classes", train)
        object.__setattr__(self, "test_classes", test)

    def classes(self, phase: str) -> Tuple[int, ...]:
        if phase == Phase.TRAIN:
            return self.train_classes
        if phase == Phase.TEST:
            return self.test_classes
        raise ConfigError("expected one of %s, got %r" % (", ".join(Phase.ALL), phase), "phase")

    def phase_of(self, class_id: int) -> str:
        return Phase.TEST if class_id in self.test_classes else Phase.TRAIN


@dataclass
class Episode:
    """One few-shot task.

    Attributes
    ----------
    support: List[:class:`SupportExample`]
        The ``k`` annotated examples of the target class.
    query_image: :class:`Tensor`
        The image to segment, ``[3, H, W]``.
    query_mask: :data:`BinaryMask`
        The ground truth of the target class in the query.
    class_id: :class:`int`
        The target class.
    phase: :class:`str`
        The :class:`Phase` the class was drawn from.
    index: :class:`int`
        The episode's position in its stream; with ``phase`` it identifies the episode.
    seed: :class:`int`
        The seed of the stream.
    """

    support: List[SupportExample]
    query_image: Tensor
    query_mask: BinaryMask
    class_id: int
    phase: str = Phase.TRAIN
    index: int = 0
    seed: int = 0

    @property
    def k(self) -> int:
        return len(self.support)

    @property
    def key(self) -> Tuple[str, int]:
        return (self.phase, self.index)


def downsample_labels(labels: np.ndarray, factor: int = FEATURE_STRIDE) -> np.ndarray:
    """Reduces an integer label map by majority vote over ``factor`` x ``factor`` blocks.

    Ties go to the smallest label, so a binary mask keeps a block as
    foreground only when more than half of it is foreground.
    """
    height, width = labels.shape
    if height % factor or width % factor:
        raise ConfigError("label map %r is not divisible by %d" % (labels.shape, factor))

    blocks = labels.reshape(height // factor, factor, width // factor, factor).transpose(0, 2, 1, 3)
    blocks = blocks.reshape(height // factor, width // factor, factor * factor).astype(np.int64)
    counts = np.stack([(blocks == value).sum(axis=-1) for value in range(int(labels.max()) + 1)], axis=-1)
    return counts.argmax(axis=-1).astype(labels.dtype)


def _pools_to_foreground(mask: np.ndarray) -> bool:
    height, width = mask.shape
    weights = resize_array(mask.astype(np.float64), height // FEATURE_STRIDE, width // FEATURE_STRIDE)
    return bool(weights.sum() >= FOREGROUND_EPSILON)


def _components(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    labels, count = ndimage.label(np.asarray(mask) > 0)
    return labels, int(count)


def _box_of(labels: np.ndarray, component: int) -> BinaryMask:
    rows, cols = np.nonzero(labels == component)
    box = np.zeros(labels.shape, dtype=np.uint8)
    box[rows.min():rows.max() + 1, cols.min():cols.max() + 1] = 1
    return box


def _usable_support(mask: np.ndarray) -> bool:
    """Whether a mask and every instance box drawn from it survive pooling at feature resolution."""
    if not _pools_to_foreground(mask):
        return False
    labels, count = _components(mask)
    return all(_pools_to_foreground(_box_of(labels, component)) for component in range(1, count + 1))


def mask_to_bbox_mask(mask: BinaryMask, rng: Optional[np.random.Generator] = None) -> BinaryMask:
    """Replaces a mask by the filled bounding box of one of its instances.

    Instances are the 4-connected foreground components; when there are
    several, one is chosen uniformly with ``rng``.

    Raises
    ------
    EmptyForegroundError
        The mask has no foreground pixel.
    """
    labels, count = _components(mask)
    if count == 0:
        raise EmptyForegroundError("bounding box annotation")

    component = 1
    if count > 1:
        rng = rng if rng is not None else np.random.default_rng(0)
        component = int(rng.integers(count)) + 1
    return _box_of(labels, component)


def annotate(ep: Episode, mode: str, rng: Optional[np.random.Generator] = None) -> Episode:
    """Applies an :class:`AnnotationMode` to the support masks of an episode.

    Pixel mode returns the episode itself. Box mode returns a copy whose
    support masks are :func:`mask_to_bbox_mask` boxes; the query mask is kept.
    """
    if mode == AnnotationMode.PIXEL:
        return ep
    if mode != AnnotationMode.BBOX:
        raise ConfigError("expected one of %s, got %r" % (", ".join(AnnotationMode.ALL), mode), "annotation")

    rng = rng if rng is not None else derive_rng(ep.seed, ep.phase, ep.index, BBOX_STREAM)
    support = [SupportExample(example.image, mask_to_bbox_mask(example.mask, rng)) for example in ep.support]
    return replace(ep, support=support)


def _scene_with(
    target: ShapeClass,
    pool: Sequence[ShapeClass],
    size: Tuple[int, int],
    rng: np.random.Generator,
    max_distractors: int,
    min_area: int,
    max_area_fraction: float,
) -> Scene:
    others = [shape for shape in pool if shape.id != target.id]
    limit = min(max_distractors, len(others), MAX_SCENE_CLASSES - 1)
    count = int(rng.integers(limit + 1)) if limit > 0 else 0
    distractors = [others[int(i)] for i in rng.choice(len(others), size=count, replace=False)] if count else []
    return generate_scene([target] + distractors, size, rng, min_area=min_area, max_area_fraction=max_area_fraction)


def sample_episode(
    split: ClassSplit,
    phase: str,
    k: int,
    size: Tuple[int, int],
    rng: np.random.Generator,
    *,
    catalogue: Optional[Sequence[ShapeClass]] = None,
    max_distractors: int = 2,
    min_area: int = 16,
    max_area_fraction: float = 0.6,
) -> Episode:
    """Draws one episode from the classes of ``phase``.

    The target class is drawn uniformly; then ``k`` support scenes and one
    query scene are rendered, each containing the target class and up to
    ``max_distractors`` other classes of the same phase. Support scenes
    whose mask would vanish at feature resolution are redrawn.

    Raises
    ------
    ConfigError
        ``k`` is smaller than one.
    GenerationError
        A usable scene could not be rendered.
    """
    if k < 1:
        raise ConfigError("k must be at least 1, got %d" % k, "k")

    catalogue = catalogue if catalogue is not None else build_catalogue(split.num_classes)
    pool = [catalogue[class_id] for class_id in split.classes(phase)]
    target = pool[int(rng.integers(len(pool)))]
    options = dict(max_distractors=max_distractors, min_area=min_area, max_area_fraction=max_area_fraction)

    support: List[SupportExample] = []
    for _ in range(k):
        for attempt in range(MAX_ATTEMPTS):
            scene = _scene_with(target, pool, size, rng, **options)
            mask = scene.masks[target.id]
            if _usable_support(mask):
                break
            _LOGGER.debug("Support scene for class %d vanishes at feature resolution, redrawing", target.id)
        else:
            raise GenerationError([target.id], MAX_ATTEMPTS)
        support.append(SupportExample(Tensor(scene.image), mask))

    query = _scene_with(target, pool, size, rng, **options)
    return Episode(
        support=support,
        query_image=Tensor(query.image),
        query_mask=query.masks[target.id],
        class_id=target.id,
        phase=phase,
    )


class EpisodeSampler:
    """A deterministic stream of episodes and scenes.

    Every episode is a pure function of ``(seed, phase, index)``: it is drawn
    from a generator derived from that triple, so any episode can be replayed
    on its own and streams can be generated concurrently.

    Parameters
    ----------
    split: :class:`ClassSplit`
        The class partition.
    image_size: :class:`int`
        Side of the square images.
    seed: :class:`int`
        The stream seed.
    max_distractors: :class:`int`
        Most extra classes per scene.
    min_area: :class:`int`
        Fewest visible pixels of a class.
    max_area_fraction: :class:`float`
        Largest share of the frame one class may cover.
    """

    def __init__(
        self,
        split: ClassSplit,
        image_size: int = 64,
        seed: int = 0,
        *,
        max_distractors: int = 2,
        min_area: int = 16,
        max_area_fraction: float = 0.6,
    ) -> None:
        if image_size < 16 or image_size % FEATURE_STRIDE:
            raise ConfigError("must be a multiple of 8 and at least 16, got %d" % image_size, "dataset.image_size")
        if max_distractors < 0:
            raise ConfigError("must not be negative", "dataset.max_distractors")

        self.split = split
        self.image_size = image_size
        self.seed = seed
        self.max_distractors = max_distractors
        self.min_area = min_area
        self.max_area_fraction = max_area_fraction
        self.catalogue = build_catalogue(split.num_classes)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} split={self.split!r} seed={self.seed} size={self.image_size}>"

    @property
    def size(self) -> Tuple[int, int]:
        return (self.image_size, self.image_size)

    def episode(self, phase: str, index: int, k: int = 1) -> Episode:
        """The episode at ``index`` of the ``phase`` stream."""
        if phase not in PHASE_CODES:
            raise ConfigError("expected one of %s, got %r" % (", ".join(Phase.ALL), phase), "phase")

        ep = sample_episode(
            self.split, phase, k, self.size, derive_rng(self.seed, phase, index),
            catalogue=self.catalogue,
            max_distractors=self.max_distractors,
            min_area=self.min_area,
            max_area_fraction=self.max_area_fraction,
        )
        ep.index = index
        ep.seed = self.seed
        return ep

    def episodes(self, phase: str, count: int, k: int = 1, start: int = 0) -> Iterator[Episode]:
        for index in range(start, start + count):
            yield self.episode(phase, index, k)

    def scene(self, index: int) -> Scene:
        """A training-split scene for backbone warm-up; its label map covers training classes only."""
        rng = derive_rng(self.seed, WARMUP_STREAM, index)
        pool = [self.catalogue[class_id] for class_id in self.split.train_classes]
        count = int(rng.integers(1, min(MAX_SCENE_CLASSES, len(pool)) + 1))
        chosen = [pool[int(i)] for i in rng.choice(len(pool), size=count, replace=False)]
        return generate_scene(
            chosen, self.size, rng, min_area=self.min_area, max_area_fraction=self.max_area_fraction
        )
