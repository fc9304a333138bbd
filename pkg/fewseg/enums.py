# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

__all__ = (
    "FusionMode",
    "AnnotationMode",
    "Phase",
    "BlockMode",
    "ShapeFamily",
    "TrainingEvent",
)


class FusionMode:
    """An enumeration detailing the ways k support examples are merged."""

    ATTENTION = "attention"
    """Comparison features are summed with learned softmax weights."""

    FEATURE_AVG = "feature_avg"
    """Comparison features are averaged without weights."""

    MASK_AVG = "mask_avg"
    """Each support is run as a 1-shot task and the confidence maps are averaged."""

    MASK_OR = "mask_or"
    """Each support is run as a 1-shot task and the predicted masks are merged with OR."""

    ALL = (ATTENTION, FEATURE_AVG, MASK_AVG, MASK_OR)
    """All the valid fusion modes."""


class AnnotationMode:
    """An enumeration detailing how support masks are annotated."""

    PIXEL = "pixel"
    """Pixel-exact support masks."""

    BBOX = "bbox"
    """Support masks replaced by the filled bounding box of one instance."""

    ALL = (PIXEL, BBOX)
    """All the valid annotation modes."""


class Phase:
    """An enumeration detailing which class split an episode is drawn from."""

    TRAIN = "train"
    """Classes seen during training."""

    TEST = "test"
    """Held-out classes, never seen during training."""

    ALL = (TRAIN, TEST)
    """All the valid phases."""


class BlockMode:
    """An enumeration detailing which backbone stages feed the comparison encoder."""

    B2 = "b2"
    """Stage 2 only."""

    B3 = "b3"
    """Stage 3 only."""

    B4 = "b4"
    """Stage 4 only."""

    B2B3 = "b2b3"
    """Stages 2 and 3. This is the default."""

    B3B4 = "b3b4"
    """Stages 3 and 4."""

    B2B4 = "b2b4"
    """Stages 2 and 4."""

    B2B3B4 = "b2b3b4"
    """Stages 2, 3 and 4."""

    ALL = (B2, B3, B4, B2B3, B3B4, B2B4, B2B3B4)
    """All the valid block modes."""


class ShapeFamily:
    """An enumeration detailing the outlines the synthetic shape classes are drawn from."""

    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"
    RING = "ring"
    PLUS = "plus"
    BAR = "bar"
    ELLIPSE = "ellipse"
    ELL = "ell"
    """An L-shaped outline."""

    TEE = "tee"
    """A T-shaped outline."""

    YOU = "you"
    """A U-shaped outline."""

    STAR = "star"
    DIAMOND = "diamond"
    HEXAGON = "hexagon"
    ARROW = "arrow"
    CRESCENT = "crescent"
    TRAPEZOID = "trapezoid"

    ALL = (
        CIRCLE, SQUARE, TRIANGLE, RING, PLUS, BAR, ELLIPSE, ELL,
        TEE, YOU, STAR, DIAMOND, HEXAGON, ARROW, CRESCENT, TRAPEZOID,
    )
    """All the shape families, in catalogue order."""


class TrainingEvent:
    """An enumeration detailing the names of events dispatched by :class:`Trainer`."""

    STEP_COMPLETED = "StepCompleted"
    """Emitted after every optimisation step of episodic training."""

    EPOCH_COMPLETED = "EpochCompleted"
    """Emitted after every epoch of episodic training."""

    WARMUP_EPOCH_COMPLETED = "WarmupEpochCompleted"
    """Emitted after every epoch of backbone warm-up."""

    ALL = (STEP_COMPLETED, EPOCH_COMPLETED, WARMUP_EPOCH_COMPLETED)
    """All the event names."""
