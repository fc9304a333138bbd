# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, Any, Dict, List, Optional, TypedDict
from typing_extensions import NotRequired

if TYPE_CHECKING:
    from fewseg.types.enums import AnnotationModeT, PhaseT


__all__ = (
    "ExampleFiles",
    "ManifestEpisode",
    "Manifest",
    "ClassRow",
    "ReportPayload",
    "ParameterEntry",
    "CacheEntry",
    "CheckpointHeader",
)


class ExampleFiles(TypedDict):
    """The files of one annotated image of a generated episode."""

    image: str
    """The PPM image, relative to the manifest."""

    mask: str
    """The PGM pixel mask, relative to the manifest."""

    bbox_mask: NotRequired[str]
    """The PGM box mask; only written in box annotation mode."""


class ManifestEpisode(TypedDict):
    """Represents one episode listed in a manifest."""

    index: int
    class_id: int
    phase: PhaseT
    support: List[ExampleFiles]
    query: ExampleFiles


class Manifest(TypedDict):
    """Represents the ``manifest.json`` written by ``gen-data``."""

    fingerprint: str
    """The run configuration fingerprint."""

    seed: int
    image_size: int
    k: int
    annotation: AnnotationModeT
    train_classes: List[int]
    test_classes: List[int]
    episodes: List[ManifestEpisode]


class ClassRow(TypedDict):
    class_id: int
    iou: float
    episodes: int


class ReportPayload(TypedDict):
    """Represents the structured form of an evaluation report."""

    fingerprint: str
    mean_iou: float
    fb_iou: float
    episodes: int
    classes: List[ClassRow]
    options: NotRequired[Dict[str, Any]]
    """The evaluation options the report was produced with."""


class ParameterEntry(TypedDict):
    """A named blob in a checkpoint."""

    name: str
    shape: List[int]


class CacheEntry(TypedDict):
    """A cached confidence map stored in an epoch checkpoint."""

    phase: PhaseT
    index: int
    shape: List[int]


class CheckpointHeader(TypedDict):
    """Represents the JSON block at the start of a checkpoint file."""

    version: int
    fingerprint: str
    config: Dict[str, Any]
    """The :class:`ModelConfig` the parameters belong to."""

    frozen: List[str]
    parameters: List[ParameterEntry]
    epoch: NotRequired[Optional[int]]
    """The completed epochs when written by the trainer."""

    cache: NotRequired[List[CacheEntry]]
