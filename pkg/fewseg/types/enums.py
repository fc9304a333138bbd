# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Literal


__all__ = (
    "FusionModeT",
    "AnnotationModeT",
    "PhaseT",
    "BlockModeT",
    "TrainingEventT",
)


FusionModeT = Literal["attention", "feature_avg", "mask_avg", "mask_or"]
AnnotationModeT = Literal["pixel", "bbox"]
PhaseT = Literal["train", "test"]
BlockModeT = Literal["b2", "b3", "b4", "b2b3", "b3b4", "b2b4", "b2b3b4"]
TrainingEventT = Literal["StepCompleted", "EpochCompleted", "WarmupEpochCompleted"]
