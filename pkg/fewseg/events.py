# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, Optional
from abc import ABC, abstractmethod
from dataclasses import dataclass
from fewseg.enums import TrainingEvent

if TYPE_CHECKING:
    from fewseg import types

__all__ = (
    "BaseEvent",
    "StepCompleted",
    "EpochCompleted",
    "WarmupEpochCompleted",
)


class BaseEvent(ABC):
    """The base class for all classes relating to training events.

    Events classes are passed to the listeners registered on a
    :class:`Trainer` and describe the progress of a run.
    """

    @abstractmethod
    def get_event_name(self) -> types.TrainingEventT:
        """Gets the name of event.

        Returns
        -------
        :class:`fewseg.types.TrainingEventT`
        """


@dataclass
class StepCompleted(BaseEvent):
    """An event emitted after an optimisation step."""

    epoch: int
    """The epoch, ``1`` based."""

    step: int
    """The step within the epoch, ``1`` based."""

    loss: float
    """The mean loss of the step's batch."""

    def get_event_name(self) -> types.TrainingEventT:
        return TrainingEvent.STEP_COMPLETED


@dataclass
class EpochCompleted(BaseEvent):
    """An event emitted after an epoch of episodic training.

    The trainer's state already holds the parameters at the end of
    the epoch when listeners are called.
    """

    epoch: int
    """The epoch that finished, ``1`` based."""

    mean_loss: float
    """The mean of the epoch's step losses."""

    val_mean_iou: Optional[float] = None
    """The validation meanIoU, when validation is enabled."""

    def get_event_name(self) -> types.TrainingEventT:
        return TrainingEvent.EPOCH_COMPLETED


@dataclass
class WarmupEpochCompleted(BaseEvent):
    """An event emitted after an epoch of backbone warm-up."""

    epoch: int
    mean_loss: float

    def get_event_name(self) -> types.TrainingEventT:
        return TrainingEvent.WARMUP_EPOCH_COMPLETED
