# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Dict, List, Optional, Tuple
from fewseg.refinement import ConfidenceMap

import logging

__all__ = (
    "EpisodeKey",
    "PredictionCache",
)

EpisodeKey = Tuple[str, int]
"""An episode identity: ``(phase, index)``."""

_LOGGER = logging.getLogger(__name__)


class PredictionCache:
    """A class that holds the predictions of the last training epoch.

    The cache keeps two generations. Predictions made during the current
    epoch are written with :meth:`add` and only become readable through
    :meth:`get` after :meth:`rotate` is called at the epoch boundary;
    rotating also drops everything read during the finished epoch.

    Stored maps are detached from the autograd graph.
    """

    def __init__(self) -> None:
        self.clear()

    def __len__(self) -> int:
        return len(self.__previous)

    def __contains__(self, key: EpisodeKey) -> bool:
        return key in self.__previous

    def clear(self) -> None:
        self.__previous: Dict[EpisodeKey, ConfidenceMap] = {}
        self.__current: Dict[EpisodeKey, ConfidenceMap] = {}

    def keys(self) -> List[EpisodeKey]:
        """The episodes with a prediction from the last epoch."""
        return list(self.__previous)

    def add(self, key: EpisodeKey, map: ConfidenceMap) -> None:
        """Stores this epoch's prediction for an episode.

        If a prediction for the episode already exists in this epoch, It will be overwritten.
        """
        self.__current[key] = map.detach()

    def get(self, key: EpisodeKey) -> Optional[ConfidenceMap]:
        """Gets the last epoch's prediction for an episode.

        Returns
        -------
        Optional[:class:`ConfidenceMap`]
            The prediction; if exists. Otherwise ``None``.
        """
        found = self.__previous.get(key)
        _LOGGER.debug("Prediction cache %s for episode %r", "hit" if found is not None else "miss", key)
        return found

    def remove(self, key: EpisodeKey) -> Optional[ConfidenceMap]:
        return self.__previous.pop(key, None)

    def rotate(self) -> None:
        """Makes this epoch's predictions the readable generation."""
        self.__previous = self.__current
        self.__current = {}

    def pending(self) -> Dict[EpisodeKey, ConfidenceMap]:
        """This epoch's predictions, not yet readable."""
        return dict(self.__current)

    def load(self, entries: Dict[EpisodeKey, ConfidenceMap]) -> None:
        """Replaces the readable generation, as when resuming from a checkpoint."""
        self.__previous = {key: map.detach() for key, map in entries.items()}
        self.__current = {}
