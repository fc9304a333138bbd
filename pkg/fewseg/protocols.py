# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, List, Optional, Protocol, runtime_checkable

if TYPE_CHECKING:
    from fewseg.episodes import Episode
    from fewseg.refinement import ConfidenceMap

__all__ = (
    "SupportsPredict",
)


@runtime_checkable
class SupportsPredict(Protocol):
    """A protocol for models that can be evaluated on episodes.

    :class:`Segmenter` is compatible with this class. Any object providing
    a compatible :meth:`predict_maps` can be passed to :func:`evaluate`,
    such as a reference predictor in tests.

    This protocol supports runtime checks such as :func:`isinstance`.
    """
    __slots__ = ()

    def predict_maps(self, episode: Episode, *, fusion: str, iterations: Optional[int] = None) -> List[ConfidenceMap]:
        """Returns the confidence maps for the episode's query.

        The last map is the final prediction. Its resolution may be the
        feature resolution or the query resolution.
        """
        ...
