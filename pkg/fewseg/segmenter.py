# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple
from dataclasses import asdict, dataclass, field
from fewseg.backbone import BackboneConfig, init_backbone
from fewseg.comparison import (
    BinaryMask,
    ComparisonFeature,
    SupportExample,
    compare,
    embed_image,
    init_comparison,
    masked_average_pool,
    tile_and_concat,
)
from fewseg.enums import FusionMode
from fewseg.exceptions import ConfigError, EmptySupportError
from fewseg.fusion import (
    attention_weights,
    fuse_attention,
    fuse_feature_avg,
    fuse_mask_avg,
    fuse_mask_or,
    init_attention,
)
from fewseg.refinement import ConfidenceMap, IomConfig, init_iom, iterate, predict_mask
from fewseg.state import ModelState
from fewseg.tensor import Tensor, no_grad

import logging
import numpy as np

if TYPE_CHECKING:
    from fewseg.episodes import Episode


__all__ = (
    "ModelConfig",
    "Prediction",
    "build_model_state",
    "Segmenter",
    "one_hot_map",
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    """The architecture of a few-shot segmenter.

    Attributes
    ----------
    backbone: :class:`BackboneConfig`
        The feature extractor and comparison embedding.
    iom: :class:`IomConfig`
        The refinement module. ``iom.channels`` must equal ``backbone.embed_dim``.
    """

    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    iom: IomConfig = field(default_factory=IomConfig)

    def __post_init__(self) -> None:
        if self.iom.channels != self.backbone.embed_dim:
            raise ConfigError(
                "refinement channels (%d) must equal the embedding width (%d)"
                % (self.iom.channels, self.backbone.embed_dim),
                "backbone.embed_dim",
            )

    def to_dict(self) -> Dict[str, Any]:
        payload = {"backbone": asdict(self.backbone), "iom": asdict(self.iom)}
        for section in payload.values():
            for key, value in section.items():
                if isinstance(value, tuple):
                    section[key] = list(value)
        return payload

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> ModelConfig:
        def _section(raw: Dict[str, Any]) -> Dict[str, Any]:
            return {key: tuple(value) if isinstance(value, list) else value for key, value in raw.items()}

        return cls(
            backbone=BackboneConfig(**_section(data["backbone"])),
            iom=IomConfig(**_section(data["iom"])),
        )


def build_model_state(config: ModelConfig, seed: int = 0) -> ModelState:
    """Creates a freshly initialised :class:`ModelState` for ``config``.

    Parameters are drawn from one generator seeded with ``seed`` in a fixed
    registration order, so equal seeds give bit-identical states.
    """
    rng = np.random.default_rng(seed)
    state = ModelState(config)

    embed_dim = config.backbone.embed_dim
    init_backbone(state, config.backbone, rng)
    init_comparison(state, embed_dim, rng)
    init_attention(state, embed_dim, rng)
    init_iom(state, config.iom, rng)

    if config.backbone.frozen:
        state.freeze("backbone")
    elif not config.backbone.selection.needs_stage4():
        state.freeze("backbone.stage4")

    _LOGGER.debug("Built model state with %d parameters", state.num_parameters())
    return state


@dataclass
class Prediction:
    """The outcome of segmenting one query.

    Attributes
    ----------
    maps: List[:class:`ConfidenceMap`]
        The initial map followed by one map per refinement step. For the
        mask-level fusions these are the per-step means of the 1-shot maps.
    mask: :data:`BinaryMask`
        The final mask at the query's resolution.
    """

    maps: List[ConfidenceMap]
    mask: BinaryMask

    @property
    def final(self) -> ConfidenceMap:
        return self.maps[-1]


class Segmenter:
    """Segments a query image given ``k`` annotated support examples.

    This ties the dense comparison, k-shot fusion and iterative refinement
    together over one shared :class:`ModelState`.

    Parameters
    ----------
    state: :class:`ModelState`
        The parameters. Read only.
    """

    def __init__(self, state: ModelState) -> None:
        self.state = state

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} state={self.state!r}>"

    @property
    def config(self) -> ModelConfig:
        return self.state.config

    def compare_supports(
        self,
        supports: Sequence[SupportExample],
        query_image: Tensor,
    ) -> Tuple[List[ComparisonFeature], List[Tensor]]:
        """Runs the dense comparison for every support against one query.

        The query embedding is computed once and shared.

        Returns
        -------
        Tuple[List[:class:`ComparisonFeature`], List[:class:`Tensor`]]
            The comparison features and the comparison block inputs.
        """
        if not supports:
            raise EmptySupportError()

        query_features = embed_image(query_image, self.state)
        features: List[ComparisonFeature] = []
        concats: List[Tensor] = []
        for support in supports:
            vector = masked_average_pool(embed_image(support.image, self.state), support.mask)
            concatenated = tile_and_concat(vector, query_features)
            features.append(compare(concatenated, self.state))
            concats.append(concatenated)
        return features, concats

    def fused_feature(self, supports: Sequence[SupportExample], query_image: Tensor, fusion: str) -> ComparisonFeature:
        """The comparison feature handed to the refinement module for feature-level fusions."""
        features, concats = self.compare_supports(supports, query_image)
        if fusion == FusionMode.FEATURE_AVG:
            return fuse_feature_avg(features)
        if fusion == FusionMode.ATTENTION:
            if len(features) == 1:
                return features[0]
            return fuse_attention(features, attention_weights(concats, self.state))
        raise ConfigError("%r is not a feature-level fusion" % fusion, "fusion")

    def predict(
        self,
        supports: Sequence[SupportExample],
        query_image: Tensor,
        *,
        fusion: str = FusionMode.ATTENTION,
        iterations: Optional[int] = None,
    ) -> Prediction:
        """Segments ``query_image``.

        Parameters
        ----------
        supports: Sequence[:class:`SupportExample`]
            The ``k`` annotated examples.
        query_image: :class:`Tensor`
            The ``[3, H, W]`` image to segment.
        fusion: :class:`str`
            One of :attr:`FusionMode.ALL`.
        iterations: Optional[:class:`int`]
            Refinement steps after the initial prediction; the configured
            ``iom.inference_iterations`` when ``None``.

        Raises
        ------
        ConfigError
            Unknown fusion mode.
        EmptyForegroundError
            A support mask is empty at feature resolution.
        """
        if fusion not in FusionMode.ALL:
            raise ConfigError("expected one of %s, got %r" % (", ".join(FusionMode.ALL), fusion), "fusion")
        if iterations is None:
            iterations = self.config.iom.inference_iterations

        _, height, width = query_image.shape
        with no_grad():
            return self._predict(supports, query_image, fusion, iterations, height, width)

    def _predict(
        self,
        supports: Sequence[SupportExample],
        query_image: Tensor,
        fusion: str,
        iterations: int,
        height: int,
        width: int,
    ) -> Prediction:
        if fusion in (FusionMode.ATTENTION, FusionMode.FEATURE_AVG):
            feature = self.fused_feature(supports, query_image, fusion)
            maps = iterate(feature, iterations, self.state)
            return Prediction(maps=maps, mask=predict_mask(maps[-1], height, width))

        features, _ = self.compare_supports(supports, query_image)
        per_support = [iterate(feature, iterations, self.state) for feature in features]
        maps = [fuse_mask_avg([run[step] for run in per_support]) for step in range(iterations + 1)]

        if fusion == FusionMode.MASK_AVG:
            mask = predict_mask(maps[-1], height, width)
        else:
            mask = fuse_mask_or([predict_mask(run[-1], height, width) for run in per_support])
        return Prediction(maps=maps, mask=mask)

    def predict_maps(self, episode: Episode, *, fusion: str, iterations: Optional[int] = None) -> List[ConfidenceMap]:
        """Confidence maps for an episode's query, as consumed by evaluation.

        For :attr:`FusionMode.MASK_OR` the OR-ed mask is returned as a one-hot
        map at the query's resolution, since no probability map exists for it.
        """
        prediction = self.predict(episode.support, episode.query_image, fusion=fusion, iterations=iterations)
        if fusion == FusionMode.MASK_OR:
            return prediction.maps[:-1] + [one_hot_map(prediction.mask)]
        return prediction.maps


def one_hot_map(mask: BinaryMask) -> ConfidenceMap:
    """A confidence map that puts probability one on ``mask``."""
    foreground = np.asarray(mask, dtype=np.float64)
    return ConfidenceMap(Tensor(np.stack([1.0 - foreground, foreground])))
