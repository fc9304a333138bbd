# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, Optional, Tuple
from dataclasses import dataclass
from fewseg.backbone import encode_comparison_features, extract_features
from fewseg.exceptions import EmptyForegroundError, ShapeError
from fewseg.ops import concat_channels, conv2d, relu, resize_array, tile, weighted_spatial_pool
from fewseg.tensor import Tensor

import numpy as np

if TYPE_CHECKING:
    from fewseg.state import ModelState


__all__ = (
    "BinaryMask",
    "SupportExample",
    "ComparisonFeature",
    "FOREGROUND_EPSILON",
    "init_comparison",
    "embed_image",
    "masked_average_pool",
    "tile_and_concat",
    "compare",
    "dcm_forward",
)

BinaryMask = np.ndarray
"""A ``[H, W]`` array of 0/1 values (``uint8``)."""

FOREGROUND_EPSILON = 1e-6
"""Downsampled masks lighter than this are treated as empty."""


@dataclass
class SupportExample:
    """An annotated example of the target class.

    Attributes
    ----------
    image: :class:`Tensor`
        Image of shape ``[3, H, W]``.
    mask: :data:`BinaryMask`
        Foreground mask of shape ``[H, W]``.
    """

    image: Tensor
    mask: BinaryMask

    def __post_init__(self) -> None:
        if self.mask.shape != self.image.shape[1:]:
            raise ShapeError("SupportExample", "mask of shape %r" % (self.image.shape[1:],), self.mask.shape)


@dataclass
class ComparisonFeature:
    """The dense comparison output for one support example.

    Attributes
    ----------
    map: :class:`Tensor`
        Feature map of shape ``[D, H/8, W/8]``.
    """

    map: Tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.map.shape


def init_comparison(state: ModelState, embed_dim: int, rng: np.random.Generator) -> None:
    state.add_conv("comparison.conv", 2 * embed_dim, embed_dim, 3, rng)


def embed_image(image: Tensor, state: ModelState) -> Tensor:
    """Backbone plus encoder: the ``[D, H/8, W/8]`` embedding both branches share."""
    return encode_comparison_features(extract_features(image, None, state), state)


def masked_average_pool(features: Tensor, mask_full: BinaryMask) -> Tensor:
    """Averages feature vectors over the foreground of a mask.

    The mask is bilinearly resized to the feature resolution and its soft
    values are used as weights: features are multiplied by the mask, sum
    pooled, and divided by the summed mask weight.

    Parameters
    ----------
    features: :class:`Tensor`
        Feature map of shape ``[D, h, w]``.
    mask_full: :data:`BinaryMask`
        Mask of shape ``[H, W]``, at any resolution.

    Returns
    -------
    :class:`Tensor`
        Vector of shape ``[D]``.

    Raises
    ------
    EmptyForegroundError
        The downsampled mask weighs less than :data:`FOREGROUND_EPSILON`.
    """
    _, height, width = features.shape
    weights = resize_array(np.asarray(mask_full, dtype=np.float64), height, width)
    if weights.sum() < FOREGROUND_EPSILON:
        raise EmptyForegroundError("masked average pooling")
    return weighted_spatial_pool(features, weights)


def tile_and_concat(vec: Tensor, query_feat: Tensor) -> Tensor:
    """Broadcasts ``vec`` to every query location and prepends it along channels.

    Returns
    -------
    :class:`Tensor`
        Map of shape ``[2D, h, w]``: the first ``D`` channels are ``vec``.

    Raises
    ------
    ShapeError
        ``vec`` and ``query_feat`` have different ``D``.
    """
    if len(vec.shape) != 1 or len(query_feat.shape) != 3 or vec.shape[0] != query_feat.shape[0]:
        raise ShapeError("tile_and_concat", "a [D] vector and a [D, h, w] map", (vec.shape, query_feat.shape))

    _, height, width = query_feat.shape
    return concat_channels(tile(vec, height, width), query_feat)


def compare(concatenated: Tensor, state: ModelState) -> ComparisonFeature:
    """The comparison block: one 3x3 convolution with ``D`` filters and ReLU."""
    return ComparisonFeature(relu(conv2d(concatenated, state.conv("comparison.conv", padding=1))))


def dcm_forward(
    support: SupportExample,
    query_image: Tensor,
    state: ModelState,
    *,
    query_features: Optional[Tensor] = None,
    return_concat: bool = False,
):
    """Densely compares every query location with the support foreground.

    Both branches run through the same backbone and encoder weights.

    Parameters
    ----------
    support: :class:`SupportExample`
        The annotated support example.
    query_image: :class:`Tensor`
        The query image, ``[3, H, W]``.
    state: :class:`ModelState`
        The parameters.
    query_features: Optional[:class:`Tensor`]
        A precomputed query embedding, reused across several supports.
    return_concat: :class:`bool`
        Also return the comparison block's input, which the attention branch reads.

    Returns
    -------
    Union[:class:`ComparisonFeature`, Tuple[:class:`ComparisonFeature`, :class:`Tensor`]]

    Raises
    ------
    EmptyForegroundError
        The support mask is empty at feature resolution.
    """
    if query_features is None:
        query_features = embed_image(query_image, state)

    vector = masked_average_pool(embed_image(support.image, state), support.mask)
    concatenated = tile_and_concat(vector, query_features)
    feature = compare(concatenated, state)

    if return_concat:
        return feature, concatenated
    return feature
