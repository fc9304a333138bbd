# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, List, Optional, Sequence, Union
from dataclasses import dataclass, field
from fewseg.comparison import BinaryMask, ComparisonFeature
from fewseg.exceptions import EmptySupportError, ShapeError
from fewseg.ops import (
    concat_channels,
    conv2d,
    global_avg_pool,
    max_pool2d,
    relu,
    softmax_channels,
    weighted_sum,
)
from fewseg.refinement import ConfidenceMap
from fewseg.tensor import Tensor

import numpy as np

if TYPE_CHECKING:
    from fewseg.state import ModelState


__all__ = (
    "AttentionWeights",
    "ATTENTION_POOL_WINDOW",
    "ATTENTION_POOL_STRIDE",
    "init_attention",
    "attention_logit",
    "normalize_weights",
    "attention_weights",
    "fuse_attention",
    "fuse_feature_avg",
    "fuse_mask_avg",
    "fuse_mask_or",
)

ATTENTION_POOL_WINDOW = 3
ATTENTION_POOL_STRIDE = 2


@dataclass
class AttentionWeights:
    """The per-support weights of attention fusion.

    Attributes
    ----------
    lambdas: List[:class:`float`]
        The raw attention logits, one per support example.
    normalized: List[:class:`float`]
        The softmax of :attr:`lambdas`; positive and summing to one.
    tensor: Optional[:class:`Tensor`]
        The normalized weights as a ``[k]`` tensor attached to the
        graph that produced them, when gradient is being recorded.
    """

    lambdas: List[float]
    normalized: List[float]
    tensor: Optional[Tensor] = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return len(self.normalized)

    def as_tensor(self) -> Tensor:
        return self.tensor if self.tensor is not None else Tensor(np.array(self.normalized))


def init_attention(state: ModelState, embed_dim: int, rng: np.random.Generator) -> None:
    state.add_conv("attention.conv1", 2 * embed_dim, embed_dim, 3, rng)
    state.add_conv("attention.conv2", embed_dim, 1, 3, rng)


def attention_logit(concat_features: Tensor, state: ModelState) -> Tensor:
    """Computes the raw attention weight of one support example.

    The branch runs parallel to the comparison convolution on the same
    input: 3x3 conv + ReLU, 3x3 max pooling with stride 2, a 3x3
    convolution to a single channel and global average pooling.

    Parameters
    ----------
    concat_features: :class:`Tensor`
        The :func:`tile_and_concat` output, ``[2D, h, w]``.

    Returns
    -------
    :class:`Tensor`
        A ``[1]`` tensor holding the logit.

    Raises
    ------
    ShapeError
        ``h`` or ``w`` is smaller than the pooling window.
    """
    _, height, width = concat_features.shape
    if min(height, width) < ATTENTION_POOL_WINDOW:
        raise ShapeError("attention_logit", "spatial dims of at least %d" % ATTENTION_POOL_WINDOW, (height, width))

    out = relu(conv2d(concat_features, state.conv("attention.conv1", padding=1)))
    out = max_pool2d(out, ATTENTION_POOL_WINDOW, ATTENTION_POOL_STRIDE)
    out = conv2d(out, state.conv("attention.conv2", padding=1))
    return global_avg_pool(out)


def normalize_weights(lambdas: Union[Sequence[float], Tensor]) -> AttentionWeights:
    """Softmax over the ``k`` attention logits, computed with max subtraction.

    Parameters
    ----------
    lambdas: Union[Sequence[:class:`float`], :class:`Tensor`]
        The raw logits. A ``[k]`` tensor keeps the result differentiable.

    Raises
    ------
    EmptySupportError
        ``lambdas`` is empty.
    """
    logits = lambdas if isinstance(lambdas, Tensor) else Tensor(np.asarray(lambdas, dtype=np.float64).reshape(-1))
    if logits.data.size == 0:
        raise EmptySupportError()

    normalized = softmax_channels(logits)
    return AttentionWeights(
        lambdas=[float(value) for value in logits.data],
        normalized=[float(value) for value in normalized.data],
        tensor=normalized,
    )


def attention_weights(concats: Sequence[Tensor], state: ModelState) -> AttentionWeights:
    """Runs :func:`attention_logit` on every support and normalizes the results."""
    if not concats:
        raise EmptySupportError()
    logits = [attention_logit(concat, state) for concat in concats]
    return normalize_weights(logits[0] if len(logits) == 1 else concat_channels(*logits))


def _check_features(features: Sequence[ComparisonFeature]) -> None:
    if not features:
        raise EmptySupportError()
    shape = features[0].shape
    for feature in features[1:]:
        if feature.shape != shape:
            raise ShapeError("fusion", "features of shape %r" % (shape,), feature.shape)


def fuse_attention(features: Sequence[ComparisonFeature], weights: AttentionWeights) -> ComparisonFeature:
    """Sums the comparison features weighted by the normalized attention weights.

    With a single support the feature is returned as it is.
    """
    _check_features(features)
    if weights.k != len(features):
        raise ShapeError("fuse_attention", "%d weights" % len(features), weights.k)
    if len(features) == 1:
        return features[0]
    return ComparisonFeature(weighted_sum([feature.map for feature in features], weights.as_tensor()))


def fuse_feature_avg(features: Sequence[ComparisonFeature]) -> ComparisonFeature:
    """The unweighted mean of the comparison features."""
    _check_features(features)
    if len(features) == 1:
        return features[0]
    uniform = Tensor(np.full(len(features), 1.0 / len(features)))
    return ComparisonFeature(weighted_sum([feature.map for feature in features], uniform))


def fuse_mask_avg(maps: Sequence[ConfidenceMap]) -> ConfidenceMap:
    """The per-location mean of several 1-shot confidence maps."""
    if not maps:
        raise EmptySupportError()
    if len(maps) == 1:
        return maps[0]

    probs = np.mean([map.probs.data for map in maps], axis=0)
    return ConfidenceMap(Tensor(probs))


def fuse_mask_or(masks: Sequence[BinaryMask]) -> BinaryMask:
    """A pixel is foreground if any of the 1-shot masks marks it."""
    if not masks:
        raise EmptySupportError()
    return np.logical_or.reduce([np.asarray(mask, dtype=bool) for mask in masks]).astype(np.uint8)
