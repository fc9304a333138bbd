# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, List, Optional, Tuple
from dataclasses import dataclass
from fewseg.backbone import residual_block
from fewseg.comparison import BinaryMask, ComparisonFeature
from fewseg.exceptions import ConfigError, ShapeError
from fewseg.ops import (
    add,
    bilinear_resize,
    concat_channels,
    conv2d,
    global_avg_pool,
    relu,
    reshape,
    resize_array,
    softmax_channels,
)
from fewseg.tensor import Tensor

import logging
import numpy as np

if TYPE_CHECKING:
    from fewseg.state import ModelState


__all__ = (
    "ConfidenceMap",
    "IomConfig",
    "init_iom",
    "effective_rate",
    "residual_fuse",
    "aspp",
    "classify",
    "iom_step",
    "iterate",
    "mask_dropout",
    "predict_mask",
)

_LOGGER = logging.getLogger(__name__)


class ConfidenceMap:
    """A 2-channel probability map: channel 0 background, channel 1 foreground.

    The *empty* map is the all-zeros map fed to the first refinement step;
    it is the only map whose channels do not sum to one.

    Parameters
    ----------
    probs: :class:`Tensor`
        Probabilities of shape ``[2, h, w]``.
    empty: :class:`bool`
        Whether this is the empty map.
    """

    __slots__ = ("probs", "empty")

    def __init__(self, probs: Tensor, empty: bool = False) -> None:
        if len(probs.shape) != 3 or probs.shape[0] != 2:
            raise ShapeError("ConfidenceMap", "a [2, h, w] tensor", probs.shape)
        self.probs = probs
        self.empty = empty

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(shape={self.shape!r}, empty={self.empty!r})"

    @classmethod
    def empty_like(cls, height: int, width: int) -> ConfidenceMap:
        return cls(Tensor(np.zeros((2, height, width))), empty=True)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.probs.shape

    @property
    def spatial(self) -> Tuple[int, int]:
        return self.probs.shape[1], self.probs.shape[2]

    @property
    def foreground(self) -> np.ndarray:
        return self.probs.data[1]

    def detach(self) -> ConfidenceMap:
        return ConfidenceMap(self.probs.detach(), empty=self.empty)


@dataclass(frozen=True)
class IomConfig:
    """The geometry of the iterative optimization module.

    Attributes
    ----------
    channels: :class:`int`
        Feature channels ``D``; equals the comparison embedding width.
    aspp_rates: Tuple[:class:`int`, ...]
        Atrous rates of the dilated ASPP branches, clamped to the map size.
    num_vanilla_resblocks: :class:`int`
        Residual blocks between the fusion and ASPP.
    p_r: :class:`float`
        Probability of resetting the previous mask to empty during training.
    inference_iterations: :class:`int`
        Refinement steps after the initial prediction at inference.
    """

    channels: int = 32
    aspp_rates: Tuple[int, ...] = (6, 12, 18)
    num_vanilla_resblocks: int = 2
    p_r: float = 0.7
    inference_iterations: int = 4

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise ConfigError("must be positive", "iom.channels")
        if not self.aspp_rates or min(self.aspp_rates) < 1:
            raise ConfigError("rates must be positive, got %r" % (self.aspp_rates,), "iom.aspp_rates")
        if self.num_vanilla_resblocks < 0:
            raise ConfigError("must not be negative", "iom.num_vanilla_resblocks")
        if not 0.0 <= self.p_r <= 1.0:
            raise ConfigError("must lie in [0, 1], got %r" % self.p_r, "iom.p_r")
        if self.inference_iterations < 0:
            raise ConfigError("must not be negative", "iom.iterations")


def init_iom(state: ModelState, cfg: IomConfig, rng: np.random.Generator) -> None:
    """Registers the fusion, residual, ASPP and classifier weights in ``state``.

    One set of weights serves every refinement iteration.
    """
    channels = cfg.channels
    state.add_conv("iom.fuse.conv1", channels + 2, channels, 3, rng)
    state.add_conv("iom.fuse.conv2", channels, channels, 3, rng)

    for index in range(cfg.num_vanilla_resblocks):
        state.add_conv("iom.res%d.conv1" % index, channels, channels, 3, rng)
        state.add_conv("iom.res%d.conv2" % index, channels, channels, 3, rng)

    for index in range(len(cfg.aspp_rates)):
        state.add_conv("iom.aspp.branch%d" % index, channels, channels, 3, rng)
    state.add_conv("iom.aspp.image", channels, channels, 1, rng)
    state.add_conv("iom.aspp.fuse", (len(cfg.aspp_rates) + 1) * channels, channels, 1, rng)

    state.add_conv("iom.classifier", channels, 2, 1, rng)


def effective_rate(rate: int, size: int) -> int:
    """Clamps an atrous rate so the dilated 3x3 kernel fits a map of ``size`` cells."""
    return max(1, min(rate, size - 1))


def residual_fuse(x: ComparisonFeature, y_prev: Optional[ConfidenceMap], state: ModelState) -> Tensor:
    """``x + F(x, y_prev)`` where ``F`` is two 3x3 conv + ReLU blocks over ``concat(x, y_prev)``.

    ``y_prev`` may be ``None`` or an empty map on the first pass.

    Raises
    ------
    ShapeError
        ``y_prev`` does not share the spatial size of ``x``.
    """
    _, height, width = x.map.shape
    if y_prev is None:
        y_prev = ConfidenceMap.empty_like(height, width)
    if y_prev.spatial != (height, width):
        raise ShapeError("residual_fuse", "a previous mask of size %r" % ((height, width),), y_prev.spatial)

    out = relu(conv2d(concat_channels(x.map, y_prev.probs), state.conv("iom.fuse.conv1", padding=1)))
    out = relu(conv2d(out, state.conv("iom.fuse.conv2", padding=1)))
    return add(x.map, out)


def aspp(features: Tensor, state: ModelState) -> Tensor:
    """Atrous spatial pyramid pooling with an image-level branch.

    Three dilated 3x3 branches (rates clamped by :func:`effective_rate`
    per axis) and a 1x1 convolution over the global average, tiled back
    by bilinear upsampling, are concatenated and fused by a 1x1 convolution.
    """
    channels, height, width = features.shape
    rates = state.config.iom.aspp_rates

    branches: List[Tensor] = []
    for index, rate in enumerate(rates):
        dilation = (effective_rate(rate, height), effective_rate(rate, width))
        if dilation != (rate, rate):
            _LOGGER.debug("ASPP rate %d clamped to %r for a %dx%d map", rate, dilation, height, width)
        params = state.conv("iom.aspp.branch%d" % index).with_dilation(dilation, dilation)
        branches.append(relu(conv2d(features, params)))

    pooled = reshape(global_avg_pool(features), channels, 1, 1)
    image_level = relu(conv2d(pooled, state.conv("iom.aspp.image")))
    branches.append(bilinear_resize(image_level, height, width))

    return relu(conv2d(concat_channels(*branches), state.conv("iom.aspp.fuse")))


def classify(features: Tensor, state: ModelState) -> ConfidenceMap:
    """1x1 convolution to two channels followed by a per-location softmax."""
    return ConfidenceMap(softmax_channels(conv2d(features, state.conv("iom.classifier"))))


def iom_step(x: ComparisonFeature, y_prev: Optional[ConfidenceMap], state: ModelState) -> ConfidenceMap:
    """One refinement pass: residual fusion, vanilla residual blocks, ASPP, classifier."""
    out = residual_fuse(x, y_prev, state)
    for index in range(state.config.iom.num_vanilla_resblocks):
        out = residual_block(out, state, "iom.res%d" % index)
    return classify(aspp(out, state), state)


def iterate(x: ComparisonFeature, T: int, state: ModelState) -> List[ConfidenceMap]:
    """Runs the initial prediction followed by ``T`` refinements.

    Returns
    -------
    List[:class:`ConfidenceMap`]
        ``T + 1`` maps; the first one is the initial prediction.
    """
    if T < 0:
        raise ConfigError("iteration count must not be negative, got %d" % T, "iom.iterations")

    maps = [iom_step(x, None, state)]
    for _ in range(T):
        maps.append(iom_step(x, maps[-1], state))
    return maps


def mask_dropout(y_prev: ConfidenceMap, p_r: float, rng: np.random.Generator) -> ConfidenceMap:
    """Resets ``y_prev`` to the empty map with probability ``p_r``.

    Exactly one draw is consumed from ``rng`` per call.
    """
    reset = rng.random() < p_r
    if reset or y_prev.empty:
        height, width = y_prev.spatial
        return ConfidenceMap.empty_like(height, width)
    return y_prev


def predict_mask(map: ConfidenceMap, out_h: int, out_w: int) -> BinaryMask:
    """Upsamples the probabilities bilinearly and takes the per-pixel argmax.

    Ties go to background.
    """
    probs = resize_array(map.probs.data, out_h, out_w)
    return (probs[1] > probs[0]).astype(np.uint8)
