# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, List, Optional, Tuple
from dataclasses import dataclass
from fewseg.exceptions import ConfigError, ShapeError
from fewseg.flags import BlockSelection, select_blocks
from fewseg.ops import add, concat_channels, conv2d, relu
from fewseg.tensor import Tensor

import numpy as np

if TYPE_CHECKING:
    from fewseg.state import ModelState


__all__ = (
    "BackboneConfig",
    "FeaturePair",
    "init_backbone",
    "residual_block",
    "extract_features",
    "encode_comparison_features",
    "encoder_in_channels",
    "FEATURE_STRIDE",
)

FEATURE_STRIDE = 8
"""Every post-stage-2 feature map is this many times smaller than the input."""

# Stages 1-2 halve the resolution; stages 3-4 keep it and dilate instead.
_STAGE_STRIDE = (2, 2, 1, 1)
_STAGE_DILATION = (1, 1, 2, 4)


@dataclass(frozen=True)
class BackboneConfig:
    """The geometry of the residual feature extractor.

    Attributes
    ----------
    stage_channels: Tuple[:class:`int`, ...]
        Output channels of the four stages. The stem uses the first value.
    blocks_per_stage: Tuple[:class:`int`, ...]
        Residual blocks in each of the four stages.
    embed_dim: :class:`int`
        Channels ``D`` of the comparison embedding.
    input_channels: :class:`int`
        Channels of the input image.
    frozen: :class:`bool`
        Whether the backbone is frozen during episodic training.
    blocks: :class:`str`
        The :class:`BlockMode` feeding the comparison encoder.
    """

    stage_channels: Tuple[int, ...] = (8, 16, 32, 64)
    blocks_per_stage: Tuple[int, ...] = (1, 1, 1, 1)
    embed_dim: int = 32
    input_channels: int = 3
    frozen: bool = True
    blocks: str = "b2b3"

    def __post_init__(self) -> None:
        if len(self.stage_channels) != 4 or min(self.stage_channels) < 1:
            raise ConfigError("expected 4 positive ints, got %r" % (self.stage_channels,), "backbone.stage_channels")
        if len(self.blocks_per_stage) != 4 or min(self.blocks_per_stage) < 1:
            raise ConfigError("expected 4 positive ints, got %r" % (self.blocks_per_stage,), "backbone.blocks_per_stage")
        if self.embed_dim < 1:
            raise ConfigError("must be positive", "backbone.embed_dim")
        if self.input_channels < 1:
            raise ConfigError("must be positive", "backbone.input_channels")
        select_blocks(self.blocks)

    @property
    def selection(self) -> BlockSelection:
        return select_blocks(self.blocks)


@dataclass
class FeaturePair:
    """The stage outputs used for comparison, all at 1/8 of the input resolution.

    Attributes
    ----------
    f2: :class:`Tensor`
        Stage-2 output of shape ``[C2, H/8, W/8]``.
    f3: :class:`Tensor`
        Stage-3 output of shape ``[C3, H/8, W/8]``.
    f4: Optional[:class:`Tensor`]
        Stage-4 output; only computed when the block selection uses it.
    """

    f2: Tensor
    f3: Tensor
    f4: Optional[Tensor] = None

    @property
    def spatial(self) -> Tuple[int, int]:
        return self.f2.shape[1], self.f2.shape[2]

    def stage(self, number: int) -> Tensor:
        tensor = {2: self.f2, 3: self.f3, 4: self.f4}[number]
        if tensor is None:
            raise ShapeError("encode_comparison_features", "stage-%d features" % number, None)
        return tensor


def encoder_in_channels(cfg: BackboneConfig) -> int:
    return sum(cfg.stage_channels[stage - 1] for stage in cfg.selection.stages())


def init_backbone(state: ModelState, cfg: BackboneConfig, rng: np.random.Generator) -> None:
    """Registers the stem, the four stages and the comparison encoder in ``state``."""
    state.add_conv("backbone.stem", cfg.input_channels, cfg.stage_channels[0], 3, rng)

    in_channels = cfg.stage_channels[0]
    for index, out_channels in enumerate(cfg.stage_channels):
        for block in range(cfg.blocks_per_stage[index]):
            prefix = "backbone.stage%d.block%d" % (index + 1, block)
            stride = _STAGE_STRIDE[index] if block == 0 else 1

            state.add_conv(prefix + ".conv1", in_channels, out_channels, 3, rng)
            state.add_conv(prefix + ".conv2", out_channels, out_channels, 3, rng)
            if stride != 1 or in_channels != out_channels:
                state.add_conv(prefix + ".shortcut", in_channels, out_channels, 1, rng, bias=False)
            in_channels = out_channels

    state.add_conv("encoder.conv", encoder_in_channels(cfg), cfg.embed_dim, 3, rng)


def residual_block(x: Tensor, state: ModelState, prefix: str, *, stride: int = 1, dilation: int = 1) -> Tensor:
    """``relu(conv2(relu(conv1(x))) + shortcut(x))`` with dilated 3x3 convolutions.

    The shortcut is a strided 1x1 convolution when ``<prefix>.shortcut`` is
    registered and the identity otherwise.
    """
    out = relu(conv2d(x, state.conv(prefix + ".conv1", stride=stride, dilation=dilation, padding=dilation)))
    out = conv2d(out, state.conv(prefix + ".conv2", dilation=dilation, padding=dilation))

    if prefix + ".shortcut.weight" in state:
        shortcut = conv2d(x, state.conv(prefix + ".shortcut", stride=stride))
    else:
        shortcut = x
    return relu(add(out, shortcut))


def _run_stage(x: Tensor, state: ModelState, cfg: BackboneConfig, index: int) -> Tensor:
    for block in range(cfg.blocks_per_stage[index]):
        stride = _STAGE_STRIDE[index] if block == 0 else 1
        x = residual_block(
            x, state, "backbone.stage%d.block%d" % (index + 1, block),
            stride=stride, dilation=_STAGE_DILATION[index],
        )
    return x


def extract_features(
    image: Tensor,
    cfg: Optional[BackboneConfig],
    state: ModelState,
    *,
    include_stage4: Optional[bool] = None,
) -> FeaturePair:
    """Runs the backbone and returns the stage-2 and stage-3 feature maps.

    Parameters
    ----------
    image: :class:`Tensor`
        Image of shape ``[3, H, W]`` with ``H`` and ``W`` multiples of 8, at least 16.
    cfg: Optional[:class:`BackboneConfig`]
        The backbone geometry; ``state.config.backbone`` when ``None``.
    state: :class:`ModelState`
        The parameters. Never modified.
    include_stage4: Optional[:class:`bool`]
        Whether to run stage 4. Defaults to whether the block selection needs it.

    Returns
    -------
    :class:`FeaturePair`

    Raises
    ------
    ShapeError
        The image size is not a multiple of 8 or is below 16.
    """
    cfg = cfg if cfg is not None else state.config.backbone
    if len(image.shape) != 3 or image.shape[0] != cfg.input_channels:
        raise ShapeError("extract_features", "a [%d, H, W] image" % cfg.input_channels, image.shape)

    _, height, width = image.shape
    if height % FEATURE_STRIDE or width % FEATURE_STRIDE or height < 16 or width < 16:
        raise ShapeError("extract_features", "H and W multiples of 8 and at least 16", (height, width))

    if include_stage4 is None:
        include_stage4 = cfg.selection.needs_stage4()

    x = relu(conv2d(image, state.conv("backbone.stem", stride=2, padding=1)))
    x = _run_stage(x, state, cfg, 0)
    f2 = _run_stage(x, state, cfg, 1)
    f3 = _run_stage(f2, state, cfg, 2)
    f4 = _run_stage(f3, state, cfg, 3) if include_stage4 else None
    return FeaturePair(f2=f2, f3=f3, f4=f4)


def encode_comparison_features(pair: FeaturePair, state: ModelState) -> Tensor:
    """Concatenates the selected stages and encodes them to ``D`` channels.

    One 3x3 convolution (padding 1) followed by ReLU; the spatial size is kept.

    Raises
    ------
    ShapeError
        The selected stage outputs have different spatial sizes.
    """
    stages = state.config.backbone.selection.stages()
    tensors: List[Tensor] = [pair.stage(number) for number in stages]

    spatial = tensors[0].shape[1:]
    for tensor in tensors[1:]:
        if tensor.shape[1:] != spatial:
            raise ShapeError("encode_comparison_features", "matching spatial dims %r" % (spatial,), tensor.shape[1:])

    stacked = tensors[0] if len(tensors) == 1 else concat_channels(*tensors)
    return relu(conv2d(stacked, state.conv("encoder.conv", padding=1)))
