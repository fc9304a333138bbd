# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple
from dataclasses import dataclass
from PIL import Image, ImageColor, ImageDraw
from fewseg.enums import ShapeFamily
from fewseg.exceptions import ConfigError, GenerationError

import logging
import numpy as np

__all__ = (
    "ShapeClass",
    "Scene",
    "build_catalogue",
    "render_instance",
    "generate_scene",
    "MAX_SCENE_CLASSES",
    "MAX_ATTEMPTS",
)

_LOGGER = logging.getLogger(__name__)

MAX_SCENE_CLASSES = 3
"""A scene holds between one and this many classes."""

MAX_ATTEMPTS = 50
"""Scenes are redrawn at most this many times before :class:`GenerationError`."""

TEXTURES = ("flat", "stripes", "checker", "dots")
GOLDEN_ANGLE = 137.50776

# Outlines in unit coordinates: a list of (polygon, fill) operations drawn in order.
_Outline = List[Tuple[List[Tuple[float, float]], int]]


def _circle(radius: float = 1.0, cx: float = 0.0, cy: float = 0.0, sides: int = 48, ry: Optional[float] = None) -> List[Tuple[float, float]]:
    ry = radius if ry is None else ry
    angles = np.linspace(0.0, 2.0 * np.pi, sides, endpoint=False)
    return [(cx + radius * float(np.cos(a)), cy + ry * float(np.sin(a))) for a in angles]


def _regular(sides: int, radius: float = 1.0, phase: float = -np.pi / 2) -> List[Tuple[float, float]]:
    angles = phase + np.linspace(0.0, 2.0 * np.pi, sides, endpoint=False)
    return [(radius * float(np.cos(a)), radius * float(np.sin(a))) for a in angles]


def _rect(x0: float, y0: float, x1: float, y1: float) -> List[Tuple[float, float]]:
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _star() -> List[Tuple[float, float]]:
    points = []
    for index in range(10):
        radius = 1.0 if index % 2 == 0 else 0.45
        angle = -np.pi / 2 + index * np.pi / 5
        points.append((radius * float(np.cos(angle)), radius * float(np.sin(angle))))
    return points


_OUTLINES: Dict[str, _Outline] = {
    ShapeFamily.CIRCLE: [(_circle(), 1)],
    ShapeFamily.SQUARE: [(_rect(-0.8, -0.8, 0.8, 0.8), 1)],
    ShapeFamily.TRIANGLE: [(_regular(3), 1)],
    ShapeFamily.RING: [(_circle(), 1), (_circle(0.55), 0)],
    ShapeFamily.PLUS: [(_rect(-1.0, -0.3, 1.0, 0.3), 1), (_rect(-0.3, -1.0, 0.3, 1.0), 1)],
    ShapeFamily.BAR: [(_rect(-1.0, -0.3, 1.0, 0.3), 1)],
    ShapeFamily.ELLIPSE: [(_circle(1.0, ry=0.55), 1)],
    ShapeFamily.ELL: [(_rect(-0.8, -1.0, -0.2, 1.0), 1), (_rect(-0.8, 0.4, 0.8, 1.0), 1)],
    ShapeFamily.TEE: [(_rect(-1.0, -1.0, 1.0, -0.4), 1), (_rect(-0.3, -1.0, 0.3, 1.0), 1)],
    ShapeFamily.YOU: [
        (_rect(-0.9, -1.0, -0.35, 1.0), 1),
        (_rect(0.35, -1.0, 0.9, 1.0), 1),
        (_rect(-0.9, 0.45, 0.9, 1.0), 1),
    ],
    ShapeFamily.STAR: [(_star(), 1)],
    ShapeFamily.DIAMOND: [([(0.0, -1.0), (0.6, 0.0), (0.0, 1.0), (-0.6, 0.0)], 1)],
    ShapeFamily.HEXAGON: [(_regular(6, phase=0.0), 1)],
    ShapeFamily.ARROW: [([(-1.0, -0.25), (0.2, -0.25), (0.2, -0.7), (1.0, 0.0), (0.2, 0.7), (0.2, 0.25), (-1.0, 0.25)], 1)],
    ShapeFamily.CRESCENT: [(_circle(), 1), (_circle(0.85, cx=0.45), 0)],
    ShapeFamily.TRAPEZOID: [([(-1.0, 0.7), (1.0, 0.7), (0.5, -0.7), (-0.5, -0.7)], 1)],
}


@dataclass(frozen=True)
class ShapeClass:
    """A synthetic object category.

    Attributes
    ----------
    id: :class:`int`
        The class ID, ``0`` based.
    family: :class:`str`
        The :class:`ShapeFamily` outline.
    hue: :class:`float`
        Hue of the base colour in degrees.
    texture: :class:`str`
        The surface pattern: ``flat``, ``stripes``, ``checker`` or ``dots``.
    size_range: Tuple[:class:`float`, :class:`float`]
        The outline's radius range as a fraction of the shorter image side.
    """

    id: int
    family: str
    hue: float
    texture: str
    size_range: Tuple[float, float] = (0.12, 0.3)

    @property
    def name(self) -> str:
        return "%s-%d" % (self.family, self.id)

    @property
    def color(self) -> np.ndarray:
        """The base RGB colour in ``[0, 1]``."""
        rgb = ImageColor.getrgb("hsv(%d, 75%%, 90%%)" % int(round(self.hue)))
        return np.asarray(rgb, dtype=np.float64) / 255.0


def build_catalogue(num_classes: int) -> List[ShapeClass]:
    """Builds ``num_classes`` distinct shape classes.

    Families cycle through :attr:`ShapeFamily.ALL`; hues step round the colour
    wheel by the golden angle and textures alternate, so every class differs
    from every other in outline, colour or both.
    """
    if num_classes < 1:
        raise ConfigError("must be positive, got %d" % num_classes, "dataset.num_classes")

    families = ShapeFamily.ALL
    catalogue = []
    for index in range(num_classes):
        catalogue.append(
            ShapeClass(
                id=index,
                family=families[index % len(families)],
                hue=(index * GOLDEN_ANGLE) % 360.0,
                texture=TEXTURES[index % len(TEXTURES)],
            )
        )
    return catalogue


class Scene(NamedTuple):
    """A rendered scene.

    Attributes
    ----------
    image: :class:`numpy.ndarray`
        RGB image of shape ``[3, H, W]`` with values on the 8-bit grid in ``[0, 1]``.
    masks: Dict[:class:`int`, :class:`numpy.ndarray`]
        The visible pixels of every class present, keyed by class ID.
    """

    image: np.ndarray
    masks: Dict[int, np.ndarray]

    def label_map(self) -> np.ndarray:
        """Per-pixel labels: ``0`` for background and ``id + 1`` for each class."""
        labels = np.zeros(self.image.shape[1:], dtype=np.int64)
        for class_id, mask in self.masks.items():
            labels[mask.astype(bool)] = class_id + 1
        return labels


def render_instance(
    family: str,
    size: Tuple[int, int],
    center: Tuple[float, float],
    radius: float,
    angle: float,
) -> np.ndarray:
    """Rasterises one outline into a ``[H, W]`` 0/1 mask.

    The outline is scaled by ``radius``, rotated by ``angle`` (radians)
    and moved to ``center`` given as ``(x, y)`` pixel coordinates.
    """
    height, width = size
    canvas = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(canvas)

    cos, sin = np.cos(angle), np.sin(angle)
    cx, cy = center
    for polygon, fill in _OUTLINES[family]:
        points = [(cx + radius * (x * cos - y * sin), cy + radius * (x * sin + y * cos)) for x, y in polygon]
        draw.polygon(points, fill=fill)

    return np.asarray(canvas, dtype=np.uint8)


def _texture(kind: str, size: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    height, width = size
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    if kind == "flat":
        return np.ones(size)

    period = rng.uniform(4.0, 8.0)
    if kind == "stripes":
        phi = rng.uniform(0.0, np.pi)
        wave = np.sin(2.0 * np.pi * (cols * np.cos(phi) + rows * np.sin(phi)) / period)
        return np.where(wave > 0, 1.0, 0.7)
    if kind == "checker":
        cells = (np.floor(rows / period) + np.floor(cols / period)) % 2
        return np.where(cells > 0, 1.0, 0.7)

    spots = np.sin(2.0 * np.pi * rows / period) * np.sin(2.0 * np.pi * cols / period)
    return np.where(spots > 0.5, 0.6, 1.0)


def _background(size: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    height, width = size
    base = rng.uniform(0.15, 0.45, size=3)
    gradient = np.linspace(-0.1, 0.1, width)[None, :] * rng.uniform(-1.0, 1.0)
    noise = rng.normal(0.0, 0.04, size=(3, height, width))
    return base[:, None, None] + gradient[None] + noise


def _render(
    classes: Sequence[ShapeClass],
    size: Tuple[int, int],
    rng: np.random.Generator,
) -> Scene:
    height, width = size
    side = min(height, width)
    image = _background(size, rng)
    labels = np.zeros(size, dtype=np.int64)

    instances = [shape for shape in classes for _ in range(int(rng.integers(1, 3)))]
    order = rng.permutation(len(instances))

    for index in order:
        shape = instances[index]
        radius = rng.uniform(*shape.size_range) * side
        center = (rng.uniform(0.15, 0.85) * width, rng.uniform(0.15, 0.85) * height)
        mask = render_instance(shape.family, size, center, radius, rng.uniform(0.0, 2.0 * np.pi)).astype(bool)

        shade = np.clip(shape.color + rng.normal(0.0, 0.04, size=3), 0.0, 1.0)
        surface = shade[:, None, None] * _texture(shape.texture, size, rng)[None]
        image[:, mask] = surface[:, mask]
        labels[mask] = shape.id + 1

    image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
    masks = {shape.id: (labels == shape.id + 1).astype(np.uint8) for shape in classes}
    return Scene(image=image, masks=masks)


def generate_scene(
    classes_present: Sequence[ShapeClass],
    size: Tuple[int, int],
    rng: np.random.Generator,
    *,
    min_area: int = 16,
    max_area_fraction: float = 0.6,
    max_attempts: int = MAX_ATTEMPTS,
) -> Scene:
    """Renders shapes of the given classes on a textured background.

    Every class gets one or two instances with random position, scale and
    rotation. Instances are painted in random order, so later ones occlude
    earlier ones and the masks only hold visible pixels; masks of
    different classes are therefore disjoint.

    Parameters
    ----------
    classes_present: Sequence[:class:`ShapeClass`]
        One to :data:`MAX_SCENE_CLASSES` distinct classes.
    size: Tuple[:class:`int`, :class:`int`]
        ``(H, W)``, both multiples of 8.
    rng: :class:`numpy.random.Generator`
        The source of randomness; the scene is a pure function of its state.
    min_area: :class:`int`
        Fewest visible pixels accepted for each class.
    max_area_fraction: :class:`float`
        Largest accepted share of the frame covered by one class.

    Raises
    ------
    GenerationError
        No scene satisfying the area bounds was drawn in ``max_attempts`` tries.
    """
    ids = [shape.id for shape in classes_present]
    if not 1 <= len(ids) <= MAX_SCENE_CLASSES or len(set(ids)) != len(ids):
        raise ConfigError("a scene needs 1 to %d distinct classes, got %r" % (MAX_SCENE_CLASSES, ids))

    height, width = size
    if height % 8 or width % 8:
        raise ConfigError("image size must be a multiple of 8, got %r" % (size,), "dataset.image_size")

    limit = max_area_fraction * height * width
    for attempt in range(max_attempts):
        scene = _render(classes_present, size, rng)
        areas = [int(mask.sum()) for mask in scene.masks.values()]
        if all(min_area <= area <= limit for area in areas):
            return scene
        _LOGGER.debug("Scene with classes %r rejected on attempt %d (areas %r)", ids, attempt + 1, areas)

    raise GenerationError(ids, max_attempts)
