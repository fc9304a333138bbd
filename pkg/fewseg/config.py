# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Type
from dataclasses import dataclass, field, fields
from fewseg.backbone import BackboneConfig
from fewseg.enums import AnnotationMode, FusionMode
from fewseg.episodes import ClassSplit, EpisodeSampler
from fewseg.exceptions import ConfigError, IoError
from fewseg.refinement import IomConfig
from fewseg.segmenter import ModelConfig
from fewseg.training import TrainConfig

import hashlib
import logging
import os

__all__ = (
    "THREADS_ENV",
    "DatasetConfig",
    "EvalConfig",
    "RuntimeConfig",
    "RunConfig",
    "parse_config_text",
)

_LOGGER = logging.getLogger(__name__)

THREADS_ENV = "FEWSEG_THREADS"
"""The environment variable holding the default worker thread count."""


@dataclass(frozen=True)
class DatasetConfig:
    """The synthetic dataset and its class split.

    ``episodes``, ``annotation`` and ``k`` only shape the episode files
    written by ``gen-data``.
    """

    num_classes: int = 16
    num_splits: int = 4
    test_split: int = 0
    image_size: int = 64
    min_area: int = 16
    max_area_fraction: float = 0.6
    max_distractors: int = 2
    seed: int = 0
    episodes: int = 100
    annotation: str = AnnotationMode.PIXEL
    k: int = 1

    def __post_init__(self) -> None:
        if self.min_area < 1:
            raise ConfigError("must be positive", "dataset.min_area")
        if not 0.0 < self.max_area_fraction <= 1.0:
            raise ConfigError("must lie in (0, 1], got %r" % self.max_area_fraction, "dataset.max_area_fraction")
        if self.episodes < 0:
            raise ConfigError("must not be negative", "dataset.episodes")
        if self.annotation not in AnnotationMode.ALL:
            raise ConfigError(
                "expected one of %s, got %r" % (", ".join(AnnotationMode.ALL), self.annotation), "dataset.annotation"
            )
        if self.k < 1:
            raise ConfigError("must be positive", "dataset.k")


@dataclass(frozen=True)
class EvalConfig:
    """The evaluation protocol."""

    episodes: int = 1000
    k: int = 1
    fusion: str = FusionMode.ATTENTION
    annotation: str = AnnotationMode.PIXEL
    scales: Tuple[float, ...] = (1.0,)
    iterations: int = 4
    seed: int = 1

    def __post_init__(self) -> None:
        if self.episodes < 0:
            raise ConfigError("must not be negative", "eval.episodes")
        if self.k < 1:
            raise ConfigError("must be positive", "eval.k")
        if self.fusion not in FusionMode.ALL:
            raise ConfigError("expected one of %s, got %r" % (", ".join(FusionMode.ALL), self.fusion), "eval.fusion")
        if self.annotation not in AnnotationMode.ALL:
            raise ConfigError(
                "expected one of %s, got %r" % (", ".join(AnnotationMode.ALL), self.annotation), "eval.annotation"
            )
        if not self.scales or min(self.scales) <= 0:
            raise ConfigError("expected positive scales, got %r" % (self.scales,), "eval.scales")
        if self.iterations < 0:
            raise ConfigError("must not be negative", "eval.iterations")


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or not raw.strip():
        return 1
    try:
        return int(raw)
    except ValueError:
        raise ConfigError("expected an integer, got %r" % raw, THREADS_ENV) from None


@dataclass(frozen=True)
class RuntimeConfig:
    """Execution options that never change a result."""

    threads: int = field(default_factory=_default_threads)

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise ConfigError("must be positive", "runtime.threads")


def _parse_int(raw: str) -> int:
    return int(raw)


def _parse_bool(raw: str) -> bool:
    value = raw.lower()
    if value in ("true", "yes", "on", "1"):
        return True
    if value in ("false", "no", "off", "0"):
        return False
    raise ValueError(raw)


def _parse_tuple(item: Callable[[str], Any]) -> Callable[[str], Tuple[Any, ...]]:
    def parse(raw: str) -> Tuple[Any, ...]:
        return tuple(item(part.strip()) for part in raw.split(",") if part.strip())
    return parse


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# Field annotations are strings under postponed evaluation.
_PARSERS: Dict[str, Callable[[str], Any]] = {
    "int": _parse_int,
    "float": float,
    "bool": _parse_bool,
    "str": str,
    "Tuple[int, ...]": _parse_tuple(int),
    "Tuple[float, ...]": _parse_tuple(float),
}

_SECTIONS: Dict[str, Type[Any]] = {
    "dataset": DatasetConfig,
    "backbone": BackboneConfig,
    "iom": IomConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "runtime": RuntimeConfig,
}

# Public key -> dataclass field, where they differ.
_RENAMED = {"iom.iterations": "inference_iterations"}

# Set from other keys: backbone.frozen follows train.backbone_frozen, iom.channels follows backbone.embed_dim.
_DERIVED = ("backbone.frozen", "iom.channels")


def _keys() -> Iterator[Tuple[str, str, str, str]]:
    """Yields ``(key, section, field name, annotation)`` for every public key."""
    renamed = {(key.split(".")[0], name): key for key, name in _RENAMED.items()}
    for section, cls in _SECTIONS.items():
        for item in fields(cls):
            key = renamed.get((section, item.name), "%s.%s" % (section, item.name))
            if key in _DERIVED:
                continue
            yield key, section, item.name, str(item.type)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parses flat ``key = value`` text into a dictionary of raw strings.

    Blank lines and ``#`` comments are skipped; a later line overrides an
    earlier one with the same key.

    Raises
    ------
    ConfigError
        A line has no ``=``.
    """
    values: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("%s:%d: expected 'key = value', got %r" % (source, number, line))
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


@dataclass(frozen=True)
class RunConfig:
    """The fully materialised configuration of a run.

    Every subcommand of the command line works from one instance, built by
    :meth:`from_file` out of the defaults, a config file and ``--set``
    overrides.

    Attributes
    ----------
    dataset: :class:`DatasetConfig`
    backbone: :class:`BackboneConfig`
    iom: :class:`IomConfig`
    train: :class:`TrainConfig`
    eval: :class:`EvalConfig`
    runtime: :class:`RuntimeConfig`
    """

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    iom: IomConfig = field(default_factory=IomConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    def __post_init__(self) -> None:
        self.model_config()
        self.split()
        if self.dataset.image_size < 16 or self.dataset.image_size % 8:
            raise ConfigError("must be a multiple of 8 and at least 16, got %d" % self.dataset.image_size, "dataset.image_size")

    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> RunConfig:
        """Builds a configuration from raw ``key -> value`` strings over the defaults.

        Raises
        ------
        ConfigError
            A key is unknown or a value cannot be parsed or is out of range.
        """
        known = {key: (section, name, annotation) for key, section, name, annotation in _keys()}
        sections: Dict[str, Dict[str, Any]] = {section: {} for section in _SECTIONS}

        for key, raw in values.items():
            if key not in known:
                raise ConfigError("unknown key", key)
            section, name, annotation = known[key]
            try:
                sections[section][name] = _PARSERS[annotation](raw)
            except ValueError:
                raise ConfigError("cannot parse %r as %s" % (raw, annotation), key) from None

        train = TrainConfig(**sections["train"])
        backbone = BackboneConfig(**sections["backbone"], frozen=train.backbone_frozen)
        return cls(
            dataset=DatasetConfig(**sections["dataset"]),
            backbone=backbone,
            iom=IomConfig(**sections["iom"], channels=backbone.embed_dim),
            train=train,
            eval=EvalConfig(**sections["eval"]),
            runtime=RuntimeConfig(**sections["runtime"]),
        )

    @classmethod
    def from_file(cls, path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfig:
        """Loads a config file and applies ``key=value`` overrides on top of it.

        Parameters
        ----------
        path: Optional[:class:`str`]
            The config file; only the defaults and overrides are used when ``None``.
        overrides: Sequence[:class:`str`]
            ``key=value`` strings, as given to ``--set``.

        Raises
        ------
        ConfigError
            Unknown key, malformed line or override, or an invalid value.
        IoError
            The file cannot be read.
        """
        values: Dict[str, str] = {}
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fp:
                    text = fp.read()
            except OSError as exc:
                raise IoError(path, exc.strerror or str(exc)) from exc
            values.update(parse_config_text(text, path))

        for override in overrides:
            if "=" not in override:
                raise ConfigError("expected key=value, got %r" % override)
            key, value = override.split("=", 1)
            values[key.strip()] = value.strip()

        config = cls.from_mapping(values)
        _LOGGER.debug("Loaded configuration %s from %s with %d override(s)", config.fingerprint(), path, len(overrides))
        return config

    def to_flat(self) -> Dict[str, str]:
        """Every public key with its canonical value text, sorted by key."""
        flat = {}
        for key, section, name, _ in _keys():
            flat[key] = _format(getattr(getattr(self, section), name))
        return dict(sorted(flat.items()))

    def dumps(self, *, include_runtime: bool = True) -> str:
        """The canonical ``key = value`` text of this configuration."""
        return "".join(
            "%s = %s\n" % (key, value) for key, value in self.to_flat().items()
            if include_runtime or not key.startswith("runtime.")
        )

    def fingerprint(self) -> str:
        """The first 16 hex digits of the SHA-256 of the canonical text.

        Runtime options do not change results and are left out.
        """
        canonical = "".join("%s=%s\n" % item for item in self.to_flat().items() if not item[0].startswith("runtime."))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def model_config(self) -> ModelConfig:
        return ModelConfig(backbone=self.backbone, iom=self.iom)

    def split(self) -> ClassSplit:
        return ClassSplit(self.dataset.num_classes, self.dataset.num_splits, self.dataset.test_split)

    def sampler(self, seed: Optional[int] = None) -> EpisodeSampler:
        """An :class:`EpisodeSampler` over the configured dataset, seeded with ``seed`` or ``dataset.seed``."""
        return EpisodeSampler(
            self.split(),
            self.dataset.image_size,
            self.dataset.seed if seed is None else seed,
            max_distractors=self.dataset.max_distractors,
            min_area=self.dataset.min_area,
            max_area_fraction=self.dataset.max_area_fraction,
        )

    @staticmethod
    def keys() -> List[str]:
        return sorted(key for key, _, _, _ in _keys())
