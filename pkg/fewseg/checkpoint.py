# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, Dict, List, NamedTuple, Optional, Tuple
from dataclasses import replace
from fewseg.cache import EpisodeKey, PredictionCache
from fewseg.exceptions import CheckpointError, ConfigError
from fewseg.imageio import PathLike, atomic_write
from fewseg.internal.helpers import handle_optional_field
from fewseg.refinement import ConfidenceMap
from fewseg.segmenter import ModelConfig, build_model_state
from fewseg.state import ModelState
from fewseg.tensor import Tensor

import logging
import struct
import numpy as np

try:
    import ujson as json  # type: ignore
except ImportError:
    import json

if TYPE_CHECKING:
    from fewseg.types import CheckpointHeader


__all__ = (
    "MAGIC",
    "FORMAT_VERSION",
    "ARCHITECTURE_KEYS",
    "Checkpoint",
    "save_checkpoint",
    "read_checkpoint",
    "load_checkpoint",
    "architecture_mismatch",
)

_LOGGER = logging.getLogger(__name__)

MAGIC = b"FEWSEGCK"
"""The first bytes of every checkpoint file."""

FORMAT_VERSION = 1

ARCHITECTURE_KEYS: Dict[str, Tuple[str, ...]] = {
    "backbone": ("stage_channels", "blocks_per_stage", "embed_dim", "input_channels", "blocks"),
    "iom": ("channels", "aspp_rates", "num_vanilla_resblocks"),
}
"""The configuration keys that decide parameter shapes, per section."""

# magic, format version (u32), header length (u64); little endian.
_PREAMBLE = struct.Struct("<8sIQ")
_DTYPE = np.dtype("<f8")


class Checkpoint(NamedTuple):
    """A decoded checkpoint file.

    Attributes
    ----------
    state: :class:`ModelState`
        The restored parameters and frozen groups.
    header: :class:`fewseg.types.CheckpointHeader`
        The raw header.
    cache: Dict[:data:`EpisodeKey`, :class:`ConfidenceMap`]
        The prediction cache of an epoch checkpoint; empty otherwise.
    """

    state: ModelState
    header: CheckpointHeader
    cache: Dict[EpisodeKey, ConfidenceMap]

    @property
    def epoch(self) -> Optional[int]:
        return handle_optional_field(self.header, "epoch")

    @property
    def fingerprint(self) -> str:
        return self.header["fingerprint"]


def save_checkpoint(
    state: ModelState,
    path: PathLike,
    *,
    fingerprint: str = "",
    epoch: Optional[int] = None,
    cache: Optional[PredictionCache] = None,
) -> None:
    """Writes the parameters of ``state`` to ``path``.

    The file holds the magic bytes, the format version, a JSON header
    describing the architecture, frozen groups and blob layout, followed by
    every parameter as little endian 64-bit floats in registration order.
    Epoch checkpoints also carry the completed epoch count and the readable
    generation of the prediction cache.

    The output is a pure function of the arguments, so saving a loaded
    checkpoint reproduces the file byte for byte.

    Raises
    ------
    IoError
        The file cannot be written.
    """
    parameters = state.named_parameters()
    header: CheckpointHeader = {
        "version": FORMAT_VERSION,
        "fingerprint": fingerprint,
        "config": state.config.to_dict(),
        "frozen": state.frozen_groups(),
        "parameters": [{"name": name, "shape": list(tensor.shape)} for name, tensor in parameters],
    }
    blobs: List[bytes] = [np.ascontiguousarray(tensor.data, dtype=_DTYPE).tobytes() for _, tensor in parameters]

    if epoch is not None:
        header["epoch"] = epoch
    if cache is not None:
        entries = []
        for key in sorted(cache.keys()):
            map = cache.get(key)
            assert map is not None
            entries.append({"phase": key[0], "index": key[1], "shape": list(map.shape)})
            blobs.append(np.ascontiguousarray(map.probs.data, dtype=_DTYPE).tobytes())
        header["cache"] = entries

    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    atomic_write(path, _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(encoded)) + encoded + b"".join(blobs))
    _LOGGER.info("Wrote checkpoint %s (%d parameters%s)", path, len(parameters),
                 "" if epoch is None else ", epoch %d" % epoch)


class _Reader:
    def __init__(self, path: str, payload: bytes, offset: int) -> None:
        self.path = path
        self.payload = payload
        self.offset = offset

    def array(self, shape: List[int]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        end = self.offset + count * _DTYPE.itemsize
        if end > len(self.payload):
            raise CheckpointError(self.path, "file is truncated")
        values = np.frombuffer(self.payload, dtype=_DTYPE, count=count, offset=self.offset)
        self.offset = end
        return values.astype(np.float64).reshape(shape)


def read_checkpoint(path: PathLike) -> Checkpoint:
    """Reads and validates a checkpoint file.

    Raises
    ------
    CheckpointError
        The file is not a checkpoint, has another format version, is
        truncated or corrupt, or its blobs do not fit its architecture.
    """
    path = str(path)
    try:
        with open(path, "rb") as fp:
            payload = fp.read()
    except OSError as exc:
        raise CheckpointError(path, exc.strerror or str(exc)) from exc

    if len(payload) < _PREAMBLE.size:
        raise CheckpointError(path, "file is truncated")
    magic, version, length = _PREAMBLE.unpack_from(payload)
    if magic != MAGIC:
        raise CheckpointError(path, "not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointError(path, "format version %d is not supported (expected %d)" % (version, FORMAT_VERSION))

    start = _PREAMBLE.size
    try:
        header: CheckpointHeader = json.loads(payload[start:start + length].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        layout = header["parameters"]
        frozen = list(header["frozen"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(path, "corrupt header (%s)" % exc) from exc

    state = build_model_state(config)
    expected = {name: tensor.shape for name, tensor in state.named_parameters()}
    stored = [item["name"] for item in layout]
    if sorted(stored) != sorted(expected):
        raise CheckpointError(path, "parameter names do not match the architecture in its header")

    reader = _Reader(path, payload, start + length)
    for item in layout:
        shape = list(item["shape"])
        if tuple(shape) != expected[item["name"]]:
            raise CheckpointError(path, "parameter %r has shape %r, expected %r" % (item["name"], shape, expected[item["name"]]))
        state[item["name"]].data[...] = reader.array(shape)

    state.unfreeze(*state.frozen_groups())
    state.freeze(*frozen)

    cache: Dict[EpisodeKey, ConfidenceMap] = {}
    for entry in handle_optional_field(header, "cache", [], None):
        cache[(entry["phase"], int(entry["index"]))] = ConfidenceMap(Tensor(reader.array(list(entry["shape"]))))

    if reader.offset != len(payload):
        raise CheckpointError(path, "unexpected trailing data")
    return Checkpoint(state=state, header=header, cache=cache)


def architecture_mismatch(found: ModelConfig, wanted: ModelConfig) -> Optional[str]:
    """Describes the first key of :data:`ARCHITECTURE_KEYS` where two configurations differ.

    Returns ``None`` when parameters of ``found`` fit a model built for ``wanted``.
    """
    found_dict = found.to_dict()
    wanted_dict = wanted.to_dict()
    for section, keys in ARCHITECTURE_KEYS.items():
        for key in keys:
            if found_dict[section][key] != wanted_dict[section][key]:
                return "%s.%s is %r, expected %r" % (section, key, found_dict[section][key], wanted_dict[section][key])
    return None


def load_checkpoint(path: PathLike, expected: Optional[ModelConfig] = None) -> ModelState:
    """Loads the model state stored in a checkpoint.

    Only the keys in :data:`ARCHITECTURE_KEYS` are compared against
    ``expected``. The refinement settings of ``expected``, such as the
    step count, replace the stored ones.

    Parameters
    ----------
    path: :class:`str`
        The checkpoint file.
    expected: Optional[:class:`ModelConfig`]
        The architecture the caller needs; a checkpoint for any other
        architecture is rejected.

    Raises
    ------
    CheckpointError
        The file cannot be read or does not match ``expected``.
    """
    state = read_checkpoint(path).state
    if expected is None:
        return state

    mismatch = architecture_mismatch(state.config, expected)
    if mismatch is not None:
        raise CheckpointError(str(path), mismatch)

    if expected.iom != state.config.iom:
        _LOGGER.debug("Using refinement settings %r instead of the stored %r", expected.iom, state.config.iom)
        state.config = replace(state.config, iom=expected.iom)
    return state
