# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Union
from PIL import Image, UnidentifiedImageError
from fewseg.comparison import BinaryMask
from fewseg.exceptions import IoError, ShapeError

import io
import os
import tempfile
import numpy as np

__all__ = (
    "atomic_write",
    "write_ppm",
    "write_pgm",
    "write_mask",
    "read_ppm",
    "read_pgm",
    "read_mask",
)

PathLike = Union[str, "os.PathLike[str]"]


def atomic_write(path: PathLike, data: Union[bytes, str]) -> None:
    """Writes a file through a temporary sibling and a rename.

    Readers never observe a partially written file.

    Raises
    ------
    IoError
        The directory is missing or not writable.
    """
    payload = data.encode("utf-8") if isinstance(data, str) else data
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, temp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
        try:
            with os.fdopen(fd, "wb") as fp:
                fp.write(payload)
            os.replace(temp, path)
        except BaseException:
            if os.path.exists(temp):
                os.unlink(temp)
            raise
    except OSError as exc:
        raise IoError(str(path), exc.strerror or str(exc)) from exc


def _encode(image: Image.Image, format: str) -> bytes:
    buffer = io.BytesIO()
    image.save(buffer, format=format)
    return buffer.getvalue()


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    """Writes a ``[3, H, W]`` image with values in ``[0, 1]`` as binary PPM."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError("write_ppm", "a [3, H, W] image", image.shape)
    pixels = Image.fromarray(np.ascontiguousarray(_to_uint8(image).transpose(1, 2, 0)), "RGB")
    atomic_write(path, _encode(pixels, "PPM"))


def write_pgm(path: PathLike, values: np.ndarray) -> None:
    """Writes a ``[H, W]`` map with values in ``[0, 1]`` as 8-bit binary PGM."""
    if values.ndim != 2:
        raise ShapeError("write_pgm", "a [H, W] map", values.shape)
    atomic_write(path, _encode(Image.fromarray(_to_uint8(np.asarray(values, dtype=np.float64)), "L"), "PPM"))


def write_mask(path: PathLike, mask: BinaryMask) -> None:
    """Writes a binary mask as PGM with foreground at 255."""
    write_pgm(path, (np.asarray(mask) > 0).astype(np.float64))


def _open(path: PathLike, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as image:
            if image.mode != mode:
                raise IoError(str(path), "expected a %s image, got mode %s" % (mode, image.mode))
            return np.asarray(image, dtype=np.uint8).copy()
    except UnidentifiedImageError as exc:
        raise IoError(str(path), "not a readable image") from exc
    except OSError as exc:
        raise IoError(str(path), exc.strerror or str(exc)) from exc


def read_ppm(path: PathLike) -> np.ndarray:
    """Reads an RGB image as a ``[3, H, W]`` float array in ``[0, 1]``."""
    return _open(path, "RGB").transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path: PathLike) -> np.ndarray:
    """Reads a grayscale image as a ``[H, W]`` ``uint8`` array."""
    return _open(path, "L")


def read_mask(path: PathLike) -> BinaryMask:
    """Reads a PGM mask; pixels of 128 and above are foreground."""
    return (read_pgm(path) >= 128).astype(np.uint8)
