# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Any, Union

import numpy as np


class _Missing:
    def __bool__(self) -> bool:
        return False

    def __repr__(self) -> str:
        return "..."

MISSING: Any = _Missing()


def handle_optional_field(data: Any, key: str, default: Any = None, fallback: Any = MISSING) -> Any:
    try:
        ret = data[key]
    except KeyError:
        return default
    else:
        if ret == fallback:
            return default
        return ret


# Stream codes mixed into derived seeds.
PHASE_CODES = {"train": 0, "test": 1}
WARMUP_STREAM = 2
BBOX_STREAM = 3
DROPOUT_STREAM = 4


def derive_rng(*key: Union[int, str]) -> np.random.Generator:
    """A generator that is a pure function of ``key``.

    String components are phase names and are mapped through :data:`PHASE_CODES`.
    """
    entropy = [PHASE_CODES[part] if isinstance(part, str) else int(part) for part in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))
