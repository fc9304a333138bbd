# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Callable, List, NamedTuple, Optional, Sequence
from fewseg.tensor import Tensor, no_grad

import numpy as np

__all__ = (
    "GradientProbe",
    "check_gradients",
)


class GradientProbe(NamedTuple):
    """One compared coordinate of a gradient check."""

    input_index: int
    flat_index: int
    analytic: float
    numeric: float

    @property
    def relative_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), 1e-8)
        return abs(self.analytic - self.numeric) / scale


def _scalarise(output: Tensor, projection: np.ndarray) -> float:
    return float((output.data * projection).sum())


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    *,
    probes: int = 50,
    eps: float = 1e-4,
    rtol: float = 1e-3,
    atol: float = 1e-7,
    rng: Optional[np.random.Generator] = None,
) -> List[GradientProbe]:
    """Compares analytic gradients against central finite differences.

    The output of ``fn`` is reduced to a scalar by a fixed random projection
    so every output element contributes. ``probes`` coordinates are sampled
    across the inputs that require gradient.

    Parameters
    ----------
    fn: Callable[..., :class:`Tensor`]
        The function under test, called as ``fn(*inputs)``.
    inputs: Sequence[:class:`Tensor`]
        The inputs. Only those with ``requires_grad`` are probed.
    probes: :class:`int`
        The number of coordinates to compare.
    eps: :class:`float`
        The finite difference step.
    rtol: :class:`float`
        The largest accepted relative error.
    atol: :class:`float`
        Differences below this absolute value always pass.

    Returns
    -------
    List[:class:`GradientProbe`]
        The probes that failed. An empty list means the check passed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)

    output = fn(*inputs)
    projection = rng.normal(size=output.shape)

    for tensor in inputs:
        tensor.zero_grad()
    output.backward(projection)

    candidates = [index for index, tensor in enumerate(inputs) if tensor.requires_grad]
    if not candidates:
        raise ValueError("check_gradients needs at least one input that requires gradient")

    failures: List[GradientProbe] = []
    with no_grad():
        for _ in range(probes):
            input_index = candidates[int(rng.integers(len(candidates)))]
            tensor = inputs[input_index]
            flat_index = int(rng.integers(tensor.data.size))
            flat = tensor.data.reshape(-1)
            original = flat[flat_index]

            flat[flat_index] = original + eps
            upper = _scalarise(fn(*inputs), projection)
            flat[flat_index] = original - eps
            lower = _scalarise(fn(*inputs), projection)
            flat[flat_index] = original

            grad = tensor.grad
            analytic = 0.0 if grad is None else float(grad.reshape(-1)[flat_index])
            probe = GradientProbe(input_index, flat_index, analytic, (upper - lower) / (2 * eps))

            if abs(probe.analytic - probe.numeric) > atol and probe.relative_error > rtol:
                failures.append(probe)

    return failures
