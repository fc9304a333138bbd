# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, Dict, Iterator, List, Optional, Set, Tuple
from fewseg.exceptions import StateError
from fewseg.ops import Conv2dParams
from fewseg.tensor import Tensor

import logging
import numpy as np

if TYPE_CHECKING:
    from fewseg.segmenter import ModelConfig


__all__ = (
    "ModelState",
    "sgd_step",
)

_LOGGER = logging.getLogger(__name__)


class ModelState:
    """A class that holds every learnable parameter of a model.

    Parameters are leaf :class:`Tensor` objects registered under dotted
    names. The first component of a name is the parameter's *group*
    (``backbone``, ``encoder``, ``comparison``, ``attention``, ``iom`` or
    ``warmup``). Groups, or any dotted prefix, can be frozen; a frozen parameter does not
    record gradient and is never modified by :func:`sgd_step`.

    Every forward function of the library reads its weights from one
    shared instance of this class, so the support and query branches
    and all refinement iterations see the same storage.

    Parameters
    ----------
    config: :class:`ModelConfig`
        The architecture this state was built for.
    """

    def __init__(self, config: ModelConfig) -> None:
        self.config = config
        self.__params: Dict[str, Tensor] = {}
        self.__frozen: Set[str] = set()

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} parameters={len(self.__params)} frozen={sorted(self.__frozen)!r}>"

    def __contains__(self, name: str) -> bool:
        return name in self.__params

    def __getitem__(self, name: str) -> Tensor:
        return self.__params[name]

    def get(self, name: str) -> Optional[Tensor]:
        return self.__params.get(name)

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def add(self, name: str, tensor: Tensor) -> Tensor:
        """Registers a parameter.

        If a parameter with the same name already exists, it will be overwritten.
        """
        tensor.requires_grad = not self._name_frozen(name)
        self.__params[name] = tensor
        return tensor

    def remove(self, prefix: str) -> List[str]:
        """Removes every parameter under a group or dotted prefix and returns their names."""
        names = [name for name, _ in self.named_parameters(prefix)]
        for name in names:
            del self.__params[name]
        self.__frozen.discard(prefix)
        return names

    def add_conv(
        self,
        prefix: str,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        *,
        bias: bool = True,
    ) -> None:
        """Registers ``<prefix>.weight`` (He-normal) and ``<prefix>.bias`` (zeros)."""
        shape = (out_channels, in_channels, kernel, kernel)
        weight = rng.normal(0.0, np.sqrt(2.0 / (in_channels * kernel * kernel)), size=shape)

        self.add(prefix + ".weight", Tensor(weight))
        if bias:
            self.add(prefix + ".bias", Tensor(np.zeros(out_channels)))

    def conv(self, prefix: str, *, stride: int = 1, dilation: int = 1, padding: int = 0) -> Conv2dParams:
        """Builds :class:`Conv2dParams` around the tensors registered under ``prefix``."""
        return Conv2dParams(
            weight=self.__params[prefix + ".weight"],
            bias=self.__params.get(prefix + ".bias"),
            stride=stride,
            dilation=dilation,
            padding=padding,
        )

    def named_parameters(self, prefix: Optional[str] = None) -> List[Tuple[str, Tensor]]:
        """The registered parameters in registration order, optionally under one dotted prefix."""
        return [
            (name, tensor) for name, tensor in self.__params.items()
            if prefix is None or _under(name, prefix)
        ]

    def groups(self) -> List[str]:
        seen: Dict[str, None] = {}
        for name in self.__params:
            seen.setdefault(self.group_of(name), None)
        return list(seen)

    def num_parameters(self, prefix: Optional[str] = None) -> int:
        return sum(tensor.data.size for _, tensor in self.named_parameters(prefix))

    def is_frozen(self, prefix: str) -> bool:
        """Whether the group or dotted prefix has been frozen explicitly."""
        return prefix in self.__frozen

    def _name_frozen(self, name: str) -> bool:
        return any(_under(name, prefix) for prefix in self.__frozen)

    def frozen_groups(self) -> List[str]:
        return sorted(self.__frozen)

    def freeze(self, *prefixes: str) -> None:
        """Freezes the given parameter groups or dotted prefixes such as ``backbone.stage4``."""
        for prefix in prefixes:
            self.__frozen.add(prefix)
            for _, tensor in self.named_parameters(prefix):
                tensor.requires_grad = False
                tensor.grad = None

    def unfreeze(self, *prefixes: str) -> None:
        """Lifts earlier :meth:`freeze` calls for the given groups or prefixes."""
        for prefix in prefixes:
            self.__frozen.discard(prefix)
        for name, tensor in self.__params.items():
            tensor.requires_grad = not self._name_frozen(name)

    def trainable(self) -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self.__params.items():
            if not self._name_frozen(name):
                yield name, tensor

    def zero_grad(self) -> None:
        for tensor in self.__params.values():
            tensor.grad = None

    def snapshot(self) -> Dict[str, np.ndarray]:
        """Returns a copy of every parameter's values keyed by name."""
        return {name: tensor.data.copy() for name, tensor in self.__params.items()}


def sgd_step(params: ModelState, lr: float) -> ModelState:
    """Applies one plain SGD update, ``p <- p - lr * grad``, to trainable parameters.

    Frozen parameters keep every bit of their values. All gradients are
    cleared afterwards, frozen ones included.

    Parameters
    ----------
    params: :class:`ModelState`
        The state to update in place.
    lr: :class:`float`
        The learning rate.

    Returns
    -------
    :class:`ModelState`
        The same state, for chaining.

    Raises
    ------
    StateError
        A trainable parameter has no gradient populated.
    """
    trainable = list(params.trainable())
    for name, tensor in trainable:
        if tensor.grad is None:
            raise StateError(name)

    _LOGGER.debug("SGD step over %d trainable parameters (lr=%g)", len(trainable), lr)
    for _, tensor in trainable:
        assert tensor.grad is not None
        if lr != 0.0:
            tensor.data -= lr * tensor.grad

    params.zero_grad()
    return params


def _under(name: str, prefix: str) -> bool:
    return name == prefix or name.startswith(prefix + ".")
