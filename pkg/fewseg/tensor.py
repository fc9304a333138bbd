# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import (
    TYPE_CHECKING,
    Any,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
    Type,
    Union,
)
from contextlib import contextmanager

import threading
import numpy as np

if TYPE_CHECKING:
    from typing_extensions import Self


__all__ = (
    "Tensor",
    "Function",
    "Context",
    "no_grad",
    "is_grad_enabled",
)

ArrayLike = Union[np.ndarray, Sequence[Any], float, int]

_GRAD_MODE = threading.local()


def is_grad_enabled() -> bool:
    """Whether operations currently record the graph for the calling thread."""
    return getattr(_GRAD_MODE, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """A context manager that disables graph recording on the calling thread.

    Inference paths use this so that forward passes over frozen or
    trainable parameters alike do not keep intermediate buffers alive.
    """
    previous = is_grad_enabled()
    _GRAD_MODE.enabled = False
    try:
        yield
    finally:
        _GRAD_MODE.enabled = previous


class Context:
    """Storage shared between the forward and backward pass of a :class:`Function`."""

    __slots__ = ("saved", "needs_grad")

    def __init__(self) -> None:
        self.saved: Dict[str, Any] = {}
        self.needs_grad: Tuple[bool, ...] = ()

    def save(self, **values: Any) -> None:
        self.saved.update(values)

    def __getattr__(self, name: str) -> Any:
        try:
            return self.saved[name]
        except KeyError:
            raise AttributeError(name) from None


class Tensor:
    """A dense float64 array that can take part in reverse-mode differentiation.

    Feature maps use the ``[channels, height, width]`` layout. Tensors
    created by the user are leaves; tensors returned by a :class:`Function`
    remember the function and its inputs while gradient recording is enabled.

    Parameters
    ----------
    data: array-like
        The values. Always copied into a C-contiguous float64 array.
    requires_grad: :class:`bool`
        Whether gradient should be accumulated into :attr:`grad`
        by :meth:`backward`. Defaults to ``False``.

    Attributes
    ----------
    data: :class:`numpy.ndarray`
        The row-major values.
    grad: Optional[:class:`numpy.ndarray`]
        The accumulated gradient, same shape as :attr:`data`.
    requires_grad: :class:`bool`
        Whether this tensor participates in gradient computation.
    """

    __slots__ = (
        "data",
        "grad",
        "requires_grad",
        "_ctx",
        "_op",
        "_parents",
    )

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        self.data: np.ndarray = np.array(data, dtype=np.float64, order="C", copy=True)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._ctx: Optional[Context] = None
        self._op: Optional[Type[Function]] = None
        self._parents: Tuple[Tensor, ...] = ()

    @classmethod
    def _wrap(cls, data: np.ndarray) -> Tensor:
        # Takes ownership of ``data`` without copying.
        tensor = cls.__new__(cls)
        tensor.data = data
        tensor.grad = None
        tensor.requires_grad = False
        tensor._ctx = None
        tensor._op = None
        tensor._parents = ()
        return tensor

    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False) -> Tensor:
        return cls(np.zeros(shape), requires_grad=requires_grad)

    @classmethod
    def ones(cls, *shape: int, requires_grad: bool = False) -> Tensor:
        return cls(np.ones(shape), requires_grad=requires_grad)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(shape={self.shape!r}, requires_grad={self.requires_grad!r})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        """Returns a copy of the values as a :class:`numpy.ndarray`."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor, got shape %r" % (self.shape,))
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        """Returns a new leaf tensor with the same values and no graph history."""
        return Tensor._wrap(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _topological_order(self) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]

        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        return order

    def backward(self, grad: Optional[ArrayLike] = None) -> None:
        """Accumulates the gradient of this tensor into every leaf that requires it.

        Parameters
        ----------
        grad: Optional[array-like]
            The upstream gradient. May be omitted for single-element tensors
            in which case ``1.0`` is used.

        Raises
        ------
        RuntimeError
            This tensor does not require gradient, or ``grad`` was omitted
            for a tensor with more than one element.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require gradient")

        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad can be implicitly created only for single-element tensors")
            seed = np.ones_like(self.data)
        else:
            seed = np.array(grad, dtype=np.float64).reshape(self.data.shape)

        grads: Dict[int, np.ndarray] = {id(self): seed}

        for node in reversed(self._topological_order()):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue

            if node._ctx is None:
                node.grad = node_grad.copy() if node.grad is None else node.grad + node_grad
                continue

            assert node._op is not None
            input_grads = node._op.backward(node._ctx, node_grad)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)

            for parent, parent_grad in zip(node._parents, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad

    # Operator sugar for graph glue; the heavy lifting lives in fewseg.ops.

    def __add__(self, other: Tensor) -> Tensor:
        from fewseg.ops import add
        return add(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        from fewseg.ops import elementwise_mul
        return elementwise_mul(self, other)

    def copy_(self, other: Union[Tensor, np.ndarray]) -> Self:
        """Overwrites the values in place, keeping shape. Used for parameter loading."""
        values = other.data if isinstance(other, Tensor) else np.asarray(other, dtype=np.float64)
        if values.shape != self.data.shape:
            raise ValueError("copy_ expected shape %r, got %r" % (self.shape, values.shape))
        self.data[...] = values
        return self


class Function:
    """Base class for differentiable operations.

    Subclasses implement :meth:`forward` over raw arrays and
    :meth:`backward` returning one gradient (or ``None``) per tensor
    input. :meth:`apply` takes care of wrapping and graph bookkeeping.
    """

    @staticmethod
    def forward(ctx: Context, *arrays: np.ndarray, **options: Any) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray) -> Union[Optional[np.ndarray], Tuple[Optional[np.ndarray], ...]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **options: Any) -> Tensor:
        ctx = Context()
        ctx.needs_grad = tuple(tensor.requires_grad for tensor in inputs)

        out = Tensor._wrap(cls.forward(ctx, *(tensor.data for tensor in inputs), **options))

        if is_grad_enabled() and any(ctx.needs_grad):
            out.requires_grad = True
            out._ctx = ctx
            out._op = cls
            out._parents = inputs

        return out
