# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import Any, ClassVar, Optional, Sequence


__all__ = (
    "FewSegException",
    "ShapeError",
    "StateError",
    "EmptyForegroundError",
    "EmptySupportError",
    "GenerationError",
    "ConfigError",
    "CheckpointError",
    "IoError",
)


class FewSegException(Exception):
    """Base class for all kinds of exception provided by the library.

    Attributes
    ----------
    exit_code: :class:`int`
        The process exit code used by the command line interface
        when this exception ends a subcommand.
    """

    exit_code: ClassVar[int] = 1


class ShapeError(FewSegException):
    """An exception raised when tensor shapes are incompatible with an operation.

    Attributes
    ----------
    operation: :class:`str`
        The name of operation that rejected its input.
    expected: Any
        A description of what the operation expected.
    got: Any
        The offending shape or value.
    """
    def __init__(self, operation: str, expected: Any, got: Any) -> None:
        self.operation = operation
        self.expected = expected
        self.got = got

        super().__init__("%s expected %s, got %r" % (operation, expected, got))


class StateError(FewSegException):
    """An exception raised when the model state cannot be updated.

    This is raised by :func:`sgd_step` when a trainable parameter
    has no gradient populated.

    Attributes
    ----------
    name: :class:`str`
        The name of parameter at fault.
    """
    def __init__(self, name: str, reason: str = "has no gradient") -> None:
        self.name = name
        super().__init__("Parameter %r %s" % (name, reason))


class EmptyForegroundError(FewSegException):
    """An exception raised when a mask has no foreground to pool or box.

    Attributes
    ----------
    context: :class:`str`
        Where the empty mask was encountered.
    """

    exit_code = 6

    def __init__(self, context: str) -> None:
        self.context = context
        super().__init__(
            "Mask has no foreground (%s). Provide a support mask with at least "
            "one non-zero pixel covering the object." % context
        )


class EmptySupportError(FewSegException):
    """An exception raised when fusion is requested over zero support examples."""

    def __init__(self) -> None:
        super().__init__("At least one support example is required.")


class GenerationError(FewSegException):
    """An exception raised when a scene could not be generated.

    Attributes
    ----------
    class_ids: Sequence[:class:`int`]
        The classes requested in the scene.
    attempts: :class:`int`
        The number of attempts made before giving up.
    """
    def __init__(self, class_ids: Sequence[int], attempts: int) -> None:
        self.class_ids = list(class_ids)
        self.attempts = attempts
        super().__init__(
            "Could not render a scene with visible classes %r after %d attempts" % (self.class_ids, attempts)
        )


class ConfigError(FewSegException):
    """An exception raised for invalid configuration values or options.

    Attributes
    ----------
    key: Optional[:class:`str`]
        The configuration key at fault, if there is one.
    reason: :class:`str`
        Human readable description of the problem.
    """

    exit_code = 3

    def __init__(self, reason: str, key: Optional[str] = None) -> None:
        self.key = key
        self.reason = reason

        if key is None:
            super().__init__(reason)
        else:
            super().__init__("Invalid configuration key %r: %s" % (key, reason))


class CheckpointError(FewSegException):
    """An exception raised when a checkpoint cannot be read or does not fit the model.

    Attributes
    ----------
    path: :class:`str`
        The checkpoint path.
    reason: :class:`str`
        Human readable description of the problem.
    """

    exit_code = 5

    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        self.reason = reason
        super().__init__("Checkpoint %r: %s" % (path, reason))


class IoError(FewSegException):
    """An exception raised when reading or writing an artifact fails.

    Attributes
    ----------
    path: :class:`str`
        The path that could not be accessed.
    reason: :class:`str`
        Human readable description of the problem.
    """

    exit_code = 4

    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        self.reason = reason
        super().__init__("Cannot access %r: %s" % (path, reason))
