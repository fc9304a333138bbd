# Copyright (C) fewseg developers 2024-2026
# Credits: Rapptz/discord.py for providing a nice design for bitfield flags.

from __future__ import annotations

from typing import (
    Any,
    ClassVar,
    Dict,
    List,
    Literal,
    Optional,
    Type,
    TypeVar,
    overload,
)
from fewseg.enums import BlockMode
from fewseg.exceptions import ConfigError

import inspect

__all__ = (
    "BlockSelection",
    "select_blocks",
)


BaseFlagsT = TypeVar("BaseFlagsT", bound="BaseFlags")


class _FlagProxy:
    __slots__ = ("flag", "value")

    def __init__(self, flag: str, value: int) -> None:
        self.flag = flag
        self.value = value

    @overload
    def __get__(self, instance: Literal[None], owner: Type[BaseFlagsT]) -> int:
        ...

    @overload
    def __get__(self, instance: BaseFlagsT, owner: Type[BaseFlagsT]) -> bool:
        ...

    def __get__(self, instance: Optional[BaseFlagsT], owner: Type[BaseFlagsT]) -> Any:
        if instance is None:
            return self.value

        return instance.get(self.flag)

    def __set__(self, instance: BaseFlags, mode: bool) -> None:
        instance.set(self.flag, mode)


class BaseFlags:
    __valid_flags__: ClassVar[Dict[str, int]] = {}
    __slots__ = ("value",)

    def __init__(self, value: int = 0, **flags: bool) -> None:
        self.value = value

        for flag, mode in flags.items():
            self.set(flag, mode)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, self.__class__) and other.value == self.value

    def __hash__(self) -> int:
        return hash((self.__class__, self.value))

    def __repr__(self) -> str:
        enabled = " ".join("%s=True" % flag for flag in self.enabled())
        return f"<{self.__class__.__name__} {enabled}>"

    def get(self, flag: str) -> bool:
        flags = self.__valid_flags__
        if not flag in flags:
            raise ValueError("Invalid flag %r" % flag)

        flag_value = flags[flag]
        return (self.value & flag_value) > 0

    def set(self, flag: str, mode: bool) -> None:
        if not flag in self.__valid_flags__:
            raise ValueError("Invalid flag %r" % flag)

        flag_value = self.__valid_flags__[flag]
        if mode is True:
            self.value |= flag_value
        elif mode is False:
            self.value &= ~flag_value
        else:
            raise TypeError("Expected the flag value to be a bool, got %r" % mode.__class__)

    def enabled(self) -> List[str]:
        """The names of enabled flags, in increasing bit order."""
        flags = sorted(self.__valid_flags__.items(), key=lambda item: item[1])
        return [name for name, value in flags if self.value & value]

    def __init_subclass__(cls) -> None:
        # Each subclass owns its table.
        cls.__valid_flags__ = {}

        for name, member in inspect.getmembers(cls):
            if isinstance(member, int) and not name.startswith("_"):
                cls.__valid_flags__[name] = member
                setattr(cls, name, _FlagProxy(name, member))


class BlockSelection(BaseFlags):
    """A bitfield of backbone stages whose features feed the comparison encoder.

    Example::

        selection = BlockSelection(b2=True, b3=True)
        assert selection.stages() == [2, 3]
    """

    b2 = 1 << 0
    b3 = 1 << 1
    b4 = 1 << 2

    @classmethod
    def from_mode(cls, mode: str) -> BlockSelection:
        """Builds a selection from a :class:`BlockMode` string such as ``"b2b3"``.

        Raises
        ------
        ConfigError
            The mode is not one of :attr:`BlockMode.ALL`.
        """
        if mode not in BlockMode.ALL:
            raise ConfigError("expected one of %s, got %r" % (", ".join(BlockMode.ALL), mode), "backbone.blocks")

        selection = cls()
        for stage in ("b2", "b3", "b4"):
            if stage in mode:
                selection.set(stage, True)
        return selection

    @property
    def mode(self) -> str:
        """The :class:`BlockMode` string for this selection."""
        return "".join(self.enabled())

    def stages(self) -> List[int]:
        """The selected stage numbers, in increasing order."""
        return [int(name[1]) for name in self.enabled()]

    def needs_stage4(self) -> bool:
        return self.b4  # type: ignore[return-value]


def select_blocks(mode: str) -> BlockSelection:
    """Returns the feature-selection policy for a block mode.

    :func:`encode_comparison_features` consumes exactly the stages
    enabled in the returned selection.

    Parameters
    ----------
    mode: :class:`str`
        One of :attr:`BlockMode.ALL`.

    Returns
    -------
    :class:`BlockSelection`
    """
    return BlockSelection.from_mode(mode)
