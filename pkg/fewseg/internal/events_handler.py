# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, Any, Callable, Dict, List, Tuple, TypeVar
from abc import ABC, abstractmethod
from fewseg.exceptions import FewSegException

import logging

if TYPE_CHECKING:
    from fewseg.events import BaseEvent
    from fewseg.types import TrainingEventT


BE = TypeVar("BE", bound="BaseEvent")
Listener = Callable[[BE], Any]

_LOGGER = logging.getLogger(__name__)


class ListenersMixin(ABC):
    """Listener registration and synchronous dispatch of training events."""

    @abstractmethod
    def _get_events_handler(self) -> EventsHandler:
        ...

    def _registry(self) -> Dict[TrainingEventT, List[Listener[Any]]]:
        return self._get_events_handler().listeners

    def walk_listeners(self) -> List[Tuple[TrainingEventT, List[Listener[Any]]]]:
        """Every event with registered listeners, in order of first registration.

        Returns
        -------
        List[Tuple[:class:`types.TrainingEventT`, :class:`list`]]
        """
        return [(event, list(callbacks)) for event, callbacks in self._registry().items()]

    def get_listeners(self, event: TrainingEventT) -> List[Listener[Any]]:
        """The listeners of ``event``, in registration order.

        Parameters
        ----------
        event: :class:`types.TrainingEventT`
            A :class:`TrainingEvent` name.
        """
        return list(self._registry().get(event, []))

    def add_listener(self, event: TrainingEventT, callback: Listener[Any]) -> None:
        """Registers ``callback`` to be called with every ``event``.

        Parameters
        ----------
        event: :class:`types.TrainingEventT`
            A :class:`TrainingEvent` name.
        callback: Callable[[:class:`BaseEvent`], Any]
            Called with the event object.

        Raises
        ------
        TypeError
            ``callback`` is not callable.
        """
        if not callable(callback):
            raise TypeError("Listener callback must be callable, got %r" % (callback,))
        self._registry().setdefault(event, []).append(callback)

    def clear_listeners(self, event: TrainingEventT) -> List[Listener[Any]]:
        """Unregisters and returns every listener of ``event``."""
        return self._registry().pop(event, [])

    def remove_listener(self, event: TrainingEventT, callback: Listener[Any]) -> bool:
        """Unregisters one listener; returns whether it was registered."""
        callbacks = self._registry().get(event)
        if not callbacks or callback not in callbacks:
            return False
        callbacks.remove(callback)
        return True

    def call_listeners(self, data: BaseEvent) -> None:
        """Calls the listeners of ``data``'s event, in registration order.

        A listener raising a library exception stops the run; any other
        exception is logged and the remaining listeners are still called.
        """
        name = data.get_event_name()
        for listener in self.get_listeners(name):
            try:
                listener(data)
            except FewSegException:
                raise
            except Exception:
                _LOGGER.exception("Listener %r for event %r failed", listener, name)


class EventsHandler(ListenersMixin):
    def __init__(self) -> None:
        self.listeners: Dict[TrainingEventT, List[Listener[Any]]] = {}

    def _get_events_handler(self) -> EventsHandler:
        return self
