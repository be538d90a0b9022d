"""Discrete-event kernel with a hierarchical property registry.

Time is an unsigned 64-bit count of nanoseconds. Events due at the same
instant run in insertion order, and ``run_until(t)`` executes events due
exactly at ``t``.
"""

from __future__ import annotations

import heapq
import itertools
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .values import PropertyValue, ValueType

TICKS_PER_SECOND = 1_000_000_000
SIMTIME_MAX = 2**64 - 1

_SEGMENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class KernelError(Exception):
    pass


class DuplicateKey(KernelError):
    pass


class InvalidKey(KernelError):
    pass


class UnknownKey(KernelError):
    pass


class TypeMismatch(KernelError):
    pass


class Overflow(KernelError):
    pass


class TargetInPast(KernelError):
    pass


class KernelFinalized(KernelError):
    pass


def seconds(s: float) -> int:
    """Convenience: seconds to ticks, rounded to the nearest nanosecond."""
    return int(round(s * TICKS_PER_SECOND))


def is_valid_key(path: str) -> bool:
    segments = path.split(".")
    return bool(path) and all(_SEGMENT.match(s) for s in segments)


def check_key(path: str) -> str:
    if not isinstance(path, str) or not is_valid_key(path):
        raise InvalidKey(f"invalid property path {path!r}")
    return path


class Property:
    """Handle returned by :meth:`Kernel.register_property`."""

    __slots__ = ("key", "type", "_value")

    def __init__(self, key: str, initial: PropertyValue):
        self.key = key
        self.type = initial.type
        self._value = initial

    def get(self) -> PropertyValue:
        return self._value

    def set(self, value: PropertyValue) -> None:
        if value.type is not self.type:
            raise TypeMismatch(
                f"{self.key} is {self.type.value}, got {value.type.value}")
        self._value = value

    @property
    def value(self):
        """The raw Python payload of the current value."""
        return self._value.value

    def __repr__(self):
        return f"Property({self.key}={self._value!r})"


class PropertyRegistry:

    def __init__(self):
        self._props: Dict[str, Property] = {}

    def register(self, key: str, initial: PropertyValue) -> Property:
        check_key(key)
        if key in self._props:
            raise DuplicateKey(key)
        prop = Property(key, initial)
        self._props[key] = prop
        return prop

    def lookup(self, key: str) -> Property:
        try:
            return self._props[key]
        except KeyError:
            raise UnknownKey(key) from None

    def get(self, key: str) -> PropertyValue:
        return self.lookup(key).get()

    def set(self, key: str, value: PropertyValue) -> None:
        self.lookup(key).set(value)

    def listing(self) -> List[Tuple[str, ValueType]]:
        return sorted((k, p.type) for k, p in self._props.items())

    def __contains__(self, key):
        return key in self._props

    def __len__(self):
        return len(self._props)


@dataclass(order=True)
class Event:
    due: int
    seq: int
    action: Callable[[], None] = field(compare=False)
    label: str = field(default="", compare=False)


class Kernel:
    """Single-threaded event scheduler plus property registry.

    >>> k = Kernel()
    >>> _ = k.schedule(5, lambda: None)
    >>> k.run_until(10); k.now()
    10
    """

    def __init__(self, record_trace: bool = False):
        self._now = 0
        self._queue: List[Event] = []
        self._seq = itertools.count()
        self._finalized = False
        self.properties = PropertyRegistry()
        self.trace: Optional[List[Tuple[int, int, str]]] = [] if record_trace else None

    # properties

    def register_property(self, key: str, initial: PropertyValue) -> Property:
        return self.properties.register(key, initial)

    def get_property(self, key: str) -> PropertyValue:
        return self.properties.get(key)

    def set_property(self, key: str, value: PropertyValue) -> None:
        self.properties.set(key, value)

    # scheduling

    def now(self) -> int:
        return self._now

    def schedule(self, after: int, action: Callable[[], None], label: str = "") -> int:
        if self._finalized:
            raise KernelFinalized("kernel is finalized")
        if after < 0:
            raise ValueError("delay must be non-negative")
        due = self._now + after
        if due > SIMTIME_MAX:
            raise Overflow(f"{self._now} + {after} exceeds 64-bit time")
        seq = next(self._seq)
        heapq.heappush(self._queue, Event(due, seq, action, label))
        return seq

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, target: int) -> None:
        if target < self._now:
            raise TargetInPast(f"target {target} < now {self._now}")
        if target > SIMTIME_MAX:
            raise Overflow(f"target {target} exceeds 64-bit time")
        queue = self._queue
        while queue and queue[0].due <= target:
            ev = heapq.heappop(queue)
            self._now = ev.due
            if self.trace is not None:
                self.trace.append((ev.due, ev.seq, ev.label))
            ev.action()
        self._now = target

    def finalize(self) -> None:
        self._finalized = True
        self._queue.clear()
