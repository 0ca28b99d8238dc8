from __future__ import annotations

import collections
import threading
from typing import Generic, TypeVar

T = TypeVar("T")


class QueueClosed(Exception):
    pass


class BoundedQueue(Generic[T]):
    """FIFO guarded by one mutex and two condition variables.

    ``put`` blocks while full, ``get`` blocks while empty. ``close`` wakes every
    waiter; after close, ``put`` raises and ``get`` drains what is left before
    raising.
    """

    def __init__(self, capacity: int = 1024):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: collections.deque[T] = collections.deque()
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self._not_full = threading.Condition(self._lock)
        self._closed = False
        self.total_put = 0
        self.full_waits = 0

    def put(self, item: T, timeout: float | None = None) -> None:
        with self._not_full:
            if len(self._items) >= self.capacity and not self._closed:
                self.full_waits += 1
                if not self._not_full.wait_for(
                    lambda: len(self._items) < self.capacity or self._closed, timeout
                ):
                    raise TimeoutError("queue full")
            if self._closed:
                raise QueueClosed()
            self._items.append(item)
            self.total_put += 1
            self._not_empty.notify()

    def get(self, timeout: float | None = None) -> T:
        with self._not_empty:
            if not self._items and not self._closed:
                if not self._not_empty.wait_for(lambda: self._items or self._closed, timeout):
                    raise TimeoutError("queue empty")
            if not self._items:
                raise QueueClosed()
            item = self._items.popleft()
            self._not_full.notify()
            return item

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._not_empty.notify_all()
            self._not_full.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed

    def snapshot(self) -> list[T]:
        with self._lock:
            return list(self._items)

    def __len__(self) -> int:
        return len(self._items)
