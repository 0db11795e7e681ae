"""Shared data layer: namespaced key-value store with watch streams.

Namespaces: `rnib` and `uenib` are platform-owned (xApps may read but not
write); `xapp:<name>` is an xApp's private store; `topic:<name>` carries
published data-topic values. Operations are linearizable per key: the
store serializes commits under one lock and watchers observe every commit
in commit order.
"""

from __future__ import annotations

import threading
from typing import Any, Callable, Optional

from .errors import Forbidden, NotFound

PLATFORM = None  # writer identity of platform components

WatchFn = Callable[[str, str, Any, int], None]  # (op, key, value, commit_seq)


class Sdl:
    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._data: dict[str, dict[str, Any]] = {"rnib": {}, "uenib": {}}
        self._watchers: dict[str, list[WatchFn]] = {}
        self._commit_seq = 0

    def create_namespace(self, namespace: str) -> None:
        with self._lock:
            self._data.setdefault(namespace, {})

    def namespaces(self) -> list[str]:
        with self._lock:
            return sorted(self._data)

    def _table(self, namespace: str) -> dict[str, Any]:
        table = self._data.get(namespace)
        if table is None:
            raise NotFound(f"namespace {namespace!r} does not exist")
        return table

    @staticmethod
    def _writable(namespace: str, writer: Optional[str]) -> bool:
        if namespace in ("rnib", "uenib"):
            return writer is PLATFORM
        if namespace.startswith("xapp:"):
            return writer is PLATFORM or namespace == f"xapp:{writer}"
        return True

    def get(self, namespace: str, key: str) -> Any:
        with self._lock:
            table = self._table(namespace)
            if key not in table:
                raise NotFound(f"{namespace}/{key} not found")
            return table[key]

    def get_default(self, namespace: str, key: str, default: Any = None) -> Any:
        with self._lock:
            table = self._data.get(namespace)
            return default if table is None else table.get(key, default)

    def keys(self, namespace: str) -> list[str]:
        with self._lock:
            return sorted(self._table(namespace))

    def put(self, namespace: str, key: str, value: Any,
            writer: Optional[str] = PLATFORM) -> int:
        with self._lock:
            if not self._writable(namespace, writer):
                raise Forbidden(f"{writer!r} may not write {namespace}")
            table = self._table(namespace)
            table[key] = value
            self._commit_seq += 1
            seq = self._commit_seq
            watchers = list(self._watchers.get(namespace, ()))
        for fn in watchers:
            fn("put", key, value, seq)
        return seq

    def delete(self, namespace: str, key: str,
               writer: Optional[str] = PLATFORM) -> int:
        with self._lock:
            if not self._writable(namespace, writer):
                raise Forbidden(f"{writer!r} may not write {namespace}")
            table = self._table(namespace)
            if key not in table:
                raise NotFound(f"{namespace}/{key} not found")
            del table[key]
            self._commit_seq += 1
            seq = self._commit_seq
            watchers = list(self._watchers.get(namespace, ()))
        for fn in watchers:
            fn("delete", key, None, seq)
        return seq

    def watch(self, namespace: str, fn: WatchFn) -> None:
        """Register a watcher; it sees every later commit, in commit order."""
        with self._lock:
            self._table(namespace)
            self._watchers.setdefault(namespace, []).append(fn)
