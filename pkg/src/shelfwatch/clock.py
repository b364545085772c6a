"""Injectable clocks.

Everything that reads the time or waits takes a clock object, so tests can
drive timing deterministically with :class:`FakeClock`.
"""

from __future__ import annotations

import threading
import time
from datetime import datetime, timedelta, timezone


class SystemClock:
    """Wall clock. ``now()`` is timezone-aware UTC."""

    def now(self) -> datetime:
        return datetime.now(timezone.utc)

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class FakeClock:
    """Manually driven clock; ``sleep`` advances time instantly.

    Safe to share between threads.
    """

    def __init__(self, start: datetime | None = None):
        if start is None:
            start = datetime(2021, 6, 15, 15, 0, tzinfo=timezone.utc)
        if start.tzinfo is None:
            raise ValueError("FakeClock start must be timezone-aware")
        self._now = start.astimezone(timezone.utc)
        self._lock = threading.Lock()
        self.sleeps: list[float] = []

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self.sleeps.append(seconds)
            if seconds > 0:
                self._now += timedelta(seconds=seconds)

    def advance(self, seconds: float = 0, *, minutes: float = 0) -> None:
        with self._lock:
            self._now += timedelta(seconds=seconds, minutes=minutes)
