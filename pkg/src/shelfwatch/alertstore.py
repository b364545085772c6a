"""Seen-product journal, change detection and alert sinks.

The journal is an append-only JSON-lines file; each line is a snapshot of
one product's state::

    {"product_id": "84905081", "last_price": {"amount_minor": 1250000, "currency": "EUR"},
     "first_seen_at": "2021-06-15T15:00:00+00:00", "last_seen_at": "2021-06-15T15:00:00+00:00"}

Replaying the file in order rebuilds the store; the last line for an id
wins. Lines are fsynced before any alert is emitted, so a crash can at worst
lose an alert, never repeat one.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import IO

import filelock

from shelfwatch.errors import ShelfwatchError
from shelfwatch.extract import Money, ProductRecord

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class JournalCorrupt(ShelfwatchError, ValueError):
    def __init__(self, path, lineno: int, reason: str):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: corrupt journal line ({reason})")


class StoreWriteFailed(ShelfwatchError, OSError):
    pass


class StoreLocked(ShelfwatchError):
    pass


@dataclass(frozen=True)
class SeenEntry:
    product_id: str
    last_price: Money | None
    first_seen_at: datetime
    last_seen_at: datetime

    def __post_init__(self):
        if self.first_seen_at > self.last_seen_at:
            raise ValueError("first_seen_at must not be after last_seen_at")

    def to_json(self) -> str:
        return json.dumps(
            {
                "product_id": self.product_id,
                "last_price": self.last_price.to_dict() if self.last_price else None,
                "first_seen_at": self.first_seen_at.isoformat(),
                "last_seen_at": self.last_seen_at.isoformat(),
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> SeenEntry:
        data = json.loads(line)
        if not isinstance(data, dict):
            raise ValueError("journal line is not a JSON object")
        product_id = data["product_id"]
        if not isinstance(product_id, str) or not product_id:
            raise ValueError("product_id must be a non-empty string")
        return cls(
            product_id=product_id,
            last_price=Money.from_dict(data["last_price"]),
            first_seen_at=datetime.fromisoformat(data["first_seen_at"]),
            last_seen_at=datetime.fromisoformat(data["last_seen_at"]),
        )


class AlertKind(str, enum.Enum):
    NEW_PRODUCT = "new_product"
    PRICE_CHANGE = "price_change"


@dataclass(frozen=True)
class AlertEvent:
    kind: AlertKind
    record: ProductRecord
    emitted_at: datetime
    previous_price: Money | None = None
    posted_at_offset_min: int | None = None

    def __post_init__(self):
        if self.kind is AlertKind.PRICE_CHANGE:
            if self.previous_price == self.record.price:
                raise ValueError("price_change event with unchanged price")

    def to_dict(self) -> dict:
        rec = self.record
        posted = rec.posted_at
        if posted is not None and posted.tzinfo is None and self.posted_at_offset_min is not None:
            posted = posted.replace(tzinfo=timezone(timedelta(minutes=self.posted_at_offset_min)))
        return {
            "v": SCHEMA_VERSION,
            "kind": self.kind.value,
            "product_id": rec.product_id,
            "name": rec.name,
            "department": rec.department_slug,
            "url": rec.url,
            "price": rec.price.to_dict() if rec.price else None,
            "previous_price": self.previous_price.to_dict() if self.previous_price else None,
            "posted_at": posted.isoformat() if posted else None,
            "emitted_at": self.emitted_at.isoformat(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


class SeenStore:
    """In-memory view of the journal plus the path it appends to."""

    def __init__(self, path=None, entries: dict[str, SeenEntry] | None = None):
        self.path = Path(path) if path is not None else None
        self.entries: dict[str, SeenEntry] = dict(entries or {})
        self._lock: filelock.BaseFileLock | None = None

    def __eq__(self, other):
        return isinstance(other, SeenStore) and self.entries == other.entries

    def __len__(self):
        return len(self.entries)

    def __contains__(self, product_id):
        return product_id in self.entries

    def get(self, product_id: str) -> SeenEntry | None:
        return self.entries.get(product_id)

    # -- locking

    def lock(self) -> SeenStore:
        if self.path is None:
            return self
        lock = filelock.FileLock(str(self.path) + ".lock")
        try:
            lock.acquire(timeout=0)
        except filelock.Timeout as exc:
            raise StoreLocked(f"another run holds {self.path}.lock") from exc
        self._lock = lock
        return self

    def unlock(self) -> None:
        if self._lock is not None:
            self._lock.release()
            self._lock = None

    def __enter__(self):
        return self.lock()

    def __exit__(self, *exc):
        self.unlock()

    # -- persistence

    def append(self, entries: list[SeenEntry]) -> None:
        """Append snapshots durably, then apply them in memory."""
        if self.path is not None and entries:
            payload = "".join(e.to_json() + "\n" for e in entries).encode("utf-8")
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "ab") as fh:
                    fh.write(payload)
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StoreWriteFailed(f"cannot append to {self.path}: {exc}") from exc
        for entry in entries:
            self.entries[entry.product_id] = entry

    def save(self, path) -> None:
        """Write a compacted journal (one line per product)."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for entry in self.entries.values():
                fh.write(entry.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)


def load_store(path) -> SeenStore:
    path = Path(path)
    store = SeenStore(path)
    if not path.exists():
        return store
    data = path.read_bytes()
    lines = data.split(b"\n")
    for lineno, raw in enumerate(lines, start=1):
        if lineno == len(lines) and raw == b"":
            break
        try:
            entry = SeenEntry.from_json(raw.decode("utf-8"))
        except (ValueError, KeyError, TypeError) as exc:
            raise JournalCorrupt(path, lineno, str(exc) or type(exc).__name__) from exc
        store.entries[entry.product_id] = entry
    return store


def diff_and_record(store: SeenStore, records: list[ProductRecord], clock,
                    posted_at_offset_min: int | None = None) -> list[AlertEvent]:
    """Compare records with the store, journal their new state and return alerts.

    Unknown ids give ``new_product``; a different price (including gaining
    or losing one) gives ``price_change``; otherwise only ``last_seen_at``
    moves. Nothing is returned unless the journal write succeeded.
    """
    now = clock.now()
    events: list[AlertEvent] = []
    snapshots: list[SeenEntry] = []
    pending: dict[str, SeenEntry] = {}
    for rec in records:
        prev = pending.get(rec.product_id) or store.get(rec.product_id)
        if prev is None:
            events.append(AlertEvent(AlertKind.NEW_PRODUCT, rec, now,
                                     posted_at_offset_min=posted_at_offset_min))
            entry = SeenEntry(rec.product_id, rec.price, now, now)
        else:
            if prev.last_price != rec.price:
                events.append(AlertEvent(AlertKind.PRICE_CHANGE, rec, now, prev.last_price,
                                         posted_at_offset_min=posted_at_offset_min))
            entry = SeenEntry(rec.product_id, rec.price, prev.first_seen_at, max(now, prev.last_seen_at))
        pending[rec.product_id] = entry
        snapshots.append(entry)
    store.append(snapshots)
    return events


# ---------------------------------------------------------------- sinks


class TextSink:
    def __init__(self, stream: IO[str] | None = None, site_clock=None):
        self.stream = stream if stream is not None else sys.stdout
        self.site_clock = site_clock

    def send(self, event: AlertEvent) -> None:
        rec = event.record
        price = str(rec.price) if rec.price else "no price"
        if event.kind is AlertKind.PRICE_CHANGE:
            prev = str(event.previous_price) if event.previous_price else "no price"
            what = f"PRICE {prev} -> {price}"
        else:
            what = f"NEW {price}"
        when = ""
        if rec.posted_at is not None:
            stamp = rec.posted_at
            if self.site_clock is not None:
                from shelfwatch.temporal import site_to_local
                stamp = site_to_local(stamp, self.site_clock)
            when = f" posted {stamp:%Y-%m-%d %H:%M}"
        self.stream.write(f"[{rec.department_slug}] {rec.name} ({rec.product_id}) {what}{when} {rec.url}\n")


class JsonlSink:
    def __init__(self, stream: IO[str] | None = None):
        self.stream = stream if stream is not None else sys.stdout

    def send(self, event: AlertEvent) -> None:
        self.stream.write(event.to_json() + "\n")


class WebhookSink:
    """POSTs one JSON body per event, retrying like page fetches."""

    def __init__(self, url: str, policy, transport, clock):
        self.url = url
        self.policy = policy
        self.transport = transport
        self.clock = clock

    def send(self, event: AlertEvent) -> None:
        from shelfwatch.fetch import post_json
        post_json(self.url, event.to_json().encode("utf-8"), self.policy, self.transport, clock=self.clock)


def emit(events: list[AlertEvent], sink) -> int:
    """Deliver events in order; failures are logged, not raised. Returns deliveries."""
    delivered = 0
    for event in events:
        try:
            sink.send(event)
        except Exception as exc:  # alerting is best-effort; the journal holds the truth
            log.error("could not deliver %s alert for %s: %s", event.kind.value,
                      event.record.product_id, exc)
            continue
        delivered += 1
    flush = getattr(getattr(sink, "stream", None), "flush", None)
    if flush is not None:
        flush()
    return delivered
