from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

import pytest

from shelfwatch.clock import FakeClock
from shelfwatch.fetch import TransportResponse, TransportTimeout

REPO = Path(__file__).resolve().parent.parent
SAMPLE = REPO / "sample"

# Verbatim from the target site's listing markup (two unclosed anchor cards).
TWO_CARD_SNIPPET = """\
<a tabindex="-1" href="/vaihtoautot/toyota/yaris/84905081" title="Toyota Yaris" aria-label="Toyota Yaris"
class="adCard_anchor__2R5Cs block px-2 py-2 m:py-4 m:px-4 l-px-6">
<a tabindex="-1" href="/vaihtoautot/volkswagen/transporter/86101406" title="Volkswagen Transporter"
aria-label="Volkswagen Transporter" class="adCard_anchor__2R5Cs block px-2 py-2 m:py-4 m:px-4 l-px-6">
"""

# 2021-06-15 18:00 in Finland (UTC+3 in summer).
T0 = datetime(2021, 6, 15, 15, 0, tzinfo=timezone.utc)


@pytest.fixture
def clock():
    return FakeClock(T0)


class ScriptedTransport:
    """Plays back a script of statuses / exceptions, one per request."""

    def __init__(self, script, body=b"<html></html>"):
        self.script = list(script)
        self.body = body
        self.calls = []

    def request(self, method, url, *, headers=None, body=None, timeout=None):
        self.calls.append((method, url, dict(headers or {}), body))
        step = self.script.pop(0) if self.script else 200
        if isinstance(step, BaseException):
            raise step
        if step == "timeout":
            raise TransportTimeout("scripted timeout")
        return TransportResponse(step, self.body if step == 200 else b"")


@pytest.fixture
def scripted():
    return ScriptedTransport


def write_config(tmp_path: Path, *, corpus_dir, products=("toyota yaris",), departments=("vaihtoautot",),
                 window=1440, max_pages=1, min_delay_ms=0, sink="jsonl", **extra) -> Path:
    (tmp_path / "departments.txt").write_text("\n".join(departments) + "\n", encoding="utf-8")
    (tmp_path / "products.txt").write_text("\n".join(products) + ("\n" if products else ""), encoding="utf-8")
    data = {
        "base_url": "https://example.test",
        "watchlist": {"departments": "departments.txt", "products": "products.txt"},
        "locale": "fi",
        "site_clock": {"site_utc_offset_min": 180, "local_utc_offset_min": 60},
        "recency": {"duration_min": window},
        "politeness": {"min_delay_ms": min_delay_ms, "max_retries": 1, "backoff_base_ms": 10,
                       "max_pages_per_department": max_pages},
        "store": "seen.jsonl",
        "sink": sink,
        "transport": {"mode": "fixture", "dir": str(corpus_dir)},
    }
    data.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path
