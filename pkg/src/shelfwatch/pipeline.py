"""The crawl -> extract -> match -> recency -> diff -> alert run loop."""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import asdict, dataclass
from datetime import timedelta

from shelfwatch.alertstore import JsonlSink, TextSink, WebhookSink, diff_and_record, emit, load_store
from shelfwatch.config import ConfigInvalid, RunConfig, runtime_problems
from shelfwatch.errors import ShelfwatchError
from shelfwatch.extract import ExtractStats, extract_records, parse_html
from shelfwatch.fetch import (
    FetchError,
    FixtureTransport,
    RateLimiter,
    RobotsGate,
    build_department_urls,
    fetch_all,
)
from shelfwatch.temporal import is_recent, parse_post_time
from shelfwatch.watchlist import load_watchlist, matches

log = logging.getLogger(__name__)


@dataclass
class RunSummary:
    pages_fetched: int = 0
    records_extracted: int = 0
    records_matched: int = 0
    records_recent: int = 0
    events_emitted: int = 0
    cards_dropped: int = 0
    parse_misses: int = 0
    pages_failed: int = 0

    def counts(self) -> tuple[int, ...]:
        return (self.pages_fetched, self.records_extracted, self.records_matched,
                self.records_recent, self.events_emitted, self.cards_dropped, self.parse_misses)

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def all_pages_failed(self) -> bool:
        return self.pages_failed > 0 and self.pages_fetched == 0


def build_transport(config: RunConfig):
    if config.transport_mode == "live":
        if not config.live:
            raise ConfigInvalid(["transport.mode: live mode requires the explicit --live flag"])
        from shelfwatch.fetch import LiveTransport
        return LiveTransport()
    return FixtureTransport(config.fixtures_dir)


def build_sink(config: RunConfig, clock, stream=None):
    stream = stream if stream is not None else sys.stdout
    if config.sink == "text":
        return TextSink(stream, config.site_clock)
    if config.sink == "jsonl":
        return JsonlSink(stream)
    from shelfwatch.fetch import LiveTransport
    return WebhookSink(config.sink[len("webhook:"):], config.politeness, LiveTransport(), clock)


def run_once(config: RunConfig, clock, *, transport=None, sink=None, stream=None) -> RunSummary:
    """One pass over every department page. Per-page failures are skipped."""
    problems = [] if transport is not None else runtime_problems(config)
    if problems:
        raise ConfigInvalid(problems)
    watchlist = load_watchlist(config.departments_path, config.products_path)
    requests = build_department_urls(config.base_url, watchlist, config.politeness, config.url_template)
    if transport is None:
        transport = build_transport(config)
    if sink is None:
        sink = build_sink(config, clock, stream)

    summary = RunSummary()
    store = load_store(config.store_path)
    with store:
        now_site = config.site_clock.site_now(clock.now())
        limiter = RateLimiter(clock, config.politeness.min_delay_ms)
        robots = None
        if config.transport_mode == "live" and not isinstance(transport, FixtureTransport):
            robots = RobotsGate(transport, config.politeness, clock, limiter)
        responses = fetch_all(requests, config.politeness, transport, clock=clock, limiter=limiter,
                              robots=robots, max_concurrent=config.max_concurrent_fetches)

        stats = ExtractStats()
        recent = []
        for request, response in zip(requests, responses):
            if isinstance(response, FetchError):
                summary.pages_failed += 1
                log.warning("skipping page: %s", response)
                continue
            summary.pages_fetched += 1
            tree = parse_html(response.body, response.declared_encoding)
            records = extract_records(tree, config.extraction, request.url, request.department, clock, stats)
            summary.records_extracted += len(records)
            for record in records:
                if not matches(watchlist, record):
                    continue
                summary.records_matched += 1
                posted_at = parse_post_time(record.posted_text, config.locale, now_site)
                if posted_at is None:
                    summary.parse_misses += 1
                    log.debug("unparsed post time %r for %s", record.posted_text, record.product_id)
                    continue
                if is_recent(posted_at, now_site, config.recency):
                    recent.append(record.with_posted_at(posted_at))
        summary.cards_dropped = stats.cards_dropped
        summary.records_recent = len(recent)
        if stats.field_misses:
            log.info("field misses: %s", dict(sorted(stats.field_misses.items())))

        events = diff_and_record(store, recent, clock, config.site_clock.site_utc_offset_min)
        summary.events_emitted = emit(events, sink)
    log.info("run summary: %s", summary.as_dict())
    return summary


def watch(config: RunConfig, interval_min: int, clock, *, run=run_once, until=None, **run_kwargs) -> int:
    """Call ``run`` every ``interval_min`` minutes until ``until`` (or forever).

    A failed tick is logged and the loop carries on. Ctrl-C ends the loop
    cleanly; the store lock is only ever held inside a tick.
    """
    if not isinstance(interval_min, int) or interval_min < 1:
        raise ConfigInvalid([f"interval: must be an integer >= 1 minute, got {interval_min!r}"])
    interval = timedelta(minutes=interval_min)
    start = clock.now()
    tick = 0
    try:
        while True:
            due = start + tick * interval
            if until is not None and due > until:
                return 0
            wait = (due - clock.now()).total_seconds()
            if wait > 0:
                clock.sleep(wait)
            try:
                run(config, clock, **run_kwargs)
            except ShelfwatchError as exc:
                log.error("run at %s failed: %s", due.isoformat(), exc)
            except Exception:
                log.exception("run at %s crashed", due.isoformat())
            elapsed = clock.now() - start
            tick = max(tick + 1, math.floor(elapsed / interval) + 1)
    except KeyboardInterrupt:
        log.info("interrupted; stopping watch")
        return 0
