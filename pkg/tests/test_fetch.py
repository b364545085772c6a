from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import T0, ScriptedTransport
from shelfwatch.clock import FakeClock
from shelfwatch.fetch import (
    Disallowed,
    FetchExhausted,
    FixtureTransport,
    InvalidBaseUrl,
    ManifestMalformed,
    ManifestMissing,
    NonRetryable,
    PageRequest,
    PolicyInvalid,
    PolitenessPolicy,
    RateLimiter,
    RobotsGate,
    TransportResponse,
    build_department_urls,
    fetch,
    fetch_all,
    fixture_transport,
    render_page_url,
    write_manifest,
)
from shelfwatch.watchlist import DepartmentEntry, WatchList


def wl(*slugs):
    return WatchList(tuple(DepartmentEntry(s) for s in slugs))


def policy(**kw):
    base = dict(min_delay_ms=0, max_retries=1, backoff_base_ms=100)
    base.update(kw)
    return PolitenessPolicy(**base)


# ---- urls


def test_first_page_has_no_query():
    reqs = build_department_urls("https://example.test", wl("vaihtoautot"), policy(max_pages_per_department=1))
    assert [r.url for r in reqs] == ["https://example.test/vaihtoautot"]


def test_pages_in_order():
    reqs = build_department_urls("https://example.test/", wl("pets", "cars"), policy(max_pages_per_department=3))
    assert [(r.department.slug, r.page_index) for r in reqs] == [
        ("pets", 1), ("pets", 2), ("pets", 3), ("cars", 1), ("cars", 2), ("cars", 3)]
    assert reqs[1].url == "https://example.test/pets?page=2"


def test_custom_template():
    t = "{base}/haku?cat={slug}&page={page}&sort=new"
    assert render_page_url("https://x.test", "autot", 1, t) == "https://x.test/haku?cat=autot&sort=new"
    assert render_page_url("https://x.test", "autot", 2, t) == "https://x.test/haku?cat=autot&page=2&sort=new"


@pytest.mark.parametrize("base", ["example.test", "/relative", "ftp://x.test", ""])
def test_invalid_base(base):
    with pytest.raises(InvalidBaseUrl):
        build_department_urls(base, wl("x"), policy())


def test_policy_validation():
    with pytest.raises(PolicyInvalid):
        PolitenessPolicy(timeout_ms=0)
    with pytest.raises(PolicyInvalid) as err:
        PolitenessPolicy(min_delay_ms=-1, max_pages_per_department=0)
    assert {name for name, _ in err.value.problems} == {"min_delay_ms", "max_pages_per_department"}


# ---- fixture transport


@pytest.fixture
def corpus(tmp_path):
    (tmp_path / "p1.html").write_bytes(b"<html>page one</html>")
    write_manifest(tmp_path, [("https://example.test/vaihtoautot", "p1.html")])
    return tmp_path


def test_fixture_replay(corpus, clock):
    req = PageRequest("https://example.test/vaihtoautot", DepartmentEntry("vaihtoautot"))
    resp = fetch(req, policy(), fixture_transport(corpus), clock=clock)
    assert resp.status == 200
    assert resp.body == (corpus / "p1.html").read_bytes()
    assert resp.fetched_at == T0


def test_fixture_unknown_url_is_404(corpus):
    t = fixture_transport(corpus)
    assert t.request("GET", "https://example.test/other", headers={}).status == 404
    with pytest.raises(NonRetryable) as err:
        fetch(PageRequest("https://example.test/other", None), policy(), t, clock=FakeClock(T0))
    assert err.value.status == 404


def test_fixture_is_pure(corpus):
    t = fixture_transport(corpus)
    bodies = {t.request("GET", "https://example.test/vaihtoautot", headers={}).body for _ in range(5)}
    assert len(bodies) == 1


def test_manifest_missing(tmp_path):
    with pytest.raises(ManifestMissing):
        fixture_transport(tmp_path)


@pytest.mark.parametrize("content", [
    "https://a.test/x\n",
    "not-a-url\tp.html\n",
    "https://a.test/x\tp.html\nhttps://a.test/x\tq.html\n",
    "https://a.test/x\t../escape.html\n",
])
def test_manifest_malformed(tmp_path, content):
    (tmp_path / "manifest.tsv").write_text(content)
    with pytest.raises(ManifestMalformed):
        FixtureTransport(tmp_path)


# ---- retries


REQ = PageRequest("https://example.test/vaihtoautot", None)


def test_retry_after_timeout_succeeds_on_second_attempt(clock):
    t = ScriptedTransport(["timeout", 200])
    resp = fetch(REQ, policy(max_retries=1), t, clock=clock)
    assert resp.status == 200
    assert len(t.calls) == 2


def test_two_server_errors_exhaust(clock):
    t = ScriptedTransport([500, 500])
    with pytest.raises(FetchExhausted) as err:
        fetch(REQ, policy(max_retries=1), t, clock=clock)
    assert len(t.calls) == 2 and err.value.attempts == 2
    assert "500" in str(err.value.cause)


def test_backoff_is_exponential(clock):
    t = ScriptedTransport([503, 429, ConnectionError("reset"), 200])
    fetch(REQ, policy(max_retries=3, backoff_base_ms=100), t, clock=clock)
    assert clock.sleeps == [0.1, 0.2, 0.4]


def test_client_error_not_retried(clock):
    t = ScriptedTransport([403, 200])
    with pytest.raises(NonRetryable):
        fetch(REQ, policy(max_retries=3), t, clock=clock)
    assert len(t.calls) == 1


def test_user_agent_sent(clock):
    t = ScriptedTransport([200])
    fetch(REQ, policy(user_agent="shelfwatch-test/1"), t, clock=clock)
    assert t.calls[0][2]["User-Agent"] == "shelfwatch-test/1"


def test_declared_encoding_from_header(clock):
    class T:
        def request(self, method, url, **kw):
            return TransportResponse(200, b"x", {"content-type": "text/html; charset=ISO-8859-15"})
    assert fetch(REQ, policy(), T(), clock=clock).declared_encoding == "ISO-8859-15"


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 5), st.lists(st.sampled_from([500, 502, 429, "timeout", 200]), max_size=10))
def test_attempts_never_exceed_retries_plus_one(max_retries, script):
    t = ScriptedTransport(script + [500] * 10)
    try:
        fetch(REQ, policy(max_retries=max_retries), t, clock=FakeClock(T0))
    except FetchExhausted as exc:
        assert exc.attempts == max_retries + 1
    assert len(t.calls) <= max_retries + 1


# ---- rate limiting


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2000), st.lists(st.integers(0, 3000), max_size=12))
def test_dispatch_gaps_respect_min_delay(n, delay_ms, idle_ms):
    clock = FakeClock(T0)
    limiter = RateLimiter(clock, delay_ms)
    for i in range(n):
        fetch(REQ, policy(min_delay_ms=delay_ms), ScriptedTransport([200]), clock=clock, limiter=limiter)
        clock.advance(idle_ms[i] / 1000 if i < len(idle_ms) else 0)
    times = [t for _, t in limiter.dispatches]
    assert all(b - a >= timedelta(milliseconds=delay_ms) for a, b in zip(times, times[1:]))


def test_limiter_is_per_host(clock):
    limiter = RateLimiter(clock, 1000)
    limiter.acquire("https://a.test/1")
    limiter.acquire("https://b.test/1")
    assert clock.sleeps == []
    limiter.acquire("https://a.test/2")
    assert clock.sleeps == [1.0]


def test_concurrent_fetches_keep_order_and_gaps(clock):
    reqs = build_department_urls("https://example.test", wl(*"abcdef"), policy())
    limiter = RateLimiter(clock, 250)
    results = fetch_all(reqs, policy(min_delay_ms=250), ScriptedTransport([200] * 6), clock=clock,
                        limiter=limiter, max_concurrent=3)
    assert [r.request for r in results] == reqs
    times = sorted(t for _, t in limiter.dispatches)
    assert all(b - a >= timedelta(milliseconds=250) for a, b in zip(times, times[1:]))


def test_fetch_all_reports_failures_in_place(clock):
    reqs = build_department_urls("https://example.test", wl("a", "b"), policy())
    results = fetch_all(reqs, policy(max_retries=0), ScriptedTransport([404, 200]), clock=clock, max_concurrent=1)
    assert isinstance(results[0], NonRetryable) and results[1].status == 200


# ---- robots.txt


class RobotsTransport:
    def __init__(self, robots_status, robots_body=b""):
        self.robots_status = robots_status
        self.robots_body = robots_body
        self.calls = []

    def request(self, method, url, **kw):
        self.calls.append(url)
        if url.endswith("/robots.txt"):
            return TransportResponse(self.robots_status, self.robots_body)
        return TransportResponse(200, b"<html></html>")


def test_robots_disallow(clock):
    t = RobotsTransport(200, b"User-agent: *\nDisallow: /private\n")
    gate = RobotsGate(t, policy(), clock)
    fetch(PageRequest("https://x.test/public", None), policy(), t, clock=clock, robots=gate)
    with pytest.raises(Disallowed):
        fetch(PageRequest("https://x.test/private/1", None), policy(), t, clock=clock, robots=gate)
    assert t.calls.count("https://x.test/robots.txt") == 1


def test_robots_missing_allows_all(clock):
    t = RobotsTransport(404)
    assert RobotsGate(t, policy(), clock).allowed("https://x.test/anything")


def test_robots_server_error_disallows(clock):
    t = RobotsTransport(503)
    assert not RobotsGate(t, policy(max_retries=0), clock).allowed("https://x.test/anything")
