"""Page requests, polite fetching and the recorded-fixture transport.

A *transport* is anything with::

    request(method, url, *, headers, body=None, timeout) -> TransportResponse

raising :class:`TransportTimeout` / :class:`TransportError` for network
failures. :class:`FixtureTransport` replays a recorded corpus and never
touches the network; :class:`LiveTransport` wraps ``requests`` and is only
built when the caller explicitly asks for live mode.
"""

from __future__ import annotations

import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Protocol
from urllib.parse import urlsplit
from urllib.robotparser import RobotFileParser

from shelfwatch.errors import ShelfwatchError

log = logging.getLogger(__name__)

DEFAULT_URL_TEMPLATE = "{base}/{slug}?page={page}"
MANIFEST_NAME = "manifest.tsv"


# ---------------------------------------------------------------- errors


class FetchError(ShelfwatchError):
    """A single page could not be fetched. The pipeline skips the page."""

    def __init__(self, url: str, message: str):
        self.url = url
        super().__init__(f"{url}: {message}")


class FetchExhausted(FetchError):
    def __init__(self, url: str, attempts: int, cause: Exception | None):
        self.attempts = attempts
        self.cause = cause
        super().__init__(url, f"gave up after {attempts} attempts (last error: {cause})")


class NonRetryable(FetchError):
    def __init__(self, url: str, status: int):
        self.status = status
        super().__init__(url, f"HTTP {status}")


class Disallowed(FetchError):
    def __init__(self, url: str):
        super().__init__(url, "disallowed by robots.txt")


class PolicyInvalid(ShelfwatchError, ValueError):
    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{k} {v}" for k, v in problems))


class InvalidBaseUrl(ShelfwatchError, ValueError):
    pass


class ManifestMissing(ShelfwatchError, FileNotFoundError):
    pass


class ManifestMalformed(ShelfwatchError, ValueError):
    pass


class TransportError(ShelfwatchError):
    """Connection-level failure (DNS, refused, reset)."""


class TransportTimeout(TransportError):
    pass


class HTTPStatusError(ShelfwatchError):
    def __init__(self, status: int):
        self.status = status
        super().__init__(f"HTTP {status}")


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class PolitenessPolicy:
    min_delay_ms: int = 1000
    max_retries: int = 2
    backoff_base_ms: int = 500
    timeout_ms: int = 15000
    user_agent: str = "shelfwatch/0.1 (+https://github.com/shelfwatch)"
    max_pages_per_department: int = 1

    def problems(self) -> list[tuple[str, str]]:
        out = []
        for name in ("min_delay_ms", "max_retries", "backoff_base_ms", "timeout_ms"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                out.append((name, f"must be an integer >= 0, got {value!r}"))
        if isinstance(self.timeout_ms, int) and self.timeout_ms == 0:
            out.append(("timeout_ms", "must be > 0"))
        if not isinstance(self.max_pages_per_department, int) or self.max_pages_per_department < 1:
            out.append(("max_pages_per_department", "must be an integer >= 1"))
        if not self.user_agent or not isinstance(self.user_agent, str):
            out.append(("user_agent", "must be a non-empty string"))
        return out

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise PolicyInvalid(problems)


@dataclass(frozen=True)
class PageRequest:
    url: str
    department: object
    page_index: int = 1


@dataclass(frozen=True)
class PageResponse:
    request: PageRequest
    status: int
    body: bytes
    declared_encoding: str | None
    fetched_at: datetime


@dataclass(frozen=True)
class TransportResponse:
    status: int
    body: bytes = b""
    headers: dict = field(default_factory=dict)


class Transport(Protocol):
    def request(self, method: str, url: str, *, headers: dict, body: bytes | None = None,
                timeout: float) -> TransportResponse: ...


def is_absolute(url: str) -> bool:
    try:
        parts = urlsplit(url)
    except ValueError:
        return False
    return bool(parts.scheme in ("http", "https") and parts.netloc)


# ---------------------------------------------------------------- urls


def _first_page_template(template: str) -> str:
    """Drop the query parameter carrying ``{page}``."""
    out = re.sub(r"([?&])[^?&#=]*=\{page\}&?", r"\1", template)
    out = re.sub(r"[?&](?=#|$)", "", out)
    return out


def render_page_url(base_url: str, slug: str, page: int, template: str = DEFAULT_URL_TEMPLATE) -> str:
    base = base_url.rstrip("/")
    if page == 1:
        template = _first_page_template(template)
    return template.format(base=base, slug=slug, page=page)


def build_department_urls(base_url: str, watchlist, policy: PolitenessPolicy,
                          template: str = DEFAULT_URL_TEMPLATE) -> list[PageRequest]:
    if not is_absolute(base_url):
        raise InvalidBaseUrl(f"base URL {base_url!r} is not an absolute http(s) URL")
    requests = []
    for dept in watchlist.departments:
        for page in range(1, policy.max_pages_per_department + 1):
            url = render_page_url(base_url, dept.slug, page, template)
            requests.append(PageRequest(url, dept, page))
    return requests


# ---------------------------------------------------------------- fixtures


def read_manifest(corpus_dir) -> dict[str, Path]:
    corpus_dir = Path(corpus_dir)
    path = corpus_dir / MANIFEST_NAME
    if not path.is_file():
        raise ManifestMissing(f"no {MANIFEST_NAME} in {corpus_dir}")
    entries: dict[str, Path] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 2 or not cols[0] or not cols[1]:
            raise ManifestMalformed(f"{path}:{lineno}: expected '<url>\\t<file>'")
        url, name = cols
        if not is_absolute(url):
            raise ManifestMalformed(f"{path}:{lineno}: {url!r} is not an absolute URL")
        if url in entries:
            raise ManifestMalformed(f"{path}:{lineno}: duplicate URL {url!r}")
        rel = Path(name)
        if rel.is_absolute() or ".." in rel.parts:
            raise ManifestMalformed(f"{path}:{lineno}: file must be a path inside the corpus")
        entries[url] = corpus_dir / rel
    return entries


def write_manifest(corpus_dir, entries: list[tuple[str, str]]) -> Path:
    path = Path(corpus_dir) / MANIFEST_NAME
    path.write_text("".join(f"{url}\t{name}\n" for url, name in entries), encoding="utf-8")
    return path


class FixtureTransport:
    """Serves recorded pages by exact URL; anything else is a 404."""

    def __init__(self, corpus_dir):
        self.corpus_dir = Path(corpus_dir)
        self.entries = read_manifest(self.corpus_dir)
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def request(self, method, url, *, headers=None, body=None, timeout=None) -> TransportResponse:
        with self._lock:
            self.calls.append(url)
        if method.upper() != "GET":
            return TransportResponse(405)
        path = self.entries.get(url)
        if path is None:
            return TransportResponse(404)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            return TransportResponse(404)
        return TransportResponse(200, data, {"Content-Type": "text/html"})


def fixture_transport(corpus_dir) -> FixtureTransport:
    return FixtureTransport(corpus_dir)


class LiveTransport:
    """HTTP via ``requests``; one session per thread."""

    def __init__(self):
        import requests  # deferred so fixture-only runs never load the network stack

        self._requests = requests
        self._local = threading.local()

    def _session(self):
        session = getattr(self._local, "session", None)
        if session is None:
            session = self._local.session = self._requests.Session()
        return session

    def request(self, method, url, *, headers=None, body=None, timeout=None) -> TransportResponse:
        req = self._requests
        try:
            resp = self._session().request(method, url, headers=headers, data=body, timeout=timeout)
        except req.Timeout as exc:
            raise TransportTimeout(str(exc)) from exc
        except req.RequestException as exc:
            raise TransportError(str(exc)) from exc
        return TransportResponse(resp.status_code, resp.content, dict(resp.headers))


# ---------------------------------------------------------------- politeness


class RateLimiter:
    """One shared gate: successive dispatches to a host are ``min_delay_ms`` apart."""

    def __init__(self, clock, min_delay_ms: int):
        self.clock = clock
        self.min_delay_ms = min_delay_ms
        self._lock = threading.Lock()
        self._last: dict[str, datetime] = {}
        self.dispatches: list[tuple[str, datetime]] = []

    def acquire(self, url: str) -> datetime:
        host = urlsplit(url).netloc.lower()
        with self._lock:
            last = self._last.get(host)
            if last is not None:
                waited = (self.clock.now() - last).total_seconds()
                remaining = self.min_delay_ms / 1000 - waited
                if remaining > 0:
                    self.clock.sleep(remaining)
            now = self.clock.now()
            self._last[host] = now
            self.dispatches.append((host, now))
            return now


_CHARSET = re.compile(r"charset\s*=\s*[\"']?([^\s;\"']+)", re.I)


def declared_charset(headers: dict) -> str | None:
    for key, value in headers.items():
        if key.lower() == "content-type":
            m = _CHARSET.search(value or "")
            return m.group(1) if m else None
    return None


def _dispatch(url, policy, transport, clock, limiter, method="GET", body=None, headers=None):
    """Send with retries. Returns the final 2xx TransportResponse."""
    headers = {"User-Agent": policy.user_agent, **(headers or {})}
    cause: Exception | None = None
    attempts = 0
    for attempt in range(policy.max_retries + 1):
        if limiter is not None:
            limiter.acquire(url)
        attempts += 1
        try:
            resp = transport.request(method, url, headers=headers, body=body,
                                     timeout=policy.timeout_ms / 1000)
        except (TransportError, TimeoutError, ConnectionError) as exc:
            cause = exc
        else:
            if 200 <= resp.status < 300:
                return resp
            if resp.status == 429 or resp.status >= 500:
                cause = HTTPStatusError(resp.status)
            else:
                raise NonRetryable(url, resp.status)
        log.debug("attempt %d for %s failed: %s", attempts, url, cause)
        if attempt < policy.max_retries:
            clock.sleep(policy.backoff_base_ms * 2 ** attempt / 1000)
    raise FetchExhausted(url, attempts, cause)


class RobotsGate:
    """Caches robots.txt per host and answers ``allowed(url)``.

    A missing robots.txt (4xx) allows everything; a server error or
    unreachable host disallows the host for this run.
    """

    def __init__(self, transport, policy: PolitenessPolicy, clock, limiter=None):
        self.transport = transport
        self.policy = policy
        self.clock = clock
        self.limiter = limiter
        self._parsers: dict[str, RobotFileParser | None] = {}
        self._lock = threading.Lock()

    def _load(self, origin: str) -> RobotFileParser | None:
        parser = RobotFileParser(origin + "/robots.txt")
        try:
            resp = _dispatch(origin + "/robots.txt", self.policy, self.transport, self.clock, self.limiter)
        except NonRetryable as exc:
            if 400 <= exc.status < 500:
                parser.allow_all = True
                return parser
            return None
        except FetchError:
            return None
        parser.parse(resp.body.decode("utf-8", errors="replace").splitlines())
        return parser

    def allowed(self, url: str) -> bool:
        parts = urlsplit(url)
        origin = f"{parts.scheme}://{parts.netloc}"
        with self._lock:
            if origin not in self._parsers:
                self._parsers[origin] = self._load(origin)
            parser = self._parsers[origin]
        return parser is not None and parser.can_fetch(self.policy.user_agent, url)


def fetch(request: PageRequest, policy: PolitenessPolicy, transport, *, clock=None,
          limiter: RateLimiter | None = None, robots: RobotsGate | None = None) -> PageResponse:
    """Download one page, retrying timeouts, connection errors, 429 and 5xx.

    Waits ``backoff_base_ms * 2**attempt`` between attempts; at most
    ``max_retries + 1`` attempts in total.
    """
    if clock is None:
        from shelfwatch.clock import SystemClock
        clock = SystemClock()
    if limiter is None:
        limiter = RateLimiter(clock, policy.min_delay_ms)
    if robots is not None and not robots.allowed(request.url):
        raise Disallowed(request.url)
    resp = _dispatch(request.url, policy, transport, clock, limiter)
    return PageResponse(
        request=request,
        status=resp.status,
        body=resp.body,
        declared_encoding=declared_charset(resp.headers),
        fetched_at=clock.now(),
    )


def fetch_all(requests: list[PageRequest], policy: PolitenessPolicy, transport, *, clock,
              limiter: RateLimiter | None = None, robots: RobotsGate | None = None,
              max_concurrent: int = 2) -> list[PageResponse | FetchError]:
    """Fetch every request with bounded parallelism; results keep request order."""
    if limiter is None:
        limiter = RateLimiter(clock, policy.min_delay_ms)

    def one(req):
        try:
            return fetch(req, policy, transport, clock=clock, limiter=limiter, robots=robots)
        except FetchError as exc:
            return exc

    if max_concurrent <= 1 or len(requests) <= 1:
        return [one(r) for r in requests]
    with ThreadPoolExecutor(max_workers=max_concurrent) as pool:
        return list(pool.map(one, requests))


def post_json(url: str, body: bytes, policy: PolitenessPolicy, transport, *, clock,
              limiter: RateLimiter | None = None) -> TransportResponse:
    """POST with the same retry rules as page fetches."""
    return _dispatch(url, policy, transport, clock, limiter, method="POST", body=body,
                     headers={"Content-Type": "application/json"})
