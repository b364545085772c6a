"""Fixture corpora: synthetic listing pages, recordings of live pages, checks.

Synthetic pages use the same markup shapes as the target site's listings:
an anchor card carrying ``title`` and a ``/dept/make/model/id`` href, with a
``date-cat-container`` holding a ``date image`` div for the post time. They
also contain decoys (non-card anchors, near-miss class names) so selectors
are exercised honestly.
"""

from __future__ import annotations

import html
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import quote

from shelfwatch.errors import ShelfwatchError
from shelfwatch.extract import Money, parse_html
from shelfwatch.fetch import (
    DEFAULT_URL_TEMPLATE,
    MANIFEST_NAME,
    FetchError,
    ManifestMalformed,
    ManifestMissing,
    PageRequest,
    PolitenessPolicy,
    RateLimiter,
    fetch,
    read_manifest,
    render_page_url,
    write_manifest,
)
from shelfwatch.watchlist import normalize_name

log = logging.getLogger(__name__)

CARD_CLASS = "adCard_anchor__2R5Cs block px-2 py-2 m:py-4 m:px-4 l-px-6"


class SpecInvalid(ShelfwatchError, ValueError):
    pass


@dataclass(frozen=True)
class FixtureManifest:
    entries: tuple[tuple[str, str], ...] = ()

    @property
    def urls(self) -> list[str]:
        return [url for url, _ in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass
class CorpusSpec:
    """What to synthesize. ``post_times``, ``names`` and ``prices`` are per card."""

    n_cards: int
    post_times: list[str]
    names: list[str]
    prices: list[Money | int | None]
    n_pages: int = 1
    department: str = "vaihtoautot"
    base_url: str = "https://example.test"
    url_template: str = DEFAULT_URL_TEMPLATE
    seed: int = 0
    product_ids: list[str] | None = None

    def validate(self) -> None:
        if self.n_cards < 0:
            raise SpecInvalid("n_cards must be >= 0")
        for name in ("post_times", "names", "prices"):
            if len(getattr(self, name)) != self.n_cards:
                raise SpecInvalid(f"{name} has {len(getattr(self, name))} entries, n_cards is {self.n_cards}")
        if self.product_ids is not None:
            if len(self.product_ids) != self.n_cards:
                raise SpecInvalid("product_ids must have n_cards entries")
            if len(set(self.product_ids)) != self.n_cards:
                raise SpecInvalid("product_ids must be unique")
        if self.n_pages < 1:
            raise SpecInvalid("n_pages must be >= 1")
        for i, name in enumerate(self.names):
            if not name or " ".join(name.split()) != name:
                raise SpecInvalid(f"names[{i}] must be non-empty with single inner spaces")
        for i, text in enumerate(self.post_times):
            if " ".join(text.split()) != text:
                raise SpecInvalid(f"post_times[{i}] must be whitespace-collapsed")

    @classmethod
    def from_dict(cls, data: dict) -> CorpusSpec:
        prices = [
            Money.from_dict(p) if isinstance(p, dict) else p for p in data.get("prices", [])
        ]
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__ and k != "prices"}
        try:
            return cls(prices=prices, **known)
        except TypeError as exc:
            raise SpecInvalid(str(exc)) from exc


def format_price(price: Money) -> str:
    """Render like the site does: ``12 500 €``, ``12 500,50 €``."""
    major, minor = divmod(price.amount_minor, 100)
    number = f"{major:,}".replace(",", " ")
    if minor:
        number += f",{minor:02d}"
    symbol = {"EUR": "€", "USD": "$", "GBP": "£"}.get(price.currency, price.currency)
    return f"{number} {symbol}"


def _slug(text: str, fallback: str) -> str:
    tokens = normalize_name(text)
    return quote("-".join(tokens), safe="-") if tokens else fallback


def _split_pages(n_cards: int, n_pages: int) -> list[range]:
    base, extra = divmod(n_cards, n_pages)
    out, start = [], 0
    for i in range(n_pages):
        size = base + (1 if i < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def _render_card(rng: random.Random, spec: CorpusSpec, i: int, product_id: str) -> str:
    name = spec.names[i]
    tokens = name.split(" ", 1)
    make = _slug(tokens[0], "tuote")
    model = _slug(tokens[1] if len(tokens) > 1 else "", "muu")
    href = f"/{spec.department}/{make}/{model}/{product_id}"
    title = html.escape(name, quote=True)
    price = spec.prices[i]
    if isinstance(price, int):
        price = Money(price, "EUR")
    lines = [
        f'<a tabindex="-1" href="{href}" title="{title}" aria-label="{title}" class="{CARD_CLASS}">',
        '  <div class="date-cat-container">',
    ]
    if spec.post_times[i]:
        img = f'<img src="/kuvat/{product_id}.jpg" alt="">' if rng.random() < 0.8 else ""
        lines.append(f'    <div class="date image">{img}{html.escape(spec.post_times[i], quote=False)}</div>')
    lines.append(f'    <div class="cat">{rng.choice(["Autot", "Henkilöautot", "Vaihtoautot"])}</div>')
    lines.append("  </div>")
    lines.append(f'  <div class="ad-info"><span class="title">{html.escape(name, quote=False)}</span></div>')
    if price is not None:
        lines.append(f'  <div class="price">{html.escape(format_price(price), quote=False)}</div>')
    lines.append("</a>")
    return "\n".join(lines)


def _render_page(rng: random.Random, spec: CorpusSpec, page_no: int, cards: list[str]) -> str:
    decoy = (
        '<div class="adCard_anchor__2R5Cs-legacy"><a href="/ohje" title="Ohje">Ohje</a></div>'
        if rng.random() < 0.5
        else '<a class="adCard_anchor" href="/kirjaudu" title="Kirjaudu">Kirjaudu</a>'
    )
    body = "\n".join(
        f'<div class="list_item" id="item_{page_no}_{k}">\n{card}\n</div>' for k, card in enumerate(cards)
    )
    return (
        "<!DOCTYPE html>\n"
        '<html lang="fi"><head><meta charset="utf-8">'
        f"<title>{html.escape(spec.department)} - sivu {page_no}</title></head>\n"
        f'<body><header><nav><a href="/">Etusivu</a> {decoy}</nav></header>\n'
        f'<main class="list_mode_thumb">\n{body}\n</main>\n'
        '<footer><p>&copy; example</p></footer></body></html>\n'
    )


def render_pages(spec: CorpusSpec) -> list[tuple[str, str, str]]:
    """Render the listing pages of ``spec`` as ``(url, filename, html)`` triples.

    Output depends only on ``spec`` (including its seed).
    """
    spec.validate()
    rng = random.Random(spec.seed)
    if spec.product_ids is not None:
        ids = list(spec.product_ids)
    else:
        ids = [str(n) for n in rng.sample(range(80_000_000, 90_000_000), spec.n_cards)]
    pages = []
    for page_idx, card_range in enumerate(_split_pages(spec.n_cards, spec.n_pages)):
        page_no = page_idx + 1
        cards = [_render_card(rng, spec, i, ids[i]) for i in card_range]
        url = render_page_url(spec.base_url, spec.department, page_no, spec.url_template)
        pages.append((url, f"{spec.department}-p{page_no}.html", _render_page(rng, spec, page_no, cards)))
    return pages


def synthesize(spec: CorpusSpec, out_dir) -> FixtureManifest:
    """Write the pages of ``spec`` plus ``manifest.tsv`` into ``out_dir``."""
    pages = render_pages(spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for _, name, text in pages:
        (out_dir / name).write_text(text, encoding="utf-8")
    entries = tuple((url, name) for url, name, _ in pages)
    write_manifest(out_dir, list(entries))
    return FixtureManifest(entries)


def record(urls: list[str], transport, out_dir, *, policy: PolitenessPolicy | None = None,
           clock=None) -> tuple[FixtureManifest, list[tuple[str, str]]]:
    """Fetch each URL once and store the bytes. Returns (manifest, failures)."""
    if clock is None:
        from shelfwatch.clock import SystemClock
        clock = SystemClock()
    policy = policy or PolitenessPolicy()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    limiter = RateLimiter(clock, policy.min_delay_ms)
    entries, failures = [], []
    for n, url in enumerate(urls, start=1):
        try:
            resp = fetch(PageRequest(url, None), policy, transport, clock=clock, limiter=limiter)
        except FetchError as exc:
            log.warning("not recorded: %s", exc)
            failures.append((url, str(exc)))
            continue
        name = f"page-{n:04d}.html"
        (out_dir / name).write_bytes(resp.body)
        entries.append((url, name))
    write_manifest(out_dir, entries)
    return FixtureManifest(tuple(entries)), failures


def validate_corpus(corpus_dir) -> list[str]:
    """Problems with a corpus: bad manifest, missing or unreadable files."""
    corpus_dir = Path(corpus_dir)
    try:
        entries = read_manifest(corpus_dir)
    except (ManifestMissing, ManifestMalformed) as exc:
        return [str(exc)]
    problems = []
    for url, path in entries.items():
        if not path.is_file():
            problems.append(f"{MANIFEST_NAME}: {url} -> {path.name} does not exist")
            continue
        tree = parse_html(path.read_bytes())
        if tree.root.find("body") is None:
            problems.append(f"{path.name}: did not parse to an HTML document")
    return problems
