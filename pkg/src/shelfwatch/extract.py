"""HTML parsing and declarative extraction of product cards.

A listing page is parsed with an HTML5 (error-recovering) parser into an
:mod:`xml.etree` tree. An :class:`ExtractionRuleSet` says which nodes are
product cards (``card_pattern``) and where each record field lives inside a
card (``field_rules``). Rule sets are plain data, so they round-trip through
the JSON run config.
"""

from __future__ import annotations

import codecs
import enum
import logging
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from typing import Iterator
from urllib.parse import unquote, urljoin, urlsplit
from xml.etree.ElementTree import Element

import html5lib

from shelfwatch.errors import ShelfwatchError

log = logging.getLogger(__name__)


class ExtractionConfigError(ShelfwatchError, ValueError):
    pass


class UnresolvableHref(ShelfwatchError, ValueError):
    pass


class HrefShapeMismatch(ShelfwatchError, ValueError):
    def __init__(self, href: str, expected: int, got: int):
        self.href = href
        super().__init__(f"href {href!r} has {got} path segments, schema needs {expected}")


# ---------------------------------------------------------------- parsing

_HTML_SPACE = re.compile(r"[ \t\n\f\r]+")
_META_CHARSET = re.compile(rb"<meta[^>]*?charset\s*=\s*[\"']?\s*([A-Za-z0-9._:-]+)", re.I)
_BOMS = [
    (codecs.BOM_UTF8, "utf-8"),
    (codecs.BOM_UTF16_LE, "utf-16-le"),
    (codecs.BOM_UTF16_BE, "utf-16-be"),
]


@dataclass(frozen=True)
class DocumentTree:
    root: Element
    encoding: str


# Browsers decode these labels as their Windows supersets.
_WHATWG_ALIASES = {"ascii": "cp1252", "iso8859-1": "cp1252", "iso8859-9": "cp1254", "tis-620": "cp874"}


def _codec_name(label: str | None) -> str | None:
    if not label:
        return None
    try:
        name = codecs.lookup(label.strip().strip("\"'")).name
    except LookupError:
        return None
    return _WHATWG_ALIASES.get(name, name)


def sniff_encoding(body: bytes, declared_encoding: str | None = None) -> str:
    """HTTP-declared charset, else BOM, else ``<meta charset>``, else UTF-8."""
    declared = _codec_name(declared_encoding)
    if declared:
        return declared
    for bom, name in _BOMS:
        if body.startswith(bom):
            return name
    m = _META_CHARSET.search(body[:1024])
    if m:
        sniffed = _codec_name(m.group(1).decode("ascii", "replace"))
        # a meta tag we just read as ASCII cannot truthfully say UTF-16
        if sniffed and not sniffed.startswith("utf-16"):
            return sniffed
    return "utf-8"


def parse_html(body: bytes, declared_encoding: str | None = None) -> DocumentTree:
    encoding = sniff_encoding(body, declared_encoding)
    text = body.decode(encoding, errors="replace")
    if text.startswith("\ufeff"):
        text = text[1:]
    root = html5lib.parse(text, treebuilder="etree", namespaceHTMLElements=False)
    return DocumentTree(root, encoding)


# ---------------------------------------------------------------- selection


def class_tokens(value: str | None) -> list[str]:
    return [t for t in _HTML_SPACE.split(value or "") if t]


@dataclass(frozen=True)
class NodePattern:
    tag: str | None = None
    class_contains: tuple[str, ...] | None = None
    attr_equals: dict[str, str] | None = None
    attr_present: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.tag is not None:
            object.__setattr__(self, "tag", self.tag.lower())
        for name in ("class_contains", "attr_present"):
            value = getattr(self, name)
            if value is not None:
                if isinstance(value, str):
                    raise ExtractionConfigError(f"{name} must be a list, not a string")
                object.__setattr__(self, name, tuple(value))
        if self.attr_equals is not None:
            object.__setattr__(self, "attr_equals", dict(self.attr_equals))
        if not (self.tag or self.class_contains or self.attr_equals or self.attr_present):
            raise ExtractionConfigError("node pattern needs at least one constraint")
        for token in self.class_contains or ():
            if not token or _HTML_SPACE.search(token):
                raise ExtractionConfigError(f"class token {token!r} must be a single non-empty token")

    def matches(self, node: Element) -> bool:
        if not isinstance(node.tag, str):
            return False
        if self.tag is not None and node.tag.lower() != self.tag:
            return False
        if self.class_contains:
            have = set(class_tokens(node.get("class")))
            if not all(t in have for t in self.class_contains):
                return False
        if self.attr_equals:
            for key, value in self.attr_equals.items():
                if node.get(key) != value:
                    return False
        if self.attr_present:
            for key in self.attr_present:
                if node.get(key) is None:
                    return False
        return True

    def to_dict(self) -> dict:
        out = {}
        if self.tag is not None:
            out["tag"] = self.tag
        if self.class_contains is not None:
            out["class_contains"] = list(self.class_contains)
        if self.attr_equals is not None:
            out["attr_equals"] = dict(self.attr_equals)
        if self.attr_present is not None:
            out["attr_present"] = list(self.attr_present)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> NodePattern:
        unknown = set(data) - {"tag", "class_contains", "attr_equals", "attr_present"}
        if unknown:
            raise ExtractionConfigError(f"unknown node pattern keys: {sorted(unknown)}")
        return cls(**data)


def _descendants(tree_or_node) -> Iterator[Element]:
    if isinstance(tree_or_node, DocumentTree):
        yield from tree_or_node.root.iter()
        return
    it = tree_or_node.iter()
    next(it)  # self
    yield from it


def select_nodes(tree_or_node, pattern: NodePattern) -> list[Element]:
    """All descendants matching ``pattern``, in document order (like ``findAll``)."""
    return [n for n in _descendants(tree_or_node) if pattern.matches(n)]


def collapse_ws(text: str) -> str:
    return " ".join(text.split())


def _texts(node: Element) -> Iterator[str]:
    if node.text and isinstance(node.tag, str):
        yield node.text
    for child in node:
        if isinstance(child.tag, str):  # comments and PIs carry no text
            yield from _texts(child)
        if child.tail:
            yield child.tail


def text_of(node) -> str:
    if isinstance(node, DocumentTree):
        node = node.root
    return collapse_ws("".join(_texts(node)))


# ---------------------------------------------------------------- urls


def resolve_url(base: str, href: str) -> str:
    parts = urlsplit(base)
    if not parts.scheme or not parts.netloc:
        raise UnresolvableHref(f"base URL {base!r} is not absolute")
    href = (href or "").strip()
    if not href:
        raise UnresolvableHref("empty href")
    try:
        resolved = urljoin(base, href)
        out = urlsplit(resolved)
    except ValueError as exc:
        raise UnresolvableHref(f"cannot resolve {href!r}: {exc}") from exc
    if out.scheme not in ("http", "https") or not out.netloc:
        raise UnresolvableHref(f"href {href!r} does not resolve to an http(s) URL")
    return resolved


class HrefRole(str, enum.Enum):
    DEPARTMENT = "department"
    PRODUCT = "product"
    MODEL = "model"
    PRODUCT_ID = "product_id"
    IGNORE = "ignore"


_PRODUCT_ID = re.compile(r"[0-9A-Za-z]+")


@dataclass(frozen=True)
class HrefSchema:
    roles: tuple[HrefRole, ...] = (
        HrefRole.DEPARTMENT, HrefRole.PRODUCT, HrefRole.MODEL, HrefRole.PRODUCT_ID,
    )

    def __post_init__(self):
        roles = tuple(HrefRole(r) for r in self.roles)
        object.__setattr__(self, "roles", roles)
        if not roles or roles[-1] is not HrefRole.PRODUCT_ID:
            raise ExtractionConfigError("href schema must end with product_id")
        named = [r for r in roles if r is not HrefRole.IGNORE]
        if len(named) != len(set(named)):
            raise ExtractionConfigError("href schema repeats a role")

    def to_dict(self) -> dict:
        return {"roles": [r.value for r in self.roles]}


@dataclass(frozen=True)
class HrefParts:
    department_slug: str | None
    product: str | None
    model: str | None
    product_id: str


def href_segments(href: str) -> list[str]:
    path = urlsplit(href).path
    return [unquote(s) for s in path.split("/") if s]


def parse_href(href: str, schema: HrefSchema = HrefSchema()) -> HrefParts:
    """Bind the trailing path segments of ``href`` to the schema roles.

    >>> parse_href("/vaihtoautot/toyota/yaris/84905081")
    HrefParts(department_slug='vaihtoautot', product='toyota', model='yaris', product_id='84905081')
    """
    segments = href_segments(href)
    n = len(schema.roles)
    if len(segments) < n:
        raise HrefShapeMismatch(href, n, len(segments))
    bound = dict(zip(schema.roles, segments[-n:]))
    product_id = bound[HrefRole.PRODUCT_ID]
    if not _PRODUCT_ID.fullmatch(product_id):
        raise UnresolvableHref(f"href {href!r} has an invalid product id {product_id!r}")
    return HrefParts(
        bound.get(HrefRole.DEPARTMENT),
        bound.get(HrefRole.PRODUCT),
        bound.get(HrefRole.MODEL),
        product_id,
    )


def salvage_product_id(href: str) -> str | None:
    segments = href_segments(href)
    if segments and _PRODUCT_ID.fullmatch(segments[-1]):
        return segments[-1]
    return None


# ---------------------------------------------------------------- prices


@dataclass(frozen=True, order=True)
class Money:
    amount_minor: int
    currency: str

    def __post_init__(self):
        if self.amount_minor < 0:
            raise ValueError("amount_minor must be >= 0")

    def to_dict(self) -> dict:
        return {"amount_minor": self.amount_minor, "currency": self.currency}

    @classmethod
    def from_dict(cls, data: dict | None) -> Money | None:
        if data is None:
            return None
        return cls(int(data["amount_minor"]), str(data["currency"]))

    def __str__(self) -> str:
        major, minor = divmod(self.amount_minor, 100)
        return f"{major:,}".replace(",", " ") + f",{minor:02d} {self.currency}"


CURRENCY_SYMBOLS = {"€": "EUR", "$": "USD", "£": "GBP"}

_CURRENCY = r"(?:[€$£]|[A-Za-z]{3})"
_AMOUNT = r"(?P<int>[0-9]{1,3}(?:[\s.,][0-9]{3})+|[0-9]+)(?:[.,](?P<dec>[0-9]{1,2}))?"
_PRICE = re.compile(
    rf"(?:(?P<pre>{_CURRENCY})\s?)?{_AMOUNT}(?:\s?(?P<post>{_CURRENCY}))?"
)


def parse_price(raw: str, default_currency: str | None = None) -> Money | None:
    """Parse a displayed price into minor units.

    Thousands groups may be separated by space, NBSP, ``.`` or ``,``; one or
    two trailing digits after ``.`` or ``,`` are the decimal part. A currency
    symbol or three-letter code may precede or follow the number. Returns
    ``None`` for anything that does not fit, including a price with no
    currency when ``default_currency`` is unset.

    >>> parse_price("12 500 €")
    Money(amount_minor=1250000, currency='EUR')
    """
    if not isinstance(raw, str):
        return None
    m = _PRICE.fullmatch(raw.strip())
    if not m:
        return None
    pre, post = m["pre"], m["post"]
    if pre and post:
        return None
    symbol = pre or post
    if symbol:
        currency = CURRENCY_SYMBOLS.get(symbol) or symbol.upper()
    elif default_currency:
        currency = default_currency
    else:
        return None
    digits = re.sub(r"[^0-9]", "", m["int"])
    dec = (m["dec"] or "").ljust(2, "0")
    try:
        amount = int(digits) * 100 + int(dec)
    except ValueError:  # absurdly long digit strings
        return None
    return Money(amount, currency)


# ---------------------------------------------------------------- rules


class TargetField(str, enum.Enum):
    NAME = "name"
    MODEL = "model"
    DEPARTMENT = "department"
    PRODUCT_ID = "product_id"
    HREF = "href"
    IMAGE_URL = "image_url"
    PRICE_TEXT = "price_text"
    POSTED_TEXT = "posted_text"


TEXT_CONTENT = "text_content"


@dataclass(frozen=True)
class FieldRule:
    """Where one record field lives inside a card.

    ``source`` is ``"text_content"`` or the name of an attribute to read.
    ``within`` narrows to the first matching descendant; ``None`` means the
    card node itself.
    """

    target_field: TargetField
    source: str = TEXT_CONTENT
    within: NodePattern | None = None
    required: bool = False

    def __post_init__(self):
        object.__setattr__(self, "target_field", TargetField(self.target_field))
        if not self.source:
            raise ExtractionConfigError("field rule source must be text_content or an attribute name")

    def value(self, card: Element) -> str | None:
        scope = card
        if self.within is not None:
            found = select_nodes(card, self.within)
            if not found:
                return None
            scope = found[0]
        if self.source == TEXT_CONTENT:
            raw = text_of(scope)
        else:
            raw = scope.get(self.source)
            if raw is None:
                return None
            raw = collapse_ws(raw)
        return raw or None

    def to_dict(self) -> dict:
        return {
            "target_field": self.target_field.value,
            "within": self.within.to_dict() if self.within else None,
            "source": self.source if self.source == TEXT_CONTENT else {"attribute": self.source},
            "required": self.required,
        }

    @classmethod
    def from_dict(cls, data: dict) -> FieldRule:
        source = data.get("source", TEXT_CONTENT)
        if isinstance(source, dict):
            source = source.get("attribute")
        elif source != TEXT_CONTENT:
            raise ExtractionConfigError(f"unknown field source {source!r}")
        within = data.get("within")
        return cls(
            target_field=data["target_field"],
            source=source,
            within=NodePattern.from_dict(within) if within else None,
            required=bool(data.get("required", False)),
        )


@dataclass(frozen=True)
class ExtractionRuleSet:
    card_pattern: NodePattern
    field_rules: tuple[FieldRule, ...]
    href_parse: HrefSchema = HrefSchema()
    default_currency: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "field_rules", tuple(self.field_rules))
        seen = Counter(r.target_field for r in self.field_rules)
        dupes = [f.value for f, n in seen.items() if n > 1]
        if dupes:
            raise ExtractionConfigError(f"fields with more than one rule: {dupes}")
        if TargetField.HREF not in seen:
            raise ExtractionConfigError("rule set has no href rule; product identity comes from it")

    def rule_for(self, target: TargetField) -> FieldRule | None:
        for rule in self.field_rules:
            if rule.target_field is target:
                return rule
        return None

    def to_dict(self) -> dict:
        return {
            "card_pattern": self.card_pattern.to_dict(),
            "field_rules": [r.to_dict() for r in self.field_rules],
            "href_parse": self.href_parse.to_dict(),
            "default_currency": self.default_currency,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ExtractionRuleSet:
        href = data.get("href_parse")
        return cls(
            card_pattern=NodePattern.from_dict(data["card_pattern"]),
            field_rules=tuple(FieldRule.from_dict(r) for r in data["field_rules"]),
            href_parse=HrefSchema(tuple(href["roles"])) if href else HrefSchema(),
            default_currency=data.get("default_currency"),
        )


# Matches the anchor cards seen on the target site, with the nested
# date container holding the post time and thumbnail.
DEFAULT_RULES = ExtractionRuleSet(
    card_pattern=NodePattern(tag="a", class_contains=("adCard_anchor__2R5Cs",)),
    field_rules=(
        FieldRule(TargetField.NAME, "title", required=True),
        FieldRule(TargetField.HREF, "href", required=True),
        FieldRule(TargetField.POSTED_TEXT, TEXT_CONTENT,
                  within=NodePattern(tag="div", class_contains=("date", "image"))),
        FieldRule(TargetField.IMAGE_URL, "src", within=NodePattern(tag="img", attr_present=("src",))),
        FieldRule(TargetField.PRICE_TEXT, TEXT_CONTENT,
                  within=NodePattern(tag="div", class_contains=("price",))),
    ),
)


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class ProductRecord:
    product_id: str
    name: str
    department_slug: str
    url: str
    source_page: str
    scraped_at: datetime
    model: str | None = None
    image_url: str | None = None
    price: Money | None = None
    price_text: str | None = None
    posted_text: str = ""
    posted_at: datetime | None = None

    def __post_init__(self):
        if not self.product_id:
            raise ValueError("product_id must be non-empty")
        parts = urlsplit(self.url)
        if not parts.scheme or not parts.netloc:
            raise ValueError(f"record url {self.url!r} is not absolute")

    def with_posted_at(self, posted_at: datetime | None) -> ProductRecord:
        return replace(self, posted_at=posted_at)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["price"] = self.price.to_dict() if self.price else None
        out["scraped_at"] = self.scraped_at.isoformat()
        out["posted_at"] = self.posted_at.isoformat() if self.posted_at else None
        return out


@dataclass
class ExtractStats:
    cards_seen: int = 0
    cards_dropped: int = 0
    href_mismatches: int = 0
    field_misses: Counter = field(default_factory=Counter)

    def merge(self, other: ExtractStats) -> None:
        self.cards_seen += other.cards_seen
        self.cards_dropped += other.cards_dropped
        self.href_mismatches += other.href_mismatches
        self.field_misses.update(other.field_misses)


def _card_to_record(card, rules, page_url, department, scraped_at, stats) -> ProductRecord | None:
    values: dict[TargetField, str | None] = {}
    for rule in rules.field_rules:
        value = rule.value(card)
        if value is None:
            stats.field_misses[rule.target_field.value] += 1
            if rule.required or rule.target_field is TargetField.HREF:
                log.debug("dropping card on %s: missing %s", page_url, rule.target_field.value)
                return None
        values[rule.target_field] = value

    try:
        url = resolve_url(page_url, values[TargetField.HREF])
    except UnresolvableHref as exc:
        log.debug("dropping card on %s: %s", page_url, exc)
        return None

    try:
        parts = parse_href(url, rules.href_parse)
    except HrefShapeMismatch:
        stats.href_mismatches += 1
        salvaged = salvage_product_id(url)
        if salvaged is None:
            return None
        parts = HrefParts(None, None, None, salvaged)
    except UnresolvableHref:
        return None

    product_id = values.get(TargetField.PRODUCT_ID) or parts.product_id
    department_slug = (
        values.get(TargetField.DEPARTMENT) or parts.department_slug or getattr(department, "slug", "")
    )
    image_url = values.get(TargetField.IMAGE_URL)
    if image_url is not None:
        try:
            image_url = resolve_url(page_url, image_url)
        except UnresolvableHref:
            stats.field_misses["image_url"] += 1
            image_url = None
    price_text = values.get(TargetField.PRICE_TEXT)
    price = parse_price(price_text, rules.default_currency) if price_text else None

    return ProductRecord(
        product_id=product_id,
        name=values.get(TargetField.NAME) or "",
        model=values.get(TargetField.MODEL) or parts.model,
        department_slug=department_slug,
        url=url,
        image_url=image_url,
        price=price,
        price_text=price_text,
        posted_text=values.get(TargetField.POSTED_TEXT) or "",
        source_page=page_url,
        scraped_at=scraped_at,
    )


def extract_records(
    tree: DocumentTree,
    rules: ExtractionRuleSet,
    page_url: str,
    department=None,
    clock=None,
    stats: ExtractStats | None = None,
) -> list[ProductRecord]:
    """One record per card, in document order. Bad cards are counted and skipped."""
    if stats is None:
        stats = ExtractStats()
    if clock is None:
        from shelfwatch.clock import SystemClock
        clock = SystemClock()
    scraped_at = clock.now()
    records = []
    for card in select_nodes(tree, rules.card_pattern):
        stats.cards_seen += 1
        record = _card_to_record(card, rules, page_url, department, scraped_at, stats)
        if record is None:
            stats.cards_dropped += 1
        else:
            records.append(record)
    return records
