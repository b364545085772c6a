"""User watchlist: departments to crawl and product-name patterns to match.

Both lists live in plain UTF-8 text files, one entry per line. Blank lines
and lines starting with ``#`` are ignored.

Departments file::

    vaihtoautot
    vaihtoautot-premium | Premium cars     # optional display name after "|"

Products file::

    toyota yaris          # every token must appear, any order
    "opel astra"          # quoted: tokens must appear consecutively

An empty products file matches every product.
"""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

from shelfwatch.errors import FileMissing, ShelfwatchError


class WatchListError(ShelfwatchError, ValueError):
    pass


class MalformedLine(WatchListError):
    def __init__(self, path, lineno: int, reason: str):
        self.path = path
        self.lineno = lineno
        self.reason = reason
        super().__init__(f"{path}:{lineno}: {reason}")


class DuplicateDepartment(MalformedLine):
    pass


class EmptyWatchList(WatchListError):
    pass


class MatchMode(str, enum.Enum):
    ALL_TOKENS_PRESENT = "all_tokens_present"
    EXACT_PHRASE = "exact_phrase"


_SLUG_BAD = re.compile(r"\s")


@dataclass(frozen=True)
class DepartmentEntry:
    slug: str
    display_name: str | None = None

    def __post_init__(self):
        problem = _slug_problem(self.slug)
        if problem:
            raise WatchListError(problem)


def _slug_problem(slug: str) -> str | None:
    if not slug:
        return "department slug is empty"
    if _SLUG_BAD.search(slug):
        return f"department slug {slug!r} contains whitespace"
    if slug.startswith("/") or slug.endswith("/"):
        return f"department slug {slug!r} has a leading or trailing '/'"
    if "|" in slug or slug.startswith("#"):
        return f"department slug {slug!r} contains a reserved character"
    return None


@dataclass(frozen=True)
class ProductPattern:
    tokens: tuple[str, ...]
    match_mode: MatchMode = MatchMode.ALL_TOKENS_PRESENT

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "match_mode", MatchMode(self.match_mode))
        if not self.tokens:
            raise WatchListError("product pattern has no tokens")
        for token in self.tokens:
            if normalize_name(token) != [token]:
                raise WatchListError(f"pattern token {token!r} is not a normalized name token")

    def matches_tokens(self, tokens: list[str]) -> bool:
        if self.match_mode is MatchMode.ALL_TOKENS_PRESENT:
            present = set(tokens)
            return all(t in present for t in self.tokens)
        n = len(self.tokens)
        return any(
            tuple(tokens[i : i + n]) == self.tokens for i in range(len(tokens) - n + 1)
        )


@dataclass(frozen=True)
class WatchList:
    departments: tuple[DepartmentEntry, ...]
    products: tuple[ProductPattern, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "departments", tuple(self.departments))
        object.__setattr__(self, "products", tuple(self.products))
        if not self.departments:
            raise EmptyWatchList("watchlist has no departments; nothing to crawl")
        seen = set()
        for dept in self.departments:
            key = dept.slug.casefold()
            if key in seen:
                raise WatchListError(f"duplicate department slug {dept.slug!r}")
            seen.add(key)

    @property
    def is_wildcard(self) -> bool:
        return not self.products


def _is_separator(ch: str) -> bool:
    return ch.isspace() or unicodedata.category(ch).startswith("P")


def normalize_name(raw: str) -> list[str]:
    """Lowercase ``raw`` and split it into tokens.

    Whitespace and any Unicode punctuation (``.``, ``,``, ``/``, ``-``, ...)
    separate tokens; runs of separators collapse.

    >>> normalize_name("Opel ASTRA 1.6i 16")
    ['opel', 'astra', '1', '6i', '16']
    """
    text = unicodedata.normalize("NFC", raw).lower()
    tokens: list[str] = []
    current: list[str] = []
    for ch in text:
        if _is_separator(ch):
            if current:
                tokens.append("".join(current))
                current = []
        else:
            current.append(ch)
    if current:
        tokens.append("".join(current))
    return tokens


def record_tokens(record) -> list[str]:
    """Tokens of a record's name and model, concatenated."""
    return normalize_name(f"{record.name or ''} {record.model or ''}")


def matches(watchlist: WatchList, record) -> bool:
    if watchlist.is_wildcard:
        return True
    tokens = record_tokens(record)
    return any(p.matches_tokens(tokens) for p in watchlist.products)


def _content_lines(path: Path):
    if not path.exists():
        raise FileMissing(path)
    text = path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, stripped


def _strip_comment(line: str) -> str:
    idx = line.find(" #")
    return line[:idx].rstrip() if idx >= 0 else line


def parse_department_line(line: str, path="<departments>", lineno: int = 0) -> DepartmentEntry:
    line = _strip_comment(line)
    slug, sep, label = line.partition("|")
    slug = slug.strip()
    problem = _slug_problem(slug)
    if problem:
        raise MalformedLine(path, lineno, problem)
    return DepartmentEntry(slug, label.strip() or None)


def parse_product_line(line: str, path="<products>", lineno: int = 0) -> ProductPattern:
    line = _strip_comment(line)
    mode = MatchMode.ALL_TOKENS_PRESENT
    if len(line) >= 2 and line[0] == '"' and line[-1] == '"':
        mode = MatchMode.EXACT_PHRASE
        line = line[1:-1]
    tokens = normalize_name(line)
    if not tokens:
        raise MalformedLine(path, lineno, "product pattern has no name tokens")
    return ProductPattern(tuple(tokens), mode)


def load_watchlist(departments_path, products_path) -> WatchList:
    departments_path = Path(departments_path)
    products_path = Path(products_path)
    departments: list[DepartmentEntry] = []
    seen: dict[str, int] = {}
    for lineno, line in _content_lines(departments_path):
        entry = parse_department_line(line, departments_path, lineno)
        key = entry.slug.casefold()
        if key in seen:
            raise DuplicateDepartment(
                departments_path, lineno,
                f"duplicate department slug {entry.slug!r} (first on line {seen[key]})",
            )
        seen[key] = lineno
        departments.append(entry)
    products = [
        parse_product_line(line, products_path, lineno)
        for lineno, line in _content_lines(products_path)
    ]
    if not departments:
        raise EmptyWatchList(f"{departments_path}: no departments listed")
    return WatchList(tuple(departments), tuple(products))


def format_watchlist(watchlist: WatchList) -> tuple[str, str]:
    """Render a watchlist back into (departments text, products text)."""
    dept_lines = [
        f"{d.slug} | {d.display_name}" if d.display_name else d.slug
        for d in watchlist.departments
    ]
    product_lines = []
    for p in watchlist.products:
        text = " ".join(p.tokens)
        product_lines.append(f'"{text}"' if p.match_mode is MatchMode.EXACT_PHRASE else text)
    return "\n".join(dept_lines) + "\n", "\n".join(product_lines) + ("\n" if product_lines else "")


def save_watchlist(watchlist: WatchList, departments_path, products_path) -> None:
    depts, products = format_watchlist(watchlist)
    Path(departments_path).write_text(depts, encoding="utf-8")
    Path(products_path).write_text(products, encoding="utf-8")
