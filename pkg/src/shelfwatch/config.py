"""Run configuration: one JSON file plus command-line overrides.

Relative paths inside the file are resolved against the file's directory.
Every problem is reported as ``section.field: message`` so a bad config can
be fixed in one pass.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from shelfwatch.errors import ShelfwatchError
from shelfwatch.extract import DEFAULT_RULES, ExtractionConfigError, ExtractionRuleSet, TargetField
from shelfwatch.fetch import DEFAULT_URL_TEMPLATE, PolicyInvalid, PolitenessPolicy, is_absolute
from shelfwatch.temporal import BUILTIN_LOCALES, LocaleTable, RecencyWindow, SiteClock, TemporalConfigError

CONFIG_ENV = "SHELFWATCH_CONFIG"


class ConfigInvalid(ShelfwatchError, ValueError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.diagnostics))


@dataclass(frozen=True)
class RunConfig:
    base_url: str
    departments_path: Path
    products_path: Path
    store_path: Path
    url_template: str = DEFAULT_URL_TEMPLATE
    extraction: ExtractionRuleSet = DEFAULT_RULES
    locale: LocaleTable = BUILTIN_LOCALES["fi"]
    site_clock: SiteClock = SiteClock(120, 120)
    recency: RecencyWindow = RecencyWindow()
    politeness: PolitenessPolicy = field(default_factory=PolitenessPolicy)
    max_concurrent_fetches: int = 2
    sink: str = "jsonl"
    transport_mode: str = "fixture"
    fixtures_dir: Path | None = None
    live: bool = False

    def with_overrides(self, **changes) -> RunConfig:
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


SECTIONS = {
    "base_url", "url_template", "watchlist", "extraction", "locale", "site_clock",
    "recency", "politeness", "max_concurrent_fetches", "store", "sink", "transport",
}


def sink_problem(sink: str) -> str | None:
    if sink in ("text", "jsonl"):
        return None
    if sink.startswith("webhook:"):
        if is_absolute(sink[len("webhook:"):]):
            return None
        return "webhook sink needs an absolute http(s) URL"
    return "must be text, jsonl or webhook:URL"


def parse_config(data, base_dir: Path) -> tuple[RunConfig | None, list[str]]:
    """Build a RunConfig from decoded JSON. Returns (config or None, diagnostics)."""
    diags: list[str] = []
    if not isinstance(data, dict):
        return None, ["config: top level must be a JSON object"]

    def path_of(value, name):
        if not isinstance(value, str) or not value:
            diags.append(f"{name}: must be a non-empty path string")
            return None
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    for key in sorted(set(data) - SECTIONS):
        diags.append(f"{key}: unknown section")

    base_url = data.get("base_url")
    if not isinstance(base_url, str) or not is_absolute(base_url):
        diags.append("base_url: must be an absolute http(s) URL")

    template = data.get("url_template", DEFAULT_URL_TEMPLATE)
    if not isinstance(template, str) or "{slug}" not in template:
        diags.append("url_template: must be a string containing {slug}")
    else:
        try:
            template.format(base="b", slug="s", page=1)
        except (KeyError, IndexError, ValueError) as exc:
            diags.append(f"url_template: bad placeholder ({exc}); use {{base}}, {{slug}}, {{page}}")

    wl = data.get("watchlist")
    departments = products = None
    if not isinstance(wl, dict):
        diags.append("watchlist: section missing (needs departments and products paths)")
    else:
        departments = path_of(wl.get("departments"), "watchlist.departments")
        products = path_of(wl.get("products"), "watchlist.products")

    extraction = DEFAULT_RULES
    if "extraction" in data:
        extraction = _parse_extraction(data["extraction"], diags)

    locale = BUILTIN_LOCALES["fi"]
    loc = data.get("locale", "fi")
    if isinstance(loc, str):
        if loc not in BUILTIN_LOCALES:
            diags.append(f"locale: unknown built-in locale {loc!r} (have {sorted(BUILTIN_LOCALES)})")
        else:
            locale = BUILTIN_LOCALES[loc]
    elif isinstance(loc, dict):
        try:
            locale = LocaleTable(
                today_tokens=tuple(loc.get("today_tokens", ())),
                yesterday_tokens=tuple(loc.get("yesterday_tokens", ())),
                month_names=dict(loc.get("month_names", {})),
                time_separators=loc.get("time_separators", ":."),
            )
        except (TemporalConfigError, TypeError, ValueError) as exc:
            diags.append(f"locale: {exc}")
    else:
        diags.append("locale: must be a built-in name or a table object")

    site_clock = SiteClock(120, 120)
    sc = data.get("site_clock", {})
    if not isinstance(sc, dict):
        diags.append("site_clock: must be an object")
    else:
        site_off = sc.get("site_utc_offset_min", 120)
        local_off = sc.get("local_utc_offset_min", site_off)
        ok = True
        for name, value in (("site_utc_offset_min", site_off), ("local_utc_offset_min", local_off)):
            if not isinstance(value, int) or isinstance(value, bool) or not -840 <= value <= 840:
                diags.append(f"site_clock.{name}: must be an integer in [-840, 840]")
                ok = False
        if ok:
            site_clock = SiteClock(site_off, local_off)

    recency = RecencyWindow()
    rc = data.get("recency", {})
    duration = rc.get("duration_min", 1440) if isinstance(rc, dict) else None
    if not isinstance(duration, int) or isinstance(duration, bool) or duration < 0:
        diags.append("recency.duration_min: must be an integer >= 0")
    else:
        recency = RecencyWindow(duration)

    politeness = PolitenessPolicy()
    pol = data.get("politeness", {})
    if not isinstance(pol, dict):
        diags.append("politeness: must be an object")
    else:
        known = set(PolitenessPolicy.__dataclass_fields__)
        for key in sorted(set(pol) - known):
            diags.append(f"politeness.{key}: unknown field")
        try:
            politeness = PolitenessPolicy(**{k: v for k, v in pol.items() if k in known})
        except PolicyInvalid as exc:
            diags.extend(f"politeness.{name}: {msg}" for name, msg in exc.problems)

    concurrency = data.get("max_concurrent_fetches", 2)
    if not isinstance(concurrency, int) or isinstance(concurrency, bool) or concurrency < 1:
        diags.append("max_concurrent_fetches: must be an integer >= 1")

    store = path_of(data.get("store"), "store")

    sink = data.get("sink", "jsonl")
    problem = sink_problem(sink) if isinstance(sink, str) else "must be a string"
    if problem:
        diags.append(f"sink: {problem}")

    mode, fixtures = "fixture", None
    tr = data.get("transport", {"mode": "fixture"})
    if not isinstance(tr, dict):
        diags.append("transport: must be an object")
    else:
        mode = tr.get("mode", "fixture")
        if mode == "fixture":
            if "dir" in tr:
                fixtures = path_of(tr["dir"], "transport.dir")
        elif mode != "live":
            diags.append("transport.mode: must be 'fixture' or 'live'")

    if diags:
        return None, diags
    return RunConfig(
        base_url=base_url,
        url_template=template,
        departments_path=departments,
        products_path=products,
        store_path=store,
        extraction=extraction,
        locale=locale,
        site_clock=site_clock,
        recency=recency,
        politeness=politeness,
        max_concurrent_fetches=concurrency,
        sink=sink,
        transport_mode=mode,
        fixtures_dir=fixtures,
    ), []


def _parse_extraction(ex, diags: list[str]) -> ExtractionRuleSet:
    if not isinstance(ex, dict):
        diags.append("extraction: must be an object")
        return DEFAULT_RULES
    rules = ex.get("field_rules")
    if not isinstance(rules, list):
        diags.append("extraction.field_rules: must be a list")
        return DEFAULT_RULES
    if not any(isinstance(r, dict) and r.get("target_field") == TargetField.HREF.value for r in rules):
        diags.append("extraction.field_rules.href: missing; every rule set needs an href rule")
        return DEFAULT_RULES
    if "card_pattern" not in ex:
        diags.append("extraction.card_pattern: missing")
        return DEFAULT_RULES
    try:
        return ExtractionRuleSet.from_dict(ex)
    except ExtractionConfigError as exc:
        diags.append(f"extraction: {exc}")
    except (KeyError, TypeError, ValueError) as exc:
        diags.append(f"extraction: malformed ({type(exc).__name__}: {exc})")
    return DEFAULT_RULES


def resolve_config_path(path=None) -> Path | None:
    if path:
        return Path(path)
    env = os.environ.get(CONFIG_ENV)
    return Path(env) if env else None


def read_config(path) -> tuple[RunConfig | None, list[str]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        return None, [f"config: file not found: {path}"]
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, [f"config: not valid JSON ({exc})"]
    return parse_config(data, path.parent)


def load_config(path) -> RunConfig:
    config, diags = read_config(path)
    if diags:
        raise ConfigInvalid(diags)
    return config


def runtime_problems(config: RunConfig) -> list[str]:
    """Checks that depend on flags and the filesystem, not just the file."""
    diags = []
    if config.transport_mode == "fixture" and config.fixtures_dir is None:
        diags.append("transport.dir: fixture mode needs a corpus directory (--fixtures DIR)")
    if config.transport_mode == "live" and not config.live:
        diags.append("transport.mode: live mode requires the explicit --live flag")
    if config.sink.startswith("webhook:") and not config.live:
        diags.append("sink: webhook delivery is network I/O and requires --live")
    problem = sink_problem(config.sink)
    if problem:
        diags.append(f"sink: {problem}")
    return diags
