"""Post-time parsing, site/local time conversion and recency checks.

Site-local and user-local timestamps are naive :class:`datetime` values;
the frame they belong to is carried by the caller, together with the
:class:`SiteClock` offsets. UTC instants are timezone-aware.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone

from shelfwatch.errors import ShelfwatchError

MAX_OFFSET_MIN = 14 * 60


class TemporalConfigError(ShelfwatchError, ValueError):
    pass


def _fold(text: str) -> str:
    return unicodedata.normalize("NFC", text).casefold()


@dataclass(frozen=True)
class LocaleTable:
    today_tokens: tuple[str, ...]
    yesterday_tokens: tuple[str, ...]
    month_names: dict[str, int] = field(default_factory=dict)
    time_separators: str = ":."

    def __post_init__(self):
        today = tuple(_fold(t) for t in self.today_tokens)
        yesterday = tuple(_fold(t) for t in self.yesterday_tokens)
        months = {_fold(k): int(v) for k, v in self.month_names.items()}
        object.__setattr__(self, "today_tokens", today)
        object.__setattr__(self, "yesterday_tokens", yesterday)
        object.__setattr__(self, "month_names", months)
        overlap = set(today) & set(yesterday)
        if overlap:
            raise TemporalConfigError(f"tokens listed as both today and yesterday: {sorted(overlap)}")
        if not today:
            raise TemporalConfigError("locale needs at least one 'today' token")
        for name, month in months.items():
            if not 1 <= month <= 12:
                raise TemporalConfigError(f"month {name!r} maps to {month}, outside 1..12")
        if not self.time_separators or any(c.isalnum() or c.isspace() for c in self.time_separators):
            raise TemporalConfigError("time_separators must be punctuation characters")

    def to_dict(self) -> dict:
        return {
            "today_tokens": list(self.today_tokens),
            "yesterday_tokens": list(self.yesterday_tokens),
            "month_names": dict(self.month_names),
            "time_separators": self.time_separators,
        }


_FI_MONTHS = [
    ("tammikuu", "tammi"), ("helmikuu", "helmi"), ("maaliskuu", "maalis"),
    ("huhtikuu", "huhti"), ("toukokuu", "touko"), ("kesäkuu", "kesä"),
    ("heinäkuu", "heinä"), ("elokuu", "elo"), ("syyskuu", "syys"),
    ("lokakuu", "loka"), ("marraskuu", "marras"), ("joulukuu", "joulu"),
]

# The site has been seen spelled both ways; accept the common misspelling too.
FI_LOCALE = LocaleTable(
    today_tokens=("tänään", "täänän"),
    yesterday_tokens=("eilen",),
    month_names={
        name: i
        for i, (full, short) in enumerate(_FI_MONTHS, start=1)
        for name in (full, full + "ta", short)
    },
)

_EN_MONTHS = ["january", "february", "march", "april", "may", "june", "july",
              "august", "september", "october", "november", "december"]

EN_LOCALE = LocaleTable(
    today_tokens=("today",),
    yesterday_tokens=("yesterday",),
    month_names={
        name: i
        for i, full in enumerate(_EN_MONTHS, start=1)
        for name in {full, full[:3]}
    },
)

BUILTIN_LOCALES = {"fi": FI_LOCALE, "en": EN_LOCALE}


@dataclass(frozen=True)
class SiteClock:
    site_utc_offset_min: int
    local_utc_offset_min: int

    def __post_init__(self):
        for name in ("site_utc_offset_min", "local_utc_offset_min"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise TemporalConfigError(f"{name} must be an integer number of minutes")
            if not -MAX_OFFSET_MIN <= value <= MAX_OFFSET_MIN:
                raise TemporalConfigError(f"{name}={value} outside [-840, 840]")

    @property
    def site_tz(self) -> timezone:
        return timezone(timedelta(minutes=self.site_utc_offset_min))

    def swapped(self) -> SiteClock:
        return SiteClock(self.local_utc_offset_min, self.site_utc_offset_min)

    def site_now(self, utc_now: datetime) -> datetime:
        """Express an aware instant as a naive site-local timestamp."""
        return utc_now.astimezone(self.site_tz).replace(tzinfo=None)

    def site_aware(self, t_site: datetime) -> datetime:
        return t_site.replace(tzinfo=self.site_tz)


@dataclass(frozen=True)
class RecencyWindow:
    duration_min: int = 1440

    def __post_init__(self):
        if not isinstance(self.duration_min, int) or self.duration_min < 0:
            raise TemporalConfigError("recency window duration_min must be an integer >= 0")


def _time_re(locale: LocaleTable) -> str:
    seps = re.escape(locale.time_separators)
    return rf"(?P<hh>\d{{1,2}})[{seps}](?P<mm>\d{{2}})"


def _clock_time(match: re.Match) -> time | None:
    hh, mm = int(match["hh"]), int(match["mm"])
    if hh > 23 or mm > 59:
        return None
    return time(hh, mm)


def parse_post_time(raw: str, locale: LocaleTable, reference_now_site: datetime) -> datetime | None:
    """Resolve a listing's post-time text to a site-local timestamp.

    Recognized forms (case-insensitive)::

        <today> HH:MM           tänään 17:39
        <yesterday> HH:MM       eilen 23:59
        D Month [HH:MM]         14 kesä 12:30   (year inferred, never in the future)
        DD.MM.YYYY [HH:MM]      03.06.2021 08:15

    Anything else yields ``None``.
    """
    text = " ".join(_fold(raw).split())
    if not text:
        return None
    time_re = _time_re(locale)
    ref_date = reference_now_site.date()

    m = re.fullmatch(rf"(?P<word>\S+) (?:klo )?{time_re}", text)
    if m:
        word = m["word"]
        if word in locale.today_tokens:
            day = ref_date
        elif word in locale.yesterday_tokens:
            day = ref_date - timedelta(days=1)
        else:
            day = None
        if day is not None:
            t = _clock_time(m)
            return None if t is None else datetime.combine(day, t)

    m = re.fullmatch(rf"(?P<d>\d{{1,2}})\.(?P<mo>\d{{1,2}})\.(?P<y>\d{{4}})(?: (?:klo )?{time_re})?", text)
    if m:
        return _combine(int(m["y"]), int(m["mo"]), int(m["d"]), m)

    m = re.fullmatch(rf"(?P<d>\d{{1,2}})\.? (?P<month>[^\W\d_]+)(?: (?:klo )?{time_re})?", text)
    if m and m["month"] in locale.month_names:
        month, day_num = locale.month_names[m["month"]], int(m["d"])
        result = _combine(reference_now_site.year, month, day_num, m)
        if result is not None and result.date() > ref_date + timedelta(days=1):
            result = _combine(reference_now_site.year - 1, month, day_num, m)
        return result
    return None


def _combine(year: int, month: int, day: int, m: re.Match) -> datetime | None:
    try:
        d = date(year, month, day)
    except ValueError:
        return None
    if m["hh"] is None:
        return datetime.combine(d, time(0, 0))
    t = _clock_time(m)
    return None if t is None else datetime.combine(d, t)


def site_to_local(t_site: datetime, clock: SiteClock) -> datetime:
    """Shift a site-local timestamp into the user's local frame.

    Site 17:39 at +180 is 14:39 UTC, which is 15:39 at +60.
    """
    as_utc = t_site - timedelta(minutes=clock.site_utc_offset_min)
    return as_utc + timedelta(minutes=clock.local_utc_offset_min)


def local_to_site(t_local: datetime, clock: SiteClock) -> datetime:
    return site_to_local(t_local, clock.swapped())


def is_recent(posted_at_site: datetime, now_site: datetime, window: RecencyWindow) -> bool:
    age = now_site - posted_at_site
    return timedelta(0) <= age <= timedelta(minutes=window.duration_min)
