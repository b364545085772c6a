"""Exit criteria. Each test prints one ``AC PASS``/``AC FAIL`` line."""

import io
import json
import time
from contextlib import contextmanager
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TWO_CARD_SNIPPET, T0, ScriptedTransport, write_config
from shelfwatch.alertstore import AlertKind, SeenEntry, SeenStore, diff_and_record, load_store
from shelfwatch.clock import FakeClock
from shelfwatch.config import load_config
from shelfwatch.corpus import CorpusSpec, render_pages, synthesize
from shelfwatch.extract import DEFAULT_RULES, Money, NodePattern, ProductRecord, extract_records, parse_html, parse_price
from shelfwatch.fetch import FetchExhausted, PageRequest, PolitenessPolicy, RateLimiter, fetch
from shelfwatch.pipeline import run_once
from shelfwatch.temporal import FI_LOCALE, RecencyWindow, SiteClock, is_recent, local_to_site, parse_post_time, site_to_local

CASES = 1000
PROPERTY = settings(max_examples=CASES, deadline=None, database=None)


@pytest.fixture
def report(capsys):
    @contextmanager
    def _report(label):
        try:
            yield
        except BaseException:
            with capsys.disabled():
                print(f"\nAC FAIL {label}")
            raise
        with capsys.disabled():
            print(f"\nAC PASS {label}")
    return _report


def test_ac1_two_card_snippet(report):
    with report("1 two-card listing snippet -> 2 exact records in < 1 s"):
        start = time.perf_counter()
        tree = parse_html(TWO_CARD_SNIPPET.encode("utf-8"))
        records = extract_records(tree, DEFAULT_RULES, "https://example.test/vaihtoautot", None, FakeClock(T0))
        elapsed = time.perf_counter() - start
        got = [(r.name, r.department_slug, r.model, r.product_id) for r in records]
        assert got == [
            ("Toyota Yaris", "vaihtoautot", "yaris", "84905081"),
            ("Volkswagen Transporter", "vaihtoautot", "transporter", "86101406"),
        ]
        assert elapsed < 1.0


def test_ac2_time_semantics(report):
    with report("2 'tänään 17:39' -> 2021-06-15T17:39 site, 15:39 local at (+180, +60)"):
        posted = parse_post_time("tänään 17:39", FI_LOCALE, datetime(2021, 6, 15, 18, 0))
        assert posted == datetime(2021, 6, 15, 17, 39)
        assert site_to_local(posted, SiteClock(180, 60)) == datetime(2021, 6, 15, 15, 39)


def acceptance_corpus(corpus_dir):
    """20 cards on 3 pages; 3 posted today, 2 of those are Toyota Yaris."""
    names = ["Toyota Yaris", "Volkswagen Transporter", "Opel ASTRA 1.6i 16", "Ford Focus", "KIA Ceed",
             "Toyota Corolla", "Toyota Yaris", "Skoda Octavia", "Volvo V70", "Toyota Yaris 1.0 VVT-i",
             "Audi A4", "BMW 320d", "Toyota Avensis", "Opel Corsa", "Mazda 3", "Toyota Yaris",
             "Nissan Qashqai", "Honda Civic", "Peugeot 308", "Renault Clio"]
    times = ["03.06.2021"] * 20
    times[0] = "tänään 17:39"    # Toyota Yaris
    times[9] = "tänään 12:05"    # Toyota Yaris 1.0 VVT-i
    times[13] = "tänään 09:30"   # Opel Corsa
    times[6] = "12 touko 10:00"  # Toyota Yaris, old
    times[15] = "01.01.2021"     # Toyota Yaris, old
    prices = [1250000 + 10000 * i for i in range(20)]
    spec = CorpusSpec(20, times, names, prices, n_pages=3, seed=11)
    return synthesize(spec, corpus_dir)


def test_ac3_end_to_end_fixture_run(tmp_path, report):
    with report("3 3-page/20-card corpus -> 2 new_product alerts, rerun 0, < 2 s"):
        start = time.perf_counter()
        acceptance_corpus(tmp_path / "corpus")
        config = load_config(write_config(tmp_path, corpus_dir=tmp_path / "corpus", max_pages=3))
        clock = FakeClock(T0)
        out = io.StringIO()
        first = run_once(config, clock, stream=out)
        assert first.pages_fetched == 3 and first.records_extracted == 20
        assert first.events_emitted == 2
        assert len(out.getvalue().splitlines()) == 2
        alerts = [json.loads(line) for line in out.getvalue().splitlines()]
        assert [a["kind"] for a in alerts] == ["new_product", "new_product"]
        assert [a["name"] for a in alerts] == ["Toyota Yaris", "Toyota Yaris 1.0 VVT-i"]
        second = run_once(config, clock, stream=io.StringIO())
        assert second.events_emitted == 0
        assert time.perf_counter() - start < 2.0


def test_ac4_price_change(tmp_path, report):
    with report("4 price drop across two runs -> exactly 1 price_change with previous_price"):
        path = tmp_path / "seen.jsonl"
        clock = FakeClock(T0)

        def rec(pid, price):
            return ProductRecord(pid, "Toyota Yaris", "vaihtoautot", f"https://example.test/v/t/y/{pid}",
                                 "https://example.test/v", T0, price=Money(price, "EUR"))

        diff_and_record(load_store(path), [rec("84905081", 1250000), rec("86101406", 900000)], clock)
        clock.advance(minutes=60)
        events = diff_and_record(load_store(path), [rec("84905081", 1199900), rec("86101406", 900000)], clock)
        assert [(e.kind, e.record.product_id) for e in events] == [(AlertKind.PRICE_CHANGE, "84905081")]
        assert events[0].previous_price == Money(1250000, "EUR")
        assert events[0].record.price == Money(1199900, "EUR")


def test_ac5_politeness_with_fake_clock(report):
    with report("5 10 fetches @500 ms -> >= 4500 ms simulated, < 100 ms real; attempts = retries + 1"):
        start = time.perf_counter()
        clock = FakeClock(T0)
        policy = PolitenessPolicy(min_delay_ms=500, max_retries=3, backoff_base_ms=200)
        limiter = RateLimiter(clock, policy.min_delay_ms)
        transport = ScriptedTransport([200] * 10)
        for i in range(10):
            fetch(PageRequest(f"https://example.test/vaihtoautot?page={i + 1}", None), policy, transport,
                  clock=clock, limiter=limiter)
        simulated = clock.now() - T0
        times = [t for _, t in limiter.dispatches]
        assert simulated >= timedelta(milliseconds=4500)
        assert times[-1] - times[0] >= timedelta(milliseconds=4500)

        failing = ScriptedTransport([503] * 10)
        with pytest.raises(FetchExhausted) as err:
            fetch(PageRequest("https://example.test/x", None), policy, failing, clock=clock, limiter=limiter)
        assert err.value.attempts == len(failing.calls) == policy.max_retries + 1
        assert time.perf_counter() - start < 0.1


# ---- 6: property suites


def run_property(prop, counter):
    prop()
    assert counter[0] >= CASES, f"only {counter[0]} cases ran"


def test_ac6a_tokenwise_class_matching(report):
    count = [0]
    tokens = st.text(alphabet="abcdefgAB-_:0123456789", min_size=1, max_size=6)

    @PROPERTY
    @given(st.lists(tokens, max_size=6), tokens, st.sampled_from([" ", "  ", "\t", "\n"]))
    def prop(class_list, probe, sep):
        count[0] += 1
        attr = sep.join(class_list)
        node = parse_html(f'<p class="{attr}"></p>'.encode()).root.find(".//p")
        assert NodePattern(class_contains=(probe,)).matches(node) == (probe in attr.split())

    with report("6a token-wise class matching vs whitespace-split oracle (>= 1000 cases)"):
        run_property(prop, count)


def test_ac6b_site_local_round_trip(report):
    count = [0]

    @PROPERTY
    @given(st.datetimes(min_value=datetime(1900, 1, 2), max_value=datetime(2200, 12, 30)),
           st.integers(-840, 840), st.integers(-840, 840))
    def prop(t, site, local):
        count[0] += 1
        clock = SiteClock(site, local)
        assert local_to_site(site_to_local(t, clock), clock) == t

    with report("6b site_to_local round-trip identity (>= 1000 cases)"):
        run_property(prop, count)


def test_ac6c_recency_monotone(report):
    count = [0]
    stamps = st.datetimes(min_value=datetime(2000, 1, 1), max_value=datetime(2030, 1, 1))

    @PROPERTY
    @given(stamps, stamps, st.integers(0, 10**7), st.integers(0, 10**7))
    def prop(posted, now, a, b):
        count[0] += 1
        lo, hi = sorted((a, b))
        if is_recent(posted, now, RecencyWindow(lo)):
            assert is_recent(posted, now, RecencyWindow(hi))

    with report("6c is_recent monotone in window (>= 1000 cases)"):
        run_property(prop, count)


def test_ac6d_journal_replay(tmp_path, report):
    count = [0]
    instants = st.datetimes(min_value=datetime(2000, 1, 1), max_value=datetime(2100, 1, 1),
                            timezones=st.just(timezone.utc))
    moneys = st.none() | st.builds(Money, st.integers(0, 10**12), st.sampled_from(["EUR", "USD", "GBP"]))

    @st.composite
    def entry(draw):
        first = draw(instants)
        pid = draw(st.text(st.characters(categories=("L", "N")), min_size=1, max_size=10))
        return SeenEntry(pid, draw(moneys), first, first + timedelta(seconds=draw(st.integers(0, 10**9))))

    path = tmp_path / "seen.jsonl"

    @PROPERTY
    @given(st.lists(entry(), max_size=8))
    def prop(items):
        count[0] += 1
        store = SeenStore(None, {e.product_id: e for e in items})
        store.save(path)
        assert load_store(path) == store

    with report("6d journal replay determinism load(save(s)) == s (>= 1000 cases)"):
        run_property(prop, count)


def test_ac6e_parse_price_total(report):
    count = [0]

    @PROPERTY
    @given(st.text())
    def prop(raw):
        count[0] += 1
        result = parse_price(raw)
        assert result is None or (isinstance(result, Money) and result.amount_minor >= 0)

    with report("6e parse_price total on fuzzed Unicode (>= 1000 cases)"):
        run_property(prop, count)


def test_ac6f_generator_extractor_round_trip(report):
    count = [0]
    chars = st.characters(categories=("L", "N", "P", "S"))
    collapsed = st.lists(st.text(chars, min_size=1, max_size=8), min_size=1, max_size=4).map(" ".join)
    prices = st.none() | st.builds(Money, st.integers(0, 10**9), st.sampled_from(["EUR", "USD", "GBP"]))

    @st.composite
    def specs(draw):
        n = draw(st.integers(0, 5))
        return CorpusSpec(
            n_cards=n,
            post_times=draw(st.lists(collapsed | st.just(""), min_size=n, max_size=n)),
            names=draw(st.lists(collapsed, min_size=n, max_size=n)),
            prices=draw(st.lists(prices, min_size=n, max_size=n)),
            n_pages=draw(st.integers(1, 3)),
            seed=draw(st.integers(0, 2**32)),
        )

    @PROPERTY
    @given(specs())
    def prop(spec):
        count[0] += 1
        clock = FakeClock(T0)
        records = []
        for url, _, text in render_pages(spec):
            records += extract_records(parse_html(text.encode()), DEFAULT_RULES, url, None, clock)
        assert [r.name for r in records] == spec.names
        assert [r.price for r in records] == spec.prices
        assert [r.posted_text for r in records] == spec.post_times

    with report("6f generator/extractor round-trip (>= 1000 cases)"):
        run_property(prop, count)


def test_ac7_determinism(tmp_path, report):
    with report("7 same corpus + same injected clock -> byte-identical JSONL alerts"):
        acceptance_corpus(tmp_path / "corpus")
        outputs = []
        for name in ("a", "b"):
            run_dir = tmp_path / name
            run_dir.mkdir()
            config = load_config(write_config(run_dir, corpus_dir=tmp_path / "corpus", products=(),
                                              max_pages=3, min_delay_ms=500, window=10**6))
            out = io.StringIO()
            run_once(config, FakeClock(T0), stream=out)
            outputs.append(out.getvalue().encode("utf-8"))
        assert outputs[0] == outputs[1]
        assert len(outputs[0].splitlines()) == 20
