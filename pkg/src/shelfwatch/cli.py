"""Command-line interface.

Exit codes: 0 success, 1 run-level failure (e.g. every page failed),
2 usage or configuration error. Data (alerts, records) goes to stdout,
logs to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from pathlib import Path

from shelfwatch import __version__
from shelfwatch.alertstore import JournalCorrupt, StoreLocked
from shelfwatch.clock import SystemClock
from shelfwatch.config import (
    CONFIG_ENV,
    ConfigInvalid,
    RunConfig,
    load_config,
    read_config,
    resolve_config_path,
    runtime_problems,
)
from shelfwatch.errors import FileMissing
from shelfwatch.extract import DEFAULT_RULES, ExtractStats, extract_records, parse_html
from shelfwatch.fetch import PolitenessPolicy, ManifestMalformed, ManifestMissing
from shelfwatch.temporal import RecencyWindow
from shelfwatch.watchlist import DepartmentEntry, WatchListError, load_watchlist

log = logging.getLogger("shelfwatch")

EXIT_OK, EXIT_RUN_FAILED, EXIT_USAGE = 0, 1, 2


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help=f"run config JSON (default: ${CONFIG_ENV})")
    parser.add_argument("--departments", help="departments watchlist file")
    parser.add_argument("--products", help="product-name watchlist file")
    parser.add_argument("--fixtures", help="replay a recorded corpus directory instead of the network")
    parser.add_argument("--live", action="store_true", help="allow live network access")
    parser.add_argument("--sink", help="text | jsonl | webhook:URL")
    parser.add_argument("--store", help="seen-products journal path")
    parser.add_argument("--window", type=int, help="recency window in minutes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shelfwatch", description="Alerts for new and repriced listings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="crawl once and emit alerts")
    _common(run)

    watch = sub.add_parser("watch", help="run repeatedly every --interval minutes")
    _common(watch)
    watch.add_argument("--interval", type=int, required=True, help="minutes between runs")

    extract = sub.add_parser("extract", help="print records extracted from one HTML file")
    extract.add_argument("html_path")
    extract.add_argument("--config")
    extract.add_argument("--page-url", help="URL the file was served from (for resolving links)")
    extract.add_argument("--department", default="", help="department slug to fall back on")

    validate = sub.add_parser("validate-config", help="check a config file and its watchlists")
    validate.add_argument("config_path", nargs="?")
    validate.add_argument("--config", dest="config_flag")

    corpus = sub.add_parser("corpus", help="build or check fixture corpora")
    csub = corpus.add_subparsers(dest="corpus_command", required=True)
    syn = csub.add_parser("synthesize", help="generate listing pages from a JSON spec")
    syn.add_argument("--spec", required=True, help="JSON file with n_cards, names, prices, post_times")
    syn.add_argument("--out", required=True)
    rec = csub.add_parser("record", help="fetch live URLs into a corpus (needs --live)")
    rec.add_argument("urls", nargs="*")
    rec.add_argument("--urls-file")
    rec.add_argument("--out", required=True)
    rec.add_argument("--live", action="store_true")
    val = csub.add_parser("validate", help="check a corpus manifest and its files")
    val.add_argument("corpus_dir")
    return parser


def _config_from_args(args) -> RunConfig:
    path = resolve_config_path(args.config)
    if path is None:
        raise ConfigInvalid([f"config: pass --config PATH or set {CONFIG_ENV}"])
    config = load_config(path)
    overrides = {
        "departments_path": Path(args.departments) if args.departments else None,
        "products_path": Path(args.products) if args.products else None,
        "store_path": Path(args.store) if args.store else None,
        "sink": args.sink,
        "recency": RecencyWindow(args.window) if args.window is not None else None,
    }
    if args.window is not None and args.window < 0:
        raise ConfigInvalid(["recency.duration_min: --window must be >= 0"])
    if args.fixtures:
        overrides["transport_mode"] = "fixture"
        overrides["fixtures_dir"] = Path(args.fixtures)
    if args.live:
        overrides["live"] = True
    config = config.with_overrides(**overrides)
    problems = runtime_problems(config)
    if problems:
        raise ConfigInvalid(problems)
    return config


def _cmd_run(args, clock, out) -> int:
    from shelfwatch.pipeline import run_once

    config = _config_from_args(args)
    summary = run_once(config, clock, stream=out)
    print(json.dumps({"summary": summary.as_dict()}), file=sys.stderr)
    return EXIT_RUN_FAILED if summary.all_pages_failed else EXIT_OK


def _cmd_watch(args, clock, out) -> int:
    from shelfwatch.pipeline import watch

    config = _config_from_args(args)
    return watch(config, args.interval, clock, stream=out)


def _cmd_extract(args, clock, out) -> int:
    rules, page_url = DEFAULT_RULES, args.page_url
    if args.config:
        config = load_config(args.config)
        rules = config.extraction
        page_url = page_url or config.base_url.rstrip("/") + "/"
    path = Path(args.html_path)
    if not path.is_file():
        raise FileMissing(path)
    tree = parse_html(path.read_bytes())
    stats = ExtractStats()
    department = DepartmentEntry(args.department) if args.department else None
    records = extract_records(tree, rules, page_url or "https://localhost/", department, clock, stats)
    for record in records:
        out.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
    if stats.cards_dropped:
        log.warning("%d card(s) dropped; field misses: %s", stats.cards_dropped, dict(stats.field_misses))
    return EXIT_OK


def _cmd_validate(args, clock, out) -> int:
    path = resolve_config_path(args.config_path or args.config_flag)
    if path is None:
        print(f"config: pass a path or set {CONFIG_ENV}", file=sys.stderr)
        return EXIT_USAGE
    config, diags = read_config(path)
    if config is not None:
        try:
            load_watchlist(config.departments_path, config.products_path)
        except FileMissing as exc:
            diags.append(f"watchlist: {exc}")
        except WatchListError as exc:
            diags.append(f"watchlist: {exc}")
        if config.fixtures_dir is not None and config.transport_mode == "fixture":
            from shelfwatch.corpus import validate_corpus
            diags.extend(f"transport.dir: {p}" for p in validate_corpus(config.fixtures_dir))
    for diag in diags:
        print(diag, file=sys.stderr)
    if diags:
        return EXIT_USAGE
    out.write(f"{path}: ok\n")
    return EXIT_OK


def _cmd_corpus(args, clock, out) -> int:
    from shelfwatch import corpus

    if args.corpus_command == "synthesize":
        spec_path = Path(args.spec)
        if not spec_path.is_file():
            raise FileMissing(spec_path)
        spec = corpus.CorpusSpec.from_dict(json.loads(spec_path.read_text(encoding="utf-8")))
        manifest = corpus.synthesize(spec, args.out)
        out.write(f"wrote {len(manifest)} page(s) to {args.out}\n")
        return EXIT_OK
    if args.corpus_command == "record":
        if not args.live:
            print("corpus record fetches live pages; pass --live to confirm", file=sys.stderr)
            return EXIT_USAGE
        urls = list(args.urls)
        if args.urls_file:
            urls += [u.strip() for u in Path(args.urls_file).read_text(encoding="utf-8").splitlines() if u.strip()]
        from shelfwatch.fetch import LiveTransport
        manifest, failures = corpus.record(urls, LiveTransport(), args.out, policy=PolitenessPolicy(), clock=clock)
        for url, reason in failures:
            print(f"failed: {url}: {reason}", file=sys.stderr)
        out.write(f"recorded {len(manifest)} page(s), {len(failures)} failure(s)\n")
        return EXIT_OK
    problems = corpus.validate_corpus(args.corpus_dir)
    for problem in problems:
        print(problem, file=sys.stderr)
    if problems:
        return EXIT_RUN_FAILED
    out.write(f"{args.corpus_dir}: ok\n")
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "watch": _cmd_watch,
    "extract": _cmd_extract,
    "validate-config": _cmd_validate,
    "corpus": _cmd_corpus,
}


def _raise_interrupt(signum, frame):
    raise KeyboardInterrupt


def main(argv=None, *, clock=None, stdout=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(level)
    clock = clock or SystemClock()
    out = stdout if stdout is not None else sys.stdout
    if args.command == "watch":
        try:
            signal.signal(signal.SIGTERM, _raise_interrupt)
        except ValueError:  # not in the main thread
            pass
    try:
        return COMMANDS[args.command](args, clock, out)
    except ConfigInvalid as exc:
        for diag in exc.diagnostics:
            print(diag, file=sys.stderr)
        return EXIT_USAGE
    except (FileMissing, WatchListError, ManifestMissing, ManifestMalformed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StoreLocked, JournalCorrupt) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    except KeyboardInterrupt:
        return EXIT_OK
    finally:
        log.removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
