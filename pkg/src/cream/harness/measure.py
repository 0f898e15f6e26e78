"""Byte-size and latency measurements of the encodings and store operations.

Sizes use a reference cookie with a 37-character name-value pair, a
14-character domain and path "/".  Latency numbers are host dependent; only
their ratios are meaningful.
"""

from __future__ import annotations

import gc
import random
import statistics
import time
from dataclasses import dataclass, replace
from datetime import timedelta
from typing import Callable, Dict, List, Optional, Tuple

from ..cookies import (
    AccessContext,
    ChangelogEntry,
    Cookie,
    SameSite,
    b64url_encode,
    serialize_set_cookie,
    to_millis,
)
from ..messages import HEADER_KEY, HEADER_REPORT
from ..monitor import KeyMap, MonitoredReport, diff_cookies, encode_settings, generate_report
from ..pipeline import BrowserPipeline
from ..server import MonitoredMessage, ServerSecret, seal_message
from ..store import CookieStore
from .world import HOST, ORIGIN, START, SimClock

__all__ = [
    "LatencyRow",
    "REFERENCE_SIZES",
    "SizeRow",
    "latency",
    "format_latency",
    "format_sizes",
    "reference_cookie",
    "report_scaling_ratio",
    "sizes",
    "update_scaling_ratio",
    "worst_case_change",
]

# Target byte counts for the reference cookie, for side-by-side output.
REFERENCE_SIZES = {
    "monitored attribute": 141,
    "monitored message": 131,
    "settings": 108,
    "changelog entry": 108,
    "report": 516,
    "key header": 38,
}

NAME = "session_id"
VALUE = "f3a9c2e8b7d14a6f9e0c2b5d8a1"  # 37 characters together with NAME


def reference_cookie(browser_key: bytes, secret: ServerSecret) -> Cookie:
    message = MonitoredMessage(NAME, VALUE, browser_key, b"")
    return Cookie(
        NAME,
        VALUE,
        domain=HOST,
        path="/",
        expires=(START + timedelta(days=30)).replace(microsecond=0),
        secure=True,
        http_only=True,
        same_site=SameSite.LAX,
        monitored_msg=seal_message(message, secret),
    )


def worst_case_change(cookie: Cookie) -> Cookie:
    """Every logged attribute of ``cookie`` changed at once."""
    return replace(
        cookie,
        value="0" * len(cookie.value),
        domain="example.io",
        path="/account",
        expires=cookie.expires + timedelta(days=365) if cookie.expires else START,
        secure=not cookie.secure,
        http_only=not cookie.http_only,
        same_site=SameSite.STRICT if cookie.same_site is not SameSite.STRICT else SameSite.LAX,
        browser_only=not cookie.browser_only,
    )


@dataclass(frozen=True)
class SizeRow:
    item: str
    measured: int
    reference: Optional[int]
    note: str = ""


def sizes(seed: int = 0) -> List[SizeRow]:
    rng = random.Random(seed)
    secret = ServerSecret.generate(random.Random(rng.getrandbits(64)))
    key = KeyMap(random.Random(rng.getrandbits(64))).key_for_site(ORIGIN)
    cookie = reference_cookie(key.key, secret)
    changed = worst_case_change(cookie)
    entry_text = diff_cookies(cookie, changed)
    at = START + timedelta(minutes=5)
    logged = replace(cookie, changelog=[ChangelogEntry(entry_text, at)])
    report = generate_report([logged], key, at)
    attribute = "; Monitored=" + b64url_encode(cookie.monitored_msg)
    header_report = f"{HEADER_REPORT}: {report.header_value()}"
    framed_entry = 2 + len(entry_text) + 2 + len(str(to_millis(at)))
    rows = [
        SizeRow("monitored attribute", len(attribute), 141, "'; Monitored=' plus base64url message"),
        SizeRow("monitored message", len(cookie.monitored_msg), 131, "nonce + AES-GCM ciphertext + tag"),
        SizeRow("settings", len(encode_settings(cookie)), 108, "encoded current settings"),
        SizeRow("changelog entry", len(entry_text), 108, "worst case, every field changed"),
        SizeRow("changelog entry framed", framed_entry, None, "with length prefixes and timestamp"),
        SizeRow("report", len(report.to_bytes()), 516, "one cookie, one worst-case entry"),
        SizeRow("report header", len(header_report), None, "base64url on the wire, with name"),
        SizeRow("key header", len(f"{HEADER_KEY}: {key.header_value()}"), 38, "with header name"),
        SizeRow("BrowserOnly attribute", len("; BrowserOnly"), 11, "with separator"),
        SizeRow("full Set-Cookie", len(serialize_set_cookie(cookie)), None, "reference cookie"),
    ]
    return rows


def format_sizes(rows: List[SizeRow]) -> str:
    lines = [f"{'item':<24} {'bytes':>6} {'reference':>9}  note"]
    for row in rows:
        ref = "-" if row.reference is None else str(row.reference)
        lines.append(f"{row.item:<24} {row.measured:>6} {ref:>9}  {row.note}")
    return "\n".join(lines)


# -- latency ---------------------------------------------------------------


def _median_ns(
    setup: Callable[[], object], body: Callable[[object], object], iters: int
) -> float:
    """Median wall time of ``body(setup())``, setup excluded from timing."""
    samples = []
    clock = time.perf_counter_ns
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(iters):
            state = setup()
            start = clock()
            body(state)
            samples.append(clock() - start)
    finally:
        if enabled:
            gc.enable()
    return statistics.median(samples)


def _paired_medians(
    a: Tuple[Callable[[], object], Callable[[object], object]],
    b: Tuple[Callable[[], object], Callable[[object], object]],
    iters: int,
) -> Tuple[float, float]:
    """Medians of two workloads sampled alternately, so that drift in host
    load affects both sides of a ratio alike."""
    samples: Tuple[list, list] = ([], [])
    clock = time.perf_counter_ns
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(iters):
            for (setup, body), out in zip((a, b), samples):
                state = setup()
                start = clock()
                body(state)
                out.append(clock() - start)
    finally:
        if enabled:
            gc.enable()
    return statistics.median(samples[0]), statistics.median(samples[1])


@dataclass(frozen=True)
class LatencyRow:
    operation: str
    kind: str
    median_us: float


class _Bench:
    def __init__(self, seed: int):
        rng = random.Random(seed)
        self.secret = ServerSecret.generate(random.Random(rng.getrandbits(64)))
        self.key = KeyMap(random.Random(rng.getrandbits(64))).key_for_site(ORIGIN)
        self.clock = SimClock()
        self.ctx_net = AccessContext.network()
        self.ctx_ext = AccessContext.extension()
        self.monitored = reference_cookie(self.key.key, self.secret)
        self.kinds: Dict[str, Cookie] = {
            "plain": replace(self.monitored, monitored_msg=None),
            "browser_only": replace(self.monitored, monitored_msg=None, browser_only=True),
            "monitored": self.monitored,
        }

    def store_with(self, cookie: Optional[Cookie] = None):
        store = CookieStore(clock=self.clock)
        if cookie is not None:
            store.set_cookie(cookie, self.ctx_net)
        return store

    def updates(self, cookie: Cookie) -> List[Cookie]:
        """Distinct network-side edits, each producing a changelog entry."""
        return [replace(cookie, value=f"{cookie.value[:-2]}{i:02d}", monitored_msg=None)
                for i in range(10)]


def update_scaling_ratio(iters: int = 10_000, seed: int = 0) -> Tuple[float, float, float]:
    """Median cost of 10 sequential Monitored updates over the cost of 1."""
    bench = _Bench(seed)
    edits = bench.updates(bench.monitored)
    now = bench.clock()

    def run(count):
        def body(store):
            for edit in edits[:count]:
                store.set_cookie(edit, bench.ctx_net, now)
        return body

    setup = lambda: bench.store_with(bench.monitored)  # noqa: E731
    one, ten = _paired_medians((setup, run(1)), (setup, run(10)), iters)
    return ten / one, one / 1000, ten / 1000


def _logged(cookie: Cookie, entries: int) -> Cookie:
    at = START
    return replace(
        cookie,
        changelog=[ChangelogEntry(f"V:{i:04d}", at + timedelta(seconds=i)) for i in range(entries)],
    )


def _report_stage(bench: "_Bench", cookies: List[Cookie]):
    """A pipeline holding ``cookies`` and the keys its report stage will read."""
    store = CookieStore(clock=bench.clock)
    for cookie in cookies:
        store._insert(replace(cookie, changelog=list(cookie.changelog)))
    keymap = KeyMap()
    keymap._keys[ORIGIN] = bench.key
    return BrowserPipeline(store, keymap), [c.key for c in cookies]


def _report_job(bench: "_Bench", cookies: List[Cookie]):
    pipeline, keys = _report_stage(bench, cookies)
    url = ORIGIN + "/account"
    now = bench.clock()
    return (lambda: keys), (lambda ks: pipeline.report_header(ks, url, now))


def _time_report(bench: "_Bench", cookies: List[Cookie], iters: int) -> float:
    return _median_ns(*_report_job(bench, cookies), iters)


def report_scaling_ratio(iters: int = 10_000, seed: int = 0) -> Tuple[float, float, float]:
    """Median cost of the request's report stage for five Monitored cookies
    versus one: store lookups, sub-reports, signing and header encoding."""
    bench = _Bench(seed)
    cookies = [replace(bench.monitored, name=f"{NAME}{i}") for i in range(5)]
    one, five = _paired_medians(
        _report_job(bench, cookies[:1]), _report_job(bench, cookies), iters
    )
    return five / one, one / 1000, five / 1000


def latency(iters: int = 10_000, seed: int = 0) -> List[LatencyRow]:
    bench = _Bench(seed)
    rows = []
    now = bench.clock()
    url = ORIGIN + "/account"
    for kind, cookie in bench.kinds.items():
        edit = bench.updates(cookie)[0]
        if kind != "monitored":
            edit = replace(edit, monitored_msg=None)
        create = _median_ns(bench.store_with, lambda s: s.set_cookie(cookie, bench.ctx_net, now), iters)
        get = _median_ns(
            lambda: bench.store_with(cookie), lambda s: s.get_list(url, bench.ctx_net, now), iters
        )
        update = _median_ns(
            lambda: bench.store_with(cookie), lambda s: s.set_cookie(edit, bench.ctx_net, now), iters
        )
        rows += [
            LatencyRow("create", kind, create / 1000),
            LatencyRow("get", kind, get / 1000),
            LatencyRow("update", kind, update / 1000),
        ]
    for entries in (0, 1, 10):
        ns = _time_report(bench, [_logged(bench.monitored, entries)], iters)
        rows.append(LatencyRow("report", f"1 cookie, {entries} entries", ns / 1000))
    five = [replace(bench.monitored, name=f"{NAME}{i}") for i in range(5)]
    ns = _time_report(bench, five, iters)
    rows.append(LatencyRow("report", "5 cookies, 0 entries", ns / 1000))
    report = generate_report(five, bench.key, now)
    ns = _median_ns(lambda: report, lambda r: MonitoredReport.from_bytes(r.to_bytes()).verify(bench.key.key), iters)
    rows.append(LatencyRow("parse+verify", "5 cookies", ns / 1000))
    return rows


def format_latency(rows: List[LatencyRow]) -> str:
    lines = [f"{'operation':<14} {'cookie':<22} {'median us':>10}"]
    lines += [f"{r.operation:<14} {r.kind:<22} {r.median_us:>10.2f}" for r in rows]
    return "\n".join(lines)
