"""Randomized property checks over whole browser/server runs.

Every check is driven by an integer seed and returns a :class:`PropertyReport`
listing counterexamples, so a failure can be replayed with the same seed.
"""

from __future__ import annotations

import random
import re
import string
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import timedelta
from typing import Callable, List, Sequence

from ..cookies import (
    AccessContext,
    Cookie,
    Priority,
    SameSite,
    b64url_decode,
    b64url_encode,
    serialize_set_cookie,
)
from ..messages import HEADER_KEY, HEADER_REPORT, HttpMessage
from ..monitor import encode_changelog
from ..pipeline import BrowserPipeline, DnrHook, FunctionHook, HeaderRule, HookMode
from ..server import CookieSpec, VerdictStatus
from ..store import CookiesApi, CookieStore, DocumentCookie
from .world import HOST, ORIGIN, PLAIN_ORIGIN, START, SimClock, World

__all__ = [
    "PropertyReport",
    "check_eviction",
    "check_honest",
    "check_opacity",
    "check_theft",
    "random_specs",
    "tamper_fuzz",
]

NAME_CHARS = string.ascii_letters + string.digits + "-_"
VALUE_CHARS = string.ascii_letters + string.digits + "-._~!*+/:@"
B64_CHARS = string.ascii_letters + string.digits + "-_"
MONITORED_RE = re.compile(r"Monitored=([A-Za-z0-9_-]+)")


@dataclass
class PropertyReport:
    name: str
    runs: int = 0
    failures: List[str] = field(default_factory=list)
    stats: Counter = field(default_factory=Counter)

    @property
    def ok(self) -> bool:
        return self.runs > 0 and not self.failures

    def __str__(self) -> str:
        state = "ok" if self.ok else f"{len(self.failures)} failure(s)"
        return f"{self.name}: {self.runs} runs, {state}"


def _text(rng: random.Random, alphabet: str, lo: int, hi: int) -> str:
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(lo, hi)))


def _random_attrs(rng: random.Random, *, browser_only: bool = False) -> dict:
    attrs: dict = {
        "secure": rng.random() < 0.6,
        "http_only": rng.random() < 0.5,
        "same_site": rng.choice(list(SameSite)),
        "path": rng.choice(["/", "/", "/account"]),
    }
    if rng.random() < 0.3:
        attrs["domain"] = "example.io"
    if rng.random() < 0.5:
        attrs["expires"] = (START + timedelta(seconds=rng.randint(3600, 400 * 86400))).replace(
            microsecond=0
        )
    if browser_only:
        attrs["browser_only"] = True
    return attrs


def random_specs(
    rng: random.Random, monitored: int, browser_only: int = 0, plain: int = 0
) -> List[CookieSpec]:
    """Cookies with distinct random names, values and attributes.

    BrowserOnly and plain values are long random tokens so that a substring
    search for them cannot hit by accident.
    """
    specs = []
    kinds = ["m"] * monitored + ["b"] * browser_only + ["p"] * plain
    for i, kind in enumerate(kinds):
        name = f"{kind}{i}{_text(rng, NAME_CHARS, 1, 12)}"
        if kind == "m":
            value = _text(rng, VALUE_CHARS, 1, 40)
            specs.append(CookieSpec(name, value, attrs=_random_attrs(rng)))
        else:
            value = rng.randbytes(12).hex()
            attrs = _random_attrs(rng, browser_only=kind == "b")
            specs.append(CookieSpec(name, value, monitored=False, attrs=attrs))
    return specs


def _visit_url(rng: random.Random, origin: str = ORIGIN) -> str:
    return origin + rng.choice(["/account", "/account/settings", "/account/x?y=1"])


# -- honest path -----------------------------------------------------------


def check_honest(runs: int = 1000, seed: int = 0) -> PropertyReport:
    """Mint, store, send and verify with no adversary: every verdict Valid."""
    report = PropertyReport("honest round trip")
    for run in range(runs):
        rng = random.Random(f"honest-{seed}-{run}")
        specs = random_specs(rng, rng.randint(1, 4), rng.randint(0, 2), rng.randint(0, 2))
        world = World(rng.getrandbits(32), login_cookies=specs)
        browser = world.browser(passes=rng.randint(1, 3))
        world.login(browser)
        for _ in range(rng.randint(1, 3)):
            world.clock.advance(rng.randint(0, 90))
            request = world.visit(browser, _visit_url(rng))
            verdicts = world.server.verify(request)
            report.stats["requests"] += 1
            bad = {n: v.status.value for n, v in verdicts.items() if not v.valid}
            if len(verdicts) != len(world.server.policy.monitored_names) or bad:
                report.failures.append(f"run {run}: {bad or verdicts}")
            report.stats["verdicts"] += len(verdicts)
        report.runs += 1
    return report


# -- opacity ---------------------------------------------------------------


class _Recorder:
    """Collects everything an extension or script gets to see."""

    def __init__(self):
        self.request_views: List[str] = []  # request headers seen by hooks
        self.response_views: List[str] = []  # response headers seen by hooks
        self.api_views: List[str] = []  # Cookies API and document.cookie output
        self.problems: List[str] = []

    def cookies(self, where: str, cookies: Sequence[Cookie]) -> None:
        for cookie in cookies:
            if cookie.browser_only:
                self.problems.append(f"{where} returned BrowserOnly cookie {cookie.name}")
            if cookie.monitored_msg is not None or cookie.changelog:
                self.problems.append(f"{where} exposed Monitored state of {cookie.name}")
            self.api_views.append(serialize_set_cookie(cookie))
            self.api_views.append(repr(cookie))


def _adversarial_hooks(rng: random.Random, names: List[str]) -> list:
    def on_request(headers, url):
        choice = rng.random()
        if choice < 0.3:
            del headers["Cookie"]
        elif choice < 0.6:
            existing = headers.get("Cookie")
            forged = f"{rng.choice(names)}=forged"
            headers["Cookie"] = forged + ("; " + existing if existing else "")
        return headers

    def on_response(headers, url):
        if rng.random() < 0.5:
            headers.add_header("Set-Cookie", f"{rng.choice(names)}=forged; Secure; BrowserOnly")
        if rng.random() < 0.3:
            del headers["Set-Cookie"]
        return headers

    hooks = [
        FunctionHook("observer", mode=HookMode.WEBREQUEST),
        FunctionHook("editor", on_request, on_response),
    ]
    if rng.random() < 0.5:
        hooks.append(DnrHook(
            "rules",
            request_rules=[HeaderRule("append", "Cookie", f"{rng.choice(names)}=dnr")],
            response_rules=[HeaderRule("append", "Set-Cookie", f"{rng.choice(names)}=dnr")],
        ))
    return hooks


def _opacity_run(rng: random.Random) -> List[str]:
    specs = random_specs(rng, rng.randint(1, 3), rng.randint(1, 3), rng.randint(0, 2))
    world = World(rng.getrandbits(32), login_cookies=specs)
    names = [s.name for s in specs] + ["x" + _text(rng, NAME_CHARS, 1, 6)]
    browser = world.browser(_adversarial_hooks(rng, names), passes=rng.randint(1, 3))
    ext = CookiesApi(browser.store)
    seen = _Recorder()
    requests: List[HttpMessage] = []
    bo_specs = [s for s in specs if s.attrs.get("browser_only")]

    def visit(origin: str) -> None:
        requests.append(world.visit(browser, _visit_url(rng, origin)))

    def ext_read() -> None:
        seen.cookies("get_all", ext.get_all())
        seen.cookies("get_list", ext.get_list(_visit_url(rng, rng.choice([ORIGIN, PLAIN_ORIGIN]))))

    def ext_write() -> None:
        name = rng.choice(names)
        header = f"{name}={_text(rng, VALUE_CHARS, 1, 10)}; Path={rng.choice(['/', '/account'])}"
        if rng.random() < 0.4:
            header += "; BrowserOnly"
        if rng.random() < 0.5:
            header += "; Secure"
        seen.api_views.append(str(ext.set(ORIGIN, header)))

    def ext_edit() -> None:
        cookies = ext.get_all()
        seen.cookies("get_all", cookies)
        if cookies:
            target = rng.choice(cookies)
            edit = rng.choice([
                dict(value=_text(rng, VALUE_CHARS, 1, 10)),
                dict(http_only=not target.http_only),
                dict(same_site=rng.choice(list(SameSite))),
                dict(browser_only=True),
            ])
            seen.api_views.append(str(ext.set(ORIGIN, replace(target, **edit))))

    def ext_remove() -> None:
        spec = rng.choice(specs)
        domain = spec.attrs.get("domain") or HOST
        seen.api_views.append(str(ext.remove(domain, spec.attrs.get("path", "/"), spec.name)))

    def script() -> None:
        doc = DocumentCookie(browser.store, _visit_url(rng, rng.choice([ORIGIN, PLAIN_ORIGIN])))
        seen.api_views.append(doc.get())
        if rng.random() < 0.5:
            seen.api_views.append(str(doc.set(f"{rng.choice(names)}=script; BrowserOnly")))

    def server_sets() -> None:
        fresh = random_specs(rng, 0, browser_only=1)[0]
        bo_specs.append(fresh)
        world.respond_with(browser, ORIGIN, [serialize_set_cookie(Cookie(fresh.name, fresh.value, **fresh.attrs))])

    def relogin() -> None:
        world.login(browser)

    ops: List[Callable[[], None]] = [
        lambda: visit(ORIGIN), lambda: visit(PLAIN_ORIGIN), ext_read, ext_write, ext_edit,
        ext_remove, script, server_sets, relogin, lambda: world.clock.advance(rng.randint(1, 30)),
    ]
    world.login(browser)
    for _ in range(rng.randint(5, 15)):
        rng.choice(ops)()
    visit(ORIGIN)

    for obs in browser.transcript:
        text = "\n".join(f"{n}: {v}" for n, v in obs.headers)
        (seen.request_views if obs.stage == "request" else seen.response_views).append(text)

    everything = seen.request_views + seen.response_views + seen.api_views
    private = seen.request_views + seen.api_views
    leaks = list(seen.problems)

    def scan(pool: List[str], needle: str, what: str) -> None:
        if needle and any(needle in text for text in pool):
            leaks.append(f"{what} visible: {needle[:40]}")

    for spec in bo_specs:
        scan(everything, spec.value, f"BrowserOnly value of {spec.name}")
        scan(everything, f"{spec.name}={spec.value}", "BrowserOnly pair")
    for text in everything:
        lowered = text.lower()
        if HEADER_KEY.lower() in lowered or HEADER_REPORT.lower() in lowered:
            leaks.append("CREAM header visible to an extension")
    for request in requests:
        for header in (HEADER_KEY, HEADER_REPORT):
            scan(everything, request.headers.get(header, ""), header + " value")
    for key in browser.keymap.site_keys():
        scan(everything, b64url_encode(key.key), "site key")
    for cookie in browser.store.get_all():
        if cookie.monitored_msg:
            scan(private, b64url_encode(cookie.monitored_msg), f"Monitored message of {cookie.name}")
        if cookie.changelog:
            scan(everything, b64url_encode(encode_changelog(cookie.changelog)), "changelog")
    return leaks


def check_opacity(runs: int = 1000, seed: int = 0) -> PropertyReport:
    """Random extension/script operation sequences never see protected state.

    Hooks may see Monitored messages inside response ``Set-Cookie`` headers,
    so message leaks are only searched for in request views and in Cookies
    API or ``document.cookie`` output.
    """
    report = PropertyReport("opacity")
    for run in range(runs):
        rng = random.Random(f"opacity-{seed}-{run}")
        leaks = _opacity_run(rng)
        report.runs += 1
        report.failures.extend(f"run {run}: {leak}" for leak in leaks)
    return report


# -- theft -----------------------------------------------------------------


def check_theft(runs: int = 1000, seed: int = 0) -> PropertyReport:
    """Stolen cookie plus report material replayed from a browser with a
    different key map never verifies."""
    report = PropertyReport("theft transplant")
    for run in range(runs):
        rng = random.Random(f"theft-{seed}-{run}")
        specs = random_specs(rng, rng.randint(1, 3), rng.randint(0, 1), rng.randint(0, 1))
        world = World(rng.getrandbits(32), login_cookies=specs)
        victim = world.browser()
        response = world.login(victim)
        world.visit(victim, _visit_url(rng))

        attacker = world.browser()
        mode = rng.choice(["set-cookie", "snapshot"])
        if mode == "set-cookie":
            world.respond_with(attacker, ORIGIN, response.headers.get_all("Set-Cookie"))
        else:
            attacker.store = CookieStore.from_snapshot(victim.store.to_snapshot(), world.clock)
        world.clock.advance(rng.randint(0, 60))
        verdicts = world.server.verify(world.visit(attacker, _visit_url(rng)))
        report.runs += 1
        for name, verdict in verdicts.items():
            report.stats[verdict.status.value] += 1
            if verdict.status not in (VerdictStatus.BAD_HMAC, VerdictStatus.NO_REPORT):
                report.failures.append(f"run {run} ({mode}): {name} -> {verdict.status.value}")
    return report


# -- tampering -------------------------------------------------------------


def _swap_char(rng: random.Random, text: str, lo: int, hi: int, alphabet: str) -> str:
    pos = rng.randrange(lo, hi)
    choice = rng.choice([c for c in alphabet if c != text[pos]])
    return text[:pos] + choice + text[pos + 1:]


def tamper_fuzz(mutations: int = 12000, seed: int = 0) -> PropertyReport:
    """Single-byte mutations of the report header, the Monitored attribute
    and the cookie value, each checked against the server."""
    report = PropertyReport("tamper fuzz")
    rng = random.Random(f"tamper-{seed}")
    world = World(seed)
    victim = world.browser()
    login = world.login(victim)
    request = world.visit(victim)
    server = world.server
    baseline = server.verify(request)
    if not all(v.valid for v in baseline.values()):
        report.failures.append(f"baseline not valid: {baseline}")
        return report
    names = sorted(server.policy.monitored_names)
    set_cookies = login.headers.get_all("Set-Cookie")
    header = request.headers[HEADER_REPORT]
    raw = b64url_decode(header)

    for i in range(mutations):
        target = ("report", "monitored", "value")[i % 3]
        if target == "report":
            forged = request.copy()
            if rng.random() < 0.5:
                forged.headers[HEADER_REPORT] = _swap_char(rng, header, 0, len(header), B64_CHARS)
            else:
                pos = rng.randrange(len(raw))
                flipped = raw[:pos] + bytes([raw[pos] ^ rng.randint(1, 255)]) + raw[pos + 1:]
                forged.headers[HEADER_REPORT] = b64url_encode(flipped)
            checked = names
        elif target == "monitored":
            name = rng.choice(names)
            headers = []
            for value in set_cookies:
                if value.startswith(name + "="):
                    span = MONITORED_RE.search(value).span(1)
                    value = _swap_char(rng, value, span[0], span[1], B64_CHARS)
                headers.append(value)
            browser = BrowserPipeline(CookieStore(clock=world.clock), victim.keymap)
            world.respond_with(browser, ORIGIN, headers)
            forged = browser.build_request(request.url)
            checked = [name]
        else:
            name = rng.choice(names)
            forged = request.copy()
            cookie_header = forged.headers["Cookie"]
            start, end = re.search(rf"(?:^|; ){re.escape(name)}=([^;]*)", cookie_header).span(1)
            forged.headers["Cookie"] = _swap_char(rng, cookie_header, start, end, VALUE_CHARS)
            checked = [name]
        verdicts = server.verify(forged)
        report.runs += 1
        for name in checked:
            status = verdicts[name].status
            report.stats[f"{target}:{status.value}"] += 1
            if status is VerdictStatus.VALID:
                report.failures.append(f"mutation {i} of {target} left {name} Valid")
    return report


# -- eviction --------------------------------------------------------------


def check_eviction(
    runs: int = 50, limit: int = 30, factor: int = 10, seed: int = 0
) -> PropertyReport:
    """Flood a registrable domain with up to ``factor * limit`` ordinary
    cookies; BrowserOnly cookies must all survive every insertion."""
    report = PropertyReport("eviction exemption")
    hosts = ["app.example.io", "www.example.io", "example.io"]
    for run in range(runs):
        rng = random.Random(f"evict-{seed}-{run}")
        clock = SimClock()
        store = CookieStore(per_domain_limit=limit, clock=clock)
        protected = []
        for i in range(rng.randint(1, max(1, limit // 3))):
            cookie = Cookie(
                f"bo{i}", rng.randbytes(8).hex(), domain=rng.choice(hosts), secure=True,
                browser_only=True, priority=rng.choice(list(Priority)),
            )
            store.set_cookie(cookie, AccessContext.network())
            protected.append(cookie.key)
        flood = rng.randint(limit, factor * limit)
        evicted = 0
        for j in range(flood):
            expires = None
            if rng.random() < 0.2:
                expires = (clock() + timedelta(seconds=rng.randint(1, 20))).replace(microsecond=0)
            cookie = Cookie(
                f"junk{j}", "x", domain=rng.choice(hosts), path=rng.choice(["/", "/a"]),
                expires=expires, priority=rng.choice(list(Priority)),
            )
            ctx = rng.choice([AccessContext.network(), AccessContext.extension(), AccessContext.script()])
            result = store.set_cookie(cookie, ctx)
            evicted += len(result.evicted)
            if rng.random() < 0.05:
                clock.advance(rng.randint(1, 10))
            missing = [k for k in protected if store.get(k) is None]
            if missing:
                report.failures.append(f"run {run} after {j + 1} inserts lost {missing}")
                break
        report.runs += 1
        report.stats["inserted"] += flood
        report.stats["evicted"] += evicted
        if len(store) > limit:
            report.failures.append(f"run {run}: store holds {len(store)} cookies over limit {limit}")
    return report
