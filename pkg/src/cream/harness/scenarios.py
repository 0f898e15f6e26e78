"""Adversary scenarios.

Each scenario sets up a world, lets an adversary (malicious extension,
content script or network attacker) try one attack, and reports what it
observed.  A scenario passes when the observed outcome equals the expected
one.
"""

from __future__ import annotations

import enum
import fnmatch
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional

from ..cookies import b64url_encode
from ..messages import HEADER_KEY, HEADER_REPORT, HttpMessage
from ..monitor import MonitoredReport, SubReport
from ..pipeline import DnrHook, FunctionHook, HeaderRule, HookMode
from ..server import VerdictStatus
from ..store import CookiesApi, DocumentCookie, SetStatus
from .world import HOST, ORIGIN, PLAIN_ORIGIN, World

__all__ = [
    "CATALOG",
    "Outcome",
    "Scenario",
    "ScenarioResult",
    "Summary",
    "UnknownScenario",
    "run_all",
    "run_scenario",
]


class Outcome(enum.Enum):
    ACCEPTED = "Accepted"  # honest traffic went through
    BLOCKED = "Blocked"  # the attack could not touch the cookie
    DETECTED = "Detected"  # the server flagged the tampering
    UNUSABLE = "Unusable"  # stolen material did not authenticate
    COMPROMISED = "Compromised"  # the attack worked


class UnknownScenario(KeyError):
    pass


@dataclass(frozen=True)
class Scenario:
    id: str
    claim: str
    expected: Outcome
    run: Callable[[World], Outcome]


@dataclass
class ScenarioResult:
    id: str
    expected: Outcome
    observed: Outcome
    transcript: List[str]
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.observed is self.expected

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "expected": self.expected.value,
            "observed": self.observed.value,
            "pass": self.passed,
            "transcript": self.transcript,
        }


CATALOG: Dict[str, Scenario] = {}


def scenario(id: str, expected: Outcome, claim: str):
    def register(fn: Callable[[World], Outcome]) -> Callable[[World], Outcome]:
        CATALOG[id] = Scenario(id, claim, expected, fn)
        return fn

    return register


def _ok(verdicts, name) -> bool:
    return name in verdicts and verdicts[name].valid


def _status(verdicts, name) -> Optional[VerdictStatus]:
    return verdicts[name].status if name in verdicts else None


def _hook_saw(browser, needle: str) -> bool:
    return any(
        needle in name or needle in value
        for obs in browser.transcript
        for name, value in obs.headers
    )


def _captured_set_cookie(browser, name: str) -> str:
    for obs in browser.transcript:
        if obs.stage != "response":
            continue
        for header, value in obs.headers:
            if header.lower() == "set-cookie" and value.startswith(name + "="):
                return value
    raise LookupError(f"no Set-Cookie for {name} was visible to extensions")


def _without_attr(set_cookie: str, attr: str) -> str:
    parts = [p for p in set_cookie.split("; ") if p.split("=", 1)[0].lower() != attr.lower()]
    return "; ".join(parts)


def _rewrite_set_cookies(fn: Callable[[str], str]):
    def hook(headers, url):
        values = headers.get_all("Set-Cookie")
        del headers["Set-Cookie"]
        for value in values:
            headers.add_header("Set-Cookie", fn(value))
        return headers

    return hook


def _bo_blocked(world: World, request: HttpMessage) -> Outcome:
    ok = world.server.plain_cookie_ok(request, "bo_sid")
    world.note(f"server sees genuine bo_sid first: {ok}")
    return Outcome.BLOCKED if ok else Outcome.COMPROMISED


# -- control ---------------------------------------------------------------


@scenario("noop-honest", Outcome.ACCEPTED, "control run: no adversary, everything verifies")
def noop_honest(world: World) -> Outcome:
    browser = world.browser()
    world.login(browser)
    request = world.visit(browser)
    verdicts = world.verify(request)
    ok = all(v.valid for v in verdicts.values()) and world.server.plain_cookie_ok(request, "bo_sid")
    return Outcome.ACCEPTED if ok and verdicts else Outcome.DETECTED


# -- BrowserOnly -----------------------------------------------------------


@scenario("bo-cookies-api-read", Outcome.BLOCKED,
          "BrowserOnly cookies are never returned to the Cookies API")
def bo_cookies_api_read(world: World) -> Outcome:
    browser = world.browser()
    world.login(browser)
    api = CookiesApi(browser.store)
    secret = world.server.issued["bo_sid"]
    seen = api.get_all() + api.get_list(ORIGIN + "/account")
    world.note("cookies api returned: " + ", ".join(sorted({c.name for c in seen})))
    leaked = any(c.name == "bo_sid" or c.value == secret or c.browser_only for c in seen)
    return Outcome.COMPROMISED if leaked else Outcome.BLOCKED


@scenario("bo-cookies-api-write", Outcome.BLOCKED,
          "BrowserOnly cookies are not editable from the Cookies API")
def bo_cookies_api_write(world: World) -> Outcome:
    browser = world.browser()
    world.login(browser)
    api = CookiesApi(browser.store)
    results = [
        api.set(ORIGIN, "bo_sid=evil; Secure; HttpOnly"),
        api.set(ORIGIN, "bo_sid=evil; Secure; HttpOnly; BrowserOnly"),
        api.set(ORIGIN, "bo_sid2=evil; Secure; BrowserOnly"),
        # a same-name cookie on a longer path sorts first among ordinary cookies
        api.set(ORIGIN, "bo_sid=evil; Path=/account; Secure"),
    ]
    world.note("cookies api set: " + ", ".join(str(r) for r in results))
    removed = api.remove(HOST, "/", "bo_sid")
    world.note(f"cookies api remove bo_sid: {removed}")
    if removed or any(r.ok and r.status is not SetStatus.INSERTED for r in results[:3]):
        return Outcome.COMPROMISED
    return _bo_blocked(world, world.visit(browser))


@scenario("bo-webrequest-read", Outcome.BLOCKED,
          "BrowserOnly cookies are withheld from webRequest observers")
def bo_webrequest_read(world: World) -> Outcome:
    spy = FunctionHook("spy", mode=HookMode.WEBREQUEST)
    browser = world.browser([spy], passes=3)
    world.login(browser)
    world.visit(browser)
    secret = world.server.issued["bo_sid"]
    leaked = {
        "bo_sid value": _hook_saw(browser, secret),
        "bo_sid name": _hook_saw(browser, "bo_sid"),
        HEADER_KEY: _hook_saw(browser, HEADER_KEY),
        HEADER_REPORT: _hook_saw(browser, HEADER_REPORT),
    }
    world.note(f"spy observations: {len(browser.transcript)}; leaks: {leaked}")
    return Outcome.COMPROMISED if any(leaked.values()) else Outcome.BLOCKED


@scenario("bo-webrequest-edit", Outcome.BLOCKED,
          "webRequestBlocking edits cannot replace or remove BrowserOnly cookies")
def bo_webrequest_edit(world: World) -> Outcome:
    def on_request(headers, url):
        del headers["Cookie"]
        return headers

    def on_response(headers, url):
        headers.add_header("Set-Cookie", "bo_sid=evil; Secure; HttpOnly; BrowserOnly")
        headers.add_header("Set-Cookie", "bo_sid=evil; Secure")
        return headers

    browser = world.browser([FunctionHook("editor", on_request, on_response)])
    world.login(browser)
    return _bo_blocked(world, world.visit(browser))


@scenario("bo-dnr-edit", Outcome.BLOCKED,
          "declarativeNetRequest rules cannot replace or remove BrowserOnly cookies")
def bo_dnr_edit(world: World) -> Outcome:
    dnr = DnrHook(
        "rules",
        request_rules=[HeaderRule("set", "Cookie", "bo_sid=evil")],
        response_rules=[
            HeaderRule("remove", "Set-Cookie"),
            HeaderRule("append", "Set-Cookie", "bo_sid=evil; Secure; BrowserOnly"),
        ],
    )
    browser = world.browser([dnr])
    world.login(browser)
    return _bo_blocked(world, world.visit(browser))


@scenario("bo-forged-header-shadowing", Outcome.BLOCKED,
          "BrowserOnly pairs go to the front of the Cookie header, so forged duplicates lose")
def bo_forged_header_shadowing(world: World) -> Outcome:
    def on_request(headers, url):
        existing = headers.get("Cookie")
        headers["Cookie"] = "bo_sid=evil" + ("; " + existing if existing else "")
        return headers

    browser = world.browser([FunctionHook("shadow", on_request)])
    world.login(browser)
    request = world.visit(browser)
    world.note(f"final Cookie header starts {request.headers.get('Cookie', '')[:24]!r}")
    return _bo_blocked(world, request)


@scenario("bo-eviction-attack", Outcome.BLOCKED,
          "flooding the cookie jar never purges BrowserOnly cookies")
def bo_eviction_attack(world: World) -> Outcome:
    def on_request(headers, url):
        existing = headers.get("Cookie")
        headers["Cookie"] = (existing + "; " if existing else "") + "bo_sid=evil"
        return headers

    browser = world.browser([FunctionHook("flooder", on_request)])
    world.login(browser)
    api = CookiesApi(browser.store)
    evicted = 0
    for i in range(2 * world.per_domain_limit):
        result = api.set(ORIGIN, f"junk{i:04d}=x; Path=/")
        evicted += len(result.evicted)
    survived = browser.store.get((HOST, "/", "bo_sid")) is not None
    world.note(f"flood evicted {evicted} cookies; bo_sid survived: {survived}")
    return _bo_blocked(world, world.visit(browser))


@scenario("bo-content-script-read", Outcome.BLOCKED,
          "document.cookie never exposes or overwrites BrowserOnly cookies")
def bo_content_script_read(world: World) -> Outcome:
    browser = world.browser()
    world.login(browser)
    doc = DocumentCookie(browser.store, ORIGIN + "/account")
    visible = doc.get()
    world.note(f"document.cookie = {visible!r}")
    writes = [doc.set("bo_sid=evil"), doc.set("bo_sid=evil; BrowserOnly")]
    world.note("document.cookie writes: " + ", ".join(str(r) for r in writes))
    if "bo_sid" in visible or world.server.issued["bo_sid"] in visible:
        return Outcome.COMPROMISED
    if any(r is not None and r.ok for r in writes):
        return Outcome.COMPROMISED
    return _bo_blocked(world, world.visit(browser))


# -- Monitored -------------------------------------------------------------


@scenario("mon-steal-replay", Outcome.UNUSABLE,
          "a stolen Monitored cookie fails HMAC verification in another browser")
def mon_steal_replay(world: World) -> Outcome:
    victim = world.browser([FunctionHook("spy", mode=HookMode.WEBREQUEST)])
    world.login(victim)
    stolen_header = _captured_set_cookie(victim, "sid")
    stolen_value = next(c.value for c in CookiesApi(victim.store).get_all() if c.name == "sid")

    with_msg = world.browser()
    world.respond_with(with_msg, ORIGIN, [stolen_header])
    full = world.verify(world.visit(with_msg))

    bare = world.browser()
    world.respond_with(bare, ORIGIN, [f"sid={stolen_value}; Secure; HttpOnly; SameSite=Lax"])
    plain = world.verify(world.visit(bare))

    if _status(full, "sid") is VerdictStatus.BAD_HMAC and not _ok(plain, "sid"):
        return Outcome.UNUSABLE
    return Outcome.COMPROMISED if _ok(full, "sid") or _ok(plain, "sid") else Outcome.DETECTED


@scenario("mon-msg-interleave", Outcome.UNUSABLE,
          "another cookie's Monitored message does not match the stolen name-value pair")
def mon_msg_interleave(world: World) -> Outcome:
    victim = world.browser([FunctionHook("spy", mode=HookMode.WEBREQUEST)])
    world.login(victim)
    sid_header = _captured_set_cookie(victim, "sid")
    pref_msg = re.search(r"Monitored=([A-Za-z0-9_-]+)", _captured_set_cookie(victim, "pref")).group(1)
    forged = re.sub(r"Monitored=[A-Za-z0-9_-]+", "Monitored=" + pref_msg, sid_header)

    attacker = world.browser()
    world.respond_with(attacker, ORIGIN, [forged])
    verdicts = world.verify(world.visit(attacker))
    if _status(verdicts, "sid") is VerdictStatus.NAME_VALUE_MISMATCH:
        return Outcome.UNUSABLE
    return Outcome.COMPROMISED if _ok(verdicts, "sid") else Outcome.DETECTED


@scenario("mon-edit-via-api", Outcome.DETECTED,
          "edits through the Cookies API land in the authenticated changelog")
def mon_edit_via_api(world: World) -> Outcome:
    browser = world.browser()
    world.login(browser)
    api = CookiesApi(browser.store)
    original = next(c for c in api.get_list(ORIGIN + "/account") if c.name == "sid")
    result = api.set(ORIGIN, replace(original, value="attacker-session"))
    world.note(f"cookies api edit: {result}")
    verdicts = world.verify(world.visit(browser))
    verdict = verdicts.get("sid")
    if verdict and verdict.status is VerdictStatus.POLICY_VIOLATION:
        flagged = [f.fields for f in verdict.flagged_changes if f.source == "changelog"]
        world.note(f"flagged: {flagged}")
        if {"V": "attacker-session"} in flagged:
            return Outcome.DETECTED
    return Outcome.COMPROMISED if _ok(verdicts, "sid") else Outcome.BLOCKED


@scenario("mon-delete-recreate", Outcome.DETECTED,
          "a deleted and remade cookie has no Monitored message and so no report")
def mon_delete_recreate(world: World) -> Outcome:
    browser = world.browser()
    world.login(browser)
    api = CookiesApi(browser.store)
    original = next(c for c in api.get_list(ORIGIN + "/account") if c.name == "sid")
    removed = api.remove(original.domain, original.path, original.name)
    result = api.set(ORIGIN, replace(original, value="attacker-session"))
    world.note(f"remove: {removed}; recreate: {result}")
    verdicts = world.verify(world.visit(browser))
    if _status(verdicts, "sid") is VerdictStatus.NO_REPORT:
        return Outcome.DETECTED
    return Outcome.COMPROMISED if _ok(verdicts, "sid") else Outcome.BLOCKED


@scenario("mon-strip-attribute", Outcome.DETECTED,
          "stripping the Monitored attribute leaves the cookie without a report")
def mon_strip_attribute(world: World) -> Outcome:
    strip = _rewrite_set_cookies(
        lambda v: _without_attr(v, "Monitored") if v.startswith("sid=") else v
    )
    browser = world.browser([FunctionHook("stripper", on_response=strip)])
    world.login(browser)
    verdicts = world.verify(world.visit(browser))
    if _status(verdicts, "sid") is VerdictStatus.NO_REPORT:
        return Outcome.DETECTED
    return Outcome.COMPROMISED if _ok(verdicts, "sid") else Outcome.BLOCKED


@scenario("mon-header-edit-then-revert", Outcome.DETECTED,
          "Set-Cookie edits show in reported settings; reverting them is logged")
def mon_header_edit_then_revert(world: World) -> Outcome:
    def make_browser():
        drop_http_only = _rewrite_set_cookies(
            lambda v: _without_attr(v, "HttpOnly") if v.startswith("sid=") else v
        )
        return world.browser([FunctionHook("editor", on_response=drop_http_only)])

    edited = make_browser()
    world.login(edited)
    left = world.verify(world.visit(edited))

    reverted = make_browser()
    world.login(reverted)
    api = CookiesApi(reverted.store)
    cookie = next(c for c in api.get_list(ORIGIN + "/account") if c.name == "sid")
    world.note(f"revert via cookies api: {api.set(ORIGIN, replace(cookie, http_only=True))}")
    back = world.verify(world.visit(reverted))

    settings_flagged = _status(left, "sid") is VerdictStatus.POLICY_VIOLATION and any(
        f.source == "settings" and f.fields.get("HO") == "0" for f in left["sid"].flagged_changes
    )
    revert_logged = _status(back, "sid") is VerdictStatus.POLICY_VIOLATION and any(
        f.source == "changelog" and f.fields.get("HO") == "1" for f in back["sid"].flagged_changes
    )
    world.note(f"settings flagged: {settings_flagged}; revert logged: {revert_logged}")
    if settings_flagged and revert_logged:
        return Outcome.DETECTED
    return Outcome.COMPROMISED if _ok(left, "sid") or _ok(back, "sid") else Outcome.BLOCKED


def _http_visit(world: World, browser) -> HttpMessage:
    request = world.visit(browser, PLAIN_ORIGIN + "/feed")
    world.note(f"http request headers: {sorted(n for n, _ in request.headers.items())}")
    return request


@scenario("mon-report-tamper", Outcome.DETECTED,
          "a report altered on the wire fails HMAC verification")
def mon_report_tamper(world: World) -> Outcome:
    browser = world.browser()
    world.login(browser)
    api = CookiesApi(browser.store)
    pref = next(c for c in api.get_list(PLAIN_ORIGIN + "/feed") if c.name == "pref")
    api.set(PLAIN_ORIGIN, replace(pref, same_site=type(pref.same_site).STRICT))
    request = _http_visit(world, browser)

    # The network attacker scrubs the logged change and restores the settings.
    report = MonitoredReport.from_header(request.headers[HEADER_REPORT])
    subs = tuple(
        SubReport(s.cookie_name, s.settings.replace("SS:2", "SS:1"), (), s.monitored_msg)
        if s.cookie_name == "pref" else s
        for s in report.sub_reports
    )
    forged = request.copy()
    forged.headers[HEADER_REPORT] = replace(report, sub_reports=subs).header_value()
    verdicts = world.verify(forged)
    if _status(verdicts, "pref") is VerdictStatus.BAD_HMAC:
        return Outcome.DETECTED
    return Outcome.COMPROMISED if _ok(verdicts, "pref") else Outcome.BLOCKED


@scenario("mon-report-strip", Outcome.DETECTED,
          "removing the report invalidates the Monitored cookie")
def mon_report_strip(world: World) -> Outcome:
    def on_request(headers, url):
        del headers[HEADER_REPORT]
        return headers

    browser = world.browser([FunctionHook("stripper", on_request)])
    world.login(browser)
    request = _http_visit(world, browser)
    honest = world.verify(request)
    world.note(f"extension could not strip report: {HEADER_REPORT in request.headers}")

    stripped = request.copy()
    del stripped.headers[HEADER_REPORT]
    verdicts = world.verify(stripped)
    if _ok(honest, "pref") and _status(verdicts, "pref") is VerdictStatus.NO_REPORT:
        return Outcome.DETECTED
    return Outcome.COMPROMISED if _ok(verdicts, "pref") else Outcome.BLOCKED


@scenario("mon-replay-old-report", Outcome.UNUSABLE,
          "a captured request replayed later carries a stale report timestamp")
def mon_replay_old_report(world: World) -> Outcome:
    browser = world.browser()
    world.login(browser)
    captured = _http_visit(world, browser)
    fresh = world.verify(captured)
    world.clock.advance(600)
    replayed = world.verify(captured.copy())
    if _ok(fresh, "pref") and _status(replayed, "pref") is VerdictStatus.STALE_TIMESTAMP:
        return Outcome.UNUSABLE
    return Outcome.COMPROMISED if _ok(replayed, "pref") else Outcome.DETECTED


@scenario("net-nonsecure-steal", Outcome.UNUSABLE,
          "a non-Secure Monitored cookie sniffed over HTTP is unusable elsewhere")
def net_nonsecure_steal(world: World) -> Outcome:
    victim = world.browser()
    world.login(victim)
    sniffed = _http_visit(world, victim)
    if HEADER_KEY in sniffed.headers:
        world.note("browser key crossed an insecure channel")
        return Outcome.COMPROMISED
    pairs = dict(
        p.split("=", 1) for p in sniffed.headers.get("Cookie", "").split("; ") if "=" in p
    )
    report = MonitoredReport.from_header(sniffed.headers[HEADER_REPORT])
    msg = report.find("pref").monitored_msg
    value = pairs["pref"]

    bare = world.browser()
    world.respond_with(bare, PLAIN_ORIGIN, [f"pref={value}; SameSite=Lax"])
    plain = world.verify(world.visit(bare, PLAIN_ORIGIN + "/feed"))

    armed = world.browser()
    world.respond_with(
        armed, PLAIN_ORIGIN, [f"pref={value}; SameSite=Lax; Monitored={b64url_encode(msg)}"]
    )
    full = world.verify(world.visit(armed, PLAIN_ORIGIN + "/feed"))
    statuses = {_status(plain, "pref"), _status(full, "pref")}
    if statuses <= {VerdictStatus.BAD_HMAC, VerdictStatus.NO_REPORT}:
        return Outcome.UNUSABLE
    return Outcome.COMPROMISED if VerdictStatus.VALID in statuses else Outcome.DETECTED


# -- running ---------------------------------------------------------------


def _format_observation(obs) -> str:
    headers = "; ".join(f"{n}: {v}" for n, v in obs.headers)
    return f"hook {obs.hook_id} {obs.stage} pass {obs.pass_no} {obs.url} [{headers}]"


def run_scenario(id: str, seed: int = 0) -> ScenarioResult:
    try:
        spec = CATALOG[id]
    except KeyError:
        raise UnknownScenario(id) from None
    world = World(seed)
    started = time.perf_counter()
    observed = spec.run(world)
    elapsed = time.perf_counter() - started
    transcript = [f"claim: {spec.claim}"] + world.notes
    for browser in world.browsers:
        transcript.extend(_format_observation(o) for o in browser.transcript)
    transcript.append(f"observed {observed.value}, expected {spec.expected.value}")
    return ScenarioResult(id, spec.expected, observed, transcript, elapsed)


@dataclass
class Summary:
    results: List[ScenarioResult] = field(default_factory=list)

    @property
    def passed(self) -> int:
        return sum(r.passed for r in self.results)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed == len(self.results) else 1

    def table(self) -> str:
        width = max([len(r.id) for r in self.results] + [8])
        lines = [f"{'scenario':<{width}}  {'expected':<11} {'observed':<11} result"]
        for r in self.results:
            lines.append(
                f"{r.id:<{width}}  {r.expected.value:<11} {r.observed.value:<11} "
                f"{'PASS' if r.passed else 'FAIL'}"
            )
        lines.append(f"{self.passed}/{len(self.results)} passed")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "passed": self.passed,
            "total": len(self.results),
            "results": [r.to_dict() for r in self.results],
        }


def select(pattern: Optional[str] = None) -> List[str]:
    ids = list(CATALOG)
    if pattern is None:
        return ids
    return [i for i in ids if fnmatch.fnmatchcase(i, pattern)]


def run_all(ids: Optional[Iterable[str]] = None, seed: int = 0, jobs: int = 1) -> Summary:
    chosen = list(CATALOG) if ids is None else list(ids)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda i: run_scenario(i, seed), chosen))
    else:
        results = [run_scenario(i, seed) for i in chosen]
    return Summary(results)
