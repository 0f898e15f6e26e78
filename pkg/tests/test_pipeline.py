from __future__ import annotations

import pytest

from cream.cookies import b64url_encode, parse_cookie_header
from cream.harness.world import ORIGIN, PLAIN_ORIGIN, World
from cream.messages import HEADER_KEY, HEADER_REPORT, HttpMessage
from cream.monitor import KeyMap
from cream.pipeline import BrowserPipeline, DnrHook, FunctionHook, HeaderRule, HookMode
from cream.server import VerdictStatus
from cream.store import CookieStore


def logged_in(hooks=(), passes=1, seed=0):
    world = World(seed)
    browser = world.browser(hooks, passes)
    world.login(browser)
    return world, browser


def statuses(world, request):
    return {n: v.status for n, v in world.server.verify(request).items()}


@pytest.mark.parametrize("passes", [1, 2, 3])
def test_stage_order(passes):
    _, browser = logged_in(passes=passes)
    browser.build_request(ORIGIN + "/account")
    assert browser.stage_log == ["fetch", "build"] + ["hooks"] * passes + ["prepend", "key", "report"]


def test_passes_bounds():
    with pytest.raises(ValueError):
        BrowserPipeline(CookieStore(), KeyMap(), passes=4)


def test_hooks_never_see_protected_material():
    seen = []
    hook = FunctionHook("spy", on_request=lambda h, u: seen.append(h.items()))
    world, browser = logged_in([hook])
    request = world.visit(browser)
    flat = repr(seen)
    secrets = [world.server.issued["bo_sid"], request.headers[HEADER_KEY], request.headers[HEADER_REPORT]]
    assert seen and not any(s in flat for s in secrets)
    assert "sid=" in flat  # ordinary cookies are visible


def test_honest_request_is_valid_and_front_placed():
    world, browser = logged_in()
    request = world.visit(browser)
    pairs = parse_cookie_header(request.headers["Cookie"])
    assert pairs[0] == ("bo_sid", world.server.issued["bo_sid"])
    assert set(statuses(world, request).values()) == {VerdictStatus.VALID}
    assert world.server.handle(request).status == 200


def test_key_header_only_over_https():
    world, browser = logged_in()
    secure = browser.build_request(ORIGIN + "/")
    site_key = browser.keymap.get("https://example.io")
    assert secure.headers[HEADER_KEY] == b64url_encode(site_key.key)
    plain = browser.build_request(PLAIN_ORIGIN + "/")
    assert HEADER_KEY not in plain.headers
    # The non-Secure Monitored cookie still reports, signed with the https key.
    assert HEADER_REPORT in plain.headers
    assert statuses(world, plain) == {"pref": VerdictStatus.VALID, "sid": VerdictStatus.NO_REPORT}


def test_empty_store_over_http_sends_nothing():
    browser = World().browser()
    request = browser.build_request(PLAIN_ORIGIN + "/")
    assert list(request.headers.items()) == []


def test_hook_cannot_keep_forged_key_or_report():
    def forge(headers, url):
        headers[HEADER_KEY] = "A" * 43
        headers[HEADER_REPORT] = "forged"
    world, browser = logged_in([FunctionHook("forger", on_request=forge)])
    request = world.visit(browser)
    assert request.headers.get_all(HEADER_KEY) != ["A" * 43]
    assert len(request.headers.get_all(HEADER_REPORT)) == 1
    assert set(statuses(world, request).values()) == {VerdictStatus.VALID}


def test_hook_value_edit_is_detected():
    def edit(headers, url):
        headers["Cookie"] = headers["Cookie"].replace("sid=", "sid=x", 1)
    world, browser = logged_in([FunctionHook("editor", on_request=edit)])
    request = world.visit(browser)
    assert statuses(world, request)["sid"] is VerdictStatus.NAME_VALUE_MISMATCH


def test_observe_only_hook_edits_are_discarded():
    def edit(headers, url):
        headers["Cookie"] = "junk=1"
    world, browser = logged_in([FunctionHook("obs", on_request=edit, mode=HookMode.WEBREQUEST)])
    request = world.visit(browser)
    assert "junk" not in request.headers["Cookie"]


def test_hook_exception_is_isolated():
    def boom(headers, url):
        raise RuntimeError("broken extension")
    world, browser = logged_in([FunctionHook("boom", on_request=boom, on_response=boom)])
    request = world.visit(browser)
    assert set(statuses(world, request).values()) == {VerdictStatus.VALID}


def test_browser_only_set_cookie_held_from_hooks():
    seen = []
    hook = FunctionHook("spy", on_response=lambda h, u: seen.append(list(h.items())))
    world, browser = logged_in([hook])
    flat = repr(seen)
    assert "bo_sid" not in flat and "sid=" in flat
    assert browser.store.get(("app.example.io", "/", "bo_sid")) is not None


def test_injected_browser_only_set_cookie_dropped():
    def inject(headers, url):
        headers.add_header("Set-Cookie", "bo_sid=evil; Secure; BrowserOnly")
        headers.add_header("Set-Cookie", "shadow=1; BrowserOnly")
    world, browser = logged_in([FunctionHook("inj", on_response=inject)])
    assert browser.store.get(("app.example.io", "/", "bo_sid")).value == world.server.issued["bo_sid"]
    assert browser.store.get(("app.example.io", "/", "shadow")) is None


def test_response_rewrite_of_ordinary_cookie_applies():
    def rewrite(headers, url):
        headers.add_header("Set-Cookie", "extra=1")
    world, browser = logged_in([FunctionHook("rw", on_response=rewrite)])
    assert browser.store.get(("app.example.io", "/", "extra")).value == "1"


def test_dnr_rules_rewrite_without_observing():
    hook = DnrHook("dnr", request_rules=[HeaderRule("set", "Cookie", "sid=evil")])
    world, browser = logged_in([hook])
    request = world.visit(browser)
    assert browser.transcript and all(o.hook_id == "dnr" for o in browser.transcript)
    assert parse_cookie_header(request.headers["Cookie"])[0][0] == "bo_sid"
    assert statuses(world, request)["sid"] is VerdictStatus.NAME_VALUE_MISMATCH
    with pytest.raises(ValueError):
        HeaderRule("swap", "Cookie").apply(request.headers)


def test_api_edit_inside_hook_is_reflected_in_report():
    def edit(headers, url):
        hook.cookies.set(url, "sid=attacker; Secure; HttpOnly")
    hook = FunctionHook("api", on_request=edit)
    world, browser = logged_in()
    browser.install(hook)
    request = world.visit(browser)
    verdict = world.server.verify(request)["sid"]
    # The header still carries the old value; the report logs the new one.
    assert verdict.status is VerdictStatus.NAME_VALUE_MISMATCH


def test_secure_cookie_over_http_ignored():
    browser = World().browser()
    response = HttpMessage.response(PLAIN_ORIGIN + "/", headers=[("Set-Cookie", "s=1; Secure")])
    assert browser.process_response(response) == []


def test_foreign_domain_set_cookie_ignored():
    browser = World().browser()
    response = HttpMessage.response(ORIGIN + "/", headers=[
        ("Set-Cookie", "a=1; Domain=other.io"), ("Set-Cookie", "b=1; Domain=io"),
        ("Set-Cookie", "c=1; Domain=example.io"), ("Set-Cookie", "=bad"),
    ])
    browser.process_response(response)
    assert [k[2] for k in browser.store.keys()] == ["c"]
